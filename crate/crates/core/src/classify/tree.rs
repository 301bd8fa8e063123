use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::activity::ActivityLabel;
use crate::error::{Error, Result};
use crate::seed;

use super::{argmax_label, Dataset};

#[derive(Clone, Debug)]
enum Node {
    Leaf(ActivityLabel),
    /// `x[feature] <= threshold` goes left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Binary entropy tree with midpoint thresholds, grown until leaves are
/// pure, too small to split, or no split has positive information gain.
#[derive(Clone, Debug)]
pub struct DecisionTree {
    nodes: Vec<Node>,
    dim: usize,
}

fn entropy(counts: &[usize; ActivityLabel::COUNT], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

fn majority(data: &Dataset, idx: &[usize]) -> ActivityLabel {
    let mut counts = [0.0; ActivityLabel::COUNT];
    let mut present = [false; ActivityLabel::COUNT];
    for &i in idx {
        let l = data.label(i).index();
        counts[l] += 1.0;
        present[l] = true;
    }
    argmax_label(&counts, &present)
}

struct Builder<'a> {
    data: &'a Dataset,
    min_leaf: usize,
    max_features: usize,
    rng: Option<&'a mut ChaCha8Rng>,
    nodes: Vec<Node>,
}

struct BestSplit {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl Builder<'_> {
    fn candidate_features(&mut self) -> Vec<usize> {
        let d = self.data.dim();
        match self.rng.as_deref_mut() {
            Some(rng) if self.max_features < d => {
                let mut f = index::sample(rng, d, self.max_features).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..d).collect(),
        }
    }

    fn best_split(&mut self, idx: &[usize]) -> Option<BestSplit> {
        let n = idx.len();
        let mut parent = [0usize; ActivityLabel::COUNT];
        for &i in idx {
            parent[self.data.label(i).index()] += 1;
        }
        let h_parent = entropy(&parent, n);
        let mut best: Option<BestSplit> = None;
        for feature in self.candidate_features() {
            let mut order: Vec<(f64, ActivityLabel)> =
                idx.iter().map(|&i| (self.data.point(i)[feature], self.data.label(i))).collect();
            order.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left = [0usize; ActivityLabel::COUNT];
            for i in 1..n {
                left[order[i - 1].1.index()] += 1;
                if order[i - 1].0 == order[i].0 || i < self.min_leaf || n - i < self.min_leaf {
                    continue;
                }
                let mut right = parent;
                for c in 0..ActivityLabel::COUNT {
                    right[c] -= left[c];
                }
                let gain = h_parent
                    - (i as f64 / n as f64) * entropy(&left, i)
                    - ((n - i) as f64 / n as f64) * entropy(&right, n - i);
                if gain > 1e-12 && best.as_ref().is_none_or(|b| gain > b.gain + 1e-12) {
                    let (lo, hi) = (order[i - 1].0, order[i].0);
                    // adjacent floats can round the midpoint up to `hi`
                    let mid = 0.5 * (lo + hi);
                    best = Some(BestSplit {
                        gain,
                        feature,
                        threshold: if mid < hi { mid } else { lo },
                    });
                }
            }
        }
        best
    }

    fn grow(&mut self, idx: Vec<usize>) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(majority(self.data, &idx)));
        let first = self.data.label(idx[0]);
        let pure = idx.iter().all(|&i| self.data.label(i) == first);
        if pure || idx.len() < 2 * self.min_leaf {
            return id;
        }
        let Some(split) = self.best_split(&idx) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx
            .iter()
            .partition(|&&i| self.data.point(i)[split.feature] <= split.threshold);
        let left = self.grow(l);
        let right = self.grow(r);
        self.nodes[id] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        id
    }
}

impl DecisionTree {
    pub fn fit(data: &Dataset, min_leaf: usize) -> Result<Self> {
        if min_leaf == 0 {
            return Err(Error::config("min_leaf must be at least 1"));
        }
        Ok(Self::grow(data, (0..data.len()).collect(), min_leaf, data.dim(), None))
    }

    fn grow(data: &Dataset, idx: Vec<usize>, min_leaf: usize, max_features: usize, rng: Option<&mut ChaCha8Rng>) -> Self {
        let mut b = Builder {
            data,
            min_leaf,
            max_features,
            rng,
            nodes: Vec::new(),
        };
        b.grow(idx);
        DecisionTree {
            nodes: b.nodes,
            dim: data.dim(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn predict(&self, x: &[f64]) -> ActivityLabel {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf(l) => return *l,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForestParams {
    pub n_trees: usize,
    pub min_leaf: usize,
    pub bootstrap: bool,
    /// Features tried per split; `None` means `floor(log2(d)) + 1`.
    pub max_features: Option<usize>,
}

impl ForestParams {
    pub fn new(n_trees: usize, min_leaf: usize) -> Self {
        ForestParams {
            n_trees,
            min_leaf,
            bootstrap: true,
            max_features: None,
        }
    }
}

/// Bagged entropy trees with a random feature subset at every split;
/// prediction by majority vote.
#[derive(Clone, Debug)]
pub struct RandomForest {
    trees: Vec<DecisionTree>,
    dim: usize,
}

impl RandomForest {
    pub fn fit(data: &Dataset, params: &ForestParams, seed: u64) -> Result<Self> {
        if params.n_trees == 0 || params.min_leaf == 0 {
            return Err(Error::config("forest needs n_trees >= 1 and min_leaf >= 1"));
        }
        let d = data.dim();
        let m = params
            .max_features
            .unwrap_or((d as f64).log2().floor() as usize + 1)
            .clamp(1, d);
        let n = data.len();
        let trees = (0..params.n_trees)
            .map(|t| {
                let mut rng = seed::rng(seed::derive_index(seed, t as u64));
                let idx: Vec<usize> = if params.bootstrap {
                    (0..n).map(|_| rng.random_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                DecisionTree::grow(data, idx, params.min_leaf, m, Some(&mut rng))
            })
            .collect();
        Ok(RandomForest { trees, dim: d })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn predict(&self, x: &[f64]) -> ActivityLabel {
        let mut votes = [0.0; ActivityLabel::COUNT];
        let present = [true; ActivityLabel::COUNT];
        for t in &self.trees {
            votes[t.predict(x).index()] += 1.0;
        }
        argmax_label(&votes, &present)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::FeatureMask;

    fn small() -> Dataset {
        let pts = vec![
            vec![0.10, 0.05],
            vec![0.12, 0.06],
            vec![0.13, 0.11],
            vec![0.14, 0.12],
            vec![0.09, 0.12],
            vec![0.10, 0.13],
            vec![0.20, 0.20],
            vec![0.22, 0.19],
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![0.125, 0.115],
        ];
        use ActivityLabel::*;
        let labels = vec![Walk, Walk, Su, Su, Sd, Sd, Run, Run, St, St, Sd];
        Dataset::new(pts, labels, FeatureMask::Fused).unwrap()
    }

    #[test]
    fn adjacent_float_values_still_split() {
        let a = 0.1f64;
        let b = f64::from_bits(a.to_bits() + 1);
        let data = Dataset::new(
            vec![vec![a], vec![b]],
            vec![ActivityLabel::Walk, ActivityLabel::Run],
            FeatureMask::FrontOnly,
        )
        .unwrap();
        let t = DecisionTree::fit(&data, 1).unwrap();
        assert_eq!(t.predict(&[a]), ActivityLabel::Walk);
        assert_eq!(t.predict(&[b]), ActivityLabel::Run);
    }

    #[test]
    fn entropy_values() {
        assert_eq!(entropy(&[2, 2, 0, 0, 0], 4), 1.0);
        assert_eq!(entropy(&[4, 0, 0, 0, 0], 4), 0.0);
    }

    #[test]
    fn tree_fits_training_data_with_unit_leaves() {
        let d = small();
        let t = DecisionTree::fit(&d, 1).unwrap();
        for i in 0..d.len() {
            assert_eq!(t.predict(d.point(i)), d.label(i));
        }
    }

    #[test]
    fn min_leaf_limits_growth() {
        let d = small();
        let big = DecisionTree::fit(&d, 1).unwrap();
        let coarse = DecisionTree::fit(&d, 3).unwrap();
        assert!(coarse.n_nodes() < big.n_nodes());
    }

    #[test]
    fn single_unbagged_tree_forest_equals_tree() {
        let d = small();
        let tree = DecisionTree::fit(&d, 1).unwrap();
        let params = ForestParams {
            n_trees: 1,
            min_leaf: 1,
            bootstrap: false,
            max_features: None,
        };
        let forest = RandomForest::fit(&d, &params, 99).unwrap();
        for i in 0..200 {
            let x = [(i % 20) as f64 * 0.012, (i / 20) as f64 * 0.024];
            assert_eq!(forest.predict(&x), tree.predict(&x), "{x:?}");
        }
    }

    #[test]
    fn forest_is_deterministic_per_seed() {
        let d = small();
        let p = ForestParams::new(25, 1);
        let a = RandomForest::fit(&d, &p, 5).unwrap();
        let b = RandomForest::fit(&d, &p, 5).unwrap();
        for i in 0..d.len() {
            assert_eq!(a.predict(d.point(i)), b.predict(d.point(i)));
        }
        assert_eq!(a.n_trees(), 25);
    }
}
