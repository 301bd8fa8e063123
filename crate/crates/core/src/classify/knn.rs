use crate::activity::ActivityLabel;
use crate::error::{Error, Result};

use super::{argmax_label, Dataset};

/// Majority vote among the `k` nearest training points (Euclidean).
/// Distance ties are resolved by training order, vote ties by label order.
#[derive(Clone, Debug)]
pub struct KnnModel {
    data: Dataset,
    k: usize,
}

impl KnnModel {
    pub fn fit(data: &Dataset, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::config("k must be at least 1"));
        }
        Ok(KnnModel { data: data.clone(), k })
    }

    pub fn dim(&self) -> usize {
        self.data.dim()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Indices of the `k` nearest training points, closest first.
    pub fn neighbors(&self, x: &[f64]) -> Vec<usize> {
        let mut d: Vec<(f64, usize)> = (0..self.data.len())
            .map(|i| {
                let p = self.data.point(i);
                let d2: f64 = p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                (d2, i)
            })
            .collect();
        let k = self.k.min(d.len());
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < d.len() {
            d.select_nth_unstable_by(k - 1, cmp);
            d.truncate(k);
        }
        d.sort_by(cmp);
        d.into_iter().map(|(_, i)| i).collect()
    }

    pub fn predict(&self, x: &[f64]) -> ActivityLabel {
        let mut votes = [0.0; ActivityLabel::COUNT];
        let mut present = [false; ActivityLabel::COUNT];
        for i in self.neighbors(x) {
            let l = self.data.label(i).index();
            votes[l] += 1.0;
            present[l] = true;
        }
        argmax_label(&votes, &present)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::FeatureMask;

    #[test]
    fn resubstitution_is_exact_for_one_neighbor() {
        let pts: Vec<Vec<f64>> = (0..20).map(|i| vec![(i as f64 * 0.37).sin(), i as f64 * 0.1]).collect();
        let labels: Vec<_> = (0..20).map(|i| ActivityLabel::ALL[i % 5]).collect();
        let d = Dataset::new(pts.clone(), labels.clone(), FeatureMask::Fused).unwrap();
        let m = KnnModel::fit(&d, 1).unwrap();
        for (p, l) in pts.iter().zip(&labels) {
            assert_eq!(m.predict(p), *l);
        }
    }

    #[test]
    fn equidistant_tie_goes_to_lower_label() {
        let d = Dataset::new(
            vec![vec![1.0], vec![-1.0]],
            vec![ActivityLabel::Sd, ActivityLabel::Su],
            FeatureMask::FrontOnly,
        )
        .unwrap();
        let m = KnnModel::fit(&d, 2).unwrap();
        assert_eq!(m.predict(&[0.0]), ActivityLabel::Su);
    }

    #[test]
    fn zero_k_rejected() {
        let d = Dataset::new(vec![vec![1.0]], vec![ActivityLabel::Sd], FeatureMask::FrontOnly).unwrap();
        assert!(KnnModel::fit(&d, 0).is_err());
    }
}
