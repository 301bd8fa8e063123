//! Activity classifiers over charging-rate features and the repeated
//! stratified cross-validation harness used to evaluate them.

mod eval;
mod knn;
mod naive_bayes;
mod tree;

pub use eval::{
    confusion_to_csv, cross_validate, cross_validate_grouped, stratified_folds, EvalReport, GroupedReport,
};
pub use knn::KnnModel;
pub use naive_bayes::{BandwidthRule, NaiveBayesKde};
pub use tree::{DecisionTree, ForestParams, RandomForest};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::activity::ActivityLabel;
use crate::error::{Error, Result};
use crate::sampler::FeatureVector;
use crate::scalar::Scalar;

/// Which harvester(s) a dataset draws its features from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FeatureMask {
    FrontOnly,
    RearOnly,
    Fused,
}

impl FeatureMask {
    pub const ALL: [FeatureMask; 3] = [FeatureMask::FrontOnly, FeatureMask::RearOnly, FeatureMask::Fused];

    pub fn dim(self) -> usize {
        match self {
            FeatureMask::Fused => 2,
            _ => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureMask::FrontOnly => "front",
            FeatureMask::RearOnly => "rear",
            FeatureMask::Fused => "fused",
        }
    }

    /// Feature values selected by this mask, rear before front.
    pub fn select<T: Scalar>(self, f: &FeatureVector<T>) -> Vec<f64> {
        match self {
            FeatureMask::FrontOnly => vec![f.r_front.as_f64()],
            FeatureMask::RearOnly => vec![f.r_rear.as_f64()],
            FeatureMask::Fused => vec![f.r_rear.as_f64(), f.r_front.as_f64()],
        }
    }
}

impl fmt::Display for FeatureMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureMask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "front" | "front_only" | "frontonly" => Ok(FeatureMask::FrontOnly),
            "rear" | "rear_only" | "rearonly" | "back" => Ok(FeatureMask::RearOnly),
            "fused" | "both" | "front+rear" => Ok(FeatureMask::Fused),
            other => Err(Error::config(format!("unknown feature mask `{other}`"))),
        }
    }
}

/// Labeled points with a fixed dimensionality.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    points: Vec<f64>,
    labels: Vec<ActivityLabel>,
    dim: usize,
    pub mask: FeatureMask,
}

impl Dataset {
    pub fn new(points: Vec<Vec<f64>>, labels: Vec<ActivityLabel>, mask: FeatureMask) -> Result<Self> {
        if points.is_empty() || points.len() != labels.len() {
            return Err(Error::Data("dataset must be non-empty with one label per point".into()));
        }
        let dim = mask.dim();
        if let Some(p) = points.iter().find(|p| p.len() != dim) {
            return Err(Error::Dimension { expected: dim, got: p.len() });
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Data("features must be finite".into()));
        }
        Ok(Dataset {
            points: points.into_iter().flatten().collect(),
            labels,
            dim,
            mask,
        })
    }

    pub fn from_features<T: Scalar>(features: &[FeatureVector<T>], mask: FeatureMask) -> Result<Self> {
        let points = features.iter().map(|f| mask.select(f)).collect();
        let labels = features.iter().map(|f| f.label).collect();
        Dataset::new(points, labels, mask)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> ActivityLabel {
        self.labels[i]
    }

    pub fn labels(&self) -> &[ActivityLabel] {
        &self.labels
    }

    pub fn class_counts(&self) -> [usize; ActivityLabel::COUNT] {
        let mut c = [0; ActivityLabel::COUNT];
        for l in &self.labels {
            c[l.index()] += 1;
        }
        c
    }

    pub fn n_classes(&self) -> usize {
        self.class_counts().iter().filter(|&&c| c > 0).count()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let mut points = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            points.extend_from_slice(self.point(i));
        }
        Dataset {
            points,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            dim: self.dim,
            mask: self.mask,
        }
    }

    /// Multiplies every feature by `c`.
    pub fn scaled(&self, c: f64) -> Dataset {
        Dataset {
            points: self.points.iter().map(|v| v * c).collect(),
            ..self.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassifierKind {
    Knn { k: usize },
    NaiveBayesKde { bandwidth: BandwidthRule },
    DecisionTree { min_leaf: usize },
    RandomForest { n_trees: usize, min_leaf: usize },
}

impl ClassifierKind {
    pub fn short_name(&self) -> &'static str {
        match self {
            ClassifierKind::Knn { .. } => "knn",
            ClassifierKind::NaiveBayesKde { .. } => "nb",
            ClassifierKind::DecisionTree { .. } => "tree",
            ClassifierKind::RandomForest { .. } => "rf",
        }
    }

    /// The four default classifiers.
    pub fn defaults() -> [ClassifierKind; 4] {
        [
            ClassifierKind::NaiveBayesKde {
                bandwidth: BandwidthRule::Silverman,
            },
            ClassifierKind::Knn { k: 3 },
            ClassifierKind::DecisionTree { min_leaf: 2 },
            ClassifierKind::RandomForest {
                n_trees: 100,
                min_leaf: 1,
            },
        ]
    }
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassifierKind::Knn { k } => write!(f, "knn:{k}"),
            ClassifierKind::NaiveBayesKde { .. } => write!(f, "nb"),
            ClassifierKind::DecisionTree { min_leaf } => write!(f, "tree:{min_leaf}"),
            ClassifierKind::RandomForest { n_trees, min_leaf } => write!(f, "rf:{n_trees}:{min_leaf}"),
        }
    }
}

impl FromStr for ClassifierKind {
    type Err = Error;

    /// `knn[:k]`, `nb`, `tree[:min_leaf]`, `rf[:n_trees[:min_leaf]]`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |i: usize, default: usize| -> Result<usize> {
            match parts.get(i) {
                None => Ok(default),
                Some(p) => p
                    .parse()
                    .map_err(|_| Error::config(format!("classifier `{s}`: `{p}` is not an integer"))),
            }
        };
        let kind = match parts[0].to_ascii_lowercase().as_str() {
            "knn" | "ibk" => ClassifierKind::Knn { k: num(1, 3)? },
            "nb" | "naive_bayes" => ClassifierKind::NaiveBayesKde {
                bandwidth: BandwidthRule::Silverman,
            },
            "tree" | "c45" | "j48" => ClassifierKind::DecisionTree { min_leaf: num(1, 2)? },
            "rf" | "forest" => ClassifierKind::RandomForest {
                n_trees: num(1, 100)?,
                min_leaf: num(2, 1)?,
            },
            other => return Err(Error::config(format!("unknown classifier `{other}`"))),
        };
        let ok = match kind {
            ClassifierKind::Knn { k } => k >= 1,
            ClassifierKind::DecisionTree { min_leaf } => min_leaf >= 1,
            ClassifierKind::RandomForest { n_trees, min_leaf } => n_trees >= 1 && min_leaf >= 1,
            ClassifierKind::NaiveBayesKde { .. } => true,
        };
        if !ok {
            return Err(Error::config(format!("classifier `{s}`: parameters must be positive")));
        }
        Ok(kind)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub kind: ClassifierKind,
    pub seed: u64,
}

impl ClassifierSpec {
    pub fn new(kind: ClassifierKind, seed: u64) -> Self {
        ClassifierSpec { kind, seed }
    }
}

#[derive(Clone, Debug)]
pub enum Model {
    Knn(KnnModel),
    NaiveBayes(NaiveBayesKde),
    Tree(DecisionTree),
    Forest(RandomForest),
}

impl Model {
    pub fn dim(&self) -> usize {
        match self {
            Model::Knn(m) => m.dim(),
            Model::NaiveBayes(m) => m.dim(),
            Model::Tree(m) => m.dim(),
            Model::Forest(m) => m.dim(),
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<ActivityLabel> {
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(match self {
            Model::Knn(m) => m.predict(x),
            Model::NaiveBayes(m) => m.predict(x),
            Model::Tree(m) => m.predict(x),
            Model::Forest(m) => m.predict(x),
        })
    }
}

pub fn train(spec: &ClassifierSpec, data: &Dataset) -> Result<Model> {
    if data.n_classes() < 2 {
        return Err(Error::Data("training needs at least two classes".into()));
    }
    Ok(match spec.kind {
        ClassifierKind::Knn { k } => Model::Knn(KnnModel::fit(data, k)?),
        ClassifierKind::NaiveBayesKde { bandwidth } => Model::NaiveBayes(NaiveBayesKde::fit(data, bandwidth)),
        ClassifierKind::DecisionTree { min_leaf } => Model::Tree(DecisionTree::fit(data, min_leaf)?),
        ClassifierKind::RandomForest { n_trees, min_leaf } => {
            Model::Forest(RandomForest::fit(data, &ForestParams::new(n_trees, min_leaf), spec.seed)?)
        }
    })
}

pub fn predict(model: &Model, x: &[f64]) -> Result<ActivityLabel> {
    model.predict(x)
}

/// Label with the highest score; ties go to the earliest label in the
/// fixed order.
pub(crate) fn argmax_label(scores: &[f64; ActivityLabel::COUNT], present: &[bool; ActivityLabel::COUNT]) -> ActivityLabel {
    let mut best: Option<(usize, f64)> = None;
    for i in 0..ActivityLabel::COUNT {
        if !present[i] {
            continue;
        }
        if best.is_none_or(|(_, s)| scores[i] > s) {
            best = Some((i, scores[i]));
        }
    }
    ActivityLabel::from_index(best.map_or(0, |(i, _)| i)).expect("valid index")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_class() -> Dataset {
        Dataset::new(
            vec![vec![0.0], vec![0.1], vec![1.0], vec![1.1]],
            vec![ActivityLabel::Walk, ActivityLabel::Walk, ActivityLabel::Run, ActivityLabel::Run],
            FeatureMask::RearOnly,
        )
        .unwrap()
    }

    #[test]
    fn single_class_rejected() {
        let d = Dataset::new(vec![vec![0.0], vec![1.0]], vec![ActivityLabel::St; 2], FeatureMask::FrontOnly).unwrap();
        for kind in ClassifierKind::defaults() {
            assert!(matches!(train(&ClassifierSpec::new(kind, 0), &d), Err(Error::Data(_))));
        }
    }

    #[test]
    fn dimension_mismatch() {
        let m = train(&ClassifierSpec::new(ClassifierKind::Knn { k: 1 }, 0), &two_class()).unwrap();
        assert!(matches!(m.predict(&[0.0, 1.0]), Err(Error::Dimension { expected: 1, got: 2 })));
        assert!(Dataset::new(vec![vec![0.0, 1.0]], vec![ActivityLabel::St], FeatureMask::RearOnly).is_err());
    }

    #[test]
    fn every_classifier_separates_trivial_data() {
        let d = two_class();
        for kind in ClassifierKind::defaults() {
            let kind = match kind {
                ClassifierKind::Knn { .. } => ClassifierKind::Knn { k: 1 },
                ClassifierKind::DecisionTree { .. } => ClassifierKind::DecisionTree { min_leaf: 1 },
                other => other,
            };
            let m = train(&ClassifierSpec::new(kind, 1), &d).unwrap();
            assert_eq!(m.predict(&[0.05]).unwrap(), ActivityLabel::Walk, "{kind}");
            assert_eq!(m.predict(&[1.05]).unwrap(), ActivityLabel::Run, "{kind}");
        }
    }

    #[test]
    fn classifier_names_parse() {
        assert_eq!("knn:5".parse::<ClassifierKind>().unwrap(), ClassifierKind::Knn { k: 5 });
        assert_eq!("rf".parse::<ClassifierKind>().unwrap(), ClassifierKind::RandomForest { n_trees: 100, min_leaf: 1 });
        assert_eq!("tree".parse::<ClassifierKind>().unwrap(), ClassifierKind::DecisionTree { min_leaf: 2 });
        for k in ClassifierKind::defaults() {
            assert_eq!(k.to_string().parse::<ClassifierKind>().unwrap(), k);
        }
        assert!("svm".parse::<ClassifierKind>().is_err());
        assert!("knn:0".parse::<ClassifierKind>().is_err());
    }

    #[test]
    fn tie_break_prefers_fixed_order() {
        let scores = [1.0, 2.0, 2.0, 0.0, 2.0];
        let present = [true; 5];
        assert_eq!(argmax_label(&scores, &present), ActivityLabel::Run);
    }
}
