use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activity::ActivityLabel;
use crate::error::{Error, Result};
use crate::seed;

use super::{train, ClassifierSpec, Dataset, FeatureMask};

const K: usize = ActivityLabel::COUNT;

/// Result of repeated stratified k-fold cross-validation.
///
/// `confusion` is summed over all repetitions (rows = true label, columns =
/// predicted), so each row sums to `repetitions * class_counts[row]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classifier: ClassifierSpec,
    pub mask: FeatureMask,
    pub folds: usize,
    pub repetitions: usize,
    pub seed: u64,
    pub n_instances: usize,
    pub class_counts: [usize; K],
    /// Percent.
    pub accuracy_mean: f64,
    /// Percent; sample standard deviation over repetitions.
    pub accuracy_std: f64,
    pub repetition_accuracy: Vec<f64>,
    pub confusion: [[u64; K]; K],
    /// Percent per label; `None` for labels absent from the data.
    pub per_class_tpr: [Option<f64>; K],
}

impl EvalReport {
    /// Accuracy implied by the confusion matrix, in percent.
    pub fn confusion_accuracy(&self) -> f64 {
        let total: u64 = self.confusion.iter().flatten().sum();
        let trace: u64 = (0..K).map(|i| self.confusion[i][i]).sum();
        100.0 * trace as f64 / total as f64
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn summary_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "classifier: {}", self.classifier.kind);
        let _ = writeln!(s, "features: {}", self.mask);
        let _ = writeln!(
            s,
            "instances: {} ({} folds x {} repetitions)",
            self.n_instances, self.folds, self.repetitions
        );
        let _ = writeln!(s, "accuracy: {:.2}% +/- {:.2}", self.accuracy_mean, self.accuracy_std);
        for l in ActivityLabel::ALL {
            if let Some(t) = self.per_class_tpr[l.index()] {
                let _ = writeln!(s, "tpr {:<4} {:6.2}%", l.as_str(), t);
            }
        }
        s
    }
}

/// Confusion matrix as CSV: a `true\pred` header row followed by one row per
/// true label.
pub fn confusion_to_csv(confusion: &[[u64; K]; K]) -> String {
    let mut s = String::from("true\\pred");
    for l in ActivityLabel::ALL {
        s.push(',');
        s.push_str(l.as_str());
    }
    s.push('\n');
    for l in ActivityLabel::ALL {
        s.push_str(l.as_str());
        for c in &confusion[l.index()] {
            let _ = write!(s, ",{c}");
        }
        s.push('\n');
    }
    s
}

/// Assigns each instance a fold in `0..folds`. Each class is shuffled and
/// dealt round-robin, continuing the deal across classes so fold sizes
/// differ by at most one.
pub fn stratified_folds(labels: &[ActivityLabel], folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = seed::rng(seed);
    let mut assign = vec![0; labels.len()];
    let mut next = 0;
    for l in ActivityLabel::ALL {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == l).collect();
        idx.shuffle(&mut rng);
        for i in idx {
            assign[i] = next % folds;
            next += 1;
        }
    }
    assign
}

fn check_cv(data: &Dataset, folds: usize, repetitions: usize) -> Result<()> {
    if folds < 2 {
        return Err(Error::config("cross-validation needs at least 2 folds"));
    }
    if repetitions == 0 {
        return Err(Error::config("cross-validation needs at least 1 repetition"));
    }
    if data.n_classes() < 2 {
        return Err(Error::Data("cross-validation needs at least two classes".into()));
    }
    let counts = data.class_counts();
    if let Some(l) = ActivityLabel::ALL
        .into_iter()
        .find(|l| counts[l.index()] > 0 && counts[l.index()] < folds)
    {
        return Err(Error::Data(format!(
            "class {l} has {} instances, fewer than {folds} folds",
            counts[l.index()]
        )));
    }
    Ok(())
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

fn tpr(confusion: &[[u64; K]; K]) -> [Option<f64>; K] {
    std::array::from_fn(|i| {
        let row: u64 = confusion[i].iter().sum();
        (row > 0).then(|| 100.0 * confusion[i][i] as f64 / row as f64)
    })
}

/// Repeated stratified cross-validation. Every (repetition, fold) pair gets
/// its own derived seed, so the report does not depend on evaluation order.
pub fn cross_validate(
    spec: &ClassifierSpec,
    data: &Dataset,
    folds: usize,
    repetitions: usize,
    seed: u64,
) -> Result<EvalReport> {
    check_cv(data, folds, repetitions)?;
    let cv_root = seed::derive(seed, "cv");
    let assignments: Vec<Vec<usize>> = (0..repetitions)
        .map(|r| stratified_folds(data.labels(), folds, seed::derive_index(cv_root, r as u64)))
        .collect();
    let jobs: Vec<(usize, usize)> = (0..repetitions).flat_map(|r| (0..folds).map(move |f| (r, f))).collect();
    let results: Vec<Result<[[u64; K]; K]>> = jobs
        .par_iter()
        .map(|&(r, f)| {
            let assign = &assignments[r];
            let (test, training): (Vec<usize>, Vec<usize>) = (0..data.len()).partition(|&i| assign[i] == f);
            let model_seed = seed::derive_index(seed::derive_index(spec.seed, r as u64), f as u64);
            let model = train(&ClassifierSpec::new(spec.kind, model_seed), &data.subset(&training))?;
            let mut m = [[0u64; K]; K];
            for i in test {
                let pred = model.predict(data.point(i))?;
                m[data.label(i).index()][pred.index()] += 1;
            }
            Ok(m)
        })
        .collect();
    let mut confusion = [[0u64; K]; K];
    let mut per_rep = vec![[[0u64; K]; K]; repetitions];
    for (&(r, _), m) in jobs.iter().zip(results) {
        let m = m?;
        for i in 0..K {
            for j in 0..K {
                per_rep[r][i][j] += m[i][j];
                confusion[i][j] += m[i][j];
            }
        }
    }
    let repetition_accuracy: Vec<f64> = per_rep
        .iter()
        .map(|m| {
            let trace: u64 = (0..K).map(|i| m[i][i]).sum();
            100.0 * trace as f64 / data.len() as f64
        })
        .collect();
    let (accuracy_mean, accuracy_std) = mean_std(&repetition_accuracy);
    Ok(EvalReport {
        classifier: *spec,
        mask: data.mask,
        folds,
        repetitions,
        seed,
        n_instances: data.len(),
        class_counts: data.class_counts(),
        accuracy_mean,
        accuracy_std,
        repetition_accuracy,
        per_class_tpr: tpr(&confusion),
        confusion,
    })
}

/// Per-group (per-subject) cross-validation and its average.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupedReport {
    pub groups: Vec<(String, EvalReport)>,
    /// Mean of per-group accuracies, percent.
    pub accuracy_mean: f64,
    /// Sample standard deviation across groups, percent.
    pub accuracy_std: f64,
    pub confusion: [[u64; K]; K],
    pub per_class_tpr: [Option<f64>; K],
}

impl GroupedReport {
    /// Averages per-group reports; panics on an empty list.
    pub fn from_reports(groups: Vec<(String, EvalReport)>) -> Self {
        assert!(!groups.is_empty(), "no groups");
        let accs: Vec<f64> = groups.iter().map(|(_, r)| r.accuracy_mean).collect();
        let (accuracy_mean, accuracy_std) = mean_std(&accs);
        let mut confusion = [[0u64; K]; K];
        for (_, r) in &groups {
            for i in 0..K {
                for j in 0..K {
                    confusion[i][j] += r.confusion[i][j];
                }
            }
        }
        GroupedReport {
            groups,
            accuracy_mean,
            accuracy_std,
            per_class_tpr: tpr(&confusion),
            confusion,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Runs [`cross_validate`] separately for each group; group seeds derive
/// from `seed` and the group id.
pub fn cross_validate_grouped(
    spec: &ClassifierSpec,
    groups: &[(String, Dataset)],
    folds: usize,
    repetitions: usize,
    seed: u64,
) -> Result<GroupedReport> {
    if groups.is_empty() {
        return Err(Error::Data("no groups to evaluate".into()));
    }
    let reports = groups
        .iter()
        .map(|(id, data)| {
            let s = seed::derive(seed, id);
            cross_validate(spec, data, folds, repetitions, s).map(|r| (id.clone(), r))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GroupedReport::from_reports(reports))
}
#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::ClassifierKind;

    fn blobs(n_per: usize) -> Dataset {
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        for (c, l) in ActivityLabel::ALL.into_iter().enumerate() {
            for i in 0..n_per {
                pts.push(vec![c as f64 + 0.01 * i as f64, 0.5 * c as f64]);
                labels.push(l);
            }
        }
        Dataset::new(pts, labels, FeatureMask::Fused).unwrap()
    }

    #[test]
    fn folds_are_stratified_partitions() {
        let d = blobs(23);
        let a = stratified_folds(d.labels(), 10, 3);
        for l in ActivityLabel::ALL {
            let mut per = [0; 10];
            for i in 0..d.len() {
                if d.label(i) == l {
                    per[a[i]] += 1;
                }
            }
            assert!(per.iter().max().unwrap() - per.iter().min().unwrap() <= 1);
        }
        let mut sizes = [0; 10];
        a.iter().for_each(|&f| sizes[f] += 1);
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn separable_data_scores_perfectly() {
        let d = blobs(12);
        for kind in ClassifierKind::defaults() {
            let r = cross_validate(&ClassifierSpec::new(kind, 1), &d, 10, 2, 7).unwrap();
            assert_eq!(r.accuracy_mean, 100.0, "{kind}");
            assert!((r.confusion_accuracy() - r.accuracy_mean).abs() < 1e-9);
            for i in 0..K {
                assert_eq!(r.confusion[i].iter().sum::<u64>(), 2 * 12);
            }
        }
    }

    #[test]
    fn uninformative_feature_gives_majority_rate() {
        let mut labels = vec![ActivityLabel::Walk; 60];
        labels.extend(vec![ActivityLabel::Run; 20]);
        let pts = vec![vec![1.0]; 80];
        let d = Dataset::new(pts, labels, FeatureMask::RearOnly).unwrap();
        let r = cross_validate(&ClassifierSpec::new(ClassifierKind::Knn { k: 3 }, 0), &d, 10, 3, 1).unwrap();
        assert!((r.accuracy_mean - 75.0).abs() < 1e-9);
    }

    #[test]
    fn underpopulated_class_rejected() {
        let d = blobs(3);
        let spec = ClassifierSpec::new(ClassifierKind::Knn { k: 1 }, 0);
        assert!(matches!(cross_validate(&spec, &d, 10, 1, 0), Err(Error::Data(_))));
        assert!(cross_validate(&spec, &d, 1, 1, 0).unwrap_err().is_config());
    }

    #[test]
    fn confusion_csv_layout() {
        let mut m = [[0u64; K]; K];
        m[0][0] = 3;
        m[4][1] = 2;
        let csv = confusion_to_csv(&m);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "true\\pred,WALK,RUN,SU,SD,ST");
        assert_eq!(lines[1], "WALK,3,0,0,0,0");
        assert_eq!(lines[5], "ST,0,2,0,0,0");
    }

    #[test]
    fn grouped_averages_groups() {
        let spec = ClassifierSpec::new(ClassifierKind::Knn { k: 1 }, 0);
        let g = vec![("a".to_string(), blobs(10)), ("b".to_string(), blobs(11))];
        let r = cross_validate_grouped(&spec, &g, 5, 1, 3).unwrap();
        assert_eq!(r.groups.len(), 2);
        assert_eq!(r.accuracy_mean, 100.0);
    }
}
