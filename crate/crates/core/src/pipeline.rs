//! End-to-end runs: simulate every subject, export traces, extract features
//! for a sweep of accumulation windows and cross-validate every classifier
//! on every feature mask.
//!
//! Outputs are staged in a temporary directory next to the destination and
//! moved into place only when the whole run succeeds.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activity::{generate_session, ActivityLabel, SubjectParams};
use crate::circuit::VoltageTrace;
use crate::classify::{confusion_to_csv, cross_validate, ClassifierKind, ClassifierSpec, Dataset, EvalReport, FeatureMask, GroupedReport};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::sampler::{extract_features, features_to_csv, FeatureVector};
use crate::seed;

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const AGGREGATE_CSV_HEADER: &str = "t_c_s,mask,classifier,n_subjects,accuracy_mean,accuracy_std";

#[derive(Clone, Debug)]
pub struct SubjectTraces {
    pub id: String,
    pub front: VoltageTrace<f64>,
    pub rear: VoltageTrace<f64>,
}

pub fn simulate_subject(cfg: &ExperimentConfig, subject: &SubjectParams) -> Result<SubjectTraces> {
    let (front, rear) = generate_session::<f64>(&cfg.schedule, subject, &cfg.activity, cfg.signal_dt)?;
    let circuit = cfg.circuit();
    Ok(SubjectTraces {
        id: subject.id.clone(),
        front: circuit.simulate(&front, cfg.sim_dt, cfg.v0)?,
        rear: circuit.simulate(&rear, cfg.sim_dt, cfg.v0)?,
    })
}

/// Simulates all subjects in parallel; the order follows the config.
pub fn simulate_all(cfg: &ExperimentConfig) -> Result<Vec<SubjectTraces>> {
    cfg.subject_params().par_iter().map(|s| simulate_subject(cfg, s)).collect()
}

fn fmt_t_c(t_c: f64) -> String {
    format!("{t_c}")
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Creates a staging directory beside `out`, which must be absent or an
/// empty directory.
fn stage(out: &Path) -> Result<tempfile::TempDir> {
    if out.exists() {
        let mut entries = fs::read_dir(out).map_err(|e| Error::io(out, e))?;
        if entries.next().is_some() {
            return Err(Error::io(
                out,
                std::io::Error::new(std::io::ErrorKind::AlreadyExists, "output directory is not empty"),
            ));
        }
    }
    let parent = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent).map_err(|e| Error::io(&parent, e))?;
    tempfile::Builder::new()
        .prefix(".kehsense-staging-")
        .tempdir_in(&parent)
        .map_err(|e| Error::io(&parent, e))
}

fn commit(staging: tempfile::TempDir, out: &Path) -> Result<()> {
    if out.exists() {
        fs::remove_dir(out).map_err(|e| Error::io(out, e))?;
    }
    let path = staging.keep();
    fs::rename(&path, out).map_err(|e| {
        let _ = fs::remove_dir_all(&path);
        Error::io(out, e)
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimulateSummary {
    pub files: Vec<PathBuf>,
}

/// Writes `<out>/<subject>/{front,rear}.csv` and `<out>/manifest.txt`.
pub fn cmd_simulate(cfg: &ExperimentConfig, out: &Path) -> Result<SimulateSummary> {
    cfg.validate()?;
    let factor = cfg.export_factor()?;
    let staging = stage(out)?;
    let traces = simulate_all(cfg)?;
    let mut files = vec![PathBuf::from(MANIFEST_FILE)];
    write(&staging.path().join(MANIFEST_FILE), &cfg.to_manifest())?;
    for t in &traces {
        for (name, trace) in [("front.csv", &t.front), ("rear.csv", &t.rear)] {
            let rel = Path::new(&t.id).join(name);
            write(&staging.path().join(&rel), &trace.decimate(factor)?.to_csv())?;
            files.push(rel);
        }
    }
    commit(staging, out)?;
    Ok(SimulateSummary { files })
}

/// Report for one (subject, window, mask, classifier) cell. Classes with
/// fewer retained windows than folds are left out of the evaluation and
/// listed in `dropped`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub subject: String,
    pub t_c: f64,
    pub dropped: Vec<(ActivityLabel, usize)>,
    pub report: EvalReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub t_c: f64,
    pub mask: FeatureMask,
    pub classifier: ClassifierKind,
    pub n_subjects: usize,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub cells: Vec<CellReport>,
    pub aggregate: Vec<AggregateRow>,
    /// Cells that could not be evaluated, with the reason.
    pub skipped: Vec<String>,
}

impl PipelineSummary {
    pub fn aggregate_csv(&self) -> String {
        let mut s = String::from(AGGREGATE_CSV_HEADER);
        s.push('\n');
        for r in &self.aggregate {
            let _ = writeln!(
                s,
                "{},{},{},{},{:.2},{:.2}",
                fmt_t_c(r.t_c),
                r.mask,
                r.classifier,
                r.n_subjects,
                r.accuracy_mean,
                r.accuracy_std
            );
        }
        s
    }

    pub fn accuracy(&self, t_c: f64, mask: FeatureMask, classifier: ClassifierKind) -> Option<f64> {
        self.aggregate
            .iter()
            .find(|r| r.t_c == t_c && r.mask == mask && r.classifier == classifier)
            .map(|r| r.accuracy_mean)
    }
}

/// Drops classes that cannot fill every fold.
fn evaluable(features: &[FeatureVector<f64>], folds: usize) -> (Vec<FeatureVector<f64>>, Vec<(ActivityLabel, usize)>) {
    let mut counts = [0usize; ActivityLabel::COUNT];
    for f in features {
        counts[f.label.index()] += 1;
    }
    let dropped: Vec<(ActivityLabel, usize)> = ActivityLabel::ALL
        .into_iter()
        .filter(|l| counts[l.index()] > 0 && counts[l.index()] < folds)
        .map(|l| (l, counts[l.index()]))
        .collect();
    let kept = features
        .iter()
        .filter(|f| counts[f.label.index()] >= folds)
        .copied()
        .collect();
    (kept, dropped)
}

/// Runs the full sweep in memory.
pub fn run_pipeline(cfg: &ExperimentConfig, traces: &[SubjectTraces]) -> Result<(PipelineSummary, Vec<(String, f64, String)>)> {
    let mut cells = Vec::new();
    let mut skipped = Vec::new();
    let mut feature_files = Vec::new();
    for t in traces {
        for &t_c in &cfg.sweep_t_c {
            let features = extract_features(&t.front, &t.rear, &cfg.sampler_for(t_c, &t.id))?;
            feature_files.push((t.id.clone(), t_c, features_to_csv(&features)));
            let (kept, dropped) = evaluable(&features, cfg.folds);
            let n_classes = kept.iter().map(|f| f.label).collect::<std::collections::BTreeSet<_>>().len();
            if n_classes < 2 {
                skipped.push(format!(
                    "subject {} t_c={} s: fewer than two classes with at least {} windows",
                    t.id, t_c, cfg.folds
                ));
                continue;
            }
            let cv_seed = seed::derive(cfg.seed, &format!("cv/{}/{}", t.id, fmt_t_c(t_c)));
            for mask in FeatureMask::ALL {
                let data = Dataset::from_features(&kept, mask)?;
                for &kind in &cfg.classifiers {
                    let spec = ClassifierSpec::new(kind, seed::derive(cv_seed, &kind.to_string()));
                    let report = cross_validate(&spec, &data, cfg.folds, cfg.repetitions, cv_seed)?;
                    cells.push(CellReport {
                        subject: t.id.clone(),
                        t_c,
                        dropped: dropped.clone(),
                        report,
                    });
                }
            }
        }
    }
    let mut aggregate = Vec::new();
    for &t_c in &cfg.sweep_t_c {
        for mask in FeatureMask::ALL {
            for &kind in &cfg.classifiers {
                let group: Vec<(String, EvalReport)> = cells
                    .iter()
                    .filter(|c| c.t_c == t_c && c.report.mask == mask && c.report.classifier.kind == kind)
                    .map(|c| (c.subject.clone(), c.report.clone()))
                    .collect();
                if group.is_empty() {
                    continue;
                }
                let g = GroupedReport::from_reports(group);
                aggregate.push(AggregateRow {
                    t_c,
                    mask,
                    classifier: kind,
                    n_subjects: g.groups.len(),
                    accuracy_mean: g.accuracy_mean,
                    accuracy_std: g.accuracy_std,
                });
            }
        }
    }
    Ok((
        PipelineSummary {
            cells,
            aggregate,
            skipped,
        },
        feature_files,
    ))
}

fn cell_stem(c: &CellReport) -> String {
    format!("{}_{}", c.report.mask, c.report.classifier.kind.to_string().replace(':', "-"))
}

/// Writes per-subject features and reports, an aggregate table averaged
/// over subjects, a text summary and the manifest.
///
/// Layout: `subjects/<id>/tc_<t>/{features.csv, <mask>_<clf>.json,
/// <mask>_<clf>_confusion.csv}`, `aggregate.csv`, `aggregate.json`,
/// `summary.txt`, `manifest.txt`.
pub fn cmd_pipeline(cfg: &ExperimentConfig, out: &Path) -> Result<PipelineSummary> {
    cfg.validate()?;
    let staging = stage(out)?;
    let root = staging.path();
    write(&root.join(MANIFEST_FILE), &cfg.to_manifest())?;
    let traces = simulate_all(cfg)?;
    let (summary, feature_files) = run_pipeline(cfg, &traces)?;
    for (id, t_c, csv) in &feature_files {
        let dir = root.join("subjects").join(id).join(format!("tc_{}", fmt_t_c(*t_c)));
        write(&dir.join("features.csv"), csv)?;
    }
    for c in &summary.cells {
        let dir = root.join("subjects").join(&c.subject).join(format!("tc_{}", fmt_t_c(c.t_c)));
        let stem = cell_stem(c);
        let json = serde_json::to_string_pretty(c).expect("report serializes");
        write(&dir.join(format!("{stem}.json")), &json)?;
        write(&dir.join(format!("{stem}_confusion.csv")), &confusion_to_csv(&c.report.confusion))?;
    }
    write(&root.join("aggregate.csv"), &summary.aggregate_csv())?;
    write(
        &root.join("aggregate.json"),
        &serde_json::to_string_pretty(&summary.aggregate).expect("rows serialize"),
    )?;
    write(&root.join("summary.txt"), &summary_text(&summary))?;
    commit(staging, out)?;
    Ok(summary)
}

pub fn summary_text(summary: &PipelineSummary) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:>6} {:<6} {:<10} {:>8} {:>10} {:>8}", "t_c", "mask", "classifier", "subjects", "accuracy", "std");
    for r in &summary.aggregate {
        let _ = writeln!(
            s,
            "{:>6} {:<6} {:<10} {:>8} {:>9.2}% {:>8.2}",
            fmt_t_c(r.t_c),
            r.mask.as_str(),
            r.classifier.to_string(),
            r.n_subjects,
            r.accuracy_mean,
            r.accuracy_std
        );
    }
    for note in &summary.skipped {
        let _ = writeln!(s, "skipped: {note}");
    }
    s
}
