use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::circuit::VoltageTrace;
use crate::classify::{confusion_to_csv, cross_validate, ClassifierKind, ClassifierSpec, Dataset, FeatureMask};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::pipeline::{cmd_pipeline, cmd_simulate, summary_text};
use crate::power::{payload_for, rows_to_csv, rows_to_text, scenario, SensingPowerParams, TxProfile};
use crate::sampler::{estimate_rates, extract_features, read_features, samples_to_csv, sparse_sample, write_features};
use crate::activity::PehPosition;

#[derive(Debug, Parser)]
#[command(name = "kehsense", version, about = "Activity recognition from harvester charging rates")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// key=value configuration file; defaults apply to missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one setting, e.g. `--set sampler.t_c_s=4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    pub fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        for o in &self.overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{o}`")))?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate front and rear capacitor traces for every subject.
    Simulate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample one trace every t_c seconds through the ADC.
    Sample {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        trace: PathBuf,
        /// Accumulation window; defaults to `sampler.t_c_s`.
        #[arg(long)]
        t_c: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fuse front and rear traces into (r_rear, r_front) feature vectors.
    Features {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        front: PathBuf,
        #[arg(long)]
        rear: PathBuf,
        #[arg(long)]
        t_c: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-validate a classifier on feature files.
    Classify {
        /// Feature CSV files; their rows are pooled.
        #[arg(long = "features", required = true, num_args = 1..)]
        features: Vec<PathBuf>,
        #[arg(long, default_value = "fused")]
        mask: FeatureMask,
        #[arg(long, default_value = "rf:100:1")]
        classifier: ClassifierKind,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[arg(long, default_value_t = 10)]
        repetitions: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Directory for report.json, confusion.csv and summary.txt.
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate, sample and classify across the configured window sweep.
    Pipeline {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sensing, transmission and system power comparison.
    Power {
        /// Dense sampling rate of the accelerometer-style baseline.
        #[arg(long, default_value_t = 25.0)]
        baseline_hz: f64,
        /// Sparse capacitor sampling rate.
        #[arg(long, default_value_t = 0.2)]
        rate_hz: f64,
        /// Reporting period in seconds.
        #[arg(long, default_value_t = 5.0)]
        period: f64,
        /// MCU deep-sleep power in microwatts.
        #[arg(long)]
        sleep_uw: Option<f64>,
        /// Adds a row with this payload (bytes) at the sparse rate.
        #[arg(long)]
        payload: Option<u32>,
        /// Adds a row sampling at this rate.
        #[arg(long)]
        n_hz: Option<f64>,
        #[arg(long)]
        csv: bool,
    },
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn position_of(path: &Path) -> PehPosition {
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
    if name.contains("rear") {
        PehPosition::Rear
    } else {
        PehPosition::Front
    }
}

/// Runs a parsed command, returning text for stdout.
pub fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Simulate { config, out } => {
            let cfg = config.load()?;
            let s = cmd_simulate(&cfg, &out)?;
            Ok(format!("wrote {} files to {}\n", s.files.len(), out.display()))
        }
        Command::Sample { config, trace, t_c, out } => {
            let cfg = config.load()?;
            let sc = cfg.sampler(t_c.unwrap_or(cfg.t_c));
            sc.validate()?;
            let tr = VoltageTrace::<f64>::read_csv(&trace)?;
            let samples = sparse_sample(&tr, &sc)?;
            let est = estimate_rates(&samples, &sc, position_of(&trace));
            write(&out, &samples_to_csv(&samples))?;
            let d = est.diagnostics;
            Ok(format!(
                "{} samples, {} windows: {} retained, {} flat, {} non-increasing, {} across activity changes\n",
                samples.len(),
                d.windows,
                d.retained,
                d.flat,
                d.discarded_non_increasing,
                d.discarded_transition
            ))
        }
        Command::Features {
            config,
            front,
            rear,
            t_c,
            out,
        } => {
            let cfg = config.load()?;
            let sc = cfg.sampler(t_c.unwrap_or(cfg.t_c));
            sc.validate()?;
            let f = VoltageTrace::<f64>::read_csv(&front)?;
            let r = VoltageTrace::<f64>::read_csv(&rear)?;
            let feats = extract_features(&f, &r, &sc)?;
            write_features(&out, &feats)?;
            Ok(format!("{} feature vectors written to {}\n", feats.len(), out.display()))
        }
        Command::Classify {
            features,
            mask,
            classifier,
            folds,
            repetitions,
            seed,
            out,
        } => {
            let mut all = Vec::new();
            for p in &features {
                all.extend(read_features::<f64>(p)?);
            }
            let data = Dataset::from_features(&all, mask)?;
            let report = cross_validate(&ClassifierSpec::new(classifier, seed), &data, folds, repetitions, seed)?;
            write(&out.join("report.json"), &report.to_json())?;
            write(&out.join("confusion.csv"), &confusion_to_csv(&report.confusion))?;
            let text = report.summary_text();
            write(&out.join("summary.txt"), &text)?;
            Ok(text)
        }
        Command::Pipeline { config, out } => {
            let cfg = config.load()?;
            let summary = cmd_pipeline(&cfg, &out)?;
            Ok(summary_text(&summary))
        }
        Command::Power {
            baseline_hz,
            rate_hz,
            period,
            sleep_uw,
            payload,
            n_hz,
            csv,
        } => {
            if !(period > 0.0 && period.is_finite()) {
                return Err(Error::Config("--period must be positive".into()));
            }
            let params = |n: f64| {
                let mut p = SensingPowerParams::<f64>::measured(n);
                if let Some(s) = sleep_uw {
                    p.p_sleep = s;
                }
                p
            };
            let radio = TxProfile::default();
            let mut rows = vec![
                scenario(
                    format!("baseline-{baseline_hz}Hz"),
                    params(baseline_hz),
                    payload_for(baseline_hz, period),
                    period,
                    &radio,
                )?,
                scenario(
                    format!("capacitor-{rate_hz}Hz"),
                    params(rate_hz),
                    payload_for(rate_hz, period),
                    period,
                    &radio,
                )?,
            ];
            if payload.is_some() || n_hz.is_some() {
                let n = n_hz.unwrap_or(rate_hz);
                let bytes = payload.unwrap_or_else(|| payload_for(n, period));
                rows.push(scenario(format!("custom-{n}Hz-{bytes}B"), params(n), bytes, period, &radio)?);
            }
            Ok(if csv { rows_to_csv(&rows) } else { rows_to_text(&rows) })
        }
    }
}

/// Maps an outcome to the process exit code: 0 success, 2 configuration
/// error, 1 anything else.
pub fn exit_code(result: &Result<String>) -> i32 {
    match result {
        Ok(_) => 0,
        Err(e) if e.is_config() => 2,
        Err(_) => 1,
    }
}
