//! Plain-text `key=value` experiment configuration with embedded defaults.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::activity::{format_schedule, parse_schedule, ActivityLabel, ProfileTable, SubjectParams, MIN_SEGMENT_S};
use crate::circuit::{check_linearity, BuckSpec, CapacitorSpec, CircuitSpec, REFERENCE_SOURCE_V};
use crate::classify::ClassifierKind;
use crate::error::{Error, Result};
use crate::sampler::{AdcSpec, SamplerConfig, SamplingPhase};
use crate::seed;

pub const T_C_RANGE: (f64, f64) = (1.0, 10.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhaseMode {
    Aligned,
    /// Per subject and harvester offset derived from the root seed.
    Random,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubjectEntry {
    pub id: String,
    pub intensity_scale: f64,
    pub cadence_scale: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub capacitor: CapacitorSpec<f64>,
    pub buck: BuckSpec<f64>,
    pub r_series: f64,
    /// Integration step.
    pub sim_dt: f64,
    /// Resolution of the generated source signals.
    pub signal_dt: f64,
    pub v0: f64,
    /// Grid of the exported trace files.
    pub export_dt: f64,
    pub adc: AdcSpec<f64>,
    pub t_c: f64,
    pub phase: PhaseMode,
    pub flat_epsilon: f64,
    pub flat_drop_floor: f64,
    pub activity: ProfileTable,
    pub subjects: Vec<SubjectEntry>,
    pub schedule: Vec<(ActivityLabel, f64)>,
    pub classifiers: Vec<ClassifierKind>,
    pub folds: usize,
    pub repetitions: usize,
    pub sweep_t_c: Vec<f64>,
}

const DEFAULT_SUBJECTS: [(&str, f64, f64); 10] = [
    ("S01", 1.00, 1.00),
    ("S02", 0.96, 1.04),
    ("S03", 1.04, 0.96),
    ("S04", 0.93, 1.02),
    ("S05", 1.02, 0.94),
    ("S06", 0.98, 1.06),
    ("S07", 1.05, 1.00),
    ("S08", 0.95, 0.98),
    ("S09", 1.01, 1.03),
    ("S10", 0.97, 0.97),
];

impl Default for ExperimentConfig {
    fn default() -> Self {
        let circuit = CircuitSpec::<f64>::prototype();
        use ActivityLabel::*;
        ExperimentConfig {
            seed: 42,
            capacitor: circuit.capacitor,
            buck: circuit.buck,
            r_series: circuit.r_series,
            sim_dt: 0.001,
            signal_dt: 0.01,
            v0: 0.0,
            export_dt: 0.01,
            adc: AdcSpec::prototype(),
            t_c: 5.0,
            phase: PhaseMode::Aligned,
            flat_epsilon: 1e-4,
            flat_drop_floor: 0.01,
            activity: ProfileTable::default(),
            subjects: DEFAULT_SUBJECTS
                .iter()
                .map(|&(id, i, c)| SubjectEntry {
                    id: id.into(),
                    intensity_scale: i,
                    cadence_scale: c,
                })
                .collect(),
            schedule: vec![(Walk, 1200.0), (Run, 2400.0), (Su, 1800.0), (Sd, 1500.0), (St, 600.0)],
            classifiers: vec![ClassifierKind::RandomForest {
                n_trees: 100,
                min_leaf: 1,
            }],
            folds: 10,
            repetitions: 10,
            sweep_t_c: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(format!("{key}: `{value}` is not a valid number")))
}

fn resistance(key: &str, value: &str) -> Result<f64> {
    match value.trim() {
        "inf" | "none" => Ok(f64::INFINITY),
        v => num(key, v),
    }
}

fn list<T>(value: &str, f: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(f).collect()
}

impl ExperimentConfig {
    /// Applies one `key=value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        let v = value.trim();
        match key {
            "seed" => self.seed = num(key, v)?,
            "capacitor.capacitance_f" => self.capacitor.capacitance = num(key, v)?,
            "capacitor.v_rating_v" => self.capacitor.v_rating = num(key, v)?,
            "capacitor.leak_resistance_ohm" => self.capacitor.leak_resistance = resistance(key, v)?,
            "buck.v_uvlo_rising_v" => self.buck.v_uvlo_rising = num(key, v)?,
            "buck.v_uvlo_falling_v" => self.buck.v_uvlo_falling = num(key, v)?,
            "buck.discharge_duration_s" => self.buck.discharge_duration = num(key, v)?,
            "source.r_series_ohm" => self.r_series = num(key, v)?,
            "sim.dt_s" => self.sim_dt = num(key, v)?,
            "sim.signal_dt_s" => self.signal_dt = num(key, v)?,
            "sim.v0_v" => self.v0 = num(key, v)?,
            "export.dt_s" => self.export_dt = num(key, v)?,
            "adc.bits" => self.adc.bits = num(key, v)?,
            "adc.v_ref_v" => self.adc.v_ref = num(key, v)?,
            "sampler.t_c_s" => self.t_c = num(key, v)?,
            "sampler.phase" => {
                self.phase = match v {
                    "aligned" => PhaseMode::Aligned,
                    "random" => PhaseMode::Random,
                    other => return Err(Error::config(format!("sampler.phase: unknown mode `{other}`"))),
                }
            }
            "sampler.flat_epsilon_vps" => self.flat_epsilon = num(key, v)?,
            "sampler.flat_drop_floor_vps" => self.flat_drop_floor = num(key, v)?,
            "subjects" => {
                self.subjects = list(v, |item| {
                    let parts: Vec<&str> = item.split(':').collect();
                    match parts[..] {
                        [id] => Ok(SubjectEntry {
                            id: id.into(),
                            intensity_scale: 1.0,
                            cadence_scale: 1.0,
                        }),
                        [id, i, c] => Ok(SubjectEntry {
                            id: id.into(),
                            intensity_scale: num(key, i)?,
                            cadence_scale: num(key, c)?,
                        }),
                        _ => Err(Error::config(format!("subject `{item}` must be id or id:intensity:cadence"))),
                    }
                })?
            }
            "schedule" => self.schedule = parse_schedule(v)?,
            "classifiers" => self.classifiers = list(v, str::parse)?,
            "cv.folds" => self.folds = num(key, v)?,
            "cv.repetitions" => self.repetitions = num(key, v)?,
            "sweep.t_c_s" => self.sweep_t_c = list(v, |x| num(key, x))?,
            k => match k.strip_prefix("activity.") {
                Some(rest) => self.activity.set(rest, v)?,
                None => return Err(Error::config(format!("unknown configuration key `{k}`"))),
            },
        }
        Ok(())
    }

    /// Parses a config file body on top of the defaults. `#` starts a
    /// comment; blank lines are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        cfg.apply(text)?;
        Ok(cfg)
    }

    pub fn apply(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(Error::Parse {
                line: i + 1,
                msg: format!("expected key=value, got `{line}`"),
            })?;
            self.set(k, v).map_err(|e| match e {
                Error::Config(msg) => Error::Parse { line: i + 1, msg },
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.circuit().validate()?;
        if !(self.sim_dt > 0.0 && self.sim_dt <= self.buck.max_step()) {
            return Err(Error::config(format!(
                "sim.dt_s={} outside (0, {}]",
                self.sim_dt,
                self.buck.max_step()
            )));
        }
        if !(self.signal_dt > 0.0 && self.signal_dt.is_finite()) {
            return Err(Error::config("sim.signal_dt_s must be positive"));
        }
        if !(0.0..=self.capacitor.v_rating).contains(&self.v0) {
            return Err(Error::config("sim.v0_v outside [0, capacitor rating]"));
        }
        self.export_factor()?;
        self.sampler(self.t_c).validate()?;
        if self.adc.v_ref < self.capacitor.v_rating.min(self.buck.v_uvlo_rising) {
            return Err(Error::config("adc.v_ref_v below the highest observable capacitor voltage"));
        }
        for &t in std::iter::once(&self.t_c).chain(&self.sweep_t_c) {
            if !(T_C_RANGE.0..=T_C_RANGE.1).contains(&t) {
                return Err(Error::config(format!(
                    "accumulation window {t} s outside [{}, {}] s",
                    T_C_RANGE.0, T_C_RANGE.1
                )));
            }
        }
        if self.sweep_t_c.is_empty() {
            return Err(Error::config("sweep.t_c_s is empty"));
        }
        self.activity.validate()?;
        if self.subjects.is_empty() {
            return Err(Error::config("no subjects configured"));
        }
        let mut ids = BTreeSet::new();
        for s in self.subject_params() {
            s.validate()?;
            if !ids.insert(s.id.clone()) {
                return Err(Error::config(format!("duplicate subject id `{}`", s.id)));
            }
        }
        if self.schedule.is_empty() {
            return Err(Error::config("empty activity schedule"));
        }
        if let Some((l, d)) = self.schedule.iter().find(|(_, d)| !(*d >= MIN_SEGMENT_S)) {
            return Err(Error::config(format!(
                "schedule segment {l} lasts {d} s; minimum is {MIN_SEGMENT_S} s"
            )));
        }
        if self.classifiers.is_empty() {
            return Err(Error::config("no classifiers configured"));
        }
        if self.folds < 2 || self.repetitions == 0 {
            return Err(Error::config("cv.folds must be >= 2 and cv.repetitions >= 1"));
        }
        self.check_linearity()
    }

    /// Rejects capacitors whose charging curve would leave the near-linear
    /// region before the rising threshold, for the reference source and for
    /// every configured mean source level.
    fn check_linearity(&self) -> Result<()> {
        let mut sources = vec![REFERENCE_SOURCE_V];
        for s in &self.subjects {
            for l in ActivityLabel::ALL {
                for p in crate::activity::PehPosition::ALL {
                    let v = self.activity.get(l, p).v_s_mean * s.intensity_scale;
                    if v > 0.0 {
                        sources.push(v);
                    }
                }
            }
        }
        for v_s in sources {
            let r = check_linearity(&self.capacitor, &self.buck, v_s);
            if !r.ok {
                return Err(Error::config(format!(
                    "linearity check failed: V_max = {:.2} V (rating {:.2} V, source {:.2} V) but {:.2} V is required",
                    r.v_max, self.capacitor.v_rating, v_s, r.v_max_required
                )));
            }
        }
        Ok(())
    }

    pub fn circuit(&self) -> CircuitSpec<f64> {
        CircuitSpec {
            capacitor: self.capacitor,
            buck: self.buck,
            r_series: self.r_series,
        }
    }

    /// Sampler settings for one accumulation window. `phase_seed` feeds
    /// the random phase mode.
    pub fn sampler(&self, t_c: f64) -> SamplerConfig<f64> {
        SamplerConfig {
            t_c,
            adc: self.adc,
            phase: SamplingPhase::Aligned,
            flat_epsilon: self.flat_epsilon,
            flat_drop_floor: self.flat_drop_floor,
        }
    }

    pub fn sampler_for(&self, t_c: f64, subject: &str) -> SamplerConfig<f64> {
        let mut s = self.sampler(t_c);
        if self.phase == PhaseMode::Random {
            s.phase = SamplingPhase::Random(seed::derive(self.seed, &format!("phase/{subject}")));
        }
        s
    }

    /// Decimation factor from the simulation grid to the export grid.
    pub fn export_factor(&self) -> Result<usize> {
        let f = self.export_dt / self.sim_dt;
        let r = f.round();
        if !(r >= 1.0 && (f - r).abs() < 1e-9 * r) {
            return Err(Error::config(format!(
                "export.dt_s={} must be a whole multiple of sim.dt_s={}",
                self.export_dt, self.sim_dt
            )));
        }
        Ok(r as usize)
    }

    pub fn subject_params(&self) -> Vec<SubjectParams> {
        self.subjects
            .iter()
            .map(|s| SubjectParams {
                id: s.id.clone(),
                intensity_scale: s.intensity_scale,
                cadence_scale: s.cadence_scale,
                rng_seed: seed::derive(self.seed, &format!("subject/{}", s.id)),
            })
            .collect()
    }

    /// Every setting as `key=value` lines; parsing the result reproduces
    /// this configuration exactly.
    pub fn to_manifest(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("seed", self.seed.to_string());
        kv("capacitor.capacitance_f", self.capacitor.capacitance.to_string());
        kv("capacitor.v_rating_v", self.capacitor.v_rating.to_string());
        kv(
            "capacitor.leak_resistance_ohm",
            if self.capacitor.leak_resistance.is_infinite() {
                "inf".into()
            } else {
                self.capacitor.leak_resistance.to_string()
            },
        );
        kv("buck.v_uvlo_rising_v", self.buck.v_uvlo_rising.to_string());
        kv("buck.v_uvlo_falling_v", self.buck.v_uvlo_falling.to_string());
        kv("buck.discharge_duration_s", self.buck.discharge_duration.to_string());
        kv("source.r_series_ohm", self.r_series.to_string());
        kv("sim.dt_s", self.sim_dt.to_string());
        kv("sim.signal_dt_s", self.signal_dt.to_string());
        kv("sim.v0_v", self.v0.to_string());
        kv("export.dt_s", self.export_dt.to_string());
        kv("adc.bits", self.adc.bits.to_string());
        kv("adc.v_ref_v", self.adc.v_ref.to_string());
        kv("sampler.t_c_s", self.t_c.to_string());
        kv(
            "sampler.phase",
            match self.phase {
                PhaseMode::Aligned => "aligned".into(),
                PhaseMode::Random => "random".into(),
            },
        );
        kv("sampler.flat_epsilon_vps", self.flat_epsilon.to_string());
        kv("sampler.flat_drop_floor_vps", self.flat_drop_floor.to_string());
        kv(
            "subjects",
            self.subjects
                .iter()
                .map(|s| format!("{}:{}:{}", s.id, s.intensity_scale, s.cadence_scale))
                .collect::<Vec<_>>()
                .join(","),
        );
        kv("schedule", format_schedule(&self.schedule));
        kv(
            "classifiers",
            self.classifiers.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(","),
        );
        kv("cv.folds", self.folds.to_string());
        kv("cv.repetitions", self.repetitions.to_string());
        kv(
            "sweep.t_c_s",
            self.sweep_t_c.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(","),
        );
        for line in self.activity.to_kv_lines() {
            s.push_str(&line);
            s.push('\n');
        }
        s
    }
}
