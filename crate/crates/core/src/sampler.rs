//! Duty-cycled capacitor voltage sampling and charging-rate features.
//!
//! The MCU wakes once per accumulation window `t_c`, reads the quantized
//! capacitor voltage, and turns each pair of adjacent readings into a
//! charging rate. Pairs that did not increase are dropped since the buck
//! converter may have fired in between.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::activity::{ActivityLabel, PehPosition};
use crate::circuit::{BuckSpec, VoltageTrace};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seed;

pub const FEATURE_CSV_HEADER: &str = "t_end_s,r_rear_vps,r_front_vps,label";
pub const SAMPLE_CSV_HEADER: &str = "t_s,v_volts,level,label";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdcSpec<T> {
    pub bits: u32,
    pub v_ref: T,
}

impl<T: Scalar> AdcSpec<T> {
    pub fn new(bits: u32, v_ref: T) -> Result<Self> {
        let a = AdcSpec { bits, v_ref };
        a.validate()?;
        Ok(a)
    }

    /// 10-bit converter with a 5 V reference.
    pub fn prototype() -> Self {
        AdcSpec {
            bits: 10,
            v_ref: T::lit(5.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(8..=16).contains(&self.bits) {
            return Err(Error::config(format!("ADC resolution {} bits outside [8, 16]", self.bits)));
        }
        if !(self.v_ref > T::zero() && self.v_ref.is_finite()) {
            return Err(Error::config("ADC reference voltage must be positive"));
        }
        Ok(())
    }

    pub fn max_level(&self) -> u32 {
        (1u32 << self.bits) - 1
    }

    /// Volts per code.
    pub fn lsb(&self) -> T {
        self.v_ref / T::lit(self.max_level() as f64)
    }

    /// Nearest code (ties round down), clamped to the converter range.
    pub fn level(&self, v: T) -> u32 {
        let max = self.max_level() as f64;
        let x = v.as_f64() / self.v_ref.as_f64() * max;
        (x - 0.5).ceil().clamp(0.0, max) as u32
    }

    pub fn volts(&self, level: u32) -> T {
        T::lit(level as f64) * self.v_ref / T::lit(self.max_level() as f64)
    }

    pub fn quantize(&self, v: T) -> T {
        self.volts(self.level(v))
    }
}

/// Where the first wake-up falls inside the first window.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SamplingPhase {
    Aligned,
    /// Uniform offset in `[0, t_c)` drawn from the given seed.
    Random(u64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig<T> {
    /// Accumulation window and sampling period, seconds.
    pub t_c: T,
    pub adc: AdcSpec<T>,
    pub phase: SamplingPhase,
    /// Windows whose rate lies in `(-flat_drop_floor, flat_epsilon)` count
    /// as flat; flat on both harvesters yields a stationary `(0, 0)` vector.
    pub flat_epsilon: T,
    pub flat_drop_floor: T,
}

impl<T: Scalar> SamplerConfig<T> {
    pub fn new(t_c: T) -> Self {
        SamplerConfig {
            t_c,
            adc: AdcSpec::prototype(),
            phase: SamplingPhase::Aligned,
            flat_epsilon: T::lit(1e-4),
            flat_drop_floor: T::lit(0.01),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.adc.validate()?;
        if !(self.t_c > T::zero() && self.t_c.is_finite()) {
            return Err(Error::config("accumulation window must be positive"));
        }
        if !(self.flat_epsilon > T::zero() && self.flat_drop_floor >= T::zero()) {
            return Err(Error::config("flat-window thresholds must be positive"));
        }
        Ok(())
    }

    /// Worst-case rate error due to quantization: two codes over `t_c`.
    pub fn quantization_bound(&self) -> T {
        T::lit(2.0) * self.adc.lsb() / self.t_c
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SparseSample<T> {
    pub t: T,
    /// Index of the reading in the dense trace.
    pub index: usize,
    pub level: u32,
    pub v: T,
    pub label: ActivityLabel,
}

/// Wakes every `t_c` seconds and reads the quantized voltage.
pub fn sparse_sample<T: Scalar>(trace: &VoltageTrace<T>, cfg: &SamplerConfig<T>) -> Result<Vec<SparseSample<T>>> {
    cfg.validate()?;
    let dt = trace.dt.as_f64();
    let t_c = cfg.t_c.as_f64();
    if t_c < dt {
        return Err(Error::config(format!("accumulation window {t_c} s shorter than trace step {dt} s")));
    }
    let duration = trace.duration();
    if duration + 1e-9 < 2.0 * t_c {
        return Err(Error::Data(format!(
            "trace of {duration} s is shorter than two accumulation windows ({t_c} s)"
        )));
    }
    let offset = match cfg.phase {
        SamplingPhase::Aligned => 0.0,
        SamplingPhase::Random(s) => seed::rng(s).random_range(0.0..t_c),
    };
    let mut out = Vec::new();
    for k in 0.. {
        let t = offset + k as f64 * t_c;
        if t > duration + 1e-9 {
            break;
        }
        let index = ((t / dt).round() as usize).min(trace.len() - 1);
        let level = cfg.adc.level(trace.samples[index]);
        out.push(SparseSample {
            t: T::lit(t),
            index,
            level,
            v: cfg.adc.volts(level),
            label: trace.labels[index],
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateSample<T> {
    /// Index of the window's first reading in the sparse sequence.
    pub window: usize,
    pub t_end: T,
    /// Volts per second, always positive.
    pub r: T,
    /// Code difference across the window.
    pub delta_levels: u32,
    pub position: PehPosition,
    pub label: ActivityLabel,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlatWindow<T> {
    pub window: usize,
    pub t_end: T,
    pub r: T,
    pub label: ActivityLabel,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RateDiagnostics {
    pub windows: usize,
    pub retained: usize,
    pub flat: usize,
    /// Non-increasing windows, including flat ones.
    pub discarded_non_increasing: usize,
    /// Windows whose endpoints carry different activity labels.
    pub discarded_transition: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateEstimates<T> {
    pub position: PehPosition,
    pub rates: Vec<RateSample<T>>,
    pub flat: Vec<FlatWindow<T>>,
    pub diagnostics: RateDiagnostics,
}

/// Charging rate over each pair of adjacent readings,
/// `r = (V(t + t_c) - V(t)) / t_c`, kept only when `V(t + t_c) > V(t)`.
pub fn estimate_rates<T: Scalar>(
    samples: &[SparseSample<T>],
    cfg: &SamplerConfig<T>,
    position: PehPosition,
) -> RateEstimates<T> {
    let mut est = RateEstimates {
        position,
        rates: Vec::new(),
        flat: Vec::new(),
        diagnostics: RateDiagnostics::default(),
    };
    for (window, pair) in samples.windows(2).enumerate() {
        let (a, b) = (&pair[0], &pair[1]);
        est.diagnostics.windows += 1;
        if a.label != b.label {
            est.diagnostics.discarded_transition += 1;
            continue;
        }
        let r = (b.v - a.v) / cfg.t_c;
        if r < cfg.flat_epsilon && r > -cfg.flat_drop_floor {
            est.diagnostics.flat += 1;
            est.flat.push(FlatWindow {
                window,
                t_end: b.t,
                r,
                label: a.label,
            });
        }
        if b.v > a.v && r >= cfg.flat_epsilon {
            est.diagnostics.retained += 1;
            est.rates.push(RateSample {
                window,
                t_end: b.t,
                r,
                delta_levels: b.level - a.level,
                position,
                label: a.label,
            });
        } else if b.v <= a.v {
            est.diagnostics.discarded_non_increasing += 1;
        }
    }
    est
}

/// Two-dimensional feature `<r_rear, r_front>` for one window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector<T> {
    pub t_end: T,
    pub r_rear: T,
    pub r_front: T,
    pub label: ActivityLabel,
}

enum WindowOutcome<T> {
    Rate(T, ActivityLabel),
    Flat(ActivityLabel),
}

fn outcomes<T: Scalar>(est: &RateEstimates<T>) -> BTreeMap<usize, (T, WindowOutcome<T>)> {
    let mut m = BTreeMap::new();
    for r in &est.rates {
        m.insert(r.window, (r.t_end, WindowOutcome::Rate(r.r, r.label)));
    }
    for f in &est.flat {
        m.insert(f.window, (f.t_end, WindowOutcome::Flat(f.label)));
    }
    m
}

/// Pairs front and rear estimates window by window. A vector is emitted
/// only when both harvesters kept the window, or when both were flat.
pub fn fuse<T: Scalar>(front: &RateEstimates<T>, rear: &RateEstimates<T>) -> Vec<FeatureVector<T>> {
    let f = outcomes(front);
    let r = outcomes(rear);
    let mut out = Vec::new();
    for (window, (t_end, fo)) in &f {
        let Some((_, ro)) = r.get(window) else { continue };
        let v = match (fo, ro) {
            (WindowOutcome::Rate(rf, lf), WindowOutcome::Rate(rr, lr)) if lf == lr => (*rr, *rf, *lf),
            (WindowOutcome::Flat(lf), WindowOutcome::Flat(lr)) if lf == lr => (T::zero(), T::zero(), *lf),
            _ => continue,
        };
        out.push(FeatureVector {
            t_end: *t_end,
            r_rear: v.0,
            r_front: v.1,
            label: v.2,
        });
    }
    out
}

/// Samples both traces, estimates rates and fuses them.
pub fn extract_features<T: Scalar>(
    front: &VoltageTrace<T>,
    rear: &VoltageTrace<T>,
    cfg: &SamplerConfig<T>,
) -> Result<Vec<FeatureVector<T>>> {
    let fs = sparse_sample(front, cfg)?;
    let rs = sparse_sample(rear, cfg)?;
    if fs.len() != rs.len() {
        return Err(Error::Data("front and rear traces cover different timelines".into()));
    }
    let fe = estimate_rates(&fs, cfg, PehPosition::Front);
    let re = estimate_rates(&rs, cfg, PehPosition::Rear);
    Ok(fuse(&fe, &re))
}

/// Ground-truth classification of sampled windows against the dense trace.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowAudit {
    pub windows: usize,
    /// Windows during which the buck converter fired.
    pub with_discharge: usize,
    /// Discharge windows ending below their starting voltage.
    pub net_negative: usize,
    /// Net-negative windows that were nevertheless turned into a rate.
    pub net_negative_retained: usize,
    /// Discharge windows that re-climbed above the start and were kept;
    /// their rate underestimates the true charging rate.
    pub underestimated_retained: usize,
}

/// Audits the discard rule using the dense trace. A window contains a
/// discharge when the voltage draws down by at least half the UVLO
/// hysteresis inside it.
pub fn audit_windows<T: Scalar>(
    trace: &VoltageTrace<T>,
    samples: &[SparseSample<T>],
    estimates: &RateEstimates<T>,
    buck: &BuckSpec<T>,
) -> WindowAudit {
    let threshold = (buck.v_uvlo_rising - buck.v_uvlo_falling).as_f64() * 0.5;
    let retained: std::collections::HashSet<usize> = estimates.rates.iter().map(|r| r.window).collect();
    let mut audit = WindowAudit::default();
    for (window, pair) in samples.windows(2).enumerate() {
        audit.windows += 1;
        let span = &trace.samples[pair[0].index..=pair[1].index];
        let mut peak = f64::MIN;
        let mut drawdown = 0.0f64;
        for v in span.iter().map(|v| v.as_f64()) {
            peak = peak.max(v);
            drawdown = drawdown.max(peak - v);
        }
        if drawdown < threshold {
            continue;
        }
        audit.with_discharge += 1;
        let kept = retained.contains(&window);
        if span[span.len() - 1] < span[0] {
            audit.net_negative += 1;
            if kept {
                audit.net_negative_retained += 1;
            }
        } else if kept {
            audit.underestimated_retained += 1;
        }
    }
    audit
}

pub fn samples_to_csv<T: Scalar>(samples: &[SparseSample<T>]) -> String {
    let mut out = String::from(SAMPLE_CSV_HEADER);
    out.push('\n');
    for s in samples {
        let _ = writeln!(out, "{:.6},{:.6},{},{}", s.t.as_f64(), s.v.as_f64(), s.level, s.label);
    }
    out
}

pub fn features_to_csv<T: Scalar>(features: &[FeatureVector<T>]) -> String {
    let mut out = String::from(FEATURE_CSV_HEADER);
    out.push('\n');
    for f in features {
        let _ = writeln!(
            out,
            "{:.6},{:.6},{:.6},{}",
            f.t_end.as_f64(),
            f.r_rear.as_f64(),
            f.r_front.as_f64(),
            f.label
        );
    }
    out
}

pub fn features_from_csv<T: Scalar>(text: &str) -> Result<Vec<FeatureVector<T>>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end_matches('\r') == FEATURE_CSV_HEADER => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected header `{FEATURE_CSV_HEADER}`"),
            })
        }
    }
    let mut out = Vec::new();
    for (idx, raw) in lines {
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let bad = |msg: &str| Error::Parse {
            line: idx + 1,
            msg: format!("{msg}: `{line}`"),
        };
        let cols: Vec<&str> = line.split(',').collect();
        let [t, rr, rf, l] = cols[..] else {
            return Err(bad("expected 4 columns"));
        };
        let num = |s: &str| s.parse::<f64>().map(T::lit).map_err(|_| bad("bad number"));
        out.push(FeatureVector {
            t_end: num(t)?,
            r_rear: num(rr)?,
            r_front: num(rf)?,
            label: l.parse().map_err(|_| bad("bad label"))?,
        });
    }
    Ok(out)
}

pub fn write_features<T: Scalar>(path: &Path, features: &[FeatureVector<T>]) -> Result<()> {
    fs::write(path, features_to_csv(features)).map_err(|e| Error::io(path, e))
}

pub fn read_features<T: Scalar>(path: &Path) -> Result<Vec<FeatureVector<T>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    features_from_csv(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(values: &[f64], dt: f64, label: ActivityLabel) -> VoltageTrace<f64> {
        VoltageTrace::new(dt, values.to_vec(), vec![label; values.len()]).unwrap()
    }

    fn sample(t: f64, v: f64, label: ActivityLabel) -> SparseSample<f64> {
        let adc = AdcSpec::<f64>::prototype();
        let level = adc.level(v);
        SparseSample {
            t,
            index: 0,
            level,
            v: adc.volts(level),
            label,
        }
    }

    #[test]
    fn quantizer_arithmetic() {
        let adc = AdcSpec::<f64>::prototype();
        assert_eq!(adc.level(2.5), 511);
        assert!((adc.quantize(2.5) - 2.4976).abs() < 1e-4);
        assert_eq!(adc.level(5.0), 1023);
        assert_eq!(adc.quantize(5.0), 5.0);
        assert_eq!(adc.level(0.0), 0);
        assert_eq!(adc.level(7.0), 1023);
        for level in 0..=1023 {
            assert_eq!(adc.level(adc.volts(level)), level);
        }
        assert!(AdcSpec::new(7, 5.0).is_err());
        assert!(AdcSpec::new(17, 5.0).is_err());
    }

    #[test]
    fn samples_every_window() {
        let tr = trace(&vec![1.0; 2001], 0.01, ActivityLabel::Walk);
        let s = sparse_sample(&tr, &SamplerConfig::new(5.0)).unwrap();
        let times: Vec<f64> = s.iter().map(|s| s.t).collect();
        assert_eq!(times, vec![0.0, 5.0, 10.0, 15.0, 20.0]);
    }

    #[test]
    fn short_trace_rejected() {
        let tr = trace(&vec![1.0; 900], 0.01, ActivityLabel::Walk);
        assert!(matches!(sparse_sample(&tr, &SamplerConfig::new(5.0)), Err(Error::Data(_))));
    }

    #[test]
    fn random_phase_is_seeded() {
        let tr = trace(&vec![1.0; 2001], 0.01, ActivityLabel::Walk);
        let mut cfg = SamplerConfig::new(5.0);
        cfg.phase = SamplingPhase::Random(3);
        let a = sparse_sample(&tr, &cfg).unwrap();
        let b = sparse_sample(&tr, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a[0].t > 0.0 && a[0].t < 5.0);
    }

    #[test]
    fn rate_arithmetic_and_discard() {
        let cfg = SamplerConfig::new(5.0);
        let w = ActivityLabel::Walk;
        let s = vec![sample(0.0, 3.2, w), sample(5.0, 3.7, w), sample(10.0, 3.1, w)];
        let est = estimate_rates(&s, &cfg, PehPosition::Front);
        assert_eq!(est.rates.len(), 1);
        let r = est.rates[0];
        assert!((r.r - 0.1).abs() < 2.0 * cfg.adc.lsb() / 5.0);
        assert_eq!(r.r, (s[1].v - s[0].v) / 5.0);
        assert_eq!(r.delta_levels, s[1].level - s[0].level);
        assert_eq!(est.diagnostics.discarded_non_increasing, 1);
        assert!(est.flat.is_empty());
    }

    #[test]
    fn transitions_dropped() {
        let cfg = SamplerConfig::new(5.0);
        let s = vec![
            sample(0.0, 3.2, ActivityLabel::Walk),
            sample(5.0, 3.5, ActivityLabel::Run),
            sample(10.0, 3.9, ActivityLabel::Run),
        ];
        let est = estimate_rates(&s, &cfg, PehPosition::Rear);
        assert_eq!(est.diagnostics.discarded_transition, 1);
        assert_eq!(est.rates.len(), 1);
        assert_eq!(est.rates[0].label, ActivityLabel::Run);
    }

    #[test]
    fn flat_windows_fuse_to_stationary() {
        let cfg = SamplerConfig::new(5.0);
        let st = ActivityLabel::St;
        let front = vec![sample(0.0, 3.5, st), sample(5.0, 3.5, st)];
        let rear = vec![sample(0.0, 3.3, st), sample(5.0, 3.295, st)];
        let fe = estimate_rates(&front, &cfg, PehPosition::Front);
        let re = estimate_rates(&rear, &cfg, PehPosition::Rear);
        assert_eq!(fe.flat.len(), 1);
        assert_eq!(re.flat.len(), 1);
        let v = fuse(&fe, &re);
        assert_eq!(v.len(), 1);
        assert_eq!((v[0].r_rear, v[0].r_front, v[0].label), (0.0, 0.0, st));
    }

    #[test]
    fn fusion_is_both_or_nothing() {
        let cfg = SamplerConfig::new(5.0);
        let w = ActivityLabel::Walk;
        let front = vec![sample(0.0, 3.2, w), sample(5.0, 3.5, w), sample(10.0, 3.1, w), sample(15.0, 3.4, w)];
        let rear = vec![sample(0.0, 3.2, w), sample(5.0, 3.6, w), sample(10.0, 3.9, w), sample(15.0, 3.95, w)];
        let fe = estimate_rates(&front, &cfg, PehPosition::Front);
        let re = estimate_rates(&rear, &cfg, PehPosition::Rear);
        assert_eq!(re.rates.len(), 3);
        let v = fuse(&fe, &re);
        let ends: Vec<f64> = v.iter().map(|f| f.t_end).collect();
        assert_eq!(ends, vec![5.0, 15.0]);
        assert!(v[0].r_rear > v[0].r_front);
        // identical windows on both sides
        assert_eq!(fuse(&re, &re).len(), re.rates.len());
    }

    #[test]
    fn feature_csv_round_trip() {
        let f = vec![
            FeatureVector { t_end: 5.0, r_rear: 0.123_456_7, r_front: 0.0, label: ActivityLabel::Su },
            FeatureVector { t_end: 10.0, r_rear: 0.0, r_front: 0.0, label: ActivityLabel::St },
        ];
        let csv = features_to_csv(&f);
        assert!(csv.starts_with("t_end_s,r_rear_vps,r_front_vps,label\n5.000000,0.123457,0.000000,SU\n"));
        let back: Vec<FeatureVector<f64>> = features_from_csv(&csv).unwrap();
        assert_eq!(features_to_csv(&back), csv);
        assert!(features_from_csv::<f64>("nope\n").is_err());
    }
}
