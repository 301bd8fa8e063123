//! Synthetic per-activity charging sources for the front and rear harvesters.
//!
//! Each harvester is reduced to an effective rectified source: a train of
//! foot-strike bursts at the gait cadence, with a per-burst amplitude drawn
//! around the activity's mean level. Front and rear share strike times but
//! draw amplitudes from independent streams.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seed;

/// Minimum session length accepted by [`generate_session`].
pub const MIN_SEGMENT_S: f64 = 5.0;

/// Activity classes. The declaration order is the fixed tie-break order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActivityLabel {
    #[serde(rename = "WALK")]
    Walk,
    #[serde(rename = "RUN")]
    Run,
    #[serde(rename = "SU")]
    Su,
    #[serde(rename = "SD")]
    Sd,
    #[serde(rename = "ST")]
    St,
}

impl ActivityLabel {
    pub const ALL: [ActivityLabel; 5] = [
        ActivityLabel::Walk,
        ActivityLabel::Run,
        ActivityLabel::Su,
        ActivityLabel::Sd,
        ActivityLabel::St,
    ];

    pub const COUNT: usize = 5;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ActivityLabel::Walk => "WALK",
            ActivityLabel::Run => "RUN",
            ActivityLabel::Su => "SU",
            ActivityLabel::Sd => "SD",
            ActivityLabel::St => "ST",
        }
    }
}

impl fmt::Display for ActivityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ActivityLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "WALK" => Ok(ActivityLabel::Walk),
            "RUN" => Ok(ActivityLabel::Run),
            "SU" | "US" => Ok(ActivityLabel::Su),
            "SD" | "DS" => Ok(ActivityLabel::Sd),
            "ST" => Ok(ActivityLabel::St),
            other => Err(Error::config(format!("unknown activity label `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PehPosition {
    #[serde(rename = "front")]
    Front,
    #[serde(rename = "rear")]
    Rear,
}

impl PehPosition {
    pub const ALL: [PehPosition; 2] = [PehPosition::Front, PehPosition::Rear];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PehPosition::Front => "front",
            PehPosition::Rear => "rear",
        }
    }
}

impl fmt::Display for PehPosition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PehPosition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "front" => Ok(PehPosition::Front),
            "rear" | "back" => Ok(PehPosition::Rear),
            other => Err(Error::config(format!("unknown harvester position `{other}`"))),
        }
    }
}

/// Burst-train parameters for one harvester during one activity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositionProfile {
    /// Foot strikes per second.
    pub strike_rate: f64,
    /// Mean rectified source level during a burst, volts.
    pub v_s_mean: f64,
    /// Relative standard deviation of the per-burst amplitude.
    pub v_s_jitter_rel: f64,
    /// Fraction of each stride during which the source is active.
    pub burst_duty: f64,
}

impl PositionProfile {
    pub const SILENT: PositionProfile = PositionProfile {
        strike_rate: 0.0,
        v_s_mean: 0.0,
        v_s_jitter_rel: 0.0,
        burst_duty: 0.5,
    };

    pub fn validate(&self) -> Result<()> {
        let ok = self.strike_rate >= 0.0
            && self.strike_rate.is_finite()
            && self.v_s_mean >= 0.0
            && self.v_s_mean.is_finite()
            && (0.0..1.0).contains(&self.v_s_jitter_rel)
            && self.burst_duty > 0.0
            && self.burst_duty <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid position profile {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivityProfile {
    pub label: ActivityLabel,
    pub front: PositionProfile,
    pub rear: PositionProfile,
}

impl ActivityProfile {
    pub fn position(&self, position: PehPosition) -> &PositionProfile {
        match position {
            PehPosition::Front => &self.front,
            PehPosition::Rear => &self.rear,
        }
    }
}

/// Per-activity, per-position base parameters before subject scaling.
#[derive(Clone, Debug, PartialEq)]
pub struct ProfileTable {
    entries: [[PositionProfile; 2]; ActivityLabel::COUNT],
}

const fn pp(strike_rate: f64, v_s_mean: f64, jitter: f64) -> PositionProfile {
    PositionProfile {
        strike_rate,
        v_s_mean,
        v_s_jitter_rel: jitter,
        burst_duty: 0.5,
    }
}

impl Default for ProfileTable {
    /// Overlapping classes: the front harvester barely separates SU from SD
    /// and the rear one mixes WALK with SD; the joint distribution separates
    /// both pairs. Mean levels put the capacitor charging rate between
    /// roughly 0.05 and 0.15 V/s near 3.5 V.
    fn default() -> Self {
        const J: f64 = 0.10;
        ProfileTable {
            entries: [
                // WALK
                [pp(0.9, 32.5, J), pp(0.9, 43.0, J)],
                // RUN
                [pp(1.4, 76.7, J), pp(1.4, 86.1, J)],
                // SU
                [pp(0.8, 65.6, J), pp(0.8, 71.2, J)],
                // SD
                [pp(0.9, 64.5, J), pp(0.9, 57.4, J)],
                // ST
                [PositionProfile::SILENT, PositionProfile::SILENT],
            ],
        }
    }
}

impl ProfileTable {
    /// Zero-jitter table with widely spaced levels and a 1 Hz cadence, so
    /// every accumulation window that is a whole number of seconds sees the
    /// same burst pattern.
    pub fn separable() -> Self {
        ProfileTable {
            entries: [
                [pp(1.0, 15.0, 0.0), pp(1.0, 15.0, 0.0)],
                [pp(1.0, 60.0, 0.0), pp(1.0, 60.0, 0.0)],
                [pp(1.0, 30.0, 0.0), pp(1.0, 30.0, 0.0)],
                [pp(1.0, 45.0, 0.0), pp(1.0, 45.0, 0.0)],
                [PositionProfile::SILENT, PositionProfile::SILENT],
            ],
        }
    }

    pub fn get(&self, label: ActivityLabel, position: PehPosition) -> &PositionProfile {
        &self.entries[label.index()][position.index()]
    }

    pub fn get_mut(&mut self, label: ActivityLabel, position: PehPosition) -> &mut PositionProfile {
        &mut self.entries[label.index()][position.index()]
    }

    pub fn validate(&self) -> Result<()> {
        for label in ActivityLabel::ALL {
            for pos in PehPosition::ALL {
                self.get(label, pos).validate()?;
            }
        }
        Ok(())
    }

    /// Sets one field from a key of the form `LABEL.position.field`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let parts: Vec<&str> = key.split('.').collect();
        let [label, pos, field] = parts[..] else {
            return Err(Error::config(format!("activity key `{key}` must be LABEL.position.field")));
        };
        let label: ActivityLabel = label.parse()?;
        let pos: PehPosition = pos.parse()?;
        let v: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::config(format!("activity.{key}: `{value}` is not a number")))?;
        let p = self.get_mut(label, pos);
        match field {
            "strike_rate" => p.strike_rate = v,
            "v_s_mean" => p.v_s_mean = v,
            "v_s_jitter_rel" => p.v_s_jitter_rel = v,
            "burst_duty" => p.burst_duty = v,
            other => return Err(Error::config(format!("unknown activity field `{other}`"))),
        }
        Ok(())
    }

    /// Parses `LABEL.position.field=value` lines (an optional `activity.`
    /// prefix is accepted) on top of the default table.
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut table = ProfileTable::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(Error::Parse {
                line: lineno + 1,
                msg: format!("expected key=value, got `{line}`"),
            })?;
            let k = k.trim();
            table.set(k.strip_prefix("activity.").unwrap_or(k), v)?;
        }
        table.validate()?;
        Ok(table)
    }

    /// Emits every entry as `activity.LABEL.position.field=value` lines.
    pub fn to_kv_lines(&self) -> Vec<String> {
        let mut out = Vec::new();
        for label in ActivityLabel::ALL {
            for pos in PehPosition::ALL {
                let p = self.get(label, pos);
                let prefix = format!("activity.{label}.{pos}");
                out.push(format!("{prefix}.strike_rate={}", p.strike_rate));
                out.push(format!("{prefix}.v_s_mean={}", p.v_s_mean));
                out.push(format!("{prefix}.v_s_jitter_rel={}", p.v_s_jitter_rel));
                out.push(format!("{prefix}.burst_duty={}", p.burst_duty));
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectParams {
    pub id: String,
    pub intensity_scale: f64,
    pub cadence_scale: f64,
    pub rng_seed: u64,
}

impl SubjectParams {
    pub fn new(id: impl Into<String>, intensity_scale: f64, cadence_scale: f64, rng_seed: u64) -> Result<Self> {
        let s = SubjectParams {
            id: id.into(),
            intensity_scale,
            cadence_scale,
            rng_seed,
        };
        s.validate()?;
        Ok(s)
    }

    /// Unit scales.
    pub fn nominal(id: impl Into<String>, rng_seed: u64) -> Self {
        SubjectParams {
            id: id.into(),
            intensity_scale: 1.0,
            cadence_scale: 1.0,
            rng_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let range = 0.5..=2.0;
        if self.id.is_empty() || self.id.contains([',', ':', '/', '\\']) {
            return Err(Error::config(format!("invalid subject id `{}`", self.id)));
        }
        if !range.contains(&self.intensity_scale) || !range.contains(&self.cadence_scale) {
            return Err(Error::config(format!(
                "subject {}: scales must lie in [0.5, 2.0]",
                self.id
            )));
        }
        Ok(())
    }
}

pub fn make_profile(label: ActivityLabel, subject: &SubjectParams, table: &ProfileTable) -> ActivityProfile {
    let scale = |p: &PositionProfile| PositionProfile {
        strike_rate: p.strike_rate * subject.cadence_scale,
        v_s_mean: p.v_s_mean * subject.intensity_scale,
        ..*p
    };
    ActivityProfile {
        label,
        front: scale(table.get(label, PehPosition::Front)),
        rear: scale(table.get(label, PehPosition::Rear)),
    }
}

/// Piecewise-constant rectified source sampled on a uniform grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceSignal<T> {
    pub dt: T,
    pub v_s: Vec<T>,
    /// Activity performed during each step.
    pub labels: Vec<ActivityLabel>,
    pub position: PehPosition,
}

impl<T: Scalar> SourceSignal<T> {
    pub fn new(dt: T, v_s: Vec<T>, labels: Vec<ActivityLabel>, position: PehPosition) -> Result<Self> {
        if !(dt > T::zero()) {
            return Err(Error::config("source dt must be positive"));
        }
        if v_s.is_empty() || v_s.len() != labels.len() {
            return Err(Error::config("source series must be non-empty with one label per step"));
        }
        if v_s.iter().any(|v| !(*v >= T::zero()) || !v.is_finite()) {
            return Err(Error::config("source values must be finite and non-negative"));
        }
        Ok(SourceSignal {
            dt,
            v_s,
            labels,
            position,
        })
    }

    /// Constant source, mostly for tests and calibration.
    pub fn constant(v_s: T, duration: T, dt: T, label: ActivityLabel, position: PehPosition) -> Result<Self> {
        let n = steps(duration.as_f64(), dt.as_f64())?;
        Self::new(dt, vec![v_s; n], vec![label; n], position)
    }

    pub fn len(&self) -> usize {
        self.v_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v_s.is_empty()
    }

    pub fn duration(&self) -> T {
        self.dt * T::lit(self.v_s.len() as f64)
    }

    /// Index of the step covering time `t` (clamped to the last step).
    pub fn index_at(&self, t: f64) -> usize {
        let i = (t / self.dt.as_f64() + 1e-9).floor().max(0.0) as usize;
        i.min(self.v_s.len() - 1)
    }

    fn append(&mut self, other: SourceSignal<T>) {
        self.v_s.extend(other.v_s);
        self.labels.extend(other.labels);
    }
}

fn steps(duration: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !(duration > 0.0) {
        return Err(Error::config("duration and dt must be positive"));
    }
    let n = (duration / dt).round();
    if n < 1.0 {
        return Err(Error::config("duration shorter than one step"));
    }
    Ok(n as usize)
}

/// Truncated Gaussian relative perturbation, |z| <= 2 sigma.
fn jitter_factor<R: Rng>(rng: &mut R, rel: f64) -> f64 {
    if rel <= 0.0 {
        return 1.0;
    }
    let normal = Normal::new(0.0, rel).expect("finite sigma");
    loop {
        let z: f64 = normal.sample(rng);
        if z.abs() <= 2.0 * rel && z > -1.0 {
            return 1.0 + z;
        }
    }
}

/// Burst train for one harvester: bursts of width `burst_duty / strike_rate`
/// start at every multiple of `1 / strike_rate`, zero in between.
pub fn generate_source<T: Scalar>(
    profile: &ActivityProfile,
    position: PehPosition,
    duration: f64,
    dt: f64,
    seed: u64,
) -> Result<SourceSignal<T>> {
    if duration < 1.0 {
        return Err(Error::config("source duration must be at least 1 s"));
    }
    let p = profile.position(position);
    p.validate()?;
    let n = steps(duration, dt)?;
    let mut v_s = vec![T::zero(); n];
    if p.strike_rate > 0.0 && p.v_s_mean > 0.0 {
        let mut rng = seed::rng(seed);
        let period = 1.0 / p.strike_rate;
        let width = p.burst_duty * period;
        let mut burst = usize::MAX;
        let mut amplitude = T::zero();
        for (i, v) in v_s.iter_mut().enumerate() {
            let t = i as f64 * dt;
            let k = (t * p.strike_rate + 1e-9).floor() as usize;
            if k != burst {
                burst = k;
                amplitude = T::lit(p.v_s_mean * jitter_factor(&mut rng, p.v_s_jitter_rel));
            }
            if t - k as f64 * period < width - 1e-12 {
                *v = amplitude;
            }
        }
    }
    SourceSignal::new(T::lit(dt), v_s, vec![profile.label; n], position)
}

/// Concatenated front and rear sources for a schedule of activities.
pub fn generate_session<T: Scalar>(
    schedule: &[(ActivityLabel, f64)],
    subject: &SubjectParams,
    table: &ProfileTable,
    dt: f64,
) -> Result<(SourceSignal<T>, SourceSignal<T>)> {
    if schedule.is_empty() {
        return Err(Error::config("empty activity schedule"));
    }
    subject.validate()?;
    let mut out: [Option<SourceSignal<T>>; 2] = [None, None];
    for (seg, &(label, duration)) in schedule.iter().enumerate() {
        if !(duration >= MIN_SEGMENT_S) {
            return Err(Error::config(format!(
                "schedule segment {seg} ({label}) lasts {duration} s; minimum is {MIN_SEGMENT_S} s"
            )));
        }
        let profile = make_profile(label, subject, table);
        for pos in PehPosition::ALL {
            let s = seed::derive(subject.rng_seed, &format!("{pos}/{seg}"));
            let part = generate_source::<T>(&profile, pos, duration, dt, s)?;
            match &mut out[pos.index()] {
                Some(acc) => acc.append(part),
                slot @ None => *slot = Some(part),
            }
        }
    }
    let [front, rear] = out;
    Ok((front.expect("non-empty"), rear.expect("non-empty")))
}

/// Parses `label:seconds` comma lists, e.g. `WALK:20,SU:8`.
pub fn parse_schedule(text: &str) -> Result<Vec<(ActivityLabel, f64)>> {
    let mut out = Vec::new();
    for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (label, secs) = item
            .split_once(':')
            .ok_or_else(|| Error::config(format!("schedule item `{item}` must be label:seconds")))?;
        let secs: f64 = secs
            .trim()
            .parse()
            .map_err(|_| Error::config(format!("schedule item `{item}`: bad duration")))?;
        out.push((label.parse()?, secs));
    }
    if out.is_empty() {
        return Err(Error::config("empty activity schedule"));
    }
    Ok(out)
}

pub fn format_schedule(schedule: &[(ActivityLabel, f64)]) -> String {
    schedule
        .iter()
        .map(|(l, s)| format!("{l}:{s}"))
        .collect::<Vec<_>>()
        .join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn walk() -> ActivityProfile {
        make_profile(ActivityLabel::Walk, &SubjectParams::nominal("s", 1), &ProfileTable::default())
    }

    #[test]
    fn label_order_and_parsing() {
        assert!(ActivityLabel::Walk < ActivityLabel::Run);
        assert!(ActivityLabel::Sd < ActivityLabel::St);
        assert_eq!("us".parse::<ActivityLabel>().unwrap(), ActivityLabel::Su);
        assert_eq!("SD".parse::<ActivityLabel>().unwrap(), ActivityLabel::Sd);
        assert!("JOG".parse::<ActivityLabel>().is_err());
        for l in ActivityLabel::ALL {
            assert_eq!(l.to_string().parse::<ActivityLabel>().unwrap(), l);
        }
    }

    #[test]
    fn stationary_profile_is_silent() {
        let table = ProfileTable::default();
        let subj = SubjectParams::new("s", 1.7, 1.2, 3).unwrap();
        let p = make_profile(ActivityLabel::St, &subj, &table);
        assert_eq!(p.front.v_s_mean, 0.0);
        assert_eq!(p.rear.v_s_mean, 0.0);
        let sig = generate_source::<f64>(&p, PehPosition::Rear, 10.0, 0.01, 5).unwrap();
        assert!(sig.v_s.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn run_is_stronger_than_walk_and_ordering_holds() {
        let table = ProfileTable::default();
        let subj = SubjectParams::nominal("s", 1);
        for pos in PehPosition::ALL {
            let m = |l| make_profile(l, &subj, &table).position(pos).v_s_mean;
            assert!(m(ActivityLabel::Run) > m(ActivityLabel::Walk));
            assert!(m(ActivityLabel::Walk) < m(ActivityLabel::Sd));
            assert!(m(ActivityLabel::Sd) < m(ActivityLabel::Su));
            assert!(m(ActivityLabel::Su) < m(ActivityLabel::Run));
        }
        // rear dominates for heel-strike gaits
        let w = make_profile(ActivityLabel::Walk, &subj, &table);
        assert!(w.rear.v_s_mean > w.front.v_s_mean);
    }

    #[test]
    fn intensity_scaling_is_linear() {
        let table = ProfileTable::default();
        let a = SubjectParams::new("a", 0.6, 1.0, 1).unwrap();
        let b = SubjectParams::new("b", 1.2, 1.0, 1).unwrap();
        for l in ActivityLabel::ALL {
            let pa = make_profile(l, &a, &table);
            let pb = make_profile(l, &b, &table);
            assert_eq!(pb.front.v_s_mean, 2.0 * pa.front.v_s_mean);
            assert_eq!(pb.rear.v_s_mean, 2.0 * pa.rear.v_s_mean);
        }
    }

    #[test]
    fn burst_count_matches_strike_rate() {
        let mut p = walk();
        p.front.strike_rate = 1.0;
        let sig = generate_source::<f64>(&p, PehPosition::Front, 10.0, 0.001, 9).unwrap();
        let rising_edges = (0..sig.len())
            .filter(|&i| sig.v_s[i] > 0.0 && (i == 0 || sig.v_s[i - 1] == 0.0))
            .count();
        assert!((9..=11).contains(&rising_edges), "{rising_edges}");
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        let p = walk();
        let a = generate_source::<f64>(&p, PehPosition::Rear, 5.0, 0.001, 11).unwrap();
        let b = generate_source::<f64>(&p, PehPosition::Rear, 5.0, 0.001, 11).unwrap();
        let c = generate_source::<f64>(&p, PehPosition::Rear, 5.0, 0.001, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn zero_jitter_bursts_are_flat() {
        let p = make_profile(ActivityLabel::Su, &SubjectParams::nominal("s", 1), &ProfileTable::separable());
        let sig = generate_source::<f64>(&p, PehPosition::Front, 4.0, 0.01, 1).unwrap();
        assert!(sig.v_s.iter().all(|&v| v == 0.0 || v == 30.0));
    }

    #[test]
    fn session_labels_partition_time() {
        let subj = SubjectParams::nominal("s", 4);
        let schedule = [(ActivityLabel::Su, 8.0), (ActivityLabel::Sd, 8.0)];
        let (f, r) = generate_session::<f64>(&schedule, &subj, &ProfileTable::default(), 0.01).unwrap();
        assert_eq!(f.len(), 1600);
        assert_eq!(r.len(), 1600);
        assert!(f.labels[..800].iter().all(|&l| l == ActivityLabel::Su));
        assert!(f.labels[800..].iter().all(|&l| l == ActivityLabel::Sd));
        assert_eq!(f.labels, r.labels);
        // shared strike timing, independent amplitudes
        let on = |s: &SourceSignal<f64>| s.v_s.iter().map(|&v| v > 0.0).collect::<Vec<_>>();
        assert_eq!(on(&f), on(&r));
    }

    #[test]
    fn short_segments_rejected() {
        let subj = SubjectParams::nominal("s", 4);
        let err = generate_session::<f64>(&[(ActivityLabel::Walk, 4.0)], &subj, &ProfileTable::default(), 0.01);
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn schedule_parsing() {
        let s = parse_schedule("WALK:20, su:8,DS:8").unwrap();
        assert_eq!(s, vec![(ActivityLabel::Walk, 20.0), (ActivityLabel::Su, 8.0), (ActivityLabel::Sd, 8.0)]);
        assert_eq!(parse_schedule(&format_schedule(&s)).unwrap(), s);
        assert!(parse_schedule("WALK").is_err());
        assert!(parse_schedule("").is_err());
    }

    #[test]
    fn profile_table_kv_round_trip() {
        let mut t = ProfileTable::default();
        t.get_mut(ActivityLabel::Run, PehPosition::Front).v_s_mean = 99.5;
        let text = t.to_kv_lines().join("\n");
        assert_eq!(ProfileTable::from_kv_str(&text).unwrap(), t);
        assert!(ProfileTable::from_kv_str("WALK.front.bogus=1").is_err());
        assert!(ProfileTable::from_kv_str("WALK.front.burst_duty=0").is_err());
    }
}
