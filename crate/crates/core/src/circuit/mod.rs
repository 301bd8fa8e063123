//! Rectified source -> storage capacitor -> buck converter dynamics.
//!
//! While charging, the capacitor follows the RC law towards the source
//! level through the series resistance and self-discharges through a
//! parallel leak resistance. The rectifier blocks reverse current, so a
//! source below the capacitor voltage only leaves the leak path. Once the
//! voltage reaches the UVLO rising threshold the buck converter drains the
//! capacitor along a linear ramp down to the falling threshold.

mod trace;

pub use trace::VoltageTrace;

use serde::{Deserialize, Serialize};

use crate::activity::SourceSignal;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Fraction of `V_max` reached after half a time constant, rounded as used
/// for component selection.
pub const HALF_TAU_FRACTION: f64 = 0.393;

/// Rectified source level of the reference harvester, volts.
pub const REFERENCE_SOURCE_V: f64 = 20.8;
/// The reference source charges an empty capacitor to the rising threshold
/// in this many seconds.
pub const REFERENCE_CHARGE_TIME_S: f64 = 60.0;
/// Self-discharge reference: 4 V to 3 V in 700 s.
pub const LEAK_REFERENCE: (f64, f64, f64) = (4.0, 3.0, 700.0);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapacitorSpec<T> {
    /// Farads.
    pub capacitance: T,
    /// Maximum voltage, volts.
    pub v_rating: T,
    /// Effective self-discharge resistance, ohms. May be infinite.
    pub leak_resistance: T,
}

impl<T: Scalar> CapacitorSpec<T> {
    pub fn new(capacitance: T, v_rating: T, leak_resistance: T) -> Result<Self> {
        let c = CapacitorSpec {
            capacitance,
            v_rating,
            leak_resistance,
        };
        c.validate()?;
        Ok(c)
    }

    /// 470 µF / 25 V electrolytic with leakage calibrated to the reference
    /// self-discharge curve.
    pub fn prototype() -> Self {
        let capacitance = T::lit(470e-6);
        let (v0, v1, secs) = LEAK_REFERENCE;
        let leak = calibrate_leak_resistance(capacitance, T::lit(v0), T::lit(v1), T::lit(secs))
            .expect("reference leak curve is valid");
        CapacitorSpec {
            capacitance,
            v_rating: T::lit(25.0),
            leak_resistance: leak,
        }
    }

    pub fn without_leakage(self) -> Self {
        CapacitorSpec {
            leak_resistance: T::infinity(),
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let z = T::zero();
        if !(self.capacitance > z && self.capacitance.is_finite()) {
            return Err(Error::config("capacitance must be positive"));
        }
        if !(self.v_rating > z && self.v_rating.is_finite()) {
            return Err(Error::config("capacitor rating voltage must be positive"));
        }
        if !(self.leak_resistance > z) {
            return Err(Error::config("leak resistance must be positive"));
        }
        Ok(())
    }

    /// Self-discharge time constant `R_leak * C` (infinite without leakage).
    pub fn leak_time_constant(&self) -> T {
        self.leak_resistance * self.capacitance
    }

    /// Self-discharge rate coefficient `1 / (R_leak * C)`, zero without leakage.
    fn leak_rate(&self) -> T {
        let tau = self.leak_time_constant();
        if tau.is_infinite() {
            T::zero()
        } else {
            tau.recip()
        }
    }
}

/// Leak resistance that self-discharges `capacitance` from `v_start` to
/// `v_end` in `duration` seconds.
pub fn calibrate_leak_resistance<T: Scalar>(capacitance: T, v_start: T, v_end: T, duration: T) -> Result<T> {
    if !(v_start > v_end && v_end > T::zero() && duration > T::zero() && capacitance > T::zero()) {
        return Err(Error::config("leak calibration needs v_start > v_end > 0 and positive duration"));
    }
    Ok(duration / (v_start / v_end).ln() / capacitance)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuckSpec<T> {
    pub v_uvlo_rising: T,
    pub v_uvlo_falling: T,
    /// Seconds taken to drain from the rising to the falling threshold.
    pub discharge_duration: T,
}

impl<T: Scalar> BuckSpec<T> {
    pub fn new(v_uvlo_rising: T, v_uvlo_falling: T, discharge_duration: T) -> Result<Self> {
        let b = BuckSpec {
            v_uvlo_rising,
            v_uvlo_falling,
            discharge_duration,
        };
        b.validate()?;
        Ok(b)
    }

    /// 4 V rising, 3.08 V falling, 10 ms drain.
    pub fn prototype() -> Self {
        BuckSpec {
            v_uvlo_rising: T::lit(4.0),
            v_uvlo_falling: T::lit(3.08),
            discharge_duration: T::lit(0.010),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v_uvlo_falling > T::zero() && self.v_uvlo_falling < self.v_uvlo_rising) {
            return Err(Error::config("UVLO thresholds must satisfy 0 < falling < rising"));
        }
        if !(self.discharge_duration > T::zero() && self.discharge_duration.is_finite()) {
            return Err(Error::config("discharge duration must be positive"));
        }
        Ok(())
    }

    pub fn validate_with(&self, cap: &CapacitorSpec<T>) -> Result<()> {
        self.validate()?;
        cap.validate()?;
        if self.v_uvlo_rising > cap.v_rating {
            return Err(Error::config(format!(
                "UVLO rising threshold {} V exceeds capacitor rating {} V",
                self.v_uvlo_rising, cap.v_rating
            )));
        }
        Ok(())
    }

    /// Largest integration step accepted by [`step`].
    pub fn max_step(&self) -> T {
        self.discharge_duration / T::lit(4.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceModel<T> {
    /// Rectified source level, volts.
    pub v_s: T,
    /// Effective series charging resistance, ohms.
    pub r_series: T,
}

impl<T: Scalar> SourceModel<T> {
    pub fn new(v_s: T, r_series: T) -> Result<Self> {
        if !(v_s >= T::zero() && v_s.is_finite()) {
            return Err(Error::config("source voltage must be non-negative"));
        }
        if !(r_series > T::zero() && r_series.is_finite()) {
            return Err(Error::config("series resistance must be positive"));
        }
        Ok(SourceModel { v_s, r_series })
    }

    pub fn time_constant(&self, cap: &CapacitorSpec<T>) -> T {
        self.r_series * cap.capacitance
    }
}

/// Series resistance for which a constant `v_s` charges an empty capacitor
/// to `v_target` in `t_target` seconds, accounting for the leak path.
pub fn calibrate_series_resistance<T: Scalar>(v_s: T, v_target: T, t_target: T, cap: &CapacitorSpec<T>) -> Result<T> {
    cap.validate()?;
    if !(v_s > v_target && v_target > T::zero() && t_target > T::zero()) {
        return Err(Error::config("series calibration needs v_s > v_target > 0 and positive time"));
    }
    let c = cap.capacitance;
    if cap.leak_resistance.is_infinite() {
        return Ok(-t_target / (c * (T::one() - v_target / v_s).ln()));
    }
    // Thevenin equivalent of source + leak; charge time grows with r_series.
    let rl = cap.leak_resistance;
    let time_to_target = |r: T| -> Option<T> {
        let v_inf = v_s * rl / (r + rl);
        if v_inf <= v_target {
            return None;
        }
        let tau = r * rl / (r + rl) * c;
        Some(-tau * (T::one() - v_target / v_inf).ln())
    };
    let mut lo = T::lit(1e-3);
    let mut hi = -t_target / (c * (T::one() - v_target / v_s).ln());
    if time_to_target(lo).is_none_or(|t| t > t_target) {
        return Err(Error::config("target charge time unreachable"));
    }
    for _ in 0..200 {
        let mid = (lo + hi) / T::lit(2.0);
        match time_to_target(mid) {
            Some(t) if t <= t_target => lo = mid,
            _ => hi = mid,
        }
    }
    Ok((lo + hi) / T::lit(2.0))
}

/// Capacitor voltage after charging for `t` seconds from `v0`:
/// `V_max + (v0 - V_max) * exp(-t / tau)` with `V_max = min(v_rating, v_s)`.
pub fn charge_voltage_closed_form<T: Scalar>(t: T, v0: T, src: &SourceModel<T>, cap: &CapacitorSpec<T>) -> Result<T> {
    if !(t >= T::zero()) {
        return Err(Error::Domain(format!("charging time {t} must be non-negative")));
    }
    let v_max = cap.v_rating.min(src.v_s);
    if !(v0 >= T::zero()) || v0 > v_max {
        return Err(Error::Domain(format!("initial voltage {v0} V outside [0, {v_max}] V")));
    }
    let tau = src.time_constant(cap);
    Ok(v_max + (v0 - v_max) * (-t / tau).exp())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearityReport<T> {
    pub ok: bool,
    /// `min(v_rating, v_s)`.
    pub v_max: T,
    /// Smallest `V_max` for which the rising threshold is reached within
    /// half a time constant.
    pub v_max_required: T,
}

/// Checks that the charging curve stays in its near-linear region up to
/// the UVLO rising threshold.
pub fn check_linearity<T: Scalar>(cap: &CapacitorSpec<T>, buck: &BuckSpec<T>, v_s: T) -> LinearityReport<T> {
    let v_max = cap.v_rating.min(v_s);
    let v_max_required = buck.v_uvlo_rising / T::lit(HALF_TAU_FRACTION);
    LinearityReport {
        ok: v_max >= v_max_required,
        v_max,
        v_max_required,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Charging,
    Discharging,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChargeState<T> {
    pub t: T,
    pub v: T,
    pub phase: Phase,
    ramp_from: T,
    ramp_elapsed: T,
}

impl<T: Scalar> ChargeState<T> {
    pub fn charging(t: T, v: T) -> Self {
        ChargeState {
            t,
            v,
            phase: Phase::Charging,
            ramp_from: T::zero(),
            ramp_elapsed: T::zero(),
        }
    }

    fn start_ramp(&mut self) {
        self.phase = Phase::Discharging;
        self.ramp_from = self.v;
        self.ramp_elapsed = T::zero();
    }
}

/// Advances the circuit by `dt` seconds with a constant source.
///
/// Charging uses the exact exponential solution of the linear ODE over the
/// step; a rising-threshold crossing inside the step is located exactly and
/// the rest of the step is spent on the discharge ramp.
pub fn step<T: Scalar>(
    state: ChargeState<T>,
    dt: T,
    src: &SourceModel<T>,
    cap: &CapacitorSpec<T>,
    buck: &BuckSpec<T>,
) -> Result<ChargeState<T>> {
    if !(dt > T::zero()) || dt > buck.max_step() {
        return Err(Error::config(format!(
            "integration step {dt} s outside (0, {}] s",
            buck.max_step()
        )));
    }
    buck.validate_with(cap)?;

    let rising = buck.v_uvlo_rising;
    let falling = buck.v_uvlo_falling;
    let duration = buck.discharge_duration;
    let eps = duration * T::lit(1e-9);
    let inv_rc = (src.r_series * cap.capacitance).recip();
    let leak = cap.leak_rate();

    let mut s = state;
    let mut remaining = dt;
    while remaining > T::zero() {
        match s.phase {
            Phase::Discharging => {
                let left = duration - s.ramp_elapsed;
                if remaining + eps < left {
                    s.ramp_elapsed = s.ramp_elapsed + remaining;
                    s.v = s.ramp_from - (s.ramp_from - falling) * (s.ramp_elapsed / duration);
                    remaining = T::zero();
                } else {
                    remaining = (remaining - left).max(T::zero());
                    s.v = falling;
                    s.phase = Phase::Charging;
                    s.ramp_elapsed = T::zero();
                }
            }
            Phase::Charging if s.v >= rising => s.start_ramp(),
            Phase::Charging => {
                if src.v_s > s.v {
                    let b = inv_rc + leak;
                    let v_inf = src.v_s * inv_rc / b;
                    let v_end = s.v - (s.v - v_inf) * -(-b * remaining).exp_m1();
                    if v_inf > rising && v_end >= rising {
                        let hit = ((s.v - v_inf) / (rising - v_inf)).ln() / b;
                        let hit = hit.max(T::zero()).min(remaining);
                        s.v = rising;
                        remaining = remaining - hit;
                        s.start_ramp();
                    } else {
                        s.v = v_end;
                        remaining = T::zero();
                    }
                } else {
                    s.v = s.v + s.v * (-leak * remaining).exp_m1();
                    remaining = T::zero();
                }
            }
        }
    }
    s.v = s.v.max(T::zero()).min(cap.v_rating);
    s.t = state.t + dt;
    Ok(s)
}

/// Circuit constants shared by both harvesters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CircuitSpec<T> {
    pub capacitor: CapacitorSpec<T>,
    pub buck: BuckSpec<T>,
    pub r_series: T,
}

impl<T: Scalar> CircuitSpec<T> {
    /// Prototype capacitor and buck converter, with the series resistance
    /// calibrated so the reference source reaches the rising threshold in
    /// the reference charge time.
    pub fn prototype() -> Self {
        let capacitor = CapacitorSpec::prototype();
        let buck = BuckSpec::prototype();
        let r_series = calibrate_series_resistance(
            T::lit(REFERENCE_SOURCE_V),
            buck.v_uvlo_rising,
            T::lit(REFERENCE_CHARGE_TIME_S),
            &capacitor,
        )
        .expect("reference calibration is valid");
        CircuitSpec {
            capacitor,
            buck,
            r_series,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.buck.validate_with(&self.capacitor)?;
        if !(self.r_series > T::zero() && self.r_series.is_finite()) {
            return Err(Error::config("series resistance must be positive"));
        }
        Ok(())
    }

    pub fn source(&self, v_s: T) -> SourceModel<T> {
        SourceModel {
            v_s,
            r_series: self.r_series,
        }
    }

    pub fn time_constant(&self) -> T {
        self.r_series * self.capacitor.capacitance
    }

    pub fn simulate(&self, signal: &SourceSignal<T>, dt: T, v0: T) -> Result<VoltageTrace<T>> {
        simulate_trace(signal, self.r_series, &self.capacitor, &self.buck, dt, v0)
    }
}

/// Integrates the circuit over a source signal on a uniform `dt` grid.
///
/// The returned trace holds `duration / dt + 1` samples, from `t = 0` to
/// the end of the signal inclusive. Sample `i > 0` carries the label of
/// the step that ended at it.
pub fn simulate_trace<T: Scalar>(
    signal: &SourceSignal<T>,
    r_series: T,
    cap: &CapacitorSpec<T>,
    buck: &BuckSpec<T>,
    dt: T,
    v0: T,
) -> Result<VoltageTrace<T>> {
    if signal.is_empty() {
        return Err(Error::config("empty source signal"));
    }
    buck.validate_with(cap)?;
    if !(dt > T::zero()) || dt > buck.max_step() {
        return Err(Error::config(format!(
            "integration step {dt} s outside (0, {}] s",
            buck.max_step()
        )));
    }
    if !(v0 >= T::zero() && v0 <= cap.v_rating) {
        return Err(Error::config(format!("initial voltage {v0} V outside [0, {}] V", cap.v_rating)));
    }
    let n = (signal.duration() / dt).round().to_usize().unwrap_or(0);
    if n == 0 {
        return Err(Error::config("source signal shorter than one integration step"));
    }
    let dt_f = dt.as_f64();
    let mut samples = Vec::with_capacity(n + 1);
    let mut labels = Vec::with_capacity(n + 1);
    samples.push(v0);
    labels.push(signal.labels[0]);
    let mut state = ChargeState::charging(T::zero(), v0);
    let mut src = SourceModel {
        v_s: T::zero(),
        r_series,
    };
    for i in 0..n {
        let j = signal.index_at(i as f64 * dt_f);
        src.v_s = signal.v_s[j];
        state = step(state, dt, &src, cap, buck)?;
        // keep time on the grid instead of accumulating rounding error
        state.t = T::lit((i + 1) as f64 * dt_f);
        samples.push(state.v);
        labels.push(signal.labels[j]);
    }
    VoltageTrace::new(dt, samples, labels)
}
