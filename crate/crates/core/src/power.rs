//! Duty-cycled sensing, BLE beacon transmission and overall system power.
//!
//! Units follow the measurement tables: powers in µW (mW where noted),
//! durations in ms, energies in µJ. One ms at one mW is one µJ.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Average power while sampling, duty-cycled by `t_s * n / 1000`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensingPowerParams<T> {
    /// Power during one sampling event, µW.
    pub p_sample: T,
    /// Duration of one sampling event, ms.
    pub t_s: T,
    /// Deep-sleep power, µW.
    pub p_sleep: T,
    /// Sampling frequency, Hz.
    pub n: T,
}

impl<T: Scalar> SensingPowerParams<T> {
    /// Measured MCU figures: 480 µW for 0.6 ms per sample, 6 µW asleep.
    pub fn measured(n: T) -> Self {
        SensingPowerParams {
            p_sample: T::lit(480.0),
            t_s: T::lit(0.6),
            p_sleep: T::lit(6.0),
            n,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let z = T::zero();
        let all = [self.p_sample, self.t_s, self.p_sleep, self.n];
        if all.iter().any(|v| !(*v >= z) || !v.is_finite()) {
            return Err(Error::config("sensing power parameters must be finite and non-negative"));
        }
        Ok(())
    }

    /// Fraction of time spent sampling, `t_s * n / 1000`.
    pub fn duty(&self) -> T {
        self.t_s * self.n / T::lit(1000.0)
    }
}

/// Average sensing power in µW. Saturates at `p_sample` once sampling
/// events fill the whole second.
pub fn sensing_power<T: Scalar>(p: &SensingPowerParams<T>) -> T {
    let duty = p.duty();
    if duty <= T::one() {
        duty * p.p_sample + (T::one() - duty) * p.p_sleep
    } else {
        p.p_sample
    }
}

/// One radio state: duration in ms and power in µW.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateCost<T> {
    pub ms: T,
    pub uw: T,
}

impl<T: Scalar> StateCost<T> {
    pub fn energy_uj(&self) -> T {
        self.ms * self.uw / T::lit(1000.0)
    }
}

/// BLE broadcast event: setup, one transmission per packet per channel with
/// gaps in between, then post-processing before sleep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TxProfile<T> {
    pub setup: StateCost<T>,
    /// Transmission of the bare protocol packet on one channel.
    pub per_channel_tx_base: StateCost<T>,
    pub inter_tx_gap: StateCost<T>,
    pub post: StateCost<T>,
    /// Extra airtime per payload byte, ms.
    pub per_extra_byte: T,
    pub max_extra_bytes_per_packet: u32,
    pub channels: u32,
}

impl<T: Scalar> Default for TxProfile<T> {
    /// Measured CC2650 beacon event.
    fn default() -> Self {
        let sc = |ms: f64, uw: f64| StateCost {
            ms: T::lit(ms),
            uw: T::lit(uw),
        };
        TxProfile {
            setup: sc(1.12, 1008.0),
            per_channel_tx_base: sc(0.28, 3990.0),
            inter_tx_gap: sc(0.30, 2460.0),
            post: sc(1.72, 744.0),
            per_extra_byte: T::lit(0.008),
            max_extra_bytes_per_packet: 28,
            channels: 3,
        }
    }
}

impl<T: Scalar> TxProfile<T> {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.max_extra_bytes_per_packet == 0 {
            return Err(Error::config("radio needs at least one channel and one payload byte per packet"));
        }
        let states = [self.setup, self.per_channel_tx_base, self.inter_tx_gap, self.post];
        if states.iter().any(|s| !(s.ms >= T::zero() && s.uw >= T::zero())) || !(self.per_extra_byte >= T::zero()) {
            return Err(Error::config("radio state costs must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TxCost<T> {
    pub energy_uj: T,
    pub duration_ms: T,
    pub packets_per_channel: u32,
    /// Payload bytes carried by each packet on top of the protocol bytes.
    pub extra_bytes_per_packet: u32,
    pub transmissions: u32,
}

impl<T: Scalar> TxCost<T> {
    /// Average power over the event, mW.
    pub fn avg_power_mw(&self) -> T {
        if self.duration_ms > T::zero() {
            self.energy_uj / self.duration_ms
        } else {
            T::zero()
        }
    }
}

/// Energy and airtime of broadcasting `payload_bytes` on every channel.
///
/// The payload is split into `ceil(payload / max_extra)` equally sized
/// packets (at least one), each packet sized up to `ceil(payload / packets)`
/// extra bytes; every transmission is followed by a gap except the last.
pub fn tx_energy<T: Scalar>(profile: &TxProfile<T>, payload_bytes: u32) -> TxCost<T> {
    let max = profile.max_extra_bytes_per_packet;
    let packets = payload_bytes.div_ceil(max).max(1);
    let extra = payload_bytes.div_ceil(packets);
    let transmissions = packets * profile.channels;
    let gaps = transmissions - 1;

    let tx = StateCost {
        ms: profile.per_channel_tx_base.ms + profile.per_extra_byte * T::lit(extra as f64),
        uw: profile.per_channel_tx_base.uw,
    };
    let nt = T::lit(transmissions as f64);
    let ng = T::lit(gaps as f64);
    let energy_uj = profile.setup.energy_uj() + profile.post.energy_uj() + nt * tx.energy_uj() + ng * profile.inter_tx_gap.energy_uj();
    let duration_ms = profile.setup.ms + profile.post.ms + nt * tx.ms + ng * profile.inter_tx_gap.ms;
    TxCost {
        energy_uj,
        duration_ms,
        packets_per_channel: packets,
        extra_bytes_per_packet: extra,
        transmissions,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemPowerInput<T> {
    pub sensing: SensingPowerParams<T>,
    pub tx_energy: T,
    /// ms.
    pub tx_duration: T,
    /// Reporting period, seconds.
    pub period: T,
}

/// Time-weighted average of sensing over `period` and one transmission
/// event, µW.
pub fn system_power<T: Scalar>(input: &SystemPowerInput<T>) -> Result<T> {
    input.sensing.validate()?;
    if !(input.period > T::zero()) {
        return Err(Error::config("reporting period must be positive"));
    }
    if !(input.tx_energy >= T::zero() && input.tx_duration >= T::zero()) {
        return Err(Error::config("transmission cost must be non-negative"));
    }
    let sense = sensing_power(&input.sensing);
    let total_s = input.period + input.tx_duration / T::lit(1000.0);
    Ok((sense * input.period + input.tx_energy) / total_s)
}

/// Round half away from zero to two decimals, as tabulated.
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Relative saving of `ours` over `baseline`.
pub fn saving(baseline: f64, ours: f64) -> f64 {
    1.0 - ours / baseline
}

/// One row of the sensing/transmission/system comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRow {
    pub name: String,
    pub n_hz: f64,
    pub sensing_uw: f64,
    pub payload_bytes: u32,
    pub tx_energy_uj: f64,
    pub tx_duration_ms: f64,
    pub tx_power_mw: f64,
    pub period_s: f64,
    pub system_uw: f64,
}

/// Two-byte readings accumulated over one reporting period.
pub fn payload_for(n_hz: f64, period_s: f64) -> u32 {
    ((n_hz * period_s).round().max(1.0) as u32) * 2
}

pub fn scenario(
    name: impl Into<String>,
    sensing: SensingPowerParams<f64>,
    payload_bytes: u32,
    period_s: f64,
    radio: &TxProfile<f64>,
) -> Result<ScenarioRow> {
    sensing.validate()?;
    radio.validate()?;
    let tx = tx_energy(radio, payload_bytes);
    let system = system_power(&SystemPowerInput {
        sensing,
        tx_energy: tx.energy_uj,
        tx_duration: tx.duration_ms,
        period: period_s,
    })?;
    Ok(ScenarioRow {
        name: name.into(),
        n_hz: sensing.n,
        sensing_uw: sensing_power(&sensing),
        payload_bytes,
        tx_energy_uj: tx.energy_uj,
        tx_duration_ms: tx.duration_ms,
        tx_power_mw: tx.avg_power_mw(),
        period_s,
        system_uw: system,
    })
}

pub const SCENARIO_CSV_HEADER: &str =
    "scenario,n_hz,sensing_uw,payload_bytes,tx_energy_uj,tx_duration_ms,tx_power_mw,period_s,system_uw";

pub fn rows_to_csv(rows: &[ScenarioRow]) -> String {
    let mut out = String::from(SCENARIO_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.2},{},{:.2},{:.3},{:.3},{},{:.2}\n",
            r.name, r.n_hz, r.sensing_uw, r.payload_bytes, r.tx_energy_uj, r.tx_duration_ms, r.tx_power_mw, r.period_s, r.system_uw
        ));
    }
    out
}

pub fn rows_to_text(rows: &[ScenarioRow]) -> String {
    let mut out = format!(
        "{:<20} {:>8} {:>12} {:>8} {:>12} {:>10} {:>10} {:>12}\n",
        "scenario", "n (Hz)", "sense (uW)", "bytes", "tx (uJ)", "tx (ms)", "tx (mW)", "system (uW)"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<20} {:>8} {:>12.2} {:>8} {:>12.2} {:>10.3} {:>10.3} {:>12.2}\n",
            r.name, r.n_hz, r.sensing_uw, r.payload_bytes, r.tx_energy_uj, r.tx_duration_ms, r.tx_power_mw, r.system_uw
        ));
    }
    if rows.len() >= 2 {
        let (a, b) = (&rows[0], &rows[rows.len() - 1]);
        out.push_str(&format!(
            "\nsaving of {} over {}: sensing {:.1}%, transmission {:.1}%, system {:.1}%\n",
            b.name,
            a.name,
            100.0 * saving(a.sensing_uw, b.sensing_uw),
            100.0 * saving(a.tx_energy_uj, b.tx_energy_uj),
            100.0 * saving(a.system_uw, b.system_uw)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sensing_power_tabulated_values() {
        let keh = sensing_power(&SensingPowerParams::<f64>::measured(25.0));
        let cap = sensing_power(&SensingPowerParams::<f64>::measured(0.2));
        assert!((keh - 13.11).abs() < 1e-9);
        assert_eq!(round2(cap), 6.06);
        let mut low = SensingPowerParams::<f64>::measured(0.2);
        low.p_sleep = 1.35;
        assert_eq!(round2(sensing_power(&low)), 1.41);
    }

    #[test]
    fn never_sampling_costs_sleep_power() {
        assert_eq!(sensing_power(&SensingPowerParams::<f64>::measured(0.0)), 6.0);
    }

    #[test]
    fn saturated_duty_cycle_is_continuous() {
        let edge = SensingPowerParams::<f64>::measured(1000.0 / 0.6);
        assert!((sensing_power(&edge) - 480.0).abs() < 1e-9);
        let over = SensingPowerParams::<f64>::measured(5000.0);
        assert_eq!(sensing_power(&over), 480.0);
    }

    #[test]
    fn beacon_only_event() {
        let c = tx_energy(&TxProfile::<f64>::default(), 0);
        let expected = 1.12 * 1.008 + 1.72 * 0.744 + 3.0 * 0.28 * 3.99 + 2.0 * 0.3 * 2.46;
        assert!((c.energy_uj - expected).abs() < 1e-12);
        assert!((c.duration_ms - (1.12 + 1.72 + 3.0 * 0.28 + 2.0 * 0.3)).abs() < 1e-12);
        assert_eq!((c.packets_per_channel, c.transmissions), (1, 3));
    }

    #[test]
    fn multi_packet_event() {
        let c = tx_energy(&TxProfile::<f64>::default(), 250);
        assert_eq!((c.packets_per_channel, c.extra_bytes_per_packet, c.transmissions), (9, 28, 27));
        assert_eq!(round2(c.energy_uj), 75.89);
        assert_eq!(round2(c.duration_ms), 24.25);
        let single = tx_energy(&TxProfile::<f64>::default(), 2);
        assert_eq!(round2(single.energy_uj), 7.43);
        assert!((single.avg_power_mw() - 1.716).abs() < 5e-4);
    }

    #[test]
    fn system_power_without_radio_is_sensing_power() {
        let s = SensingPowerParams::<f64>::measured(0.2);
        let p = system_power(&SystemPowerInput { sensing: s, tx_energy: 0.0, tx_duration: 0.0, period: 5.0 }).unwrap();
        assert_eq!(p, sensing_power(&s));
        assert!(system_power(&SystemPowerInput { sensing: s, tx_energy: 0.0, tx_duration: 0.0, period: 0.0 }).is_err());
    }

    #[test]
    fn payload_accounting() {
        assert_eq!(payload_for(25.0, 5.0), 250);
        assert_eq!(payload_for(0.2, 5.0), 2);
        assert_eq!(payload_for(0.01, 5.0), 2);
    }

    #[test]
    fn f32_matches_f64() {
        let a = sensing_power(&SensingPowerParams::<f32>::measured(25.0));
        assert!((a as f64 - 13.11).abs() < 1e-4);
        let c = tx_energy(&TxProfile::<f32>::default(), 250);
        assert!((c.energy_uj as f64 - 75.89256).abs() < 1e-3);
    }
}
