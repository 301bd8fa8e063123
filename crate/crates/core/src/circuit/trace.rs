use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::activity::ActivityLabel;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const TRACE_CSV_HEADER: &str = "t_s,v_volts,label";

/// Dense capacitor voltage trace on a uniform grid starting at `t = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct VoltageTrace<T> {
    pub dt: T,
    pub samples: Vec<T>,
    pub labels: Vec<ActivityLabel>,
}

impl<T: Scalar> VoltageTrace<T> {
    pub fn new(dt: T, samples: Vec<T>, labels: Vec<ActivityLabel>) -> Result<Self> {
        if !(dt > T::zero()) {
            return Err(Error::config("trace dt must be positive"));
        }
        if samples.is_empty() || samples.len() != labels.len() {
            return Err(Error::config("trace needs one label per sample"));
        }
        if samples.iter().any(|v| !(*v >= T::zero()) || !v.is_finite()) {
            return Err(Error::config("trace voltages must be finite and non-negative"));
        }
        Ok(VoltageTrace { dt, samples, labels })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dt.as_f64()
    }

    /// Time of the last sample.
    pub fn duration(&self) -> f64 {
        self.time(self.samples.len().saturating_sub(1))
    }

    /// Keeps every `factor`-th sample.
    pub fn decimate(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::config("decimation factor must be positive"));
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let samples = self.samples.iter().step_by(factor).copied().collect();
        let labels = self.labels.iter().step_by(factor).copied().collect();
        VoltageTrace::new(self.dt * T::lit(factor as f64), samples, labels)
    }

    /// CSV with six decimal places, LF line endings.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.samples.len() * 24 + 32);
        out.push_str(TRACE_CSV_HEADER);
        out.push('\n');
        for (i, (v, l)) in self.samples.iter().zip(&self.labels).enumerate() {
            let _ = writeln!(out, "{:.6},{:.6},{}", self.time(i), v.as_f64(), l);
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim_end_matches('\r') == TRACE_CSV_HEADER => {}
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    msg: format!("expected header `{TRACE_CSV_HEADER}`"),
                })
            }
        }
        let mut times = Vec::new();
        let mut samples = Vec::new();
        let mut labels = Vec::new();
        for (idx, raw) in lines {
            let line = raw.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let bad = |msg: &str| Error::Parse {
                line: idx + 1,
                msg: format!("{msg}: `{line}`"),
            };
            let mut cols = line.split(',');
            let (Some(t), Some(v), Some(l), None) = (cols.next(), cols.next(), cols.next(), cols.next()) else {
                return Err(bad("expected 3 columns"));
            };
            times.push(t.parse::<f64>().map_err(|_| bad("bad time"))?);
            samples.push(T::lit(v.parse::<f64>().map_err(|_| bad("bad voltage"))?));
            labels.push(l.parse::<ActivityLabel>().map_err(|_| bad("bad label"))?);
        }
        let dt = grid_step(&times)?;
        VoltageTrace::new(T::lit(dt), samples, labels)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }
}

/// Recovers the uniform step of a time column written with six decimals.
pub(crate) fn grid_step(times: &[f64]) -> Result<f64> {
    if times.len() < 2 {
        return Err(Error::Parse {
            line: 2,
            msg: "need at least two rows to recover the time step".into(),
        });
    }
    if times[0].abs() > 5e-7 {
        return Err(Error::Parse {
            line: 2,
            msg: "time column must start at 0".into(),
        });
    }
    let n = (times.len() - 1) as f64;
    let dt = ((times[times.len() - 1] - times[0]) / n * 1e9).round() / 1e9;
    if !(dt > 0.0) {
        return Err(Error::Parse {
            line: 3,
            msg: "time column must be increasing".into(),
        });
    }
    for (i, t) in times.iter().enumerate() {
        if (t - i as f64 * dt).abs() > 1.5e-6 {
            return Err(Error::Parse {
                line: i + 2,
                msg: format!("time {t} off the uniform {dt} s grid"),
            });
        }
    }
    Ok(dt)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> VoltageTrace<f64> {
        VoltageTrace::new(
            0.01,
            vec![0.0, 0.123_456_789, 3.999_999_9, 3.08],
            vec![ActivityLabel::Walk, ActivityLabel::Walk, ActivityLabel::Run, ActivityLabel::St],
        )
        .unwrap()
    }

    #[test]
    fn csv_layout() {
        let csv = sample().to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("t_s,v_volts,label"));
        assert_eq!(lines.next(), Some("0.000000,0.000000,WALK"));
        assert_eq!(lines.next(), Some("0.010000,0.123457,WALK"));
        assert_eq!(lines.next(), Some("0.020000,4.000000,RUN"));
        assert!(!csv.contains('\r'));
        assert!(csv.ends_with('\n'));
    }

    #[test]
    fn csv_import_is_idempotent_in_quantized_domain() {
        let once = VoltageTrace::<f64>::from_csv(&sample().to_csv()).unwrap();
        let twice = VoltageTrace::<f64>::from_csv(&once.to_csv()).unwrap();
        assert_eq!(once, twice);
        assert_eq!(once.to_csv(), sample().to_csv());
        assert_eq!(once.samples[1], 0.123457);
    }

    #[test]
    fn csv_rejects_malformed_input() {
        assert!(VoltageTrace::<f64>::from_csv("t,v\n").is_err());
        let bad = "t_s,v_volts,label\n0.000000,1.0,WALK\n0.010000,x,WALK\n";
        assert!(matches!(VoltageTrace::<f64>::from_csv(bad), Err(Error::Parse { line: 3, .. })));
        let gap = "t_s,v_volts,label\n0.000000,1.0,WALK\n0.010000,1.0,WALK\n0.030000,1.0,WALK\n0.040000,1,WALK\n";
        assert!(VoltageTrace::<f64>::from_csv(gap).is_err());
    }

    #[test]
    fn decimation_keeps_grid() {
        let d = sample().decimate(2).unwrap();
        assert_eq!(d.samples, vec![0.0, 3.999_999_9]);
        assert!((d.dt - 0.02).abs() < 1e-15);
    }
}
