use serde::{Deserialize, Serialize};

use crate::activity::ActivityLabel;

use super::{argmax_label, Dataset};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthRule {
    /// `0.9 * min(sd, IQR / 1.34) * n^(-1/5)`.
    Silverman,
}

const MIN_BANDWIDTH: f64 = 1e-6;

#[derive(Clone, Debug)]
struct ClassDensity {
    log_prior: f64,
    /// Per feature: training values and kernel bandwidth.
    features: Vec<(Vec<f64>, f64)>,
}

/// Naive Bayes with a Gaussian kernel density estimate per class and
/// feature.
#[derive(Clone, Debug)]
pub struct NaiveBayesKde {
    classes: [Option<ClassDensity>; ActivityLabel::COUNT],
    dim: usize,
}

fn silverman(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    if values.len() < 2 {
        return MIN_BANDWIDTH;
    }
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (n - 1.0);
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
    };
    let iqr = (q(0.75) - q(0.25)) / 1.34;
    let spread = if iqr > 0.0 { sd.min(iqr) } else { sd };
    (0.9 * spread * n.powf(-0.2)).max(MIN_BANDWIDTH)
}

fn log_kde(x: f64, values: &[f64], h: f64) -> f64 {
    // log of mean_i N(x; x_i, h), via log-sum-exp
    let zs: Vec<f64> = values.iter().map(|v| -0.5 * ((x - v) / h).powi(2)).collect();
    let m = zs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = zs.iter().map(|z| (z - m).exp()).sum();
    m + s.ln() - (values.len() as f64).ln() - h.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

impl NaiveBayesKde {
    pub fn fit(data: &Dataset, _rule: BandwidthRule) -> Self {
        let n = data.len() as f64;
        let dim = data.dim();
        let classes = std::array::from_fn(|c| {
            let idx: Vec<usize> = (0..data.len()).filter(|&i| data.label(i).index() == c).collect();
            if idx.is_empty() {
                return None;
            }
            let features = (0..dim)
                .map(|f| {
                    let values: Vec<f64> = idx.iter().map(|&i| data.point(i)[f]).collect();
                    let h = silverman(&values);
                    (values, h)
                })
                .collect();
            Some(ClassDensity {
                log_prior: (idx.len() as f64 / n).ln(),
                features,
            })
        });
        NaiveBayesKde { classes, dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Unnormalized log posterior per class (`-inf` for absent classes).
    pub fn log_posterior(&self, x: &[f64]) -> [f64; ActivityLabel::COUNT] {
        std::array::from_fn(|c| match &self.classes[c] {
            None => f64::NEG_INFINITY,
            Some(cd) => {
                cd.log_prior
                    + cd
                        .features
                        .iter()
                        .zip(x)
                        .map(|((values, h), &xi)| log_kde(xi, values, *h))
                        .sum::<f64>()
            }
        })
    }

    pub fn predict(&self, x: &[f64]) -> ActivityLabel {
        let present = std::array::from_fn(|c| self.classes[c].is_some());
        argmax_label(&self.log_posterior(x), &present)
    }
}
