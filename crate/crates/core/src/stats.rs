//! Small Monte Carlo summary helpers.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

/// Mean, unbiased variance and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub variance: f64,
    pub std_error: f64,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Summary {
        let count = xs.len();
        let mean = xs.iter().sum::<f64>() / count as f64;
        let variance = if count > 1 {
            xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (count - 1) as f64
        } else {
            0.0
        };
        Summary {
            count,
            mean,
            variance,
            std_error: (variance / count as f64).sqrt(),
        }
    }

    /// `(mean - target) / std_error`; zero when both sides agree exactly.
    pub fn z_score(&self, target: f64) -> f64 {
        z(self.mean - target, self.std_error)
    }
}

pub(crate) fn z(diff: f64, se: f64) -> f64 {
    if diff == 0.0 {
        0.0
    } else {
        diff / se
    }
}

/// Ordinary least squares `y = intercept + slope x` with standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub intercept_se: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> LinearFit {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let (slope_se, intercept_se) = if xs.len() > 2 {
        let rss: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, y)| {
                let r = y - intercept - slope * x;
                r * r
            })
            .sum();
        let s2 = rss / (n - 2.0);
        ((s2 / sxx).sqrt(), (s2 * (1.0 / n + mx * mx / sxx)).sqrt())
    } else {
        (f64::NAN, f64::NAN)
    };
    LinearFit {
        slope,
        intercept,
        slope_se,
        intercept_se,
    }
}

pub fn normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// Upper tail `P(Z > x)`.
pub fn normal_sf(x: f64) -> f64 {
    Normal::standard().sf(x)
}

/// Importance-sampling estimate of a probability from per-replica log
/// weights, `None` marking replicas outside the event. Sums are taken
/// relative to the largest log weight so tiny probabilities do not underflow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightedEstimate {
    pub replicas: usize,
    pub hits: usize,
    pub estimate: f64,
    pub std_error: f64,
    /// `ln` of the estimate; `-inf` without hits.
    pub log_estimate: f64,
    /// Standard error of the estimate divided by the estimate.
    pub relative_error: f64,
}

impl WeightedEstimate {
    pub fn from_log_weights(log_weights: &[Option<f64>]) -> WeightedEstimate {
        let replicas = log_weights.len();
        let r = replicas as f64;
        let hits: Vec<f64> = log_weights.iter().flatten().copied().collect();
        if hits.is_empty() {
            return WeightedEstimate {
                replicas,
                hits: 0,
                estimate: 0.0,
                std_error: 0.0,
                log_estimate: f64::NEG_INFINITY,
                relative_error: f64::INFINITY,
            };
        }
        let top = hits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let s1: f64 = hits.iter().map(|w| (w - top).exp()).sum();
        let s2: f64 = hits.iter().map(|w| (2.0 * (w - top)).exp()).sum();
        let mean = s1 / r;
        let var = if replicas > 1 {
            ((s2 - s1 * s1 / r) / (r - 1.0)).max(0.0)
        } else {
            0.0
        };
        let se = (var / r).sqrt();
        let scale = top.exp();
        WeightedEstimate {
            replicas,
            hits: hits.len(),
            estimate: scale * mean,
            std_error: scale * se,
            log_estimate: top + mean.ln(),
            relative_error: se / mean,
        }
    }
}
