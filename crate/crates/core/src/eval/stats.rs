use serde::{Deserialize, Serialize};

use super::ScoredPixels;
use crate::{Error, Result};

/// Quantile of an ascending sample with linear interpolation between order
/// statistics at position `p·(n−1)`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub count: usize,
    pub min: f64,
    pub p1: f64,
    pub p10: f64,
    pub p25: f64,
    pub median: f64,
    pub p75: f64,
    pub p90: f64,
    pub p99: f64,
    pub max: f64,
}

impl Quantiles {
    pub const LEVELS: [f64; 9] = [0.0, 0.01, 0.10, 0.25, 0.5, 0.75, 0.90, 0.99, 1.0];

    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("quantiles of an empty sample".into()));
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = Self::LEVELS.map(|p| quantile_sorted(&v, p));
        Ok(Self {
            count: v.len(),
            min: q[0],
            p1: q[1],
            p10: q[2],
            p25: q[3],
            median: q[4],
            p75: q[5],
            p90: q[6],
            p99: q[7],
            max: q[8],
        })
    }

    pub fn as_array(&self) -> [f64; 9] {
        [self.min, self.p1, self.p10, self.p25, self.median, self.p75, self.p90, self.p99, self.max]
    }
}

/// Score distribution of OoD (positive) and in-distribution (negative) pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileSummary {
    pub positive: Quantiles,
    pub negative: Quantiles,
}

pub fn quantile_summary(sp: &ScoredPixels) -> Result<QuantileSummary> {
    let pick = |want: bool| -> Vec<f64> {
        sp.scores.iter().zip(&sp.labels).filter(|(_, &l)| l == want).map(|(s, _)| *s).collect()
    };
    Ok(QuantileSummary {
        positive: Quantiles::of(&pick(true))?,
        negative: Quantiles::of(&pick(false))?,
    })
}

/// Sample mean and standard deviation (denominator `n − 1`, zero for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.iter().all(|&v| v == values[0]) {
        return (values[0], 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}
