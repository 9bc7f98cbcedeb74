//! Exact ROC and precision-recall sweeps over pixel scores.
//!
//! Thresholds are the distinct score values in decreasing order; pixels with
//! equal scores always enter the positive set together.

use serde::{Deserialize, Serialize};

use super::ScoredPixels;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    Roc,
    Pr,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub kind: CurveKind,
    /// `(FPR, TPR)` for ROC, `(recall, precision)` for PR.
    pub points: Vec<(f64, f64)>,
    /// Threshold of each point; `+inf` for the ROC origin.
    pub thresholds: Vec<f64>,
    pub area: f64,
}

/// Cumulative `(threshold, tp, fp)` after each group of tied scores.
fn sweep(sp: &ScoredPixels) -> Vec<(f64, u64, u64)> {
    let mut order: Vec<usize> = (0..sp.scores.len()).collect();
    order.sort_by(|&a, &b| sp.scores[b].total_cmp(&sp.scores[a]));
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let s = sp.scores[order[i]];
        while i < order.len() && sp.scores[order[i]] == s {
            if sp.labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push((s, tp, fp));
    }
    out
}

fn require_both(sp: &ScoredPixels) -> Result<(u64, u64)> {
    let (p, n) = (sp.positives() as u64, sp.negatives() as u64);
    if p == 0 || n == 0 {
        return Err(Error::InvalidArgument(format!(
            "curve needs both classes, got {p} positives and {n} negatives"
        )));
    }
    Ok((p, n))
}

pub fn roc_curve(sp: &ScoredPixels) -> Result<Curve> {
    let (p, n) = require_both(sp)?;
    let mut points = vec![(0.0, 0.0)];
    let mut thresholds = vec![f64::INFINITY];
    // Twice the trapezoid area in units of one positive-negative pair.
    let mut twice_area: u128 = 0;
    let (mut prev_tp, mut prev_fp) = (0u64, 0u64);
    for (t, tp, fp) in sweep(sp) {
        twice_area += (fp - prev_fp) as u128 * (tp + prev_tp) as u128;
        points.push((fp as f64 / n as f64, tp as f64 / p as f64));
        thresholds.push(t);
        (prev_tp, prev_fp) = (tp, fp);
    }
    Ok(Curve {
        kind: CurveKind::Roc,
        points,
        thresholds,
        area: twice_area as f64 / (2.0 * p as f64 * n as f64),
    })
}

/// Probability that a random positive outscores a random negative, ties half.
pub fn auroc(sp: &ScoredPixels) -> Result<f64> {
    roc_curve(sp).map(|c| c.area)
}

/// Precision-recall curve with average-precision area
/// `Σ (R_k − R_{k−1}) · P_k`.
pub fn pr_curve(sp: &ScoredPixels) -> Result<Curve> {
    let p = sp.positives() as u64;
    if p == 0 {
        return Err(Error::InvalidArgument("PR curve needs at least one positive".into()));
    }
    let mut points = Vec::new();
    let mut thresholds = Vec::new();
    let mut area = 0.0;
    let mut prev_tp = 0u64;
    for (t, tp, fp) in sweep(sp) {
        let precision = tp as f64 / (tp + fp) as f64;
        area += (tp - prev_tp) as f64 / p as f64 * precision;
        points.push((tp as f64 / p as f64, precision));
        thresholds.push(t);
        prev_tp = tp;
    }
    Ok(Curve {
        kind: CurveKind::Pr,
        points,
        thresholds,
        area,
    })
}

pub fn auprc(sp: &ScoredPixels) -> Result<f64> {
    pr_curve(sp).map(|c| c.area)
}

/// Smallest false-positive rate over thresholds whose TPR reaches `target`.
pub fn fpr_at_tpr(sp: &ScoredPixels, target: f64) -> Result<f64> {
    let (p, n) = require_both(sp)?;
    if !(0.0..=1.0).contains(&target) {
        return Err(Error::InvalidArgument(format!("TPR target {target} outside [0,1]")));
    }
    if target <= 0.0 {
        return Ok(0.0);
    }
    for (_, tp, fp) in sweep(sp) {
        if tp as f64 / p as f64 >= target - 1e-12 {
            return Ok(fp as f64 / n as f64);
        }
    }
    Ok(1.0)
}
