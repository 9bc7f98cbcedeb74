//! Pixel- and segment-level evaluation.

mod curves;
mod report;
mod segment;
mod stats;
pub mod svg;

pub use curves::{auprc, auroc, fpr_at_tpr, pr_curve, roc_curve, Curve, CurveKind};
pub use report::{evaluate, EvalOptions, EvalReport, PixelMetrics};
pub use segment::{
    miou_with_ood, road_miss_rate, segment_errors, ErrorCounts, MetaFilter, MiouResult, SegmentErrorRow,
};
pub use stats::{mean_std, quantile_sorted, quantile_summary, QuantileSummary, Quantiles};

use crate::par::{self, Execution};
use crate::tensor::{HeatMap, LabelMap, SoftmaxMap};
use crate::{Error, Result};

/// Default threshold grid for segment error tables.
pub const DEFAULT_THRESHOLDS: [f64; 7] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7];

/// One labelled image as seen by the evaluator.
#[derive(Clone, Debug)]
pub struct EvalImage {
    pub id: String,
    /// Needed for mIoU and meta filtering only.
    pub softmax: Option<SoftmaxMap>,
    pub heat: HeatMap,
    pub labels: LabelMap,
}

/// Pixel scores with binary labels: OoD pixels are positives, in-distribution
/// pixels negatives. Ignore-labelled pixels never appear.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredPixels {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

impl ScoredPixels {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} scores but {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { scores, labels })
    }

    pub fn from_image(heat: &HeatMap, labels: &LabelMap) -> Result<Self> {
        if heat.height() != labels.height() || heat.width() != labels.width() {
            return Err(Error::DimensionMismatch(format!(
                "heat map {}x{} vs labels {}x{}",
                heat.height(),
                heat.width(),
                labels.height(),
                labels.width()
            )));
        }
        let mut scores = Vec::new();
        let mut flags = Vec::new();
        for i in 0..labels.labels().len() {
            if !labels.is_ignored(i) {
                scores.push(heat.get(i) as f64);
                flags.push(labels.is_ood(i));
            }
        }
        Ok(Self { scores, labels: flags })
    }

    /// Gathers the evaluable pixels of every image, in image order.
    pub fn from_images(images: &[EvalImage], exec: Execution) -> Result<Self> {
        let parts = par::map_slice(exec, images, |img| Self::from_image(&img.heat, &img.labels));
        let mut out = Self { scores: Vec::new(), labels: Vec::new() };
        for p in parts {
            let p = p?;
            out.scores.extend(p.scores);
            out.labels.extend(p.labels);
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    pub fn negatives(&self) -> usize {
        self.len() - self.positives()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ignore_pixels_are_excluded() {
        let heat = HeatMap::new(1, 4, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let labels = LabelMap::new(1, 4, 2, vec![0, -1, 2, 1]).unwrap();
        let sp = ScoredPixels::from_image(&heat, &labels).unwrap();
        assert_eq!(sp.labels, vec![false, true, false]);
        assert_eq!(sp.positives() + sp.negatives(), 3);
        assert!((sp.scores[1] - 0.3).abs() < 1e-7);
    }
}
