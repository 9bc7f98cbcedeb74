use serde::{Deserialize, Serialize};

use super::{
    fpr_at_tpr, miou_with_ood, pr_curve, quantile_summary, roc_curve, segment_errors, Curve, EvalImage,
    MetaFilter, MiouResult, QuantileSummary, ScoredPixels, SegmentErrorRow, DEFAULT_THRESHOLDS,
};
use crate::par::Execution;
use crate::Result;

#[derive(Clone, Debug)]
pub struct EvalOptions<'a> {
    /// Name of the score map being evaluated, recorded in the report.
    pub heat_kind: String,
    pub thresholds: Vec<f64>,
    pub road_classes: Vec<i32>,
    pub tpr_target: f64,
    /// Threshold for the mIoU variant with an OoD class.
    pub miou_threshold: Option<f64>,
    pub meta: Option<MetaFilter<'a>>,
    pub exec: Execution,
}

impl Default for EvalOptions<'_> {
    fn default() -> Self {
        Self {
            heat_kind: "entropy".into(),
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            road_classes: vec![0],
            tpr_target: 0.95,
            miou_threshold: None,
            meta: None,
            exec: Execution::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PixelMetrics {
    pub positives: usize,
    pub negatives: usize,
    pub auroc: f64,
    pub auprc: f64,
    pub tpr_target: f64,
    pub fpr_at_tpr: f64,
    pub quantiles: QuantileSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiouAtThreshold {
    pub threshold: f64,
    #[serde(flatten)]
    pub result: MiouResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub heat_kind: String,
    pub num_images: usize,
    pub pixel: Option<PixelMetrics>,
    pub segment_errors: Vec<SegmentErrorRow>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub segment_errors_meta: Option<Vec<SegmentErrorRow>>,
    pub miou: Option<MiouResult>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub miou_with_ood: Option<MiouAtThreshold>,
    /// Human-readable reasons for metrics that could not be computed.
    pub skipped: Vec<String>,
    #[serde(skip)]
    pub curves: Option<(Curve, Curve)>,
}

/// Runs the whole evaluation battery on a labelled dataset.
pub fn evaluate(images: &[EvalImage], opts: &EvalOptions<'_>) -> Result<EvalReport> {
    let mut skipped = Vec::new();
    let sp = ScoredPixels::from_images(images, opts.exec)?;
    let (pixel, curves) = if sp.positives() > 0 && sp.negatives() > 0 {
        let roc = roc_curve(&sp)?;
        let pr = pr_curve(&sp)?;
        let metrics = PixelMetrics {
            positives: sp.positives(),
            negatives: sp.negatives(),
            auroc: roc.area,
            auprc: pr.area,
            tpr_target: opts.tpr_target,
            fpr_at_tpr: fpr_at_tpr(&sp, opts.tpr_target)?,
            quantiles: quantile_summary(&sp)?,
        };
        (Some(metrics), Some((roc, pr)))
    } else {
        skipped.push(format!(
            "pixel curves need OoD and in-distribution pixels (got {} and {})",
            sp.positives(),
            sp.negatives()
        ));
        (None, None)
    };

    let segment_table = if images.is_empty() {
        skipped.push("segment errors need at least one image".into());
        Vec::new()
    } else {
        segment_errors(images, &opts.thresholds, None, &opts.road_classes, opts.exec)?
    };
    let segment_errors_meta = match opts.meta {
        Some(m) if !images.is_empty() => Some(segment_errors(
            images,
            &opts.thresholds,
            Some(m),
            &opts.road_classes,
            opts.exec,
        )?),
        _ => None,
    };

    let has_softmax = !images.is_empty() && images.iter().all(|i| i.softmax.is_some());
    let (miou, miou_ood) = if has_softmax {
        let plain = miou_with_ood(images, f64::INFINITY, opts.exec)?;
        let ood = match opts.miou_threshold {
            Some(t) => Some(MiouAtThreshold { threshold: t, result: miou_with_ood(images, t, opts.exec)? }),
            None => None,
        };
        (Some(plain), ood)
    } else {
        skipped.push("mIoU needs softmax maps for every image".into());
        (None, None)
    };

    Ok(EvalReport {
        heat_kind: opts.heat_kind.clone(),
        num_images: images.len(),
        pixel,
        segment_errors: segment_table,
        segment_errors_meta,
        miou,
        miou_with_ood: miou_ood,
        skipped,
        curves,
    })
}
