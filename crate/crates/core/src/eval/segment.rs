use serde::{Deserialize, Serialize};

use super::EvalImage;
use crate::dispersion::map_class;
use crate::features::{feature_rows, DispersionMaps};
use crate::meta::{remove_fp, MetaModel};
use crate::par::{self, Execution};
use crate::segments::{detect, exceeds, match_segments, MatchResult, OodSegment};
use crate::{Error, Result};

/// Dataset-level detection error counts. `tp` counts found ground-truth
/// objects, so `tp + fn_` is the number of objects.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ErrorCounts {
    pub fn from_match(m: &MatchResult) -> Self {
        Self {
            tp: m.found(),
            fp: m.false_positives(),
            fn_: m.false_negatives(),
        }
    }

    pub fn add(&mut self, other: ErrorCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    /// `2TP / (2TP + FP + FN)`, or 0 when there is nothing to count.
    pub fn f1(&self) -> f64 {
        let den = 2 * self.tp + self.fp + self.fn_;
        if den == 0 {
            0.0
        } else {
            (2 * self.tp) as f64 / den as f64
        }
    }

    pub fn errors(&self) -> usize {
        self.fp + self.fn_
    }

    pub fn gt_objects(&self) -> usize {
        self.tp + self.fn_
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentErrorRow {
    pub threshold: f64,
    #[serde(flatten)]
    pub counts: ErrorCounts,
    pub f1: f64,
    pub segments: usize,
    /// `None` when the dataset has no pixels of the designated classes.
    pub road_miss_rate: Option<f64>,
}

/// Meta-classifier based false-positive removal applied during [`segment_errors`].
#[derive(Clone, Copy, Debug)]
pub struct MetaFilter<'a> {
    pub model: &'a MetaModel,
    pub cutoff: f64,
}

/// Pixels of designated classes and how many of them are flagged.
fn road_counts(img: &EvalImage, flagged: &[bool], road: &[i32]) -> (usize, usize) {
    let labels = img.labels.labels();
    let mut total = 0;
    let mut hit = 0;
    for (i, l) in labels.iter().enumerate() {
        if road.contains(l) {
            total += 1;
            hit += flagged[i] as usize;
        }
    }
    (total, hit)
}

fn flagged_pixels(segs: &[OodSegment], height: usize, width: usize) -> Vec<bool> {
    let mut f = vec![false; height * width];
    for s in segs {
        for &(h, w) in &s.pixels {
            f[h * width + w] = true;
        }
    }
    f
}

struct ImageOutcome {
    counts: ErrorCounts,
    segments: usize,
    road_total: usize,
    road_hit: usize,
}

fn evaluate_image(
    img: &EvalImage,
    maps: Option<&DispersionMaps>,
    t: f64,
    meta: Option<MetaFilter<'_>>,
    road: &[i32],
) -> Result<ImageOutcome> {
    let (_, mut segs) = detect(&img.id, &img.heat, t, 1)?;
    if let (Some(filter), Some(maps)) = (meta, maps) {
        let softmax = img.softmax.as_ref().expect("checked by caller");
        let rows = feature_rows(&segs, softmax, maps, Execution::Sequential)?;
        let probs: Vec<f64> = rows.iter().map(|r| filter.model.predict_proba(&r.values)).collect();
        segs = remove_fp(&segs, &probs, filter.cutoff)?;
    }
    let m = match_segments(&segs, &img.labels)?;
    let flagged = flagged_pixels(&segs, img.heat.height(), img.heat.width());
    let (road_total, road_hit) = road_counts(img, &flagged, road);
    Ok(ImageOutcome {
        counts: ErrorCounts::from_match(&m),
        segments: segs.len(),
        road_total,
        road_hit,
    })
}

/// Segment-level error table over a labelled dataset, one row per threshold.
///
/// With a meta filter, segments whose predicted TP probability falls below
/// the cutoff are removed before matching; the road miss rate then counts
/// only pixels of the retained segments.
pub fn segment_errors(
    images: &[EvalImage],
    thresholds: &[f64],
    meta: Option<MetaFilter<'_>>,
    road_classes: &[i32],
    exec: Execution,
) -> Result<Vec<SegmentErrorRow>> {
    if images.is_empty() {
        return Err(Error::InvalidArgument("segment evaluation on an empty dataset".into()));
    }
    if meta.is_some() && images.iter().any(|i| i.softmax.is_none()) {
        return Err(Error::InvalidArgument("meta filtering needs softmax maps for every image".into()));
    }
    let maps: Vec<Option<DispersionMaps>> = match meta {
        Some(_) => par::map_slice(exec, images, |i| i.softmax.as_ref().map(DispersionMaps::compute)),
        None => images.iter().map(|_| None).collect(),
    };
    thresholds
        .iter()
        .map(|&t| {
            let outcomes = par::map_range(exec, images.len(), |i| {
                evaluate_image(&images[i], maps[i].as_ref(), t, meta, road_classes)
            });
            let mut counts = ErrorCounts::default();
            let (mut segments, mut total, mut hit) = (0, 0, 0);
            for o in outcomes {
                let o = o?;
                counts.add(o.counts);
                segments += o.segments;
                total += o.road_total;
                hit += o.road_hit;
            }
            Ok(SegmentErrorRow {
                threshold: t,
                counts,
                f1: counts.f1(),
                segments,
                road_miss_rate: (total > 0).then(|| hit as f64 / total as f64),
            })
        })
        .collect()
}

/// Fraction of designated in-distribution pixels flagged as OoD at threshold `t`.
pub fn road_miss_rate(images: &[EvalImage], t: f64, road_classes: &[i32]) -> Result<f64> {
    let (mut total, mut hit) = (0usize, 0usize);
    for img in images {
        let flagged: Vec<bool> = img.heat.values().iter().map(|&v| exceeds(v, t)).collect();
        let (a, b) = road_counts(img, &flagged, road_classes);
        total += a;
        hit += b;
    }
    if total == 0 {
        return Err(Error::InvalidArgument(format!(
            "no pixels of classes {road_classes:?} to compute a miss rate over"
        )));
    }
    Ok(hit as f64 / total as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiouResult {
    /// IoU per in-distribution class; `None` if the class is absent from both
    /// prediction and ground truth.
    pub per_class: Vec<Option<f64>>,
    pub miou: f64,
}

/// Mean IoU over the in-distribution classes after overriding the MAP
/// prediction with the OoD class wherever the heat map reaches `t`.
/// Ignore-labelled pixels are skipped. Pass `f64::INFINITY` for plain MAP mIoU.
pub fn miou_with_ood(images: &[EvalImage], t: f64, exec: Execution) -> Result<MiouResult> {
    let Some(first) = images.first() else {
        return Err(Error::InvalidArgument("mIoU of an empty dataset".into()));
    };
    let q = first.labels.num_classes();
    let per_image = par::map_slice(exec, images, |img| -> Result<Vec<[u64; 3]>> {
        let s = img
            .softmax
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument(format!("image {} has no softmax map", img.id)))?;
        if s.num_classes() != q {
            return Err(Error::DimensionMismatch(format!("image {} has q={}, expected {q}", img.id, s.num_classes())));
        }
        // [tp, fp, fn] per class.
        let mut c = vec![[0u64; 3]; q];
        for (i, &gt) in img.labels.labels().iter().enumerate() {
            if gt < 0 {
                continue;
            }
            let pred = if exceeds(img.heat.get(i), t) { q } else { map_class(s.pixel(i)) };
            let gt = gt as usize;
            if pred == gt {
                if gt < q {
                    c[gt][0] += 1;
                }
            } else {
                if pred < q {
                    c[pred][1] += 1;
                }
                if gt < q {
                    c[gt][2] += 1;
                }
            }
        }
        Ok(c)
    });
    let mut total = vec![[0u64; 3]; q];
    for c in per_image {
        for (acc, v) in total.iter_mut().zip(c?) {
            for k in 0..3 {
                acc[k] += v[k];
            }
        }
    }
    let per_class: Vec<Option<f64>> = total
        .iter()
        .map(|&[tp, fp, fn_]| {
            let den = tp + fp + fn_;
            (den > 0).then(|| tp as f64 / den as f64)
        })
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let miou = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    Ok(MiouResult { per_class, miou })
}
