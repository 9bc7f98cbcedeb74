//! Entropy thresholding into OoD pixel masks, connected-component segments and
//! segment-level matching against ground truth.
//!
//! Connectivity is 8-neighbourhood throughout, for predicted segments and for
//! ground-truth OoD objects alike.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::tensor::{HeatMap, LabelMap};
use crate::{Error, Result};

/// Pixels whose score is at least `threshold`.
#[derive(Clone, Debug, PartialEq)]
pub struct OodMask {
    height: usize,
    width: usize,
    threshold: f64,
    flags: Vec<bool>,
}

impl OodMask {
    pub fn from_flags(height: usize, width: usize, threshold: f64, flags: Vec<bool>) -> Result<Self> {
        if flags.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "{height}x{width} mask needs {} flags, got {}",
                height * width,
                flags.len()
            )));
        }
        Ok(Self {
            height,
            width,
            threshold,
            flags,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn is_set(&self, index: usize) -> bool {
        self.flags[index]
    }

    pub fn count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }
}

/// Inclusive threshold test at heat-map precision: the threshold is rounded
/// to `f32` first, so `t = 0.7` flags a stored value of `0.7f32`.
pub fn exceeds(value: f32, t: f64) -> bool {
    value >= t as f32
}

/// Flags every pixel with `value >= t` (inclusive).
pub fn threshold_mask(heat: &HeatMap, t: f64) -> Result<OodMask> {
    if !t.is_finite() {
        return Err(Error::InvalidArgument(format!("threshold {t} is not finite")));
    }
    let flags = heat.values().iter().map(|&v| exceeds(v, t)).collect();
    OodMask::from_flags(heat.height(), heat.width(), t, flags)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min_h: usize,
    pub min_w: usize,
    pub max_h: usize,
    pub max_w: usize,
}

/// One connected component of an [`OodMask`].
#[derive(Clone, Debug, PartialEq)]
pub struct OodSegment {
    pub id: usize,
    pub image_id: String,
    /// `(h, w)` coordinates in raster order.
    pub pixels: Vec<(usize, usize)>,
    pub bbox: BoundingBox,
}

impl OodSegment {
    pub fn size(&self) -> usize {
        self.pixels.len()
    }
}

/// Labels the 8-connected components of the pixels where `member` holds.
///
/// Returns a per-pixel component index (`u32::MAX` for non-members) and the
/// member pixels of every component. Components are numbered in raster
/// order of their first pixel and pixel lists are in raster order.
pub fn label_components(
    height: usize,
    width: usize,
    member: impl Fn(usize) -> bool,
) -> (Vec<u32>, Vec<Vec<(usize, usize)>>) {
    let mut labels = vec![u32::MAX; height * width];
    let mut components: Vec<Vec<(usize, usize)>> = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..height * width {
        if labels[start] != u32::MAX || !member(start) {
            continue;
        }
        let id = components.len() as u32;
        labels[start] = id;
        queue.push_back(start);
        let mut pixels = Vec::new();
        while let Some(idx) = queue.pop_front() {
            let (h, w) = (idx / width, idx % width);
            pixels.push((h, w));
            for (nh, nw) in neighbours(h, w, height, width) {
                let n = nh * width + nw;
                if labels[n] == u32::MAX && member(n) {
                    labels[n] = id;
                    queue.push_back(n);
                }
            }
        }
        pixels.sort_unstable();
        components.push(pixels);
    }
    (labels, components)
}

/// In-bounds 8-neighbours of `(h, w)`.
pub fn neighbours(h: usize, w: usize, height: usize, width: usize) -> impl Iterator<Item = (usize, usize)> {
    let h0 = h.saturating_sub(1);
    let h1 = (h + 1).min(height - 1);
    let w0 = w.saturating_sub(1);
    let w1 = (w + 1).min(width - 1);
    (h0..=h1)
        .flat_map(move |nh| (w0..=w1).map(move |nw| (nh, nw)))
        .filter(move |&(nh, nw)| (nh, nw) != (h, w))
}

fn bbox(pixels: &[(usize, usize)]) -> BoundingBox {
    let mut b = BoundingBox {
        min_h: usize::MAX,
        min_w: usize::MAX,
        max_h: 0,
        max_w: 0,
    };
    for &(h, w) in pixels {
        b.min_h = b.min_h.min(h);
        b.min_w = b.min_w.min(w);
        b.max_h = b.max_h.max(h);
        b.max_w = b.max_w.max(w);
    }
    b
}

/// Maximal 8-connected components of the mask, ids in raster order.
pub fn connected_components(mask: &OodMask) -> Vec<OodSegment> {
    segments_for_image("", mask)
}

pub fn segments_for_image(image_id: &str, mask: &OodMask) -> Vec<OodSegment> {
    let (_, comps) = label_components(mask.height, mask.width, |i| mask.flags[i]);
    comps
        .into_iter()
        .enumerate()
        .map(|(id, pixels)| OodSegment {
            id,
            image_id: image_id.to_string(),
            bbox: bbox(&pixels),
            pixels,
        })
        .collect()
}

/// Thresholds a heat map and extracts its segments, optionally dropping
/// segments smaller than `min_size` pixels.
pub fn detect(image_id: &str, heat: &HeatMap, t: f64, min_size: usize) -> Result<(OodMask, Vec<OodSegment>)> {
    let mask = threshold_mask(heat, t)?;
    let mut segs = segments_for_image(image_id, &mask);
    if min_size > 1 {
        segs.retain(|s| s.size() >= min_size);
        for (i, s) in segs.iter_mut().enumerate() {
            s.id = i;
        }
    }
    Ok((mask, segs))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    TruePositive,
    FalsePositive,
    /// Every pixel of the segment carries the ignore label.
    Ignored,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchResult {
    /// One verdict per predicted segment, in input order.
    pub verdicts: Vec<Verdict>,
    /// One flag per ground-truth OoD component: found by any predicted pixel.
    pub gt_found: Vec<bool>,
}

impl MatchResult {
    pub fn true_positive_segments(&self) -> usize {
        self.verdicts.iter().filter(|&&v| v == Verdict::TruePositive).count()
    }

    pub fn false_positives(&self) -> usize {
        self.verdicts.iter().filter(|&&v| v == Verdict::FalsePositive).count()
    }

    pub fn found(&self) -> usize {
        self.gt_found.iter().filter(|&&f| f).count()
    }

    pub fn false_negatives(&self) -> usize {
        self.gt_found.len() - self.found()
    }

    pub fn num_gt(&self) -> usize {
        self.gt_found.len()
    }
}

/// Ground-truth OoD objects: 8-connected components of OoD-labeled pixels.
pub fn gt_components(labels: &LabelMap) -> (Vec<u32>, usize) {
    let (map, comps) = label_components(labels.height(), labels.width(), |i| labels.is_ood(i));
    (map, comps.len())
}

/// Judges each predicted segment against the ground truth.
///
/// A segment is a true positive iff it touches at least one OoD-labeled
/// pixel, and is dropped as [`Verdict::Ignored`] iff all its pixels carry the
/// ignore label. A ground-truth object is found iff any segment pixel lies in it.
pub fn match_segments(segs: &[OodSegment], labels: &LabelMap) -> Result<MatchResult> {
    let (height, width) = (labels.height(), labels.width());
    let (gt_map, num_gt) = gt_components(labels);
    let mut gt_found = vec![false; num_gt];
    let mut verdicts = Vec::with_capacity(segs.len());
    for seg in segs {
        let mut evaluable = false;
        let mut hits_ood = false;
        for &(h, w) in &seg.pixels {
            if h >= height || w >= width {
                return Err(Error::DimensionMismatch(format!(
                    "segment pixel ({h},{w}) outside {height}x{width} label map"
                )));
            }
            let idx = h * width + w;
            if !labels.is_ignored(idx) {
                evaluable = true;
            }
            if labels.is_ood(idx) {
                hits_ood = true;
                gt_found[gt_map[idx] as usize] = true;
            }
        }
        verdicts.push(match (evaluable, hits_ood) {
            (_, true) => Verdict::TruePositive,
            (true, false) => Verdict::FalsePositive,
            (false, false) => Verdict::Ignored,
        });
    }
    Ok(MatchResult { verdicts, gt_found })
}

/// Export record for one segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub image_id: String,
    pub segment_id: usize,
    pub pixel_count: usize,
    pub bbox: BoundingBox,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
}

pub fn records(segs: &[OodSegment], verdicts: Option<&[Verdict]>) -> Vec<SegmentRecord> {
    segs.iter()
        .enumerate()
        .map(|(i, s)| SegmentRecord {
            image_id: s.image_id.clone(),
            segment_id: s.id,
            pixel_count: s.size(),
            bbox: s.bbox,
            verdict: verdicts.map(|v| v[i]),
        })
        .collect()
}
