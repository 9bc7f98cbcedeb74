//! Hand-crafted per-segment metrics, the inputs of the meta classifier.
//!
//! For `q` classes the feature vector has `3q + 25` entries, in this order:
//!
//! 1. For each of `E` (normalized entropy), `V` (variation ratio) and `M`
//!    (probability margin), mean and variance over the whole segment, its
//!    interior and its boundary: `E_mean, E_var, E_int_mean, E_int_var,
//!    E_bd_mean, E_bd_var, V_mean, …, M_bd_var` (18).
//! 2. Mean and variance of every class probability over the segment:
//!    `P0_mean, P0_var, …` (2q).
//! 3. Sizes `S, S_in, S_bd` and the ratios `S_rel = S/S_bd`,
//!    `S_in_rel = S_in/S_bd` (5).
//! 4. Neighbourhood MAP-class proportions `N_0 … N_{q-1}` (q).
//! 5. Geometric centre `C_h, C_w` (2).
//!
//! Variances use the region size as denominator. Empty interiors contribute
//! zero mean and variance; [`FeatureRow::interior_empty`] records that case
//! and is exported to CSV but is not part of the model input.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::dispersion::{self, DispersionKind};
use crate::par::{self, Execution};
use crate::segments::{neighbours, OodSegment};
use crate::tensor::{HeatMap, SoftmaxMap};
use crate::{Error, Result};

/// The three dispersion heat maps a feature row aggregates.
#[derive(Clone, Debug)]
pub struct DispersionMaps {
    pub entropy: HeatMap,
    pub variation_ratio: HeatMap,
    pub probability_margin: HeatMap,
}

impl DispersionMaps {
    pub fn compute(s: &SoftmaxMap) -> Self {
        Self {
            entropy: dispersion::heatmap(s, DispersionKind::Entropy),
            variation_ratio: dispersion::heatmap(s, DispersionKind::VariationRatio),
            probability_margin: dispersion::heatmap(s, DispersionKind::ProbabilityMargin),
        }
    }

    fn ordered(&self) -> [(&'static str, &HeatMap); 3] {
        [
            ("E", &self.entropy),
            ("V", &self.variation_ratio),
            ("M", &self.probability_margin),
        ]
    }
}

pub fn num_features(num_classes: usize) -> usize {
    3 * num_classes + 25
}

/// Canonical column names, in feature order.
pub fn feature_names(num_classes: usize) -> Vec<String> {
    let mut names = Vec::with_capacity(num_features(num_classes));
    for m in ["E", "V", "M"] {
        for region in ["", "_int", "_bd"] {
            names.push(format!("{m}{region}_mean"));
            names.push(format!("{m}{region}_var"));
        }
    }
    for j in 0..num_classes {
        names.push(format!("P{j}_mean"));
        names.push(format!("P{j}_var"));
    }
    for s in ["S", "S_in", "S_bd", "S_rel", "S_in_rel"] {
        names.push(s.to_string());
    }
    for j in 0..num_classes {
        names.push(format!("N_{j}"));
    }
    names.push("C_h".into());
    names.push("C_w".into());
    names
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRow {
    pub image_id: String,
    pub segment_id: usize,
    pub values: Vec<f64>,
    pub interior_empty: bool,
}

/// Splits a segment into interior pixels (not on the image border and with
/// all 8 neighbours in the segment) and boundary pixels.
pub fn interior_boundary(
    seg: &OodSegment,
    height: usize,
    width: usize,
) -> (Vec<(usize, usize)>, Vec<(usize, usize)>) {
    let member = membership(seg, height, width);
    let mut interior = Vec::new();
    let mut boundary = Vec::new();
    for &(h, w) in &seg.pixels {
        let on_border = h == 0 || w == 0 || h + 1 == height || w + 1 == width;
        if !on_border && neighbours(h, w, height, width).all(|(nh, nw)| member[nh * width + nw]) {
            interior.push((h, w));
        } else {
            boundary.push((h, w));
        }
    }
    (interior, boundary)
}

fn membership(seg: &OodSegment, height: usize, width: usize) -> Vec<bool> {
    let mut member = vec![false; height * width];
    for &(h, w) in &seg.pixels {
        member[h * width + w] = true;
    }
    member
}

/// Pixels adjacent to the segment but not in it.
fn neighbourhood(seg: &OodSegment, height: usize, width: usize) -> Vec<usize> {
    let member = membership(seg, height, width);
    let mut nb = BTreeSet::new();
    for &(h, w) in &seg.pixels {
        for (nh, nw) in neighbours(h, w, height, width) {
            let i = nh * width + nw;
            if !member[i] {
                nb.insert(i);
            }
        }
    }
    nb.into_iter().collect()
}

/// Fraction of neighbourhood pixels whose MAP class is `j`, for every `j`.
/// All zeros if the neighbourhood is empty.
pub fn neighborhood_profile(seg: &OodSegment, s: &SoftmaxMap) -> Vec<f64> {
    let nb = neighbourhood(seg, s.height(), s.width());
    let mut counts = vec![0usize; s.num_classes()];
    for &i in &nb {
        counts[dispersion::map_class(s.pixel(i))] += 1;
    }
    if nb.is_empty() {
        return vec![0.0; s.num_classes()];
    }
    counts.iter().map(|&c| c as f64 / nb.len() as f64).collect()
}

fn mean_var(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let (n, sum) = values.clone().fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = sum / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, var)
}

pub fn feature_row(seg: &OodSegment, s: &SoftmaxMap, maps: &DispersionMaps) -> Result<FeatureRow> {
    let (height, width, q) = (s.height(), s.width(), s.num_classes());
    for m in [&maps.entropy, &maps.variation_ratio, &maps.probability_margin] {
        if (m.height(), m.width()) != (height, width) {
            return Err(Error::DimensionMismatch("heat map and softmax differ in size".into()));
        }
    }
    if seg.pixels.is_empty() {
        return Err(Error::InvalidArgument("empty segment".into()));
    }
    if let Some(&(h, w)) = seg.pixels.iter().find(|&&(h, w)| h >= height || w >= width) {
        return Err(Error::DimensionMismatch(format!(
            "segment pixel ({h},{w}) outside {height}x{width} image"
        )));
    }
    let (interior, boundary) = interior_boundary(seg, height, width);
    let idx = |&(h, w): &(usize, usize)| h * width + w;

    let mut values = Vec::with_capacity(num_features(q));
    for (_, heat) in maps.ordered() {
        for region in [&seg.pixels, &interior, &boundary] {
            let (m, v) = mean_var(region.iter().map(|p| heat.get(idx(p)) as f64));
            values.push(m);
            values.push(v);
        }
    }
    for j in 0..q {
        let (m, v) = mean_var(seg.pixels.iter().map(|p| s.pixel(idx(p))[j] as f64));
        values.push(m);
        values.push(v);
    }
    let size = seg.pixels.len() as f64;
    let size_in = interior.len() as f64;
    let size_bd = boundary.len() as f64;
    values.extend([size, size_in, size_bd, size / size_bd, size_in / size_bd]);
    values.extend(neighborhood_profile(seg, s));
    values.push(seg.pixels.iter().map(|&(h, _)| h as f64).sum::<f64>() / size);
    values.push(seg.pixels.iter().map(|&(_, w)| w as f64).sum::<f64>() / size);

    debug_assert_eq!(values.len(), num_features(q));
    Ok(FeatureRow {
        image_id: seg.image_id.clone(),
        segment_id: seg.id,
        values,
        interior_empty: interior.is_empty(),
    })
}

/// Feature rows for all segments of one image.
pub fn feature_rows(segs: &[OodSegment], s: &SoftmaxMap, maps: &DispersionMaps, exec: Execution) -> Result<Vec<FeatureRow>> {
    par::map_slice(exec, segs, |seg| feature_row(seg, s, maps))
        .into_iter()
        .collect()
}

/// Writes rows as CSV: `image_id, segment_id, <features…>, interior_empty[, tp]`.
pub fn to_csv(num_classes: usize, rows: &[FeatureRow], tp_labels: Option<&[bool]>) -> String {
    let mut out = String::from("image_id,segment_id");
    for n in feature_names(num_classes) {
        out.push(',');
        out.push_str(&n);
    }
    out.push_str(",interior_empty");
    if tp_labels.is_some() {
        out.push_str(",tp");
    }
    out.push('\n');
    for (i, r) in rows.iter().enumerate() {
        write!(out, "{},{}", r.image_id, r.segment_id).unwrap();
        for v in &r.values {
            write!(out, ",{v}").unwrap();
        }
        write!(out, ",{}", r.interior_empty as u8).unwrap();
        if let Some(tp) = tp_labels {
            write!(out, ",{}", tp[i] as u8).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Parsed feature CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    pub names: Vec<String>,
    pub rows: Vec<FeatureRow>,
    pub tp: Option<Vec<bool>>,
}

pub fn from_csv(text: &str) -> Result<FeatureTable> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::Format("empty feature CSV".into()))?
        .split(',')
        .collect();
    if header.len() < 4 || header[0] != "image_id" || header[1] != "segment_id" {
        return Err(Error::Format("feature CSV must start with image_id,segment_id".into()));
    }
    let has_tp = header.last() == Some(&"tp");
    let end = header.len() - 1 - has_tp as usize;
    if header[end] != "interior_empty" {
        return Err(Error::Format("feature CSV lacks interior_empty column".into()));
    }
    let names: Vec<String> = header[2..end].iter().map(|s| s.to_string()).collect();
    let mut rows = Vec::new();
    let mut tp = Vec::new();
    for (ln, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != header.len() {
            return Err(Error::Format(format!("row {} has {} cells, expected {}", ln + 1, cells.len(), header.len())));
        }
        let num = |s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::Format(format!("row {}: {e}", ln + 1)))
        };
        let values = cells[2..end].iter().map(|c| num(c)).collect::<Result<Vec<_>>>()?;
        let segment_id = cells[1]
            .trim()
            .parse()
            .map_err(|e| Error::Format(format!("row {}: segment id: {e}", ln + 1)))?;
        rows.push(FeatureRow {
            image_id: cells[0].to_string(),
            segment_id,
            values,
            interior_empty: num(cells[end])? != 0.0,
        });
        if has_tp {
            tp.push(num(cells[end + 1])? != 0.0);
        }
    }
    Ok(FeatureTable {
        names,
        rows,
        tp: has_tp.then_some(tp),
    })
}
