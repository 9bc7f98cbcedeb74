//! Meta classification of OoD segments into true and false positives.

mod lars;
mod logistic;

pub use lars::{lars_path, lars_path_design, LarsPath, LarsStep};
pub use logistic::{
    fit_logistic, fit_logistic_traced, loo_cross_validate, loo_cross_validate_with, LooResult,
    MetaModel, DEFAULT_L2,
};

use serde::{Deserialize, Serialize};

use crate::features::{FeatureRow, FeatureTable};
use crate::segments::OodSegment;
use crate::{Error, Result};

/// Default probability cutoff below which a segment is discarded as a false positive.
pub const DEFAULT_CUTOFF: f64 = 0.5;

/// Feature matrix with binary TP (`true`) / FP (`false`) labels.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaDataset {
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<bool>,
}

impl MetaDataset {
    pub fn new(names: Vec<String>, rows: Vec<Vec<f64>>, labels: Vec<bool>) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        for (i, r) in rows.iter().enumerate() {
            if r.len() != names.len() {
                return Err(Error::DimensionMismatch(format!(
                    "row {i} has {} values, expected {}",
                    r.len(),
                    names.len()
                )));
            }
            if let Some(j) = r.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(i * names.len() + j));
            }
        }
        Ok(Self {
            names,
            rows,
            labels,
        })
    }

    pub fn from_rows(names: Vec<String>, rows: &[FeatureRow], labels: Vec<bool>) -> Result<Self> {
        Self::new(names, rows.iter().map(|r| r.values.clone()).collect(), labels)
    }

    pub fn from_table(table: &FeatureTable) -> Result<Self> {
        let labels = table
            .tp
            .clone()
            .ok_or_else(|| Error::Format("feature table has no tp column".into()))?;
        Self::from_rows(table.names.clone(), &table.rows, labels)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.names.len()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    /// The dataset without row `skip`.
    pub fn without(&self, skip: usize) -> Self {
        let keep = |i: &usize| *i != skip;
        Self {
            names: self.names.clone(),
            rows: (0..self.len()).filter(keep).map(|i| self.rows[i].clone()).collect(),
            labels: (0..self.len()).filter(keep).map(|i| self.labels[i]).collect(),
        }
    }
}

/// Per-feature centring and scaling. Constant features get unit scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>], num_features: usize) -> Self {
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; num_features];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; num_features];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 * (1.0 + m.abs()) {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    /// True if column `j` of `rows` has (numerically) zero spread.
    pub fn is_constant(&self, j: usize, rows: &[Vec<f64>]) -> bool {
        let n = rows.len().max(1) as f64;
        let var = rows.iter().map(|r| (r[j] - self.mean[j]).powi(2)).sum::<f64>() / n;
        var.sqrt() <= 1e-12 * (1.0 + self.mean[j].abs())
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

/// Keeps the segments whose TP probability is at least `cutoff`.
pub fn remove_fp(segs: &[OodSegment], probs: &[f64], cutoff: f64) -> Result<Vec<OodSegment>> {
    if segs.len() != probs.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} segments but {} probabilities",
            segs.len(),
            probs.len()
        )));
    }
    Ok(segs
        .iter()
        .zip(probs)
        .filter(|(_, &p)| p >= cutoff)
        .map(|(s, _)| s.clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segments::{connected_components, match_segments, OodMask};
    use crate::tensor::LabelMap;

    fn two_segment_fixture() -> (Vec<OodSegment>, LabelMap) {
        // q = 2: segment A at (0,0)-(0,1) touches OoD object at (0,1);
        // segment B at (0,4) is spurious.
        let flags = vec![true, true, false, false, true];
        let m = OodMask::from_flags(1, 5, 0.5, flags).unwrap();
        let l = LabelMap::new(1, 5, 2, vec![0, 2, 0, 0, 1]).unwrap();
        (connected_components(&m), l)
    }

    #[test]
    fn remove_fp_examples() {
        let (segs, l) = two_segment_fixture();
        assert_eq!(remove_fp(&segs, &[1.0, 1.0], 0.5).unwrap(), segs);
        let none = remove_fp(&segs, &[0.0, 0.0], 0.5).unwrap();
        assert!(none.is_empty());
        assert_eq!(match_segments(&none, &l).unwrap().false_negatives(), 1);

        let before = match_segments(&segs, &l).unwrap();
        assert_eq!((before.found(), before.false_positives(), before.false_negatives()), (1, 1, 0));
        let kept = remove_fp(&segs, &[0.9, 0.2], 0.5).unwrap();
        let after = match_segments(&kept, &l).unwrap();
        assert_eq!((after.found(), after.false_positives(), after.false_negatives()), (1, 0, 0));
        // Dropping the TP segment instead creates a miss.
        let kept = remove_fp(&segs, &[0.4, 0.6], 0.5).unwrap();
        let after = match_segments(&kept, &l).unwrap();
        assert_eq!((after.found(), after.false_positives(), after.false_negatives()), (0, 1, 1));
        assert_eq!(remove_fp(&segs, &[0.0, 0.3], 0.0).unwrap(), segs);
        assert!(remove_fp(&segs, &[0.1], 0.5).is_err());
    }

    #[test]
    fn standardizer_handles_constant_columns() {
        let rows = vec![vec![1.0, 5.0], vec![3.0, 5.0]];
        let s = Standardizer::fit(&rows, 2);
        assert_eq!(s.mean, vec![2.0, 5.0]);
        assert_eq!(s.scale, vec![1.0, 1.0]);
        assert_eq!(s.apply(&[3.0, 5.0]), vec![1.0, 0.0]);
        assert!(s.is_constant(1, &rows));
        assert!(!s.is_constant(0, &rows));
    }
}
