//! Pixel-wise dispersion measures of a softmax probability vector.
//!
//! All measures use the natural logarithm internally and break ties for the
//! maximum a posteriori class by lowest class index.

use serde::{Deserialize, Serialize};

use crate::par::{self, Execution};
use crate::tensor::{HeatMap, SoftmaxMap};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DispersionKind {
    Entropy,
    VariationRatio,
    ProbabilityMargin,
    MaxSoftmax,
}

impl DispersionKind {
    pub const ALL: [DispersionKind; 4] = [
        DispersionKind::Entropy,
        DispersionKind::VariationRatio,
        DispersionKind::ProbabilityMargin,
        DispersionKind::MaxSoftmax,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DispersionKind::Entropy => "entropy",
            DispersionKind::VariationRatio => "variation_ratio",
            DispersionKind::ProbabilityMargin => "probability_margin",
            DispersionKind::MaxSoftmax => "max_softmax",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown dispersion kind {s:?}")))
    }
}

/// Index of the largest entry, lowest index on ties.
pub fn map_class<T: Copy + Into<f64>>(p: &[T]) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (j, &v) in p.iter().enumerate() {
        let v = v.into();
        if v > best_v {
            best = j;
            best_v = v;
        }
    }
    best
}

/// Shannon entropy `-Σ p ln p` with `0 ln 0 = 0`.
pub fn entropy<T: Copy + Into<f64>>(p: &[T]) -> f64 {
    p.iter()
        .map(|&v| {
            let v: f64 = v.into();
            if v > 0.0 {
                -v * v.ln()
            } else {
                0.0
            }
        })
        .sum()
}

/// Entropy divided by `ln q`, in `[0, 1]`.
pub fn entropy_normalized<T: Copy + Into<f64>>(p: &[T]) -> Result<f64> {
    if p.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "normalized entropy needs q >= 2, got {}",
            p.len()
        )));
    }
    Ok(entropy_normalized_unchecked(p))
}

fn entropy_normalized_unchecked<T: Copy + Into<f64>>(p: &[T]) -> f64 {
    (entropy(p) / (p.len() as f64).ln()).clamp(0.0, 1.0)
}

/// `1 - max_j p_j`.
pub fn variation_ratio<T: Copy + Into<f64>>(p: &[T]) -> f64 {
    let max = p.iter().map(|&v| v.into()).fold(f64::NEG_INFINITY, f64::max);
    (1.0 - max).max(0.0)
}

/// Variation ratio plus the largest probability among the non-MAP classes.
pub fn probability_margin<T: Copy + Into<f64>>(p: &[T]) -> f64 {
    let c = map_class(p);
    let second = p
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != c)
        .map(|(_, &v)| v.into())
        .fold(0.0, f64::max);
    (variation_ratio(p) + second).clamp(0.0, 1.0)
}

/// Scalar measure of the given kind. The max-softmax score is `1 - max_j p_j`.
pub fn measure<T: Copy + Into<f64>>(kind: DispersionKind, p: &[T]) -> f64 {
    match kind {
        DispersionKind::Entropy => entropy_normalized_unchecked(p),
        DispersionKind::VariationRatio | DispersionKind::MaxSoftmax => variation_ratio(p),
        DispersionKind::ProbabilityMargin => probability_margin(p),
    }
}

pub fn heatmap(s: &SoftmaxMap, kind: DispersionKind) -> HeatMap {
    heatmap_with(s, kind, Execution::default())
}

pub fn heatmap_with(s: &SoftmaxMap, kind: DispersionKind, exec: Execution) -> HeatMap {
    let mut values = vec![0.0f32; s.num_pixels()];
    let row_len = s.width();
    par::for_each_chunk_mut(exec, &mut values, row_len, |row, out| {
        for (w, v) in out.iter_mut().enumerate() {
            *v = measure(kind, s.pixel(row * row_len + w)) as f32;
        }
    });
    HeatMap::new(s.height(), s.width(), values).expect("dispersion measures lie in [0,1]")
}

/// Per-pixel MAP class map.
pub fn map_prediction(s: &SoftmaxMap) -> Vec<usize> {
    s.pixels().map(map_class).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const P: [f64; 3] = [0.7, 0.2, 0.1];

    #[test]
    fn normalized_entropy_examples() {
        assert!((entropy_normalized(&[0.25f64; 4]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(entropy_normalized(&[0.0f64, 1.0, 0.0]).unwrap(), 0.0);
        // 40-digit mpmath evaluation of -Σ p ln p / ln 3.
        assert!((entropy_normalized(&P).unwrap() - 0.729_846_699_162_097_5).abs() < 1e-14);
        assert!(entropy_normalized(&[1.0f64]).is_err());
    }

    #[test]
    fn variation_ratio_examples() {
        assert!((variation_ratio(&P) - 0.3).abs() < 1e-15);
        assert_eq!(variation_ratio(&[0.0f64, 1.0]), 0.0);
        assert_eq!(variation_ratio(&[0.25f64; 4]), 0.75);
    }

    #[test]
    fn margin_examples() {
        assert!((probability_margin(&P) - 0.5).abs() < 1e-15);
        assert_eq!(probability_margin(&[1.0f64, 0.0, 0.0]), 0.0);
        assert_eq!(probability_margin(&[0.5f64, 0.5, 0.0]), 1.0);
        assert_eq!(map_class(&[0.5f64, 0.5, 0.0]), 0);
    }

    #[test]
    fn uniform_and_one_hot_heatmaps() {
        let u = SoftmaxMap::new(3, 2, 4, vec![0.25; 24]).unwrap();
        let h = heatmap(&u, DispersionKind::Entropy);
        assert!(h.values().iter().all(|&v| (v - 1.0).abs() < 1e-6));
        let mut onehot = vec![0.0; 24];
        for px in 0..6 {
            onehot[px * 4 + px % 4] = 1.0;
        }
        let o = SoftmaxMap::new(3, 2, 4, onehot).unwrap();
        for kind in DispersionKind::ALL {
            let h = heatmap(&o, kind);
            assert!(h.values().iter().all(|&v| v < 1e-9), "{kind:?}");
        }
    }

    #[test]
    fn heatmap_matches_scalar_per_pixel() {
        let rows = [[0.7f32, 0.2, 0.1], [0.1, 0.1, 0.8], [0.4, 0.4, 0.2], [1.0 / 3.0; 3]];
        let s = SoftmaxMap::new(2, 2, 3, rows.concat()).unwrap();
        for kind in DispersionKind::ALL {
            for exec in [Execution::Sequential, Execution::Parallel] {
                let h = heatmap_with(&s, kind, exec);
                for (i, row) in rows.iter().enumerate() {
                    assert_eq!(h.get(i), measure(kind, s.pixel(i)) as f32);
                    assert!((h.get(i) as f64 - measure(kind, &row[..])).abs() < 1e-6);
                }
            }
        }
    }

    fn simplex(q: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, q).prop_filter_map("non-degenerate", |v| {
            let s: f64 = v.iter().sum();
            (s > 1e-9).then(|| v.iter().map(|x| x / s).collect())
        })
    }

    proptest! {
        #[test]
        fn ordering_and_range(p in (2usize..8).prop_flat_map(simplex)) {
            let v = variation_ratio(&p);
            let m = probability_margin(&p);
            let e = entropy_normalized(&p).unwrap();
            prop_assert!(0.0 <= v && v <= m + 1e-15 && m <= 1.0);
            prop_assert!((0.0..=1.0).contains(&e));
        }

        #[test]
        fn permutation_invariance(p in (2usize..8).prop_flat_map(simplex), rot in 0usize..8) {
            let mut r = p.clone();
            let k = rot % r.len();
            r.rotate_left(k);
            prop_assert!((entropy_normalized(&p).unwrap() - entropy_normalized(&r).unwrap()).abs() < 1e-12);
            prop_assert!((variation_ratio(&p) - variation_ratio(&r)).abs() < 1e-15);
            prop_assert!((probability_margin(&p) - probability_margin(&r)).abs() < 1e-15);
        }
    }
}
