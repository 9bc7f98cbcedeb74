//! OoD baselines computed against a [`ToyModel`]: maximum softmax
//! probability, ODIN, Mahalanobis distance and MC dropout.
//!
//! Raw scores grow with "OoD-ness" and are min-max normalized over the whole
//! dataset, a monotone map that leaves pixel rankings untouched.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{softmax, Cache, ToyModel};
use super::{penultimate, scene_inputs};
use crate::dispersion::map_class;
use crate::par::{self, Execution};
use crate::tensor::{FeatureMap, HeatMap, LabelMap};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Baseline {
    Msp,
    Odin { temperature: f64, epsilon: f64 },
    Mahalanobis,
    McDropout { samples: usize, seed: u64 },
}

impl Baseline {
    pub const DEFAULT_ODIN: Baseline = Baseline::Odin { temperature: 1000.0, epsilon: 1e-4 };

    pub fn name(&self) -> &'static str {
        match self {
            Baseline::Msp => "msp",
            Baseline::Odin { .. } => "odin",
            Baseline::Mahalanobis => "mahalanobis",
            Baseline::McDropout { .. } => "mc_dropout",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceKind {
    #[default]
    Shared,
    PerClass,
}

/// Class-conditional Gaussians on penultimate activations.
#[derive(Clone, Debug, PartialEq)]
pub struct MahalanobisFit {
    pub means: Vec<DVector<f64>>,
    /// One precision matrix shared by all classes, or one per class.
    pub precisions: Vec<DMatrix<f64>>,
}

/// Diagonal loading added to every covariance estimate.
pub const COVARIANCE_LOADING: f64 = 1e-6;

impl MahalanobisFit {
    pub fn from_moments(means: Vec<DVector<f64>>, covariances: Vec<DMatrix<f64>>) -> Result<Self> {
        let precisions = covariances
            .into_iter()
            .map(|c| {
                let dim = c.nrows();
                let loaded = c + DMatrix::identity(dim, dim) * COVARIANCE_LOADING;
                loaded
                    .cholesky()
                    .map(|ch| ch.inverse())
                    .ok_or_else(|| Error::Numerical("covariance is not positive definite".into()))
            })
            .collect::<Result<_>>()?;
        Ok(Self { means, precisions })
    }

    /// Estimates class means and covariances from the penultimate activations
    /// of labelled in-distribution pixels.
    pub fn fit(model: &ToyModel, scenes: &[(&FeatureMap, &LabelMap)], kind: CovarianceKind, exec: Execution) -> Result<Self> {
        let q = model.num_classes();
        let mut per_class: Vec<Vec<DVector<f64>>> = vec![Vec::new(); q];
        for (features, labels) in scenes {
            let acts = penultimate(model, features, exec)?;
            for (h, &l) in acts.into_iter().zip(labels.labels()) {
                if (0..q as i32).contains(&l) {
                    per_class[l as usize].push(DVector::from_vec(h));
                }
            }
        }
        if let Some(j) = per_class.iter().position(|v| v.is_empty()) {
            return Err(Error::InvalidArgument(format!("no training pixels of class {j}")));
        }
        let dim = per_class[0][0].len();
        let means: Vec<DVector<f64>> = per_class
            .iter()
            .map(|v| v.iter().fold(DVector::zeros(dim), |a, x| a + x) / v.len() as f64)
            .collect();
        let scatter = |j: usize| {
            per_class[j].iter().fold(DMatrix::zeros(dim, dim), |a, x| {
                let d = x - &means[j];
                a + &d * d.transpose()
            })
        };
        let covs = match kind {
            CovarianceKind::Shared => {
                let n: usize = per_class.iter().map(Vec::len).sum();
                vec![(0..q).fold(DMatrix::zeros(dim, dim), |a, j| a + scatter(j)) / n as f64]
            }
            CovarianceKind::PerClass => (0..q).map(|j| scatter(j) / per_class[j].len() as f64).collect(),
        };
        Self::from_moments(means, covs)
    }

    /// `min_j (h − μ_j)ᵀ Σ_j⁻¹ (h − μ_j)`.
    pub fn score(&self, h: &[f64]) -> f64 {
        let h = DVector::from_column_slice(h);
        self.means
            .iter()
            .enumerate()
            .map(|(j, m)| {
                let p = &self.precisions[j.min(self.precisions.len() - 1)];
                let d = &h - m;
                (d.transpose() * p * &d)[(0, 0)]
            })
            .fold(f64::INFINITY, f64::min)
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn scaled_softmax(logits: &[f64], t: f64) -> Vec<f64> {
    softmax(&logits.iter().map(|z| z / t).collect::<Vec<_>>())
}

/// `1 − max_j S_j(x̃; τ)` with `x̃ = x − ε·sign(−∇ₓ ln S_ĉ(x; τ))`.
fn odin_pixel(model: &ToyModel, x: &[f64], t: f64, eps: f64, cache: &mut Cache) -> f64 {
    model.forward(x, None, cache);
    let s = scaled_softmax(&cache.logits, t);
    if eps == 0.0 {
        return 1.0 - s.iter().copied().fold(0.0, f64::max);
    }
    let c = map_class(&s);
    let dlogits: Vec<f64> = s.iter().enumerate().map(|(j, &sj)| ((j == c) as u8 as f64 - sj) / t).collect();
    let mut scratch = model.zero_grads();
    let grad = model.backward(cache, &dlogits, &mut scratch);
    let perturbed: Vec<f64> = x.iter().zip(&grad).map(|(v, g)| v - eps * sign(-g)).collect();
    model.forward(&perturbed, None, cache);
    1.0 - scaled_softmax(&cache.logits, t).into_iter().fold(0.0, f64::max)
}

/// Unnormalized per-pixel OoD scores of one scene.
pub fn raw_scores(
    model: &ToyModel,
    features: &FeatureMap,
    method: &Baseline,
    maha: Option<&MahalanobisFit>,
    exec: Execution,
) -> Result<Vec<f64>> {
    if model.feature_dim() != features.dim() {
        return Err(Error::DimensionMismatch("model and scene feature dimensions differ".into()));
    }
    let inputs = scene_inputs(features, model.context);
    let n = inputs.len();
    match *method {
        Baseline::Msp => Ok(par::map_range(exec, n, |i| {
            1.0 - model.predict(inputs.pixel(i)).into_iter().fold(0.0, f64::max)
        })),
        Baseline::Odin { temperature, epsilon } => {
            if !(temperature > 0.0) || !(epsilon >= 0.0) {
                return Err(Error::InvalidArgument("ODIN needs temperature > 0 and epsilon >= 0".into()));
            }
            Ok(par::map_range(exec, n, |i| {
                odin_pixel(model, inputs.pixel(i), temperature, epsilon, &mut Cache::default())
            }))
        }
        Baseline::Mahalanobis => {
            let fit = maha.ok_or_else(|| Error::InvalidArgument("Mahalanobis scores need a fitted model".into()))?;
            let acts = penultimate(model, features, exec)?;
            Ok(par::map_slice(exec, &acts, |h| fit.score(h)))
        }
        Baseline::McDropout { samples, seed } => {
            if samples < 1 {
                return Err(Error::InvalidArgument("MC dropout needs at least one sample".into()));
            }
            let q = model.num_classes();
            let w = features.width();
            let rows = par::map_range(exec, features.height(), |r| {
                let mut sum = vec![0.0; w * q];
                let mut sq = vec![0.0; w * q];
                let mut cache = Cache::default();
                for s in 0..samples {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(s as u64));
                    rng.set_stream(r as u64);
                    for c in 0..w {
                        model.forward(inputs.pixel(r * w + c), Some(&mut rng), &mut cache);
                        for (j, p) in softmax(&cache.logits).into_iter().enumerate() {
                            sum[c * q + j] += p;
                            sq[c * q + j] += p * p;
                        }
                    }
                }
                let s = samples as f64;
                (0..w)
                    .map(|c| {
                        (0..q)
                            .map(|j| {
                                let mean = sum[c * q + j] / s;
                                (sq[c * q + j] / s - mean * mean).max(0.0)
                            })
                            .sum::<f64>()
                    })
                    .collect::<Vec<f64>>()
            });
            let mut out = rows.concat();
            if samples == 1 {
                out.iter_mut().for_each(|v| *v = 0.0);
            }
            Ok(out)
        }
    }
}

/// Maps raw scores of several scenes to `[0,1]` with one min-max transform.
/// A constant score set maps to zero.
pub fn normalize_min_max(raw: &[Vec<f64>], shapes: &[(usize, usize)]) -> Result<Vec<HeatMap>> {
    let lo = raw.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    raw.iter()
        .zip(shapes)
        .map(|(r, &(h, w))| {
            let v = r
                .iter()
                .map(|&x| if span > 0.0 { (((x - lo) / span) as f32).clamp(0.0, 1.0) } else { 0.0 })
                .collect();
            HeatMap::new(h, w, v)
        })
        .collect()
}

/// Normalized baseline heat maps for a set of scenes.
pub fn baseline_heatmaps(
    model: &ToyModel,
    scenes: &[&FeatureMap],
    method: &Baseline,
    maha: Option<&MahalanobisFit>,
    exec: Execution,
) -> Result<Vec<HeatMap>> {
    let raw = scenes
        .iter()
        .map(|f| raw_scores(model, f, method, maha, exec))
        .collect::<Result<Vec<_>>>()?;
    let shapes: Vec<(usize, usize)> = scenes.iter().map(|f| (f.height(), f.width())).collect();
    normalize_min_max(&raw, &shapes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{auroc, ScoredPixels};
    use rand::{Rng, SeedableRng};

    fn fixture() -> (ToyModel, FeatureMap, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = ToyModel::new(3, &[12], 4, 0.25, false, &mut rng).unwrap();
        let n = 64;
        let f = FeatureMap::new(8, 8, 3, (0..n * 3).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
        let labels = (0..n).map(|i| i % 3 == 0).collect();
        (m, f, labels)
    }

    #[test]
    fn odin_without_perturbation_ranks_like_msp() {
        let (m, f, labels) = fixture();
        let exec = Execution::Sequential;
        let msp = baseline_heatmaps(&m, &[&f], &Baseline::Msp, None, exec).unwrap();
        let odin = baseline_heatmaps(&m, &[&f], &Baseline::Odin { temperature: 1.0, epsilon: 0.0 }, None, exec).unwrap();
        let a = |h: &HeatMap| auroc(&ScoredPixels::new(h.values().iter().map(|&v| v as f64).collect(), labels.clone()).unwrap()).unwrap();
        assert!((a(&msp[0]) - a(&odin[0])).abs() < 1e-12);
    }

    #[test]
    fn perturbation_lowers_the_odin_score() {
        let (m, f, _) = fixture();
        let plain = raw_scores(&m, &f, &Baseline::Odin { temperature: 10.0, epsilon: 0.0 }, None, Execution::Sequential).unwrap();
        let pert = raw_scores(&m, &f, &Baseline::Odin { temperature: 10.0, epsilon: 0.01 }, None, Execution::Sequential).unwrap();
        let lower = plain.iter().zip(&pert).filter(|(a, b)| b <= a).count();
        assert!(lower > plain.len() * 9 / 10);
    }

    #[test]
    fn mc_dropout_single_sample_is_zero() {
        let (m, f, _) = fixture();
        let h = baseline_heatmaps(&m, &[&f], &Baseline::McDropout { samples: 1, seed: 3 }, None, Execution::Parallel).unwrap();
        assert!(h[0].values().iter().all(|&v| v == 0.0));
        let many = raw_scores(&m, &f, &Baseline::McDropout { samples: 8, seed: 3 }, None, Execution::Parallel).unwrap();
        assert!(many.iter().any(|&v| v > 0.0));
        let seq = raw_scores(&m, &f, &Baseline::McDropout { samples: 8, seed: 3 }, None, Execution::Sequential).unwrap();
        assert_eq!(many, seq);
        assert!(raw_scores(&m, &f, &Baseline::McDropout { samples: 0, seed: 3 }, None, Execution::Sequential).is_err());
    }

    #[test]
    fn mahalanobis_identity_origin_is_squared_norm() {
        let (m, f, _) = fixture();
        let dim = m.hidden[0].outputs;
        let fit = MahalanobisFit {
            means: vec![DVector::zeros(dim); 4],
            precisions: vec![DMatrix::identity(dim, dim)],
        };
        let scores = raw_scores(&m, &f, &Baseline::Mahalanobis, Some(&fit), Execution::Sequential).unwrap();
        let acts = penultimate(&m, &f, Execution::Sequential).unwrap();
        for (s, h) in scores.iter().zip(&acts) {
            let direct: f64 = h.iter().map(|v| v * v).sum();
            assert!((s - direct).abs() < 1e-12 * (1.0 + direct));
        }
        assert!(raw_scores(&m, &f, &Baseline::Mahalanobis, None, Execution::Sequential).is_err());
    }

    #[test]
    fn mahalanobis_fit_recovers_class_means() {
        let (m, f, _) = fixture();
        let labels = LabelMap::new(8, 8, 4, (0..64).map(|i| i % 4).collect()).unwrap();
        for kind in [CovarianceKind::Shared, CovarianceKind::PerClass] {
            let fit = MahalanobisFit::fit(&m, &[(&f, &labels)], kind, Execution::Sequential).unwrap();
            let acts = penultimate(&m, &f, Execution::Sequential).unwrap();
            let mean0: Vec<f64> = (0..acts[0].len())
                .map(|k| (0..64).step_by(4).map(|i| acts[i][k]).sum::<f64>() / 16.0)
                .collect();
            for (a, b) in fit.means[0].iter().zip(&mean0) {
                assert!((a - b).abs() < 1e-12);
            }
            assert_eq!(fit.precisions.len(), if kind == CovarianceKind::Shared { 1 } else { 4 });
        }
    }

    #[test]
    fn normalization_is_monotone_and_bounded() {
        let h = normalize_min_max(&[vec![2.0, 4.0], vec![3.0, 6.0]], &[(1, 2), (1, 2)]).unwrap();
        assert_eq!(h[0].values(), &[0.0, 0.5]);
        assert_eq!(h[1].values(), &[0.25, 1.0]);
        let c = normalize_min_max(&[vec![1.0; 3]], &[(1, 3)]).unwrap();
        assert!(c[0].values().iter().all(|&v| v == 0.0));
    }
}
