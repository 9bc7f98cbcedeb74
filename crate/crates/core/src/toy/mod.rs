//! A desk-scale embodiment of entropy-maximization training: a per-pixel
//! network, synthetic scenes with disjoint OoD families, the two-term loss
//! and the classic OoD baselines.

pub mod baselines;
pub mod loss;
pub mod model;
pub mod train;
pub mod world;

pub use baselines::{baseline_heatmaps, Baseline, CovarianceKind, MahalanobisFit};
pub use model::ToyModel;
pub use train::{gradient_check, train, TrainConfig, TrainOutcome};
pub use world::{Family, Scene, World, WorldConfig};

use crate::par::{self, Execution};
use crate::tensor::{FeatureMap, SoftmaxMap};
use crate::{Error, Result};

/// Model inputs of every pixel of a scene, row-major, `width` values each.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelInputs {
    pub width: usize,
    pub values: Vec<f64>,
}

impl PixelInputs {
    pub fn pixel(&self, i: usize) -> &[f64] {
        &self.values[i * self.width..(i + 1) * self.width]
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.width.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Pixel features, optionally followed by their mean over the 3×3
/// neighbourhood clipped to the image.
pub fn scene_inputs(features: &FeatureMap, context: bool) -> PixelInputs {
    let (h, w, d) = (features.height(), features.width(), features.dim());
    let width = if context { 2 * d } else { d };
    let mut values = Vec::with_capacity(h * w * width);
    for r in 0..h {
        for c in 0..w {
            values.extend(features.pixel(r * w + c).iter().map(|&v| v as f64));
            if context {
                let mut acc = vec![0.0; d];
                let mut n = 0.0;
                for rr in r.saturating_sub(1)..=(r + 1).min(h - 1) {
                    for cc in c.saturating_sub(1)..=(c + 1).min(w - 1) {
                        for (a, &v) in acc.iter_mut().zip(features.pixel(rr * w + cc)) {
                            *a += v as f64;
                        }
                        n += 1.0;
                    }
                }
                values.extend(acc.into_iter().map(|a| a / n));
            }
        }
    }
    PixelInputs { width, values }
}

fn check_dims(model: &ToyModel, features: &FeatureMap) -> Result<()> {
    if model.feature_dim() != features.dim() {
        return Err(Error::DimensionMismatch(format!(
            "model expects {} features per pixel, scene has {}",
            model.feature_dim(),
            features.dim()
        )));
    }
    Ok(())
}

/// Softmax map of a scene with dropout disabled.
pub fn infer(model: &ToyModel, features: &FeatureMap, exec: Execution) -> Result<SoftmaxMap> {
    check_dims(model, features)?;
    let inputs = scene_inputs(features, model.context);
    let probs: Vec<Vec<f32>> = par::map_range(exec, inputs.len(), |i| {
        model.predict(inputs.pixel(i)).into_iter().map(|p| p as f32).collect()
    });
    SoftmaxMap::new(features.height(), features.width(), model.num_classes(), probs.concat())
}

/// Penultimate activations of every pixel.
pub fn penultimate(model: &ToyModel, features: &FeatureMap, exec: Execution) -> Result<Vec<Vec<f64>>> {
    check_dims(model, features)?;
    let inputs = scene_inputs(features, model.context);
    Ok(par::map_range(exec, inputs.len(), |i| {
        let mut cache = model::Cache::default();
        model.forward(inputs.pixel(i), None, &mut cache);
        cache.penultimate().to_vec()
    }))
}
