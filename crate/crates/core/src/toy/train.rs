use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{grad_in, grad_out, loss_in, loss_out};
use super::model::{reborrow, softmax, Cache, Grads, ToyModel};
use super::world::Scene;
use super::{scene_inputs, PixelInputs};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Weight of the out-distribution term.
    pub lambda: f64,
    /// Proxy scenes sampled per in-distribution scene in each epoch.
    pub mix_ratio: f64,
    /// Side length of the random square crop taken from each proxy scene.
    pub crop: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    /// Dropout rate of a freshly initialized model; fine-tuning keeps the
    /// rate stored in the initial model.
    pub dropout: f64,
    /// Append the 3×3 neighbourhood mean of the features to every input.
    pub context: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.9,
            mix_ratio: 0.1,
            crop: 32,
            epochs: 12,
            learning_rate: 5e-3,
            batch_size: 128,
            hidden: vec![64, 64],
            dropout: 0.1,
            context: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidArgument(format!("lambda {} outside [0,1]", self.lambda)));
        }
        if self.batch_size == 0 || self.crop == 0 || !(self.learning_rate > 0.0) || !(self.mix_ratio >= 0.0) {
            return Err(Error::InvalidArgument("batch size, crop and learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: ToyModel,
    /// Mean batch objective of every epoch.
    pub loss_trace: Vec<f64>,
}

/// Objective value and parameter gradient of one mixed batch.
pub fn batch_gradient(
    model: &ToyModel,
    batch_in: &[(&[f64], usize)],
    batch_out: &[&[f64]],
    lambda: f64,
    mut dropout_rng: Option<&mut dyn RngCore>,
) -> (f64, Grads) {
    let mut grads = model.zero_grads();
    let mut cache = Cache::default();
    let mut loss = 0.0;
    if !batch_in.is_empty() {
        let wt = (1.0 - lambda) / batch_in.len() as f64;
        for &(x, y) in batch_in {
            model.forward(x, reborrow(&mut dropout_rng), &mut cache);
            let p = softmax(&cache.logits);
            loss += wt * loss_in(&p, y);
            if wt != 0.0 {
                let g: Vec<f64> = grad_in(&p, y).into_iter().map(|v| v * wt).collect();
                model.backward(&cache, &g, &mut grads);
            }
        }
    }
    if !batch_out.is_empty() {
        let wt = lambda / batch_out.len() as f64;
        for &x in batch_out {
            model.forward(x, reborrow(&mut dropout_rng), &mut cache);
            let p = softmax(&cache.logits);
            loss += wt * loss_out(&p);
            if wt != 0.0 {
                let g: Vec<f64> = grad_out(&p).into_iter().map(|v| v * wt).collect();
                model.backward(&cache, &g, &mut grads);
            }
        }
    }
    (loss, grads)
}

/// Worst relative error between analytic and central-difference gradients
/// (step 1e-5) over every parameter, with dropout disabled.
pub fn gradient_check(model: &ToyModel, batch_in: &[(Vec<f64>, usize)], batch_out: &[Vec<f64>], lambda: f64) -> f64 {
    let bi: Vec<(&[f64], usize)> = batch_in.iter().map(|(x, y)| (x.as_slice(), *y)).collect();
    let bo: Vec<&[f64]> = batch_out.iter().map(|x| x.as_slice()).collect();
    let (_, grads) = batch_gradient(model, &bi, &bo, lambda, None);
    let analytic = grads.flat();
    let base = model.params();
    let mut probe = model.clone();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for k in 0..base.len() {
        let mut p = base.clone();
        p[k] = base[k] + h;
        probe.set_params(&p);
        let up = batch_gradient(&probe, &bi, &bo, lambda, None).0;
        p[k] = base[k] - h;
        probe.set_params(&p);
        let down = batch_gradient(&probe, &bi, &bo, lambda, None).0;
        let numeric = (up - down) / (2.0 * h);
        let err = (analytic[k] - numeric).abs() / (analytic[k].abs() + numeric.abs()).max(1e-6);
        worst = worst.max(err);
    }
    worst
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    fn new(n: usize, lr: f64) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0, lr }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        for k in 0..params.len() {
            self.m[k] = B1 * self.m[k] + (1.0 - B1) * grad[k];
            self.v[k] = B2 * self.v[k] + (1.0 - B2) * grad[k] * grad[k];
            params[k] -= self.lr * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + 1e-8);
        }
    }
}

/// Training pixels: labelled in-distribution inputs and proxy OoD scenes.
pub struct PixelPool {
    pub width: usize,
    pub in_inputs: Vec<f64>,
    pub in_labels: Vec<usize>,
    /// Per proxy scene: height, width and the inputs of every pixel.
    pub proxy: Vec<(usize, usize, Vec<f64>)>,
    pub in_scene_count: usize,
}

impl PixelPool {
    pub fn from_scenes(in_scenes: &[Scene], proxy_scenes: &[Scene], context: bool) -> Self {
        let mut width = 0;
        let mut in_inputs = Vec::new();
        let mut in_labels = Vec::new();
        let q = in_scenes.first().map(|s| s.labels.num_classes() as i32).unwrap_or(0);
        for s in in_scenes {
            let inputs: PixelInputs = scene_inputs(&s.features, context);
            width = inputs.width;
            for (i, &l) in s.labels.labels().iter().enumerate() {
                if (0..q).contains(&l) {
                    in_inputs.extend_from_slice(inputs.pixel(i));
                    in_labels.push(l as usize);
                }
            }
        }
        let proxy = proxy_scenes
            .iter()
            .map(|s| {
                let inputs = scene_inputs(&s.features, context);
                width = inputs.width;
                (s.features.height(), s.features.width(), inputs.values)
            })
            .collect();
        Self { width, in_inputs, in_labels, proxy, in_scene_count: in_scenes.len() }
    }
}

/// Trains (or fine-tunes `init`) with mini-batch Adam on the λ-weighted objective.
///
/// Each epoch shuffles all in-distribution pixels and mixes in the pixels of
/// `round(mix_ratio · #in-scenes)` random crops of random proxy scenes.
pub fn train(cfg: &TrainConfig, num_classes: usize, in_scenes: &[Scene], proxy_scenes: &[Scene], init: Option<ToyModel>) -> Result<TrainOutcome> {
    cfg.validate()?;
    if in_scenes.is_empty() {
        return Err(Error::InvalidArgument("training needs in-distribution scenes".into()));
    }
    if cfg.lambda > 0.0 && proxy_scenes.is_empty() {
        return Err(Error::InvalidArgument("lambda > 0 needs proxy OoD scenes".into()));
    }
    let pool = PixelPool::from_scenes(in_scenes, proxy_scenes, cfg.context);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = match init {
        Some(m) => {
            if m.input_width() != pool.width || m.num_classes() != num_classes {
                return Err(Error::DimensionMismatch("initial model does not fit the scenes".into()));
            }
            m
        }
        None => {
            let d = in_scenes[0].features.dim();
            ToyModel::new(d, &cfg.hidden, num_classes, cfg.dropout, cfg.context, &mut rng)?
        }
    };
    train_pool(cfg, &pool, model, &mut rng)
}

/// Training loop over a prepared pool.
pub fn train_pool(cfg: &TrainConfig, pool: &PixelPool, mut model: ToyModel, rng: &mut ChaCha8Rng) -> Result<TrainOutcome> {
    cfg.validate()?;
    let width = pool.width;
    let mut adam = Adam::new(model.num_params(), cfg.learning_rate);
    let mut trace = Vec::with_capacity(cfg.epochs);
    let n_proxy_scenes = if cfg.lambda > 0.0 && !pool.proxy.is_empty() {
        ((pool.in_scene_count as f64 * cfg.mix_ratio).round() as usize).max(1)
    } else {
        0
    };
    for epoch in 0..cfg.epochs {
        let mut out_inputs: Vec<f64> = Vec::new();
        for _ in 0..n_proxy_scenes {
            let (h, w, values) = &pool.proxy[rng.random_range(0..pool.proxy.len())];
            let (ch, cw) = (cfg.crop.min(*h), cfg.crop.min(*w));
            let r0 = rng.random_range(0..=h - ch);
            let c0 = rng.random_range(0..=w - cw);
            for r in r0..r0 + ch {
                for c in c0..c0 + cw {
                    let i = r * w + c;
                    out_inputs.extend_from_slice(&values[i * width..(i + 1) * width]);
                }
            }
        }
        let n_out = out_inputs.len() / width.max(1);
        // (is_in, index) into the in-distribution pool or this epoch's proxy pixels.
        let mut order: Vec<(bool, usize)> = (0..pool.in_labels.len()).map(|i| (true, i)).collect();
        order.extend((0..n_out).map(|i| (false, i)));
        order.shuffle(rng);

        let (mut sum, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let bi: Vec<(&[f64], usize)> = chunk
                .iter()
                .filter(|e| e.0)
                .map(|&(_, i)| (&pool.in_inputs[i * width..(i + 1) * width], pool.in_labels[i]))
                .collect();
            let bo: Vec<&[f64]> = chunk
                .iter()
                .filter(|e| !e.0)
                .map(|&(_, i)| &out_inputs[i * width..(i + 1) * width])
                .collect();
            let (loss, grads) = batch_gradient(&model, &bi, &bo, cfg.lambda, Some(&mut *rng));
            if !loss.is_finite() {
                return Err(Error::Numerical(format!("non-finite training loss in epoch {epoch}")));
            }
            sum += loss;
            batches += 1;
            let mut params = model.params();
            adam.step(&mut params, &grads.flat());
            model.set_params(&params);
        }
        let mean = sum / batches.max(1) as f64;
        log::debug!("epoch {epoch}: objective {mean:.6}");
        trace.push(mean);
    }
    Ok(TrainOutcome { model, loss_trace: trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispersion::entropy_normalized;
    use crate::manifest::Role;
    use crate::toy::world::{World, WorldConfig};

    fn random_batch(seed: u64, width: usize, q: usize) -> (ToyModel, Vec<(Vec<f64>, usize)>, Vec<Vec<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = ToyModel::new(width, &[7, 5], q, 0.0, false, &mut rng).unwrap();
        // Non-zero biases keep ReLU kinks away from the finite-difference probes.
        let mut p = m.params();
        for v in p.iter_mut() {
            *v += 0.1 * (rng.random::<f64>() - 0.5);
        }
        m.set_params(&p);
        let bi = (0..6).map(|k| ((0..width).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect(), k % q)).collect();
        let bo = (0..4).map(|_| (0..width).map(|_| rng.random::<f64>() * 3.0).collect()).collect();
        (m, bi, bo)
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..20 {
            let (m, bi, bo) = random_batch(seed, 4, 3);
            let err = gradient_check(&m, &bi, &bo, 0.6);
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn out_batch_has_no_gradient_at_lambda_zero() {
        let (m, _, bo) = random_batch(3, 4, 3);
        let refs: Vec<&[f64]> = bo.iter().map(|v| v.as_slice()).collect();
        let (loss, g) = batch_gradient(&m, &[], &refs, 0.0, None);
        assert_eq!(loss, 0.0);
        assert!(g.flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_model_gives_symmetric_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut m = ToyModel::new(2, &[3], 3, 0.0, false, &mut rng).unwrap();
        m.set_params(&vec![0.0; m.num_params()]);
        let x = [1.0, -1.0];
        let bi: Vec<(&[f64], usize)> = (0..3).map(|y| (&x[..], y)).collect();
        let (_, g) = batch_gradient(&m, &bi, &[&x[..]], 0.5, None);
        // Uniform softmax: each class is the target once, and the out term is already optimal.
        assert!(g.output.bias.iter().all(|&b| b.abs() < 1e-15));
        assert!(g.flat().iter().all(|&v| v.abs() < 1e-15));
    }

    #[test]
    fn lambda_one_drives_proxy_pixel_to_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = ToyModel::new(3, &[8], 4, 0.0, false, &mut rng).unwrap();
        let pool = PixelPool {
            width: 3,
            in_inputs: vec![0.5, 0.1, -0.3],
            in_labels: vec![2],
            proxy: vec![(1, 1, vec![2.0, -1.0, 0.7])],
            in_scene_count: 10,
        };
        let cfg = TrainConfig { lambda: 1.0, epochs: 600, learning_rate: 1e-2, crop: 1, dropout: 0.0, ..Default::default() };
        let out = train_pool(&cfg, &pool, model, &mut rng).unwrap();
        let p = out.model.predict(&[2.0, -1.0, 0.7]);
        assert!(1.0 - entropy_normalized(&p).unwrap() < 1e-3, "{p:?}");
    }

    #[test]
    fn training_is_deterministic_and_decreasing() {
        let world = World::new(WorldConfig { height: 12, width: 12, ..Default::default() }, 5).unwrap();
        let ins: Vec<_> = (0..6).map(|i| world.scene(Role::InTrain, i)).collect();
        let outs: Vec<_> = (0..2).map(|i| world.scene(Role::OutProxy, i)).collect();
        let cfg = TrainConfig { epochs: 8, crop: 6, mix_ratio: 0.5, seed: 3, ..Default::default() };
        let a = train(&cfg, 5, &ins, &outs, None).unwrap();
        let b = train(&cfg, 5, &ins, &outs, None).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.loss_trace, b.loss_trace);
        assert!(a.loss_trace.iter().all(|v| v.is_finite()));
        assert!(a.loss_trace.last() < a.loss_trace.first());
        assert!(train(&TrainConfig { lambda: 1.5, ..cfg.clone() }, 5, &ins, &outs, None).is_err());
        assert!(train(&cfg, 5, &ins, &[], None).is_err());
    }
}
