use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{MetaDataset, Standardizer};
use crate::par::{self, Execution};
use crate::{Error, Result};

/// Ridge strength used unless the caller overrides it. Only there to keep the
/// optimum finite on separable folds.
pub const DEFAULT_L2: f64 = 1e-6;

const GRAD_TOL: f64 = 1e-8;
const MAX_ITER: usize = 10_000;

/// Logistic regression on standardized features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaModel {
    pub feature_names: Vec<String>,
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub standardizer: Standardizer,
    pub l2: f64,
    pub iterations: usize,
    pub final_loss: f64,
    pub gradient_norm: f64,
    /// `"irls"` or `"gradient_descent"`.
    pub method: String,
    pub seed: u64,
}

impl MetaModel {
    /// Probability that a segment with raw features `row` is a true positive.
    pub fn predict_proba(&self, row: &[f64]) -> f64 {
        let x = self.standardizer.apply(row);
        sigmoid(self.intercept + dot(&self.weights, &x))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        crate::tensor::write_file(path.as_ref(), text.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Design matrix with a leading column of ones.
struct Problem {
    x: DMatrix<f64>,
    y: DVector<f64>,
    l2: f64,
}

impl Problem {
    fn new(data: &MetaDataset, st: &Standardizer, l2: f64) -> Self {
        let (n, p) = (data.len(), data.num_features());
        let mut x = DMatrix::zeros(n, p + 1);
        for (i, r) in data.rows.iter().enumerate() {
            x[(i, 0)] = 1.0;
            for (j, v) in st.apply(r).into_iter().enumerate() {
                x[(i, j + 1)] = v;
            }
        }
        let y = DVector::from_iterator(n, data.labels.iter().map(|&l| l as u8 as f64));
        Self { x, y, l2 }
    }

    fn n(&self) -> f64 {
        self.x.nrows() as f64
    }

    fn loss(&self, theta: &DVector<f64>) -> f64 {
        let z = &self.x * theta;
        let nll: f64 = z.iter().zip(self.y.iter()).map(|(&z, &y)| softplus(z) - y * z).sum();
        let ridge: f64 = theta.iter().skip(1).map(|w| w * w).sum();
        nll / self.n() + 0.5 * self.l2 * ridge
    }

    fn gradient(&self, theta: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let p = (&self.x * theta).map(sigmoid);
        let mut g = self.x.tr_mul(&(&p - &self.y)) / self.n();
        for j in 1..g.len() {
            g[j] += self.l2 * theta[j];
        }
        (g, p)
    }

    fn hessian(&self, probs: &DVector<f64>) -> DMatrix<f64> {
        let mut xw = self.x.clone();
        for (i, &p) in probs.iter().enumerate() {
            let w = (p * (1.0 - p)).max(1e-16);
            xw.row_mut(i).scale_mut(w);
        }
        let mut h = self.x.tr_mul(&xw) / self.n();
        for j in 1..h.nrows() {
            h[(j, j)] += self.l2;
        }
        h
    }
}

struct Fit {
    theta: DVector<f64>,
    iterations: usize,
    loss: f64,
    grad_norm: f64,
    method: &'static str,
    trace: Vec<f64>,
}

/// Damped Newton (IRLS) with Armijo backtracking; switches to gradient
/// descent when the Newton system cannot be solved or stops making progress.
fn optimize(prob: &Problem, init: DVector<f64>) -> Result<Fit> {
    let mut theta = init;
    let mut loss = prob.loss(&theta);
    let mut trace = vec![loss];
    let mut method = "irls";
    let mut newton = true;
    let mut gd_step = 1.0;
    for iter in 0..MAX_ITER {
        let (g, probs) = prob.gradient(&theta);
        let gnorm = g.norm();
        if !gnorm.is_finite() || !loss.is_finite() {
            return Err(Error::Numerical("logistic regression diverged".into()));
        }
        if gnorm < GRAD_TOL {
            return Ok(Fit { theta, iterations: iter, loss, grad_norm: gnorm, method, trace });
        }
        let direction = if newton {
            match prob.hessian(&probs).cholesky() {
                Some(ch) => Some(ch.solve(&g)),
                None => None,
            }
        } else {
            None
        };
        let accepted = match direction {
            Some(d) => {
                let slope = g.dot(&d);
                let mut step = 1.0;
                let mut accepted = None;
                while step > 1e-10 {
                    let cand = &theta - &d * step;
                    let l = prob.loss(&cand);
                    if l <= loss - 1e-4 * step * slope {
                        accepted = Some((cand, l));
                        break;
                    }
                    step *= 0.5;
                }
                accepted
            }
            None => None,
        };
        let (cand, l) = match accepted {
            Some(a) => a,
            None => {
                if newton {
                    newton = false;
                    method = "gradient_descent";
                }
                // Armijo-backtracked steepest descent.
                let mut step = gd_step * 2.0;
                loop {
                    let cand = &theta - &g * step;
                    let l = prob.loss(&cand);
                    if l <= loss - 1e-4 * step * gnorm * gnorm {
                        gd_step = step;
                        break (cand, l);
                    }
                    step *= 0.5;
                    if step < 1e-14 {
                        // No representable decrease left: the iterate is optimal
                        // to machine precision.
                        return Ok(Fit { theta, iterations: iter, loss, grad_norm: gnorm, method, trace });
                    }
                }
            }
        };
        theta = cand;
        loss = l;
        trace.push(loss);
    }
    let (g, _) = prob.gradient(&theta);
    Ok(Fit { theta, iterations: MAX_ITER, loss, grad_norm: g.norm(), method, trace })
}

fn check_fit_input(data: &MetaDataset) -> Result<()> {
    if data.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "logistic regression needs at least 2 rows, got {}",
            data.len()
        )));
    }
    let pos = data.positives();
    if pos == 0 || pos == data.len() {
        return Err(Error::SingleClass(format!(
            "all {} rows are {}",
            data.len(),
            if pos == 0 { "FP" } else { "TP" }
        )));
    }
    Ok(())
}

fn fit_from(data: &MetaDataset, l2: f64, seed: u64, warm: Option<&MetaModel>) -> Result<(MetaModel, Vec<f64>)> {
    check_fit_input(data)?;
    if !(l2 >= 0.0 && l2.is_finite()) {
        return Err(Error::InvalidArgument(format!("l2 must be >= 0, got {l2}")));
    }
    let st = Standardizer::fit(&data.rows, data.num_features());
    let prob = Problem::new(data, &st, l2);
    let p = data.num_features();
    let init = match warm {
        // Re-express the warm model in this fold's standardized coordinates.
        Some(m) => {
            let mut theta = DVector::zeros(p + 1);
            theta[0] = m.intercept;
            for j in 0..p {
                let w = m.weights[j] / m.standardizer.scale[j];
                theta[0] += w * (st.mean[j] - m.standardizer.mean[j]);
                theta[j + 1] = w * st.scale[j];
            }
            theta
        }
        None => DVector::zeros(p + 1),
    };
    let fit = optimize(&prob, init)?;
    let model = MetaModel {
        feature_names: data.names.clone(),
        weights: fit.theta.iter().skip(1).copied().collect(),
        intercept: fit.theta[0],
        standardizer: st,
        l2,
        iterations: fit.iterations,
        final_loss: fit.loss,
        gradient_norm: fit.grad_norm,
        method: fit.method.to_string(),
        seed,
    };
    Ok((model, fit.trace))
}

/// Fits the meta classifier by minimizing the mean negative log-likelihood
/// plus `l2/2 · ‖w‖²` (intercept unpenalized).
///
/// The optimizer is deterministic; `seed` is recorded in the model for replay.
pub fn fit_logistic(data: &MetaDataset, l2: f64, seed: u64) -> Result<MetaModel> {
    fit_from(data, l2, seed, None).map(|(m, _)| m)
}

/// Like [`fit_logistic`], also returning the objective after every accepted step.
pub fn fit_logistic_traced(data: &MetaDataset, l2: f64, seed: u64) -> Result<(MetaModel, Vec<f64>)> {
    fit_from(data, l2, seed, None)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LooResult {
    /// Held-out TP probability for every row.
    pub probabilities: Vec<f64>,
    /// Rows whose training fold contained a single class; their probability is
    /// that fold's empirical TP rate.
    pub single_class_folds: Vec<usize>,
}

pub fn loo_cross_validate(data: &MetaDataset, l2: f64, seed: u64) -> Result<LooResult> {
    loo_cross_validate_with(data, l2, seed, Execution::default())
}

/// Leave-one-out predictions. Each fold is re-standardized and fitted to
/// convergence independently, so results do not depend on fold scheduling.
pub fn loo_cross_validate_with(data: &MetaDataset, l2: f64, seed: u64, exec: Execution) -> Result<LooResult> {
    if data.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "leave-one-out needs at least 3 rows, got {}",
            data.len()
        )));
    }
    let full = fit_logistic(data, l2, seed).ok();
    let folds = par::map_range(exec, data.len(), |i| -> Result<(f64, bool)> {
        let fold = data.without(i);
        let pos = fold.positives();
        if pos == 0 || pos == fold.len() {
            return Ok((pos as f64 / fold.len() as f64, true));
        }
        let (m, _) = fit_from(&fold, l2, seed, full.as_ref())?;
        Ok((m.predict_proba(&data.rows[i]), false))
    });
    let mut probabilities = Vec::with_capacity(data.len());
    let mut single_class_folds = Vec::new();
    for (i, r) in folds.into_iter().enumerate() {
        let (p, single) = r?;
        probabilities.push(p);
        if single {
            single_class_folds.push(i);
        }
    }
    Ok(LooResult {
        probabilities,
        single_class_folds,
    })
}
