use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{MetaDataset, Standardizer};
use crate::{Error, Result};

/// Snapshot of the coefficient vector when a feature joins the active set, or
/// at the end of the path (`entering == None`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LarsStep {
    pub step: usize,
    pub entering: Option<String>,
    pub coefficients: Vec<f64>,
    pub l1_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LarsPath {
    /// Names of the features on the path, in column order.
    pub names: Vec<String>,
    /// Zero-variance features left out of the regression.
    pub excluded: Vec<String>,
    pub steps: Vec<LarsStep>,
}

impl LarsPath {
    /// Feature names in the order they entered the active set.
    pub fn entering_order(&self) -> Vec<&str> {
        self.steps.iter().filter_map(|s| s.entering.as_deref()).collect()
    }

    pub fn final_coefficients(&self) -> &[f64] {
        self.steps.last().map(|s| s.coefficients.as_slice()).unwrap_or(&[])
    }

    /// One row per snapshot: `step,entering,l1_ratio,<feature columns>`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,entering,l1_ratio");
        for n in &self.names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for s in &self.steps {
            out.push_str(&format!("{},{},{}", s.step, s.entering.as_deref().unwrap_or(""), s.l1_ratio));
            for c in &s.coefficients {
                out.push_str(&format!(",{c}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Least angle regression of the centered 0/1 TP label on standardized features.
pub fn lars_path(data: &MetaDataset, max_steps: usize) -> Result<LarsPath> {
    if data.len() < 2 {
        return Err(Error::InvalidArgument("LARS needs at least 2 rows".into()));
    }
    let st = Standardizer::fit(&data.rows, data.num_features());
    let (mut keep, mut excluded) = (Vec::new(), Vec::new());
    for j in 0..data.num_features() {
        if st.is_constant(j, &data.rows) {
            log::warn!("LARS: feature {} has zero variance and is excluded", data.names[j]);
            excluded.push(data.names[j].clone());
        } else {
            keep.push(j);
        }
    }
    let n = data.len();
    let mut x = DMatrix::zeros(n, keep.len());
    for (i, r) in data.rows.iter().enumerate() {
        let z = st.apply(r);
        for (c, &j) in keep.iter().enumerate() {
            x[(i, c)] = z[j];
        }
    }
    let mean = data.positives() as f64 / n as f64;
    let y = DVector::from_iterator(n, data.labels.iter().map(|&l| l as u8 as f64 - mean));
    let names = keep.iter().map(|&j| data.names[j].clone()).collect();
    let mut path = lars_path_design(&x, &y, names, max_steps)?;
    path.excluded = excluded;
    Ok(path)
}

/// LARS on a design that is already centered and scaled.
///
/// Runs until `max_steps` features are active, the active Gram matrix turns
/// singular, or the residual correlation vanishes. When every feature is
/// active the final step lands on the least-squares solution.
pub fn lars_path_design(x: &DMatrix<f64>, y: &DVector<f64>, names: Vec<String>, max_steps: usize) -> Result<LarsPath> {
    let (n, p) = x.shape();
    if y.len() != n || names.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "design {n}x{p}, response {}, {} names",
            y.len(),
            names.len()
        )));
    }
    let scale = y.amax().max(x.amax()).max(1.0);
    let eps = 1e-12 * scale * n as f64;

    let mut beta = DVector::<f64>::zeros(p);
    let mut mu = DVector::<f64>::zeros(n);
    let mut active: Vec<usize> = Vec::new();
    let mut signs: Vec<f64> = Vec::new();
    let mut raw: Vec<(Option<usize>, DVector<f64>)> = Vec::new();
    let limit = max_steps.min(p).min(n.saturating_sub(1).max(1));

    let mut c = x.tr_mul(&(y - &mu));
    loop {
        if limit == 0 {
            break;
        }
        if active.is_empty() {
            let big_c = c.amax();
            if big_c <= eps {
                break;
            }
            // Lowest index wins ties, within a relative tolerance.
            let tol = 1e-10 * big_c;
            let j = (0..p).find(|&j| c[j].abs() >= big_c - tol).expect("max exists");
            active.push(j);
            signs.push(c[j].signum());
            raw.push((Some(j), beta.clone()));
        }
        let k = active.len();
        let mut xa = DMatrix::zeros(n, k);
        for (col, (&j, &s)) in active.iter().zip(&signs).enumerate() {
            xa.set_column(col, &(x.column(j) * s));
        }
        let Some(chol) = (xa.tr_mul(&xa)).cholesky() else {
            // The newest feature is collinear with the others: drop it.
            log::warn!("LARS: active set became singular at step {k}; stopping");
            active.pop();
            signs.pop();
            raw.pop();
            break;
        };
        let ginv1 = chol.solve(&DVector::from_element(k, 1.0));
        let a_norm = 1.0 / ginv1.sum().sqrt();
        let w = ginv1 * a_norm;
        let u = &xa * &w;
        let a = x.tr_mul(&u);
        let cur_c = active.iter().map(|&j| c[j].abs()).fold(0.0, f64::max);

        let mut gamma = cur_c / a_norm;
        let mut next = None;
        if active.len() < p {
            for j in (0..p).filter(|j| !active.contains(j)) {
                for cand in [(cur_c - c[j]) / (a_norm - a[j]), (cur_c + c[j]) / (a_norm + a[j])] {
                    if cand.is_finite() && cand > 1e-15 && cand < gamma - 1e-12 * gamma.abs().max(1.0) {
                        gamma = cand;
                        next = Some(j);
                    }
                }
            }
        }
        for (col, (&j, &s)) in active.iter().zip(&signs).enumerate() {
            beta[j] += gamma * s * w[col];
        }
        mu += &u * gamma;
        c = x.tr_mul(&(y - &mu));
        match next {
            Some(j) if active.len() < limit => {
                active.push(j);
                signs.push(c[j].signum());
                raw.push((Some(j), beta.clone()));
            }
            _ => break,
        }
    }
    raw.push((None, beta));

    let max_l1 = raw.iter().map(|(_, b)| b.lp_norm(1)).fold(0.0, f64::max);
    let steps = raw
        .into_iter()
        .enumerate()
        .map(|(step, (entering, b))| LarsStep {
            step,
            entering: entering.map(|j| names[j].clone()),
            l1_ratio: if max_l1 > 0.0 { b.lp_norm(1) / max_l1 } else { 0.0 },
            coefficients: b.iter().copied().collect(),
        })
        .collect();
    Ok(LarsPath {
        names,
        excluded: Vec::new(),
        steps,
    })
}
