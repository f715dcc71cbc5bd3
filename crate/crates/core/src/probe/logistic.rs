use serde::{Deserialize, Serialize};

use super::features::Standardizer;
use super::{ProbeDataset, ProbeError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub l2_strength: f64,
    pub max_iter: usize,
    /// Stop once the gradient max-norm falls below this.
    pub tol: f64,
    pub seed: u64,
    pub threshold: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            l2_strength: 1.0,
            max_iter: 1000,
            tol: 1e-6,
            seed: 42,
            threshold: 0.55,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub l2_strength: f64,
    pub iterations_run: usize,
    pub converged: bool,
    pub final_objective: f64,
}

/// Linear probe `P(degraded | x) = sigmoid(w . z(x) + b)` where `z` is the
/// stored z-scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    pub layer: u32,
    pub dimension: usize,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub standardization: Standardizer,
    pub threshold: f64,
    pub seed: u64,
    pub train_meta: TrainMeta,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

impl ProbeModel {
    pub fn logit(&self, x: &[f64]) -> Result<f64, ProbeError> {
        let z = self.standardization.transform(x)?;
        Ok(dot(&self.weights, &z) + self.bias)
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64, ProbeError> {
        self.logit(x).map(sigmoid)
    }

    pub fn weight_norm(&self) -> f64 {
        dot(&self.weights, &self.weights).sqrt()
    }
}

/// `weight_c = n / (2 * n_c)`, so both classes carry equal total weight.
pub fn balanced_class_weights(labels: &[u8]) -> Result<(f64, f64), ProbeError> {
    let n = labels.len();
    let n1 = labels.iter().filter(|&&l| l == 1).count();
    let n0 = n - n1;
    if n0 == 0 || n1 == 0 {
        return Err(ProbeError::SingleClass);
    }
    Ok((n as f64 / (2.0 * n0 as f64), n as f64 / (2.0 * n1 as f64)))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Class-weighted negative log-likelihood plus `(l2 / 2) * |w|^2` over
/// a fixed design matrix. Parameters are `[w_0 .. w_{d-1}, b]`; the bias is
/// not penalised.
#[derive(Debug, Clone)]
pub struct LogisticObjective {
    rows: Vec<f64>,
    targets: Vec<f64>,
    sample_weights: Vec<f64>,
    l2: f64,
    dim: usize,
}

impl LogisticObjective {
    pub fn new(
        features: &[Vec<f64>],
        labels: &[u8],
        sample_weights: Vec<f64>,
        l2: f64,
    ) -> Result<Self, ProbeError> {
        if features.len() != labels.len() || sample_weights.len() != labels.len() {
            return Err(ProbeError::LengthMismatch {
                scores: features.len(),
                labels: labels.len(),
            });
        }
        let dim = features.first().map_or(0, Vec::len);
        let mut rows = Vec::with_capacity(features.len() * dim);
        for f in features {
            if f.len() != dim {
                return Err(ProbeError::DimensionMismatch {
                    expected: dim,
                    found: f.len(),
                });
            }
            rows.extend_from_slice(f);
        }
        Ok(Self {
            rows,
            targets: labels.iter().map(|&l| l as f64).collect(),
            sample_weights,
            l2,
            dim,
        })
    }

    pub fn n_params(&self) -> usize {
        self.dim + 1
    }

    pub fn value_and_gradient(&self, params: &[f64]) -> (f64, Vec<f64>) {
        let (w, b) = params.split_at(self.dim);
        let b = b[0];
        let mut grad = vec![0.0; self.dim + 1];
        let mut value = 0.5 * self.l2 * dot(w, w);
        for ((row, &y), &c) in self
            .rows
            .chunks_exact(self.dim.max(1))
            .zip(&self.targets)
            .zip(&self.sample_weights)
        {
            let row = &row[..self.dim];
            let z = dot(w, row) + b;
            value += c * (softplus(z) - y * z);
            let r = c * (sigmoid(z) - y);
            for (g, x) in grad.iter_mut().zip(row) {
                *g += r * x;
            }
            grad[self.dim] += r;
        }
        for (g, wj) in grad.iter_mut().zip(w) {
            *g += self.l2 * wj;
        }
        (value, grad)
    }
}

const LBFGS_MEMORY: usize = 10;
const ARMIJO_C1: f64 = 1e-4;

struct Minimum {
    params: Vec<f64>,
    value: f64,
    iterations: usize,
    converged: bool,
    trace: Vec<f64>,
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// L-BFGS with Armijo backtracking. Every accepted step satisfies the
/// sufficient-decrease condition, so the objective never increases.
fn minimize(obj: &LogisticObjective, max_iter: usize, tol: f64) -> Minimum {
    let n = obj.n_params();
    let mut x = vec![0.0; n];
    let (mut f, mut g) = obj.value_and_gradient(&x);
    let mut trace = vec![f];
    let mut memory: std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)> =
        std::collections::VecDeque::with_capacity(LBFGS_MEMORY);
    let mut iterations = 0;

    while iterations < max_iter && max_abs(&g) >= tol {
        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(memory.len());
        for (s, y, rho) in memory.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        if let Some((s, y, _)) = memory.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|qi| *qi *= gamma);
        }
        for ((s, y, rho), a) in memory.iter().zip(alphas.iter().rev()) {
            let beta = rho * dot(y, &q);
            q.iter_mut()
                .zip(s)
                .for_each(|(qi, si)| *qi += (a - beta) * si);
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            memory.clear();
            dir = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }

        let mut step = if memory.is_empty() {
            (1.0 / dot(&g, &g).sqrt()).min(1.0)
        } else {
            1.0
        };
        let accepted = loop {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            let (ft, gt) = obj.value_and_gradient(&trial);
            if ft.is_finite() && ft <= f + ARMIJO_C1 * step * slope {
                break Some((trial, ft, gt));
            }
            step *= 0.5;
            if step < 1e-20 {
                break None;
            }
        };
        let Some((x_new, f_new, g_new)) = accepted else {
            break;
        };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 {
            if memory.len() == LBFGS_MEMORY {
                memory.pop_front();
            }
            memory.push_back((s, y, 1.0 / sy));
        }
        x = x_new;
        f = f_new;
        g = g_new;
        iterations += 1;
        trace.push(f);
    }

    Minimum {
        converged: max_abs(&g) < tol,
        params: x,
        value: f,
        iterations,
        trace,
    }
}

/// Fits a probe on z-scored features with balanced class weights. Also
/// returns the objective value after every accepted iteration.
pub fn fit_logistic_traced(
    dataset: &ProbeDataset,
    opts: &FitOptions,
) -> Result<(ProbeModel, Vec<f64>), ProbeError> {
    dataset.validate()?;
    if dataset.is_empty() {
        return Err(ProbeError::EmptyDataset);
    }
    if dataset.dimension() == 0 {
        return Err(ProbeError::InvalidParameter(
            "features have no dimensions".into(),
        ));
    }
    if !(opts.l2_strength > 0.0 && opts.l2_strength.is_finite()) {
        return Err(ProbeError::InvalidParameter(format!(
            "l2_strength must be positive, got {}",
            opts.l2_strength
        )));
    }
    if !(opts.threshold > 0.0 && opts.threshold < 1.0) {
        return Err(ProbeError::InvalidParameter(format!(
            "threshold must lie in (0, 1), got {}",
            opts.threshold
        )));
    }
    let (w0, w1) = balanced_class_weights(&dataset.labels)?;
    let standardization = Standardizer::fit(&dataset.features)?;
    let z: Vec<Vec<f64>> = dataset
        .features
        .iter()
        .map(|r| standardization.transform(r))
        .collect::<Result<_, _>>()?;
    let sample_weights = dataset
        .labels
        .iter()
        .map(|&l| if l == 1 { w1 } else { w0 })
        .collect();
    let objective = LogisticObjective::new(&z, &dataset.labels, sample_weights, opts.l2_strength)?;
    let min = minimize(&objective, opts.max_iter, opts.tol);
    let dim = dataset.dimension();
    let model = ProbeModel {
        layer: dataset.layer,
        dimension: dim,
        weights: min.params[..dim].to_vec(),
        bias: min.params[dim],
        standardization,
        threshold: opts.threshold,
        seed: opts.seed,
        train_meta: TrainMeta {
            l2_strength: opts.l2_strength,
            iterations_run: min.iterations,
            converged: min.converged,
            final_objective: min.value,
        },
    };
    Ok((model, min.trace))
}

pub fn fit_logistic(dataset: &ProbeDataset, opts: &FitOptions) -> Result<ProbeModel, ProbeError> {
    fit_logistic_traced(dataset, opts).map(|(m, _)| m)
}
