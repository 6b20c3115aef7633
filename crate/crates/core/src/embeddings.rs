//! Stick-breaking sociabilities and the embeddings built from them.
//!
//! For node `j` of mode `k` and component `r`, the stick variable
//! `v = logistic(theta)` gives the sociability
//! `omega_j = v_j * prod_{l<j} (1 - v_l)`. All arithmetic is in the log
//! domain: `log v = -softplus(-theta)` and `log(1 - v) = -softplus(theta)`.
//! The embedding of a node stacks `log omega` over components, and the GP
//! input of an interaction concatenates its participants' embeddings.
//!
//! Per-mode tables are laid out component-major: entry `r * D_k + j`.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::InteractionKey;
use crate::error::{NeshError, Result};

/// Default batch-norm guard added to the standard deviation.
pub const DEFAULT_BN_EPS: f64 = 1e-5;

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Unconstrained stick logits for every (mode, component, active node).
#[derive(Debug, Clone, PartialEq)]
pub struct StickParams {
    pub alpha: f64,
    pub rank: usize,
    pub mode_sizes: Vec<usize>,
    pub logits: Vec<Vec<f64>>,
}

impl StickParams {
    /// Logits drawn from `Normal(0, 0.01^2)`, so every `v` starts near 1/2.
    pub fn init<R: Rng + ?Sized>(
        alpha: f64,
        rank: usize,
        mode_sizes: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(NeshError::invalid(format!(
                "alpha must be positive, got {alpha}"
            )));
        }
        if rank == 0 {
            return Err(NeshError::invalid("rank must be at least 1"));
        }
        let normal = Normal::new(0.0, 0.01).expect("valid normal");
        let logits = mode_sizes
            .iter()
            .map(|&d| (0..rank * d).map(|_| normal.sample(rng)).collect())
            .collect();
        Ok(StickParams {
            alpha,
            rank,
            mode_sizes: mode_sizes.to_vec(),
            logits,
        })
    }

    /// Stick variables `v` for mode `k`, component `r`.
    pub fn sticks(&self, k: usize, r: usize) -> Vec<f64> {
        let d = self.mode_sizes[k];
        self.logits[k][r * d..(r + 1) * d]
            .iter()
            .map(|&t| logistic(t))
            .collect()
    }

    /// Sum of `log Beta(v | 1, alpha)` over every stick variable.
    pub fn log_prior(&self) -> f64 {
        let log_alpha = self.alpha.ln();
        self.logits
            .iter()
            .flatten()
            .map(|&t| log_alpha - (self.alpha - 1.0) * softplus(t))
            .sum()
    }

    /// Gradient of [`StickParams::log_prior`] w.r.t. the logits, added into
    /// `grad`.
    pub(crate) fn log_prior_grad(&self, grad: &mut [Vec<f64>]) {
        for (g, theta) in grad.iter_mut().zip(&self.logits) {
            for (gi, &t) in g.iter_mut().zip(theta) {
                *gi -= (self.alpha - 1.0) * logistic(t);
            }
        }
    }
}

/// `omega_j = v_j prod_{l<j} (1 - v_l)`.
pub fn sticks_to_weights(v: &[f64]) -> Result<Vec<f64>> {
    Ok(sticks_to_log_weights(v)?
        .into_iter()
        .map(f64::exp)
        .collect())
}

/// Log-domain version of [`sticks_to_weights`].
pub fn sticks_to_log_weights(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(NeshError::invalid("stick sequence is empty"));
    }
    if let Some(bad) = v.iter().find(|&&x| !(x > 0.0 && x < 1.0)) {
        return Err(NeshError::invalid(format!(
            "stick variable {bad} is outside (0, 1)"
        )));
    }
    let mut rest = 0.0;
    Ok(v.iter()
        .map(|&x| {
            let lw = x.ln() + rest;
            rest += (-x).ln_1p();
            lw
        })
        .collect())
}

fn logits_to_log_weights(logits: &[f64]) -> Vec<f64> {
    let mut rest = 0.0;
    logits
        .iter()
        .map(|&t| {
            let lw = -softplus(-t) + rest;
            rest -= softplus(t);
            lw
        })
        .collect()
}

/// Chain rule from `d/d log omega` to `d/d theta` for one stick sequence:
/// `d log omega_j / d theta_l` is `1 - v_l` for `l = j` and `-v_l` for `l < j`.
pub(crate) fn log_weights_backward(logits: &[f64], grad_log_w: &[f64], grad_logits: &mut [f64]) {
    let mut suffix = 0.0;
    for l in (0..logits.len()).rev() {
        let v = logistic(logits[l]);
        grad_logits[l] += grad_log_w[l] * (1.0 - v) - v * suffix;
        suffix += grad_log_w[l];
    }
}

/// Log-sociability embeddings for every node.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub rank: usize,
    pub mode_sizes: Vec<usize>,
    /// `log_weights[k][r * D_k + j] = u^k_j[r]`.
    pub log_weights: Vec<Vec<f64>>,
}

impl EmbeddingTable {
    pub fn k(&self) -> usize {
        self.mode_sizes.len()
    }

    /// Dimension `K * R` of a GP embedding input.
    pub fn input_dim(&self) -> usize {
        self.k() * self.rank
    }

    pub fn get(&self, k: usize, r: usize, j: usize) -> f64 {
        self.log_weights[k][r * self.mode_sizes[k] + j]
    }

    /// `u^k_j` as an R-vector.
    pub fn embedding(&self, k: usize, j: usize) -> Vec<f64> {
        (0..self.rank).map(|r| self.get(k, r, j)).collect()
    }

    /// `x_i = [u^1_{i_1}; ...; u^K_{i_K}]`.
    pub fn gp_input(&self, key: &InteractionKey) -> Vec<f64> {
        key.0
            .iter()
            .enumerate()
            .flat_map(|(k, &j)| (0..self.rank).map(move |r| self.get(k, r, j)))
            .collect()
    }

    /// Scatters a gradient w.r.t. `gp_input(key)` into a table-shaped buffer.
    pub(crate) fn scatter_input_grad(
        &self,
        key: &InteractionKey,
        grad_x: &[f64],
        out: &mut [Vec<f64>],
    ) {
        for (k, &j) in key.0.iter().enumerate() {
            let d = self.mode_sizes[k];
            for r in 0..self.rank {
                out[k][r * d + j] += grad_x[k * self.rank + r];
            }
        }
    }

    pub(crate) fn zeros_like(&self) -> Vec<Vec<f64>> {
        self.log_weights
            .iter()
            .map(|w| vec![0.0; w.len()])
            .collect()
    }
}

/// Applies stick-breaking per (mode, component) in node order.
pub fn build_embedding_table(p: &StickParams) -> EmbeddingTable {
    let log_weights = p
        .logits
        .iter()
        .zip(&p.mode_sizes)
        .map(|(theta, &d)| {
            theta
                .chunks(d.max(1))
                .flat_map(logits_to_log_weights)
                .collect()
        })
        .collect();
    EmbeddingTable {
        rank: p.rank,
        mode_sizes: p.mode_sizes.clone(),
        log_weights,
    }
}

/// Backpropagates a table-shaped gradient to the stick logits.
pub(crate) fn embedding_table_backward(p: &StickParams, grad_table: &[Vec<f64>]) -> Vec<Vec<f64>> {
    p.logits
        .iter()
        .zip(grad_table)
        .zip(&p.mode_sizes)
        .map(|((theta, g), &d)| {
            let mut out = vec![0.0; theta.len()];
            for ((t, gw), o) in theta.chunks(d).zip(g.chunks(d)).zip(out.chunks_mut(d)) {
                log_weights_backward(t, gw, o);
            }
            out
        })
        .collect()
}

/// `log w_i` with `w_i = (1/R) sum_r prod_k omega^k_{r i_k}`, by log-sum-exp.
pub fn edge_log_weight(key: &InteractionKey, table: &EmbeddingTable) -> f64 {
    edge_log_weight_with_grad(key, table).0
}

/// Value and the softmax weights `pi_r`; `d log w / d u^k_{i_k}[r] = pi_r`
/// for every mode `k`.
pub(crate) fn edge_log_weight_with_grad(
    key: &InteractionKey,
    table: &EmbeddingTable,
) -> (f64, Vec<f64>) {
    let comp: Vec<f64> = (0..table.rank)
        .map(|r| {
            key.0
                .iter()
                .enumerate()
                .map(|(k, &j)| table.get(k, r, j))
                .sum()
        })
        .collect();
    let max = comp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = comp.iter().map(|c| (c - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let value = max + total.ln() - (table.rank as f64).ln();
    (value, exps.into_iter().map(|e| e / total).collect())
}

/// `log Beta(v | 1, alpha) = log alpha + (alpha - 1) log(1 - v)`.
pub fn beta_log_prior(v: f64, alpha: f64) -> Result<f64> {
    if !(v > 0.0 && v < 1.0) {
        return Err(NeshError::invalid(format!(
            "stick variable {v} is outside (0, 1)"
        )));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(NeshError::invalid(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    Ok(alpha.ln() + (alpha - 1.0) * (-v).ln_1p())
}

/// Trainable normalization of GP embedding inputs: `(x - eta) / (sigma + eps)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
    pub eps: f64,
}

impl BatchNormState {
    pub fn identity(dim: usize) -> Self {
        BatchNormState {
            mean: vec![0.0; dim],
            log_std: vec![0.0; dim],
            eps: DEFAULT_BN_EPS,
        }
    }

    /// Empirical per-coordinate mean and standard deviation of `inputs`.
    /// Coordinates with (near) zero spread get unit scale.
    pub fn from_inputs(inputs: &[Vec<f64>], eps: f64) -> Self {
        let dim = inputs.first().map_or(0, Vec::len);
        let n = inputs.len().max(1) as f64;
        let mut mean = vec![0.0; dim];
        let mut log_std = vec![0.0; dim];
        for d in 0..dim {
            let m = inputs.iter().map(|x| x[d]).sum::<f64>() / n;
            let var = inputs.iter().map(|x| (x[d] - m).powi(2)).sum::<f64>() / n;
            mean[d] = m;
            log_std[d] = if var > 1e-12 { 0.5 * var.ln() } else { 0.0 };
        }
        BatchNormState { mean, log_std, eps }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn scale(&self, d: usize) -> f64 {
        self.log_std[d].exp() + self.eps
    }

    /// Given `dL/dx_normalized`, returns `dL/dx` and adds the gradients
    /// w.r.t. `mean` and `log_std` into the provided buffers.
    pub(crate) fn backward(
        &self,
        x: &[f64],
        grad_norm: &[f64],
        grad_mean: &mut [f64],
        grad_log_std: &mut [f64],
    ) -> Vec<f64> {
        (0..self.dim())
            .map(|d| {
                let sigma = self.log_std[d].exp();
                let s = sigma + self.eps;
                let g = grad_norm[d] / s;
                grad_mean[d] -= g;
                grad_log_std[d] -= grad_norm[d] * (x[d] - self.mean[d]) * sigma / (s * s);
                g
            })
            .collect()
    }
}

pub fn batchnorm_apply(x: &[f64], bn: &BatchNormState) -> Result<Vec<f64>> {
    if x.len() != bn.dim() {
        return Err(NeshError::invalid(format!(
            "input has dimension {}, batch norm expects {}",
            x.len(),
            bn.dim()
        )));
    }
    Ok(x.iter()
        .enumerate()
        .map(|(d, &xi)| (xi - bn.mean[d]) / bn.scale(d))
        .collect())
}

/// One exported embedding row: `mode,internal_id,raw_id,u_1..u_R`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRow {
    pub mode: usize,
    pub internal_id: usize,
    pub raw_id: u64,
    pub values: Vec<f64>,
}

pub fn write_embedding_csv<W: Write>(
    mut w: W,
    rank: usize,
    rows: &[EmbeddingRow],
) -> std::io::Result<()> {
    let mut header = String::from("mode,internal_id,raw_id");
    for r in 1..=rank {
        header.push_str(&format!(",u_{r}"));
    }
    writeln!(w, "{header}")?;
    for row in rows {
        let vals: Vec<String> = row.values.iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(
            w,
            "{},{},{},{}",
            row.mode,
            row.internal_id,
            row.raw_id,
            vals.join(",")
        )?;
    }
    w.flush()
}
