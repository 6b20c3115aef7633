use crate::data::InteractionKey;
use crate::embeddings::{
    batchnorm_apply, build_embedding_table, BatchNormState, EmbeddingTable, StickParams,
};
use crate::error::{NeshError, Result};
use crate::gp::SvgpState;

use super::PriorMode;

/// Embedding parameters under either prior.
#[derive(Debug, Clone, PartialEq)]
pub enum Embeddings {
    Sticks(StickParams),
    /// Free embeddings, stored in the same layout as a derived table.
    Gaussian(EmbeddingTable),
}

/// Every trainable quantity plus the fixed horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub horizon: f64,
    pub embeddings: Embeddings,
    pub batchnorm: BatchNormState,
    pub gp: SvgpState,
}

impl ModelState {
    pub fn prior_mode(&self) -> PriorMode {
        match self.embeddings {
            Embeddings::Sticks(_) => PriorMode::Nesh,
            Embeddings::Gaussian(_) => PriorMode::Gaussian,
        }
    }

    pub fn rank(&self) -> usize {
        match &self.embeddings {
            Embeddings::Sticks(p) => p.rank,
            Embeddings::Gaussian(t) => t.rank,
        }
    }

    pub fn mode_sizes(&self) -> &[usize] {
        match &self.embeddings {
            Embeddings::Sticks(p) => &p.mode_sizes,
            Embeddings::Gaussian(t) => &t.mode_sizes,
        }
    }

    pub fn table(&self) -> EmbeddingTable {
        match &self.embeddings {
            Embeddings::Sticks(p) => build_embedding_table(p),
            Embeddings::Gaussian(t) => t.clone(),
        }
    }

    /// Time coordinate of a GP input: the uniform law on `[0, T]` mapped to
    /// zero mean and unit variance.
    pub fn time_input(&self, t: f64) -> f64 {
        (t / self.horizon - 0.5) * 12f64.sqrt()
    }

    /// Derivative of [`Self::time_input`] w.r.t. `t`.
    pub fn time_input_slope(&self) -> f64 {
        12f64.sqrt() / self.horizon
    }

    /// Normalized embedding part of the GP input for `key`.
    pub fn embedding_input(
        &self,
        table: &EmbeddingTable,
        key: &InteractionKey,
    ) -> Result<Vec<f64>> {
        batchnorm_apply(&table.gp_input(key), &self.batchnorm)
    }

    /// Full GP input `[bn(x_i); time]`.
    pub fn point(&self, x: &[f64], t: f64) -> Vec<f64> {
        let mut p = Vec::with_capacity(x.len() + 1);
        p.extend_from_slice(x);
        p.push(self.time_input(t));
        p
    }

    fn embedding_blocks(&self) -> &[Vec<f64>] {
        match &self.embeddings {
            Embeddings::Sticks(p) => &p.logits,
            Embeddings::Gaussian(t) => &t.log_weights,
        }
    }

    fn embedding_blocks_mut(&mut self) -> &mut [Vec<f64>] {
        match &mut self.embeddings {
            Embeddings::Sticks(p) => &mut p.logits,
            Embeddings::Gaussian(t) => &mut t.log_weights,
        }
    }

    pub fn num_params(&self) -> usize {
        let h = self.gp.num_inducing();
        let dim = self.gp.input_dim();
        self.embedding_blocks().iter().map(Vec::len).sum::<usize>()
            + 2 * self.batchnorm.dim()
            + h * dim
            + h
            + h * (h + 1) / 2
            + dim
            + 2
    }

    /// Flattens the trainable parameters. Order: embedding blocks by mode,
    /// batch-norm means then log scales, inducing inputs (row-major), `mu`,
    /// the lower triangle of the raw factor (row-major), kernel log
    /// lengthscales, log embedding variance, log time variance.
    pub fn pack(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for block in self.embedding_blocks() {
            out.extend_from_slice(block);
        }
        out.extend_from_slice(&self.batchnorm.mean);
        out.extend_from_slice(&self.batchnorm.log_std);
        let gp = &self.gp;
        let (h, dim) = gp.inducing.shape();
        for i in 0..h {
            for d in 0..dim {
                out.push(gp.inducing[(i, d)]);
            }
        }
        out.extend(gp.mean.iter());
        for i in 0..h {
            for j in 0..=i {
                out.push(gp.factor_raw[(i, j)]);
            }
        }
        out.extend_from_slice(&gp.kernel.log_lengthscales);
        out.push(gp.kernel.log_var_embed);
        out.push(gp.kernel.log_var_time);
        out
    }

    /// Inverse of [`Self::pack`].
    pub fn unpack(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.num_params() {
            return Err(NeshError::invalid(format!(
                "parameter vector has length {}, model needs {}",
                theta.len(),
                self.num_params()
            )));
        }
        let mut it = theta.iter().copied();
        let mut next = move || it.next().expect("length checked");
        for block in self.embedding_blocks_mut() {
            for x in block.iter_mut() {
                *x = next();
            }
        }
        for x in self
            .batchnorm
            .mean
            .iter_mut()
            .chain(self.batchnorm.log_std.iter_mut())
        {
            *x = next();
        }
        let gp = &mut self.gp;
        let (h, dim) = gp.inducing.shape();
        for i in 0..h {
            for d in 0..dim {
                gp.inducing[(i, d)] = next();
            }
        }
        for x in gp.mean.iter_mut() {
            *x = next();
        }
        for i in 0..h {
            for j in 0..=i {
                gp.factor_raw[(i, j)] = next();
            }
        }
        for x in gp.kernel.log_lengthscales.iter_mut() {
            *x = next();
        }
        gp.kernel.log_var_embed = next();
        gp.kernel.log_var_time = next();
        Ok(())
    }

    /// Checks that every block has consistent dimensions.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NeshError::Corrupt(m));
        let sizes = self.mode_sizes();
        let rank = self.rank();
        let blocks = self.embedding_blocks();
        if blocks.len() != sizes.len()
            || blocks.iter().zip(sizes).any(|(b, &d)| b.len() != rank * d)
        {
            return bad("embedding blocks do not match mode sizes".into());
        }
        let dim = sizes.len() * rank;
        if self.batchnorm.dim() != dim || self.batchnorm.log_std.len() != dim {
            return bad("batch-norm dimension mismatch".into());
        }
        let gp = &self.gp;
        let h = gp.num_inducing();
        if gp.input_dim() != dim + 1
            || gp.mean.len() != h
            || gp.factor_raw.shape() != (h, h)
            || gp.kernel.input_dim() != dim + 1
        {
            return bad("GP state dimension mismatch".into());
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return bad(format!("horizon {} is invalid", self.horizon));
        }
        Ok(())
    }
}
