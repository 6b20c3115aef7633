//! Sparse hypergraph process simulation.
//!
//! Each mode `k` and component `r` carries a Gamma process on `[0, alpha]`;
//! hyperedges are the points of a Poisson point process whose mean measure is
//! the sum over `r` of the product of those processes. Only total masses and
//! normalized weights matter for the sampled structure, so the samplers draw
//! `Gamma(alpha, 1)` masses and then assign node labels either through the
//! Chinese restaurant predictive rule (R = 1, exact) or from explicit GEM
//! stick-breaking weights (any R).

mod bounds;
mod sampler;
mod sweep;

pub use bounds::{expected_active_nodes, lemma_bounds, ActiveNodeLaw, BoundsPair, MIN_BOUND_ALPHA};
pub use sampler::{
    sample_hypergraph_crp, sample_hypergraph_stick, sample_total_masses, sparsity_ratio, GemSticks,
    SampledHypergraph, DEFAULT_TRUNCATION_TOL,
};
pub use sweep::{sweep, write_sweep_csv, SweepConfig, SweepRow};

use crate::error::{NeshError, Result};

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if !alpha.is_finite() || alpha <= 0.0 {
        return Err(NeshError::invalid(format!(
            "alpha must be a finite positive number, got {alpha}"
        )));
    }
    Ok(())
}

pub(crate) fn check_modes(k: usize, r: usize) -> Result<()> {
    if k < 2 {
        return Err(NeshError::invalid(format!("K must be at least 2, got {k}")));
    }
    if r < 1 {
        return Err(NeshError::invalid("R must be at least 1"));
    }
    Ok(())
}
