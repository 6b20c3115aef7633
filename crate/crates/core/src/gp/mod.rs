//! Sparse variational GP over `f(x, t)`.
//!
//! The kernel is a product of an ARD squared-exponential over the
//! (batch-normalized) embedding coordinates and an SE over time. The
//! variational posterior over the inducing outputs is `N(mu, L L^T)` with
//! `L` lower triangular and stored with a log-parameterized diagonal.

mod kernel;
mod svgp;

pub use kernel::{
    factor_gram, gram_matrix, kernel_matrix, JitteredCholesky, KernelParams, JITTER_LADDER,
};
pub use svgp::{kl_to_prior, q_marginal, sample_f, Marginals, SvgpCache, SvgpGrad, SvgpState};

pub(crate) use svgp::{PointAccumulator, PointMoments};
