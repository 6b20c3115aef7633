use crate::error::{NeshError, Result};

use super::check_alpha;

/// Smallest concentration accepted by [`lemma_bounds`]; below it
/// `log(0.99 alpha)` is too close to zero for the bounds to be meaningful.
pub const MIN_BOUND_ALPHA: f64 = 1.2;

/// Asymptotic lower and upper bounds on `N / prod_k D_k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundsPair {
    pub lower: f64,
    pub upper: f64,
    pub k: usize,
    pub alpha: f64,
}

/// Bounds on the sparsity ratio of a hypergraph sampled at concentration
/// `alpha` with `k` modes. Natural logarithms throughout.
///
/// ```text
/// lower = exp(-1.03 (2K)^{1/K} K (ln a)^{1/K}) / (2K ln a) * [1.82 / ((K-1) ln(1.01 a))]^K
/// upper = [2.11 / ((K-1) ln(0.99 a))]^K
/// ```
pub fn lemma_bounds(k: usize, alpha: f64) -> Result<BoundsPair> {
    if k < 2 {
        return Err(NeshError::invalid(format!("K must be at least 2, got {k}")));
    }
    check_alpha(alpha)?;
    if alpha < MIN_BOUND_ALPHA {
        return Err(NeshError::invalid(format!(
            "alpha = {alpha} is below the admissible range for the sparsity bounds (alpha >= {MIN_BOUND_ALPHA})"
        )));
    }
    let kf = k as f64;
    let log_a = alpha.ln();
    let inv_k = 1.0 / kf;

    let upper = (2.11 / ((kf - 1.0) * (0.99 * alpha).ln())).powi(k as i32);

    let exponent = -1.03 * (2.0 * kf).powf(inv_k) * kf * log_a.powf(inv_k);
    let prefactor = exponent.exp() / (2.0 * kf * log_a);
    let lower = prefactor * (1.82 / ((kf - 1.0) * (1.01 * alpha).ln())).powi(k as i32);

    Ok(BoundsPair {
        lower,
        upper,
        k,
        alpha,
    })
}

/// Candidate laws for the conditional mean of the active-node count
/// `E[D_k | masses of the other modes] = alpha * psi(gamma)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActiveNodeLaw {
    /// `psi(gamma) = log(1 + gamma)`, the Frullani closed form of
    /// `int_0^inf (1 - e^{-gamma x}) e^{-x} / x dx`.
    Frullani,
    /// `psi(gamma) ~ log(gamma) / 2`, the large-`gamma` rate obtained from
    /// the L'Hopital step in the original bound derivation.
    HalfLog,
}

impl ActiveNodeLaw {
    pub fn psi(self, gamma: f64) -> f64 {
        match self {
            ActiveNodeLaw::Frullani => gamma.ln_1p(),
            ActiveNodeLaw::HalfLog => 0.5 * gamma.ln(),
        }
    }

    pub fn expected(self, alpha: f64, gamma: f64) -> Result<f64> {
        check_positive("alpha", alpha)?;
        check_positive("gamma", gamma)?;
        Ok(alpha * self.psi(gamma))
    }
}

/// `alpha * log(1 + gamma)`: expected number of active nodes in a mode whose
/// Gamma process has concentration `alpha`, given that the product of the
/// other modes' total masses is `gamma`.
pub fn expected_active_nodes(alpha: f64, gamma: f64) -> Result<f64> {
    ActiveNodeLaw::Frullani.expected(alpha, gamma)
}

fn check_positive(name: &str, x: f64) -> Result<()> {
    if !x.is_finite() || x <= 0.0 {
        return Err(NeshError::invalid(format!(
            "{name} must be finite and positive, got {x}"
        )));
    }
    Ok(())
}
