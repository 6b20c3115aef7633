use nalgebra::{DMatrix, DVector};

use crate::error::{NeshError, Result};

use super::kernel::{
    factor_gram, gram_backward, kernel_matrix, kernel_row, kernel_row_backward, JitteredCholesky,
};
use super::{KernelParams, JITTER_LADDER};

/// Inducing inputs, variational parameters and kernel hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SvgpState {
    /// `h x (K R + 1)`; the last column is time.
    pub inducing: DMatrix<f64>,
    pub mean: DVector<f64>,
    /// Lower triangle of `L`, with `log L_ii` stored on the diagonal.
    /// Entries above the diagonal are ignored.
    pub factor_raw: DMatrix<f64>,
    pub kernel: KernelParams,
}

impl SvgpState {
    /// `q(b) = p(b)`: zero mean and `L = chol(kappa(Z, Z))`.
    pub fn at_prior(inducing: DMatrix<f64>, kernel: KernelParams) -> Result<Self> {
        let f = factor_gram(&inducing, &kernel)?;
        let h = inducing.nrows();
        let mut state = SvgpState {
            inducing,
            mean: DVector::zeros(h),
            factor_raw: DMatrix::zeros(h, h),
            kernel,
        };
        state.set_factor(&f.chol.l());
        Ok(state)
    }

    pub fn num_inducing(&self) -> usize {
        self.inducing.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.inducing.ncols()
    }

    /// The lower-triangular factor `L` with positive diagonal.
    pub fn factor(&self) -> DMatrix<f64> {
        let h = self.num_inducing();
        DMatrix::from_fn(h, h, |i, j| match i.cmp(&j) {
            std::cmp::Ordering::Greater => self.factor_raw[(i, j)],
            std::cmp::Ordering::Equal => self.factor_raw[(i, i)].exp(),
            std::cmp::Ordering::Less => 0.0,
        })
    }

    /// Sets the factor from an explicit lower-triangular matrix with a
    /// positive diagonal.
    pub fn set_factor(&mut self, l: &DMatrix<f64>) {
        let h = l.nrows();
        self.factor_raw = DMatrix::from_fn(h, h, |i, j| match i.cmp(&j) {
            std::cmp::Ordering::Greater => l[(i, j)],
            std::cmp::Ordering::Equal => l[(i, i)].ln(),
            std::cmp::Ordering::Less => 0.0,
        });
    }

    /// Factorizes `kappa(Z, Z)` and precomputes everything a batch of
    /// marginal evaluations needs.
    pub fn cache(&self) -> Result<SvgpCache> {
        let gram = factor_gram(&self.inducing, &self.kernel)?;
        let h = self.num_inducing();
        let c = gram.chol.l();
        let c_inv = c
            .solve_lower_triangular(&DMatrix::identity(h, h))
            .ok_or_else(|| NeshError::Numerical {
                msg: "singular Cholesky factor".into(),
                attempts: vec![gram.jitter],
            })?;
        let l = self.factor();
        let kinv = c_inv.transpose() * &c_inv;
        let b = &c_inv * &l;
        let mut bbt = &b * b.transpose();
        for i in 0..h {
            bbt[(i, i)] -= 1.0;
        }
        let m_mat = c_inv.transpose() * bbt * &c_inv;
        let beta = &kinv * &self.mean;
        let whitened_mean = &c_inv * &self.mean;
        let kl = 0.5
            * (b.norm_squared() + whitened_mean.norm_squared() - h as f64
                + 2.0 * (0..h).map(|i| c[(i, i)].ln()).sum::<f64>()
                - 2.0 * (0..h).map(|i| self.factor_raw[(i, i)]).sum::<f64>());
        let s = &l * l.transpose();
        Ok(SvgpCache {
            gram,
            kinv,
            m_mat,
            beta,
            s,
            l,
            kl,
            inv_sq: self.kernel.inv_sq_lengthscales(),
            signal_var: self.kernel.signal_variance(),
        })
    }
}

/// Per-step precomputation for a fixed [`SvgpState`].
///
/// With `P = K_ZZ^{-1}` and `S = L L^T`, a query point with kernel row `k`
/// has mean `k^T P mu` and variance `kappa(p, p) + k^T M k` where
/// `M = P S P - P`.
#[derive(Debug, Clone)]
pub struct SvgpCache {
    pub gram: JitteredCholesky,
    kinv: DMatrix<f64>,
    m_mat: DMatrix<f64>,
    beta: DVector<f64>,
    s: DMatrix<f64>,
    l: DMatrix<f64>,
    kl: f64,
    inv_sq: Vec<f64>,
    signal_var: f64,
}

/// Marginal moments of `f` at one query point, with what the backward pass
/// needs.
#[derive(Debug, Clone)]
pub(crate) struct PointMoments {
    pub k: Vec<f64>,
    pub mk: Vec<f64>,
    pub mean: f64,
    pub var: f64,
    pub clamped: bool,
}

impl SvgpCache {
    /// `KL(q(b) || p(b))`.
    pub fn kl(&self) -> f64 {
        self.kl
    }

    pub(crate) fn moments(&self, z: &DMatrix<f64>, p: &[f64]) -> PointMoments {
        let k = kernel_row(p, z, self.signal_var, &self.inv_sq);
        let h = k.len();
        let mean: f64 = k.iter().zip(self.beta.iter()).map(|(a, b)| a * b).sum();
        let mut mk = vec![0.0; h];
        for j in 0..h {
            let kj = k[j];
            if kj == 0.0 {
                continue;
            }
            let col = self.m_mat.column(j);
            for (i, out) in mk.iter_mut().enumerate() {
                *out += col[i] * kj;
            }
        }
        let raw = self.signal_var + k.iter().zip(&mk).map(|(a, b)| a * b).sum::<f64>();
        let clamped = raw < 0.0;
        PointMoments {
            k,
            mk,
            mean,
            var: raw.max(0.0),
            clamped,
        }
    }

    /// Reverse pass for the global part: given the point accumulator and
    /// the weight of `-KL` in the objective, returns the full gradient.
    pub(crate) fn backward(
        &self,
        state: &SvgpState,
        acc: PointAccumulator,
        kl_weight: f64,
    ) -> SvgpGrad {
        let p = &self.kinv;
        let s = &self.s;
        let mu = &state.mean;
        let g_mm = &acc.g_mmat;
        let h = state.num_inducing();

        // dJ/dP
        let gm_p_s = g_mm * p * s;
        let mut g_p = &acc.g_beta * mu.transpose() + &gm_p_s + gm_p_s.transpose() - g_mm;
        if kl_weight != 0.0 {
            g_p -= (s + mu * mu.transpose() - &self.gram.matrix) * (0.5 * kl_weight);
        }
        let g_k = -(p * g_p * p);

        let mut g_s = p * g_mm * p;
        if kl_weight != 0.0 {
            g_s -= p * (0.5 * kl_weight);
        }
        let g_l_full = (&g_s + g_s.transpose()) * &self.l;
        let mut factor_raw = DMatrix::zeros(h, h);
        for i in 0..h {
            for j in 0..i {
                factor_raw[(i, j)] = g_l_full[(i, j)];
            }
            factor_raw[(i, i)] = g_l_full[(i, i)] * self.l[(i, i)] + kl_weight;
        }

        let mean = p * &acc.g_beta - &self.beta * kl_weight;

        let mut inducing = acc.grad_z;
        let mut log_len = acc.grad_log_len;
        let mut log_var = acc.grad_log_var;
        gram_backward(
            &state.inducing,
            &self.gram.matrix,
            &g_k,
            &self.inv_sq,
            &mut inducing,
            &mut log_len,
            &mut log_var,
        );
        SvgpGrad {
            inducing,
            mean,
            factor_raw,
            log_lengthscales: log_len,
            log_var_embed: log_var,
            log_var_time: log_var,
        }
    }
}

/// Sums of per-point reverse-mode contributions.
#[derive(Debug, Clone)]
pub(crate) struct PointAccumulator {
    g_beta: DVector<f64>,
    g_mmat: DMatrix<f64>,
    grad_z: DMatrix<f64>,
    grad_log_len: Vec<f64>,
    grad_log_var: f64,
}

impl PointAccumulator {
    pub fn new(h: usize, dim: usize) -> Self {
        PointAccumulator {
            g_beta: DVector::zeros(h),
            g_mmat: DMatrix::zeros(h, h),
            grad_z: DMatrix::zeros(h, dim),
            grad_log_len: vec![0.0; dim],
            grad_log_var: 0.0,
        }
    }

    pub fn merge(&mut self, other: &PointAccumulator) {
        self.g_beta += &other.g_beta;
        self.g_mmat += &other.g_mmat;
        self.grad_z += &other.grad_z;
        for (a, b) in self.grad_log_len.iter_mut().zip(&other.grad_log_len) {
            *a += b;
        }
        self.grad_log_var += other.grad_log_var;
    }

    /// Records upstream gradients `(g_mean, g_var)` for one query point and
    /// adds `dJ/dp` into `grad_p`.
    pub fn add_point(
        &mut self,
        cache: &SvgpCache,
        z: &DMatrix<f64>,
        p: &[f64],
        pm: &PointMoments,
        g_mean: f64,
        g_var: f64,
        grad_p: &mut [f64],
    ) {
        let g_var = if pm.clamped { 0.0 } else { g_var };
        let h = pm.k.len();
        let mut grad_k = vec![0.0; h];
        for i in 0..h {
            self.g_beta[i] += g_mean * pm.k[i];
            grad_k[i] = g_mean * cache.beta[i] + 2.0 * g_var * pm.mk[i];
        }
        if g_var != 0.0 {
            for j in 0..h {
                let w = g_var * pm.k[j];
                if w == 0.0 {
                    continue;
                }
                let mut col = self.g_mmat.column_mut(j);
                for i in 0..h {
                    col[i] += w * pm.k[i];
                }
            }
            self.grad_log_var += g_var * cache.signal_var;
        }
        kernel_row_backward(
            p,
            z,
            &pm.k,
            &grad_k,
            &cache.inv_sq,
            grad_p,
            &mut self.grad_z,
            &mut self.grad_log_len,
            &mut self.grad_log_var,
        );
    }
}

/// Gradient w.r.t. every [`SvgpState`] parameter, same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct SvgpGrad {
    pub inducing: DMatrix<f64>,
    pub mean: DVector<f64>,
    pub factor_raw: DMatrix<f64>,
    pub log_lengthscales: Vec<f64>,
    pub log_var_embed: f64,
    pub log_var_time: f64,
}

/// Marginal means and variances of `q(f)` at a set of query points.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginals {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// Number of variances that came out slightly negative and were set to 0.
    pub clamped: usize,
}

/// `m_f = A mu`, `v_f = diag(K**) - diag(A K_Z*) + diag(A S A^T)` with
/// `A = kappa(X*, Z) kappa(Z, Z)^{-1}`, evaluated through triangular solves.
pub fn q_marginal(xstar: &DMatrix<f64>, s: &SvgpState) -> Result<Marginals> {
    if xstar.nrows() == 0 {
        return Err(NeshError::invalid("no query points"));
    }
    let gram = factor_gram(&s.inducing, &s.kernel)?;
    let kxz = kernel_matrix(xstar, &s.inducing, &s.kernel)?;
    let c = gram.chol.l();
    // columns of a are C^{-1} k_p
    let a = c
        .solve_lower_triangular(&kxz.transpose())
        .ok_or_else(|| NeshError::Numerical {
            msg: "singular Cholesky factor".into(),
            attempts: vec![gram.jitter],
        })?;
    let proj = c
        .transpose()
        .solve_upper_triangular(&a)
        .expect("nonsingular factor");
    let l = s.factor();
    let lt_proj = l.transpose() * &proj;
    let prior_var = s.kernel.signal_variance();
    let mut clamped = 0;
    let mut mean = Vec::with_capacity(xstar.nrows());
    let mut var = Vec::with_capacity(xstar.nrows());
    for q in 0..xstar.nrows() {
        mean.push(proj.column(q).dot(&s.mean));
        let v = prior_var - a.column(q).norm_squared() + lt_proj.column(q).norm_squared();
        if v < 0.0 {
            clamped += 1;
        }
        var.push(v.max(0.0));
    }
    Ok(Marginals { mean, var, clamped })
}

/// `KL(N(mu, L L^T) || N(0, K_ZZ))` via the Cholesky factor of `K_ZZ`.
pub fn kl_to_prior(mu: &DVector<f64>, l: &DMatrix<f64>, kzz: &DMatrix<f64>) -> Result<f64> {
    let h = kzz.nrows();
    if kzz.ncols() != h || mu.len() != h || l.nrows() != h || l.ncols() != h {
        return Err(NeshError::invalid(
            "KL operands have inconsistent dimensions",
        ));
    }
    if (0..h).any(|i| !(l[(i, i)] > 0.0)) {
        return Err(NeshError::invalid(
            "variational factor needs a positive diagonal",
        ));
    }
    let scale = (0..h).map(|i| kzz[(i, i)]).sum::<f64>() / h.max(1) as f64;
    let mut attempts = vec![0.0];
    let mut chol = nalgebra::Cholesky::new(kzz.clone());
    for &j in &JITTER_LADDER {
        if chol.is_some() {
            break;
        }
        attempts.push(j);
        let mut k = kzz.clone();
        for i in 0..h {
            k[(i, i)] += j * scale;
        }
        chol = nalgebra::Cholesky::new(k);
    }
    let chol = chol.ok_or(NeshError::Numerical {
        msg: "K_ZZ is not positive definite".into(),
        attempts,
    })?;
    let c = chol.l();
    let lower_l = l.lower_triangle();
    let b = c
        .solve_lower_triangular(&lower_l)
        .expect("nonsingular factor");
    let w = c.solve_lower_triangular(mu).expect("nonsingular factor");
    let logdet_k = 2.0 * (0..h).map(|i| c[(i, i)].ln()).sum::<f64>();
    let logdet_s = 2.0 * (0..h).map(|i| l[(i, i)].ln()).sum::<f64>();
    Ok(0.5 * (b.norm_squared() + w.norm_squared() - h as f64 + logdet_k - logdet_s))
}

/// Reparameterized draws `f = m + sqrt(v) * noise`.
pub fn sample_f(mean: &[f64], var: &[f64], noise: &[f64]) -> Result<Vec<f64>> {
    if mean.len() != var.len() || mean.len() != noise.len() {
        return Err(NeshError::invalid(
            "mean, variance and noise lengths differ",
        ));
    }
    if let Some(v) = var.iter().find(|&&v| !(v >= 0.0)) {
        return Err(NeshError::invalid(format!("negative variance {v}")));
    }
    Ok(mean
        .iter()
        .zip(var)
        .zip(noise)
        .map(|((m, v), e)| m + v.sqrt() * e)
        .collect())
}
