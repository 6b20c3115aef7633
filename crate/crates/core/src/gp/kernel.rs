use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{NeshError, Result};

/// Relative jitter levels tried, in order, when a Gram matrix fails to
/// factor. The first rung is replaced by the kernel's own jitter if larger.
pub const JITTER_LADDER: [f64; 3] = [1e-6, 1e-4, 1e-2];

/// Product SE kernel hyperparameters. `log_lengthscales` has one entry per
/// embedding coordinate followed by the time lengthscale.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelParams {
    pub log_lengthscales: Vec<f64>,
    pub log_var_embed: f64,
    pub log_var_time: f64,
    /// Relative diagonal jitter for Gram matrices.
    pub jitter: f64,
}

impl KernelParams {
    /// All lengthscales and variances equal to one.
    pub fn unit(input_dim: usize) -> Self {
        KernelParams {
            log_lengthscales: vec![0.0; input_dim],
            log_var_embed: 0.0,
            log_var_time: 0.0,
            jitter: JITTER_LADDER[0],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.log_lengthscales.len()
    }

    /// `sigma_1^2 sigma_2^2`, the prior variance of `f` at any point.
    pub fn signal_variance(&self) -> f64 {
        (self.log_var_embed + self.log_var_time).exp()
    }

    pub(crate) fn inv_sq_lengthscales(&self) -> Vec<f64> {
        self.log_lengthscales
            .iter()
            .map(|l| (-2.0 * l).exp())
            .collect()
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let inv = self.inv_sq_lengthscales();
        self.signal_variance() * (-0.5 * sq_dist(a, b, &inv)).exp()
    }
}

fn sq_dist(a: &[f64], b: &[f64], inv_sq: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(inv_sq)
        .map(|((x, y), w)| (x - y) * (x - y) * w)
        .sum()
}

fn check_dims(points: &DMatrix<f64>, theta: &KernelParams) -> Result<()> {
    if points.ncols() != theta.input_dim() {
        return Err(NeshError::invalid(format!(
            "points have dimension {}, kernel expects {}",
            points.ncols(),
            theta.input_dim()
        )));
    }
    Ok(())
}

fn row(m: &DMatrix<f64>, i: usize) -> Vec<f64> {
    m.row(i).iter().copied().collect()
}

/// Cross-covariance `kappa(A, B)` between the rows of `a` and `b`.
pub fn kernel_matrix(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    theta: &KernelParams,
) -> Result<DMatrix<f64>> {
    check_dims(a, theta)?;
    check_dims(b, theta)?;
    let inv = theta.inv_sq_lengthscales();
    let s = theta.signal_variance();
    let rows_b: Vec<Vec<f64>> = (0..b.nrows()).map(|j| row(b, j)).collect();
    let mut k = DMatrix::zeros(a.nrows(), b.nrows());
    for i in 0..a.nrows() {
        let ai = row(a, i);
        for (j, bj) in rows_b.iter().enumerate() {
            k[(i, j)] = s * (-0.5 * sq_dist(&ai, bj, &inv)).exp();
        }
    }
    Ok(k)
}

/// `kappa(A, A)` with `jitter * sigma_1^2 sigma_2^2` added to the diagonal.
pub fn gram_matrix(a: &DMatrix<f64>, theta: &KernelParams) -> Result<DMatrix<f64>> {
    gram_with_jitter(a, theta, theta.jitter)
}

fn gram_with_jitter(a: &DMatrix<f64>, theta: &KernelParams, jitter: f64) -> Result<DMatrix<f64>> {
    let mut k = kernel_matrix(a, a, theta)?;
    let s = theta.signal_variance();
    for i in 0..k.nrows() {
        // exact symmetry and an exact diagonal
        k[(i, i)] = s * (1.0 + jitter);
        for j in 0..i {
            k[(j, i)] = k[(i, j)];
        }
    }
    Ok(k)
}

/// A Gram matrix together with its Cholesky factor and the jitter that
/// made it factor.
#[derive(Clone, Debug)]
pub struct JitteredCholesky {
    pub matrix: DMatrix<f64>,
    pub chol: Cholesky<f64, Dyn>,
    pub jitter: f64,
}

/// Factors `kappa(Z, Z)`, escalating the relative jitter along
/// [`JITTER_LADDER`] on failure.
pub fn factor_gram(z: &DMatrix<f64>, theta: &KernelParams) -> Result<JitteredCholesky> {
    let mut attempts = Vec::new();
    let ladder = std::iter::once(theta.jitter)
        .chain(JITTER_LADDER.iter().copied().filter(|&j| j > theta.jitter));
    for jitter in ladder {
        attempts.push(jitter);
        let matrix = gram_with_jitter(z, theta, jitter)?;
        if matrix.iter().any(|x| !x.is_finite()) {
            break;
        }
        if let Some(chol) = Cholesky::new(matrix.clone()) {
            return Ok(JitteredCholesky {
                matrix,
                chol,
                jitter,
            });
        }
    }
    Err(NeshError::Numerical {
        msg: "inducing-point Gram matrix is not positive definite".into(),
        attempts,
    })
}

/// `kappa(p, z_b)` for every inducing row `b`.
pub(crate) fn kernel_row(p: &[f64], z: &DMatrix<f64>, s: f64, inv_sq: &[f64]) -> Vec<f64> {
    let dim = p.len();
    (0..z.nrows())
        .map(|b| {
            let mut d2 = 0.0;
            for d in 0..dim {
                let diff = p[d] - z[(b, d)];
                d2 += diff * diff * inv_sq[d];
            }
            s * (-0.5 * d2).exp()
        })
        .collect()
}

/// Backpropagates `grad_k = dJ/dkappa(p, Z)` into the point, the inducing
/// inputs and the hyperparameters. `grad_log_var` is the common gradient of
/// both log signal variances.
#[allow(clippy::too_many_arguments)]
pub(crate) fn kernel_row_backward(
    p: &[f64],
    z: &DMatrix<f64>,
    k: &[f64],
    grad_k: &[f64],
    inv_sq: &[f64],
    grad_p: &mut [f64],
    grad_z: &mut DMatrix<f64>,
    grad_log_len: &mut [f64],
    grad_log_var: &mut f64,
) {
    let dim = p.len();
    for b in 0..z.nrows() {
        let w = grad_k[b] * k[b];
        if w == 0.0 {
            continue;
        }
        *grad_log_var += w;
        for d in 0..dim {
            let diff = p[d] - z[(b, d)];
            let t = w * diff * inv_sq[d];
            grad_p[d] -= t;
            grad_z[(b, d)] += t;
            grad_log_len[d] += t * diff;
        }
    }
}

/// Backpropagates `grad_gram = dJ/dK_ZZ` (all entries treated as
/// independent) into `Z` and the hyperparameters.
pub(crate) fn gram_backward(
    z: &DMatrix<f64>,
    gram: &DMatrix<f64>,
    grad_gram: &DMatrix<f64>,
    inv_sq: &[f64],
    grad_z: &mut DMatrix<f64>,
    grad_log_len: &mut [f64],
    grad_log_var: &mut f64,
) {
    let h = z.nrows();
    let dim = z.ncols();
    for a in 0..h {
        *grad_log_var += grad_gram[(a, a)] * gram[(a, a)];
        for b in 0..a {
            let w = (grad_gram[(a, b)] + grad_gram[(b, a)]) * gram[(a, b)];
            if w == 0.0 {
                continue;
            }
            *grad_log_var += w;
            for d in 0..dim {
                let diff = z[(a, d)] - z[(b, d)];
                let t = w * diff * inv_sq[d];
                grad_z[(a, d)] -= t;
                grad_z[(b, d)] += t;
                grad_log_len[d] += t * diff;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use approx::assert_relative_eq;
    use nalgebra::SymmetricEigen;
    use rand::Rng;

    fn random_points(n: usize, dim: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = stream(seed, 0);
        DMatrix::from_fn(n, dim, |_, _| rng.random::<f64>() * 2.0 - 1.0)
    }

    fn theta(dim: usize) -> KernelParams {
        KernelParams {
            log_lengthscales: (0..dim).map(|d| 0.1 * d as f64 - 0.2).collect(),
            log_var_embed: 0.3,
            log_var_time: -0.1,
            jitter: 1e-6,
        }
    }

    #[test]
    fn self_covariance_includes_jitter() {
        let p = random_points(1, 3, 1);
        let th = theta(3);
        let k = gram_matrix(&p, &th).unwrap();
        assert_relative_eq!(
            k[(0, 0)],
            th.signal_variance() * (1.0 + th.jitter),
            max_relative = 1e-15
        );
        assert_relative_eq!(th.signal_variance(), (0.2f64).exp(), max_relative = 1e-15);
    }

    #[test]
    fn entries_decay_with_distance() {
        let th = KernelParams::unit(2);
        let origin = DMatrix::from_row_slice(1, 2, &[0.0, 0.0]);
        let mut prev = f64::INFINITY;
        for r in [0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 40.0] {
            let q = DMatrix::from_row_slice(1, 2, &[r, 0.0]);
            let k = kernel_matrix(&origin, &q, &th).unwrap()[(0, 0)];
            assert!(k < prev || r == 0.0);
            prev = k;
        }
        assert!(prev < 1e-300);
    }

    #[test]
    fn random_gram_is_positive_definite() {
        let z = random_points(6, 4, 2);
        let th = theta(4);
        let k = gram_matrix(&z, &th).unwrap();
        assert_eq!(k, k.transpose());
        let eig = SymmetricEigen::new(k.clone());
        assert!(
            eig.eigenvalues.iter().all(|&e| e > 0.0),
            "{:?}",
            eig.eigenvalues
        );
        assert!(Cholesky::new(k).is_some());
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let th = KernelParams::unit(3);
        assert!(kernel_matrix(&random_points(2, 2, 1), &random_points(2, 3, 1), &th).is_err());
    }

    #[test]
    fn ladder_escalates_for_duplicate_points() {
        // identical rows: the unit-jitter Gram is rank one plus a tiny
        // diagonal, which still factors; a negative jitter forces the ladder
        let z = DMatrix::from_row_slice(3, 1, &[0.5, 0.5, 0.5]);
        let mut th = KernelParams::unit(1);
        th.jitter = -0.5;
        let f = factor_gram(&z, &th).unwrap();
        assert_eq!(f.jitter, 1e-6);

        let nan = DMatrix::from_row_slice(2, 1, &[f64::NAN, 0.0]);
        match factor_gram(&nan, &KernelParams::unit(1)) {
            Err(NeshError::Numerical { attempts, .. }) => assert!(!attempts.is_empty()),
            other => panic!("expected numerical error, got {other:?}"),
        }
    }

    #[test]
    fn gram_backward_matches_finite_differences() {
        let z = random_points(4, 3, 5);
        let th = theta(3);
        let weights = random_points(4, 4, 6);
        let objective = |z: &DMatrix<f64>, th: &KernelParams| -> f64 {
            gram_matrix(z, th).unwrap().component_mul(&weights).sum()
        };
        let gram = gram_matrix(&z, &th).unwrap();
        let mut gz = DMatrix::zeros(4, 3);
        let mut gl = vec![0.0; 3];
        let mut gv = 0.0;
        gram_backward(
            &z,
            &gram,
            &weights,
            &th.inv_sq_lengthscales(),
            &mut gz,
            &mut gl,
            &mut gv,
        );
        let h = 1e-6;
        for a in 0..4 {
            for d in 0..3 {
                let (mut zp, mut zm) = (z.clone(), z.clone());
                zp[(a, d)] += h;
                zm[(a, d)] -= h;
                let fd = (objective(&zp, &th) - objective(&zm, &th)) / (2.0 * h);
                assert_relative_eq!(gz[(a, d)], fd, epsilon = 1e-8, max_relative = 1e-6);
            }
        }
        for d in 0..3 {
            let (mut tp, mut tm) = (th.clone(), th.clone());
            tp.log_lengthscales[d] += h;
            tm.log_lengthscales[d] -= h;
            let fd = (objective(&z, &tp) - objective(&z, &tm)) / (2.0 * h);
            assert_relative_eq!(gl[d], fd, epsilon = 1e-8, max_relative = 1e-6);
        }
        let (mut tp, mut tm) = (th.clone(), th.clone());
        tp.log_var_embed += h;
        tm.log_var_embed -= h;
        let fd = (objective(&z, &tp) - objective(&z, &tm)) / (2.0 * h);
        assert_relative_eq!(gv, fd, max_relative = 1e-6);
    }
}
