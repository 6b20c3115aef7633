use std::io::Write;

use nalgebra::DMatrix;

use crate::error::{NeshError, Result};
use crate::inference::Checkpoint;

/// SE kernel `variance * exp(-|a - b|^2 / (2 lengthscale^2))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KpcaKernel {
    pub lengthscale: f64,
    pub variance: f64,
}

impl Default for KpcaKernel {
    fn default() -> Self {
        KpcaKernel {
            lengthscale: 1.0,
            variance: 1.0,
        }
    }
}

fn centered_gram(x: &DMatrix<f64>, k: &KpcaKernel) -> DMatrix<f64> {
    let n = x.nrows();
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let d2 = (x.row(i) - x.row(j)).norm_squared();
            let v = k.variance * (-0.5 * d2 / (k.lengthscale * k.lengthscale)).exp();
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    let row_means: Vec<f64> = (0..n).map(|i| g.row(i).sum() / n as f64).collect();
    let all = row_means.iter().sum::<f64>() / n as f64;
    DMatrix::from_fn(n, n, |i, j| g[(i, j)] - row_means[i] - row_means[j] + all)
}

/// Kernel PCA: top `out_dim` eigenvectors of the double-centred SE Gram,
/// scaled by the square roots of their eigenvalues. Each eigenvector's
/// first nonzero entry is made positive.
pub fn kpca_project(x: &DMatrix<f64>, out_dim: usize, kernel: &KpcaKernel) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    if out_dim == 0 || n < out_dim {
        return Err(NeshError::invalid(format!(
            "need n >= out_dim >= 1, got n = {n}, out_dim = {out_dim}"
        )));
    }
    if !(kernel.lengthscale > 0.0 && kernel.variance > 0.0) {
        return Err(NeshError::invalid(
            "kernel lengthscale and variance must be positive",
        ));
    }
    let gc = centered_gram(x, kernel);
    let eig = gc.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let tol = 1e-10 * top.max(kernel.variance);
    let positive = order.iter().filter(|&&i| eig.eigenvalues[i] > tol).count();
    if positive < out_dim {
        return Err(NeshError::invalid(format!(
            "only {positive} positive eigenvalues; at most {positive} output dimensions are achievable"
        )));
    }
    let mut out = DMatrix::zeros(n, out_dim);
    for (c, &i) in order.iter().take(out_dim).enumerate() {
        let v = eig.eigenvectors.column(i);
        let first = v.iter().find(|x| x.abs() > 1e-12).copied().unwrap_or(1.0);
        let sign = if first < 0.0 { -1.0 } else { 1.0 };
        let s = eig.eigenvalues[i].sqrt();
        for r in 0..n {
            out[(r, c)] = sign * s * v[r];
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionRow {
    pub mode: usize,
    pub internal_id: usize,
    pub coords: Vec<f64>,
}

/// Projects the embeddings of each mode's training nodes separately.
pub fn project_modes(
    ck: &Checkpoint,
    out_dim: usize,
    kernel: &KpcaKernel,
) -> Result<Vec<ProjectionRow>> {
    let table = ck.model.table();
    let mut rows = Vec::new();
    for (k, active) in ck.active.iter().enumerate() {
        let r = table.rank;
        let x = DMatrix::from_fn(active.len(), r, |i, c| table.get(k, c, active[i]));
        let p = kpca_project(&x, out_dim, kernel).map_err(|e| match e {
            NeshError::InvalidArgument(m) => NeshError::InvalidArgument(format!("mode {k}: {m}")),
            other => other,
        })?;
        for (i, &j) in active.iter().enumerate() {
            rows.push(ProjectionRow {
                mode: k,
                internal_id: j,
                coords: p.row(i).iter().copied().collect(),
            });
        }
    }
    Ok(rows)
}

pub fn write_projection_csv<W: Write>(
    mut w: W,
    out_dim: usize,
    rows: &[ProjectionRow],
) -> std::io::Result<()> {
    let mut header = String::from("mode,internal_id");
    for d in 1..=out_dim {
        header.push_str(&format!(",coord_{d}"));
    }
    writeln!(w, "{header}")?;
    for row in rows {
        let vals: Vec<String> = row.coords.iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(w, "{},{},{}", row.mode, row.internal_id, vals.join(","))?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    fn random(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = stream(seed, 0);
        DMatrix::from_fn(n, d, |_, _| rng.random::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn identical_points_have_no_positive_eigenvalues() {
        let x = DMatrix::from_element(5, 2, 0.3);
        let err = kpca_project(&x, 1, &KpcaKernel::default()).unwrap_err();
        assert!(err.to_string().contains("at most 0"), "{err}");
    }

    #[test]
    fn duplicates_share_coordinates() {
        let mut x = random(6, 3, 1);
        let r0 = x.row(0).clone_owned();
        x.set_row(4, &r0);
        let p = kpca_project(&x, 2, &KpcaKernel::default()).unwrap();
        for c in 0..2 {
            assert!((p[(0, c)] - p[(4, c)]).abs() < 1e-10);
        }
    }

    #[test]
    fn positive_eigenpairs_reconstruct_centered_gram() {
        let x = random(4, 2, 2);
        let k = KpcaKernel::default();
        let full = kpca_project(&x, 3, &k).unwrap();
        let gc = centered_gram(&x, &k);
        let rec = &full * full.transpose();
        assert!((rec - &gc).abs().max() < 1e-8);
        // feature-space distances
        for i in 0..4 {
            for j in 0..4 {
                let d = (full.row(i) - full.row(j)).norm_squared();
                let expect = gc[(i, i)] + gc[(j, j)] - 2.0 * gc[(i, j)];
                assert!((d - expect).abs() < 1e-8);
            }
        }
        let two = kpca_project(&x, 2, &k).unwrap();
        assert!((two.columns(0, 2) - full.columns(0, 2)).abs().max() < 1e-10);
    }

    #[test]
    fn sign_convention_and_errors() {
        let p = kpca_project(&random(7, 2, 3), 2, &KpcaKernel::default()).unwrap();
        for c in 0..2 {
            let first = p
                .column(c)
                .iter()
                .find(|v| v.abs() > 1e-12)
                .copied()
                .unwrap();
            assert!(first > 0.0);
        }
        assert!(kpca_project(&random(2, 2, 4), 3, &KpcaKernel::default()).is_err());
        assert!(kpca_project(&random(2, 2, 4), 0, &KpcaKernel::default()).is_err());
    }

    #[test]
    fn projection_csv_header() {
        let rows = vec![ProjectionRow {
            mode: 1,
            internal_id: 2,
            coords: vec![0.5, -0.25],
        }];
        let mut out = Vec::new();
        write_projection_csv(&mut out, 2, &rows).unwrap();
        let s = String::from_utf8(out).unwrap();
        assert!(s.starts_with("mode,internal_id,coord_1,coord_2\n1,2,"));
    }
}
