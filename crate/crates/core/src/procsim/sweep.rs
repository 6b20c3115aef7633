use std::io::Write;

use crate::error::{NeshError, Result};
use crate::par;
use crate::rng::{derive_seed, domain, stream};

use super::{
    lemma_bounds, sample_hypergraph_crp, sample_hypergraph_stick, sparsity_ratio,
    DEFAULT_TRUNCATION_TOL,
};

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub k: usize,
    pub r: usize,
    pub alpha_grid: Vec<f64>,
    pub reps: usize,
    pub seed: u64,
    pub truncation_tol: f64,
}

impl SweepConfig {
    pub fn new(k: usize, r: usize, alpha_grid: Vec<f64>, reps: usize, seed: u64) -> Self {
        SweepConfig {
            k,
            r,
            alpha_grid,
            reps,
            seed,
            truncation_tol: DEFAULT_TRUNCATION_TOL,
        }
    }
}

/// Aggregated statistics for one concentration value. Ratio statistics
/// are taken over nonempty replicates only; `mean_n` and `mean_d` average
/// over all replicates.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub alpha: f64,
    pub reps: usize,
    pub empty_reps: usize,
    pub ratio_mean: f64,
    pub ratio_std: f64,
    pub mean_n: f64,
    pub mean_d: Vec<f64>,
    pub lower: f64,
    pub upper: f64,
}

impl SweepRow {
    /// False when every replicate came out empty and the ratio is undefined.
    pub fn is_valid(&self) -> bool {
        self.empty_reps < self.reps
    }
}

struct Replicate {
    ratio: Option<f64>,
    distinct: usize,
    active: Vec<usize>,
}

/// Runs `reps` independent replicates per grid value. Replicate `i` at grid
/// position `a` draws from its own stream, so the output does not depend on
/// scheduling.
pub fn sweep(cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    if cfg.reps == 0 {
        return Err(NeshError::invalid("reps must be at least 1"));
    }
    if cfg.alpha_grid.is_empty() {
        return Err(NeshError::invalid("alpha grid is empty"));
    }
    let bounds = cfg
        .alpha_grid
        .iter()
        .map(|&a| lemma_bounds(cfg.k, a).map(|b| (b.lower, b.upper)))
        .collect::<Result<Vec<_>>>()?;

    let base = derive_seed(cfg.seed, domain::SWEEP);
    let total = cfg.alpha_grid.len() * cfg.reps;
    let results: Vec<Result<Replicate>> = par::map_indices(total, |idx| {
        let (a, rep) = (idx / cfg.reps, idx % cfg.reps);
        let alpha = cfg.alpha_grid[a];
        let mut rng = stream(base, ((a as u64) << 32) | rep as u64);
        let g = if cfg.r == 1 {
            sample_hypergraph_crp(cfg.k, alpha, &mut rng)?
        } else {
            sample_hypergraph_stick(cfg.k, cfg.r, alpha, cfg.truncation_tol, &mut rng)?
        };
        Ok(Replicate {
            ratio: sparsity_ratio(&g).ok(),
            distinct: g.distinct_count,
            active: g.active_nodes,
        })
    });
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;

    Ok(results
        .chunks(cfg.reps)
        .zip(cfg.alpha_grid.iter().zip(bounds))
        .map(|(reps, (&alpha, (lo, hi)))| aggregate(alpha, cfg.k, reps, lo, hi))
        .collect())
}

fn aggregate(alpha: f64, k: usize, reps: &[Replicate], lower: f64, upper: f64) -> SweepRow {
    let n = reps.len() as f64;
    let ratios: Vec<f64> = reps.iter().filter_map(|r| r.ratio).collect();
    let empty_reps = reps.len() - ratios.len();
    let (ratio_mean, ratio_std) = match ratios.len() {
        0 => (f64::NAN, f64::NAN),
        1 => (ratios[0], 0.0),
        m => {
            let mean = ratios.iter().sum::<f64>() / m as f64;
            let var = ratios.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m as f64 - 1.0);
            (mean, var.sqrt())
        }
    };
    let mean_n = reps.iter().map(|r| r.distinct as f64).sum::<f64>() / n;
    let mean_d = (0..k)
        .map(|m| reps.iter().map(|r| r.active[m] as f64).sum::<f64>() / n)
        .collect();
    SweepRow {
        alpha,
        reps: reps.len(),
        empty_reps,
        ratio_mean,
        ratio_std,
        mean_n,
        mean_d,
        lower,
        upper,
    }
}

/// Writes sweep rows as CSV with 17 significant digits per float.
pub fn write_sweep_csv<W: Write>(mut w: W, k: usize, rows: &[SweepRow]) -> std::io::Result<()> {
    let mut header = String::from("alpha,reps,empty_reps,ratio_mean,ratio_std,mean_N");
    for m in 1..=k {
        header.push_str(&format!(",mean_D{m}"));
    }
    header.push_str(",lower,upper");
    writeln!(w, "{header}")?;
    for row in rows {
        let mut line = format!(
            "{},{},{},{},{},{}",
            fmt17(row.alpha),
            row.reps,
            row.empty_reps,
            fmt17(row.ratio_mean),
            fmt17(row.ratio_std),
            fmt17(row.mean_n)
        );
        for d in &row.mean_d {
            line.push(',');
            line.push_str(&fmt17(*d));
        }
        line.push_str(&format!(",{},{}", fmt17(row.lower), fmt17(row.upper)));
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// 17 significant digits, enough to round-trip any f64.
pub(crate) fn fmt17(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_seed_identical_rows() {
        let cfg = SweepConfig::new(3, 1, vec![2.0, 6.0], 1, 42);
        assert_eq!(sweep(&cfg).unwrap(), sweep(&cfg).unwrap());
        let cfg2 = SweepConfig::new(3, 2, vec![3.0], 3, 42);
        assert_eq!(sweep(&cfg2).unwrap(), sweep(&cfg2).unwrap());
    }

    #[test]
    fn rejects_bad_config() {
        assert!(sweep(&SweepConfig::new(3, 1, vec![2.0], 0, 1)).is_err());
        assert!(sweep(&SweepConfig::new(3, 1, vec![1.0], 5, 1)).is_err());
        assert!(sweep(&SweepConfig::new(3, 1, vec![], 5, 1)).is_err());
    }

    #[test]
    fn csv_layout() {
        let rows = sweep(&SweepConfig::new(3, 1, vec![2.0, 4.0], 5, 3)).unwrap();
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, 3, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "alpha,reps,empty_reps,ratio_mean,ratio_std,mean_N,mean_D1,mean_D2,mean_D3,lower,upper"
        );
        assert_eq!(lines.len(), 3);
        let fields: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(fields.len(), 11);
        assert_eq!(fields[0].parse::<f64>().unwrap(), 2.0);
        assert_eq!(fields[1], "5");
        // 17 significant digits roundtrip exactly
        assert_eq!(fields[9].parse::<f64>().unwrap(), rows[0].lower);
    }

    #[test]
    fn empty_replicates_are_counted() {
        // at alpha = 1.2, K = 6 the expected point count is 1.2^6 ~ 3, so
        // some replicates come out empty
        let rows = sweep(&SweepConfig::new(6, 1, vec![1.2], 200, 9)).unwrap();
        assert!(rows[0].empty_reps > 0);
        assert!(rows[0].is_valid());
        assert!(rows[0].ratio_mean > 0.0 && rows[0].ratio_mean <= 1.0);
    }
}
