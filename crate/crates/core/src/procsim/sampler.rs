use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, Poisson};

use crate::error::{NeshError, Result};

use super::{check_alpha, check_modes};

/// Default residual-mass threshold for truncated stick-breaking.
pub const DEFAULT_TRUNCATION_TOL: f64 = 1e-8;

/// A sampled hypergraph. `edges` keeps every PPP point, duplicates included;
/// labels are 1-based and, per mode, exactly `1..=active_nodes[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledHypergraph {
    pub edges: Vec<Vec<u32>>,
    pub raw_count: usize,
    pub distinct_count: usize,
    pub active_nodes: Vec<usize>,
    /// Gamma-process total masses `g[k][r]` the graph was drawn from.
    pub masses: Vec<Vec<f64>>,
    pub k: usize,
    pub r: usize,
    pub alpha: f64,
}

impl SampledHypergraph {
    fn from_labels(
        labels: Vec<Vec<u32>>,
        raw_count: usize,
        masses: Vec<Vec<f64>>,
        r: usize,
        alpha: f64,
    ) -> Self {
        let k = masses.len();
        // labels[k][n]: already compact per mode
        let active_nodes = labels
            .iter()
            .map(|mode| mode.iter().copied().max().unwrap_or(0) as usize)
            .collect();
        let edges: Vec<Vec<u32>> = (0..raw_count)
            .map(|n| labels.iter().map(|mode| mode[n]).collect())
            .collect();
        let mut sorted = edges.clone();
        sorted.sort_unstable();
        sorted.dedup();
        SampledHypergraph {
            distinct_count: sorted.len(),
            edges,
            raw_count,
            active_nodes,
            masses,
            k,
            r,
            alpha,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.raw_count == 0
    }

    /// Distinct edges, sorted lexicographically.
    pub fn distinct_edges(&self) -> Vec<Vec<u32>> {
        let mut sorted = self.edges.clone();
        sorted.sort_unstable();
        sorted.dedup();
        sorted
    }
}

/// Total masses `g[k][r] ~ Gamma(alpha, 1)` of the K x R Gamma processes.
pub fn sample_total_masses<R: Rng + ?Sized>(
    k: usize,
    r: usize,
    alpha: f64,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    check_modes(k, r)?;
    check_alpha(alpha)?;
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| NeshError::invalid(e.to_string()))?;
    Ok((0..k)
        .map(|_| (0..r).map(|_| gamma.sample(rng)).collect())
        .collect())
}

fn poisson_count<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> Result<usize> {
    if mean <= 0.0 {
        return Ok(0);
    }
    if !mean.is_finite() {
        return Err(NeshError::invalid(format!(
            "Poisson mean {mean} is not finite"
        )));
    }
    let p = Poisson::new(mean).map_err(|e| NeshError::invalid(format!("Poisson({mean}): {e}")))?;
    Ok(p.sample(rng) as usize)
}

/// Chinese-restaurant labels for `n` draws: the j-th draw opens a new table
/// with probability `alpha / (alpha + j - 1)`, otherwise it copies the label
/// of a uniformly chosen earlier draw (equivalently, an existing table with
/// probability proportional to its occupancy).
fn crp_labels<R: Rng + ?Sized>(n: usize, alpha: f64, rng: &mut R) -> Vec<u32> {
    let mut labels = Vec::with_capacity(n);
    let mut tables = 0u32;
    for j in 0..n {
        let p_new = alpha / (alpha + j as f64);
        if j == 0 || rng.random::<f64>() < p_new {
            tables += 1;
            labels.push(tables);
        } else {
            let pick = rng.random_range(0..j);
            labels.push(labels[pick]);
        }
    }
    labels
}

/// R = 1 sampler with the weights marginalized out: masses, a Poisson raw
/// count with mean `prod_k g[k]`, then per-mode CRP labels.
pub fn sample_hypergraph_crp<R: Rng + ?Sized>(
    k: usize,
    alpha: f64,
    rng: &mut R,
) -> Result<SampledHypergraph> {
    let masses = sample_total_masses(k, 1, alpha, rng)?;
    let mean: f64 = masses.iter().map(|g| g[0]).product();
    let raw_count = poisson_count(mean, rng)?;
    let labels = (0..k).map(|_| crp_labels(raw_count, alpha, rng)).collect();
    Ok(SampledHypergraph::from_labels(
        labels, raw_count, masses, 1, alpha,
    ))
}

/// GEM(alpha) weights by stick-breaking. The sequence is broken until the
/// residual mass drops below the tolerance and extended further on demand
/// if a draw lands in the residual.
#[derive(Debug, Clone)]
pub struct GemSticks {
    alpha: f64,
    beta: Beta<f64>,
    cumulative: Vec<f64>,
    residual: f64,
    initial_len: usize,
}

impl GemSticks {
    pub fn new<R: Rng + ?Sized>(alpha: f64, truncation_tol: f64, rng: &mut R) -> Result<Self> {
        check_alpha(alpha)?;
        check_tol(truncation_tol)?;
        let beta = Beta::new(1.0, alpha).map_err(|e| NeshError::invalid(e.to_string()))?;
        let mut sticks = GemSticks {
            alpha,
            beta,
            cumulative: Vec::new(),
            residual: 1.0,
            initial_len: 0,
        };
        while sticks.residual >= truncation_tol {
            sticks.break_one(rng);
        }
        sticks.initial_len = sticks.cumulative.len();
        Ok(sticks)
    }

    fn break_one<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let v = self.beta.sample(rng);
        let w = v * self.residual;
        let prev = self.cumulative.last().copied().unwrap_or(0.0);
        self.cumulative.push(prev + w);
        self.residual *= 1.0 - v;
    }

    /// Number of sticks broken to bring the residual below the tolerance.
    pub fn initial_len(&self) -> usize {
        self.initial_len
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn weights(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.cumulative
            .iter()
            .map(|&c| {
                let w = c - prev;
                prev = c;
                w
            })
            .collect()
    }

    /// Draws a 0-based atom index.
    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        while self.cumulative.last().is_none_or(|&c| u >= c) {
            // residual underflow guard: the cumulative sum is already 1 to
            // machine precision
            if self.residual < f64::EPSILON * 1e-3 {
                return self.cumulative.len().saturating_sub(1);
            }
            self.break_one(rng);
        }
        self.cumulative.partition_point(|&c| c <= u)
    }
}

fn check_tol(tol: f64) -> Result<()> {
    if !(tol > 0.0 && tol <= 1e-4) {
        return Err(NeshError::invalid(format!(
            "truncation tolerance must lie in (0, 1e-4], got {tol}"
        )));
    }
    Ok(())
}

/// Sampler with explicit stick-breaking weights per (mode, component).
/// Components pick points with probability proportional to
/// `prod_k g[k][r]`; integer labels are shared across components, which
/// merges the R hypergraphs by index.
pub fn sample_hypergraph_stick<R: Rng + ?Sized>(
    k: usize,
    r: usize,
    alpha: f64,
    truncation_tol: f64,
    rng: &mut R,
) -> Result<SampledHypergraph> {
    check_tol(truncation_tol)?;
    let masses = sample_total_masses(k, r, alpha, rng)?;
    let mut sticks: Vec<Vec<GemSticks>> = (0..k)
        .map(|_| {
            (0..r)
                .map(|_| GemSticks::new(alpha, truncation_tol, rng))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let comp_mass: Vec<f64> = (0..r)
        .map(|c| masses.iter().map(|g| g[c]).product())
        .collect();
    let total: f64 = comp_mass.iter().sum();
    let raw_count = poisson_count(total, rng)?;

    let mut comp_cum = Vec::with_capacity(r);
    let mut acc = 0.0;
    for m in &comp_mass {
        acc += m / total;
        comp_cum.push(acc);
    }

    let mut raw: Vec<Vec<usize>> = vec![Vec::with_capacity(raw_count); k];
    for _ in 0..raw_count {
        let u: f64 = rng.random();
        let comp = comp_cum.partition_point(|&c| c <= u).min(r - 1);
        for (mode, labels) in raw.iter_mut().enumerate() {
            labels.push(sticks[mode][comp].sample(rng));
        }
    }

    let labels = raw.into_iter().map(compact_labels).collect();
    Ok(SampledHypergraph::from_labels(
        labels, raw_count, masses, r, alpha,
    ))
}

/// Relabels atom indices to `1..=D` by order of first appearance.
fn compact_labels(raw: Vec<usize>) -> Vec<u32> {
    let mut map = std::collections::HashMap::new();
    raw.into_iter()
        .map(|atom| {
            let next = map.len() as u32 + 1;
            *map.entry(atom).or_insert(next)
        })
        .collect()
}

/// `N / prod_k D_k` for a nonempty hypergraph.
pub fn sparsity_ratio(g: &SampledHypergraph) -> Result<f64> {
    if g.distinct_count == 0 {
        return Err(NeshError::EmptyGraph);
    }
    let volume: f64 = g.active_nodes.iter().map(|&d| d as f64).product();
    Ok(g.distinct_count as f64 / volume)
}
