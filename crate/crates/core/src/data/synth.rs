//! Synthetic event data by thinning.
//!
//! A generator spec names the key set, horizon and a rate family. Each key's
//! events are drawn by acceptance-rejection against a homogeneous process at
//! the key's rate bound, which is exact for any bounded rate.
//!
//! Example spec (TOML):
//!
//! ```toml
//! k = 2
//! mode_sizes = [3, 3]
//! horizon = 10.0
//! keys = [[0, 0], [1, 2]]
//!
//! [rate]
//! family = "sinusoidal-squared"
//! offset = 1.0
//! amplitude = 1.0
//! ```
//!
//! The `model` family ignores `keys` and samples both the key set and the
//! rate functions from the embedding model itself.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Beta, Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{NeshError, Result};

use super::{EventDataset, RawRow, TimeFrame};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub k: usize,
    pub mode_sizes: Vec<usize>,
    pub horizon: f64,
    #[serde(default)]
    pub keys: Vec<Vec<usize>>,
    /// Overrides the family's own rate bound for every key.
    #[serde(default)]
    pub lambda_max: Option<f64>,
    pub rate: RateFamily,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RateFamily {
    /// `lambda(t) = rate`.
    Constant { rate: f64 },
    /// `lambda(t) = (offset + amplitude * sin(2 pi t / period + phase))^2`;
    /// `period` defaults to the horizon.
    SinusoidalSquared {
        #[serde(default = "one")]
        offset: f64,
        amplitude: f64,
        #[serde(default)]
        period: Option<f64>,
        #[serde(default)]
        phase: f64,
    },
    /// Keys from the stick-breaking edge distribution; rates are the square
    /// of a random-Fourier-feature draw from an SE-kernel GP over the
    /// standardized log-sociability embeddings and time.
    Model {
        alpha: f64,
        rank: usize,
        num_keys: usize,
        #[serde(default = "one")]
        signal_std: f64,
        #[serde(default = "one")]
        time_lengthscale: f64,
        #[serde(default = "one")]
        embed_lengthscale: f64,
        #[serde(default = "default_features")]
        features: usize,
    },
}

fn one() -> f64 {
    1.0
}

fn default_features() -> usize {
    64
}

impl GeneratorSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| NeshError::Config(e.to_string()))
    }

    fn validate(&self) -> Result<()> {
        if self.k == 0 || self.mode_sizes.len() != self.k || self.mode_sizes.contains(&0) {
            return Err(NeshError::Config(format!(
                "generator needs {} positive mode sizes, got {:?}",
                self.k, self.mode_sizes
            )));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(NeshError::Config("horizon must be positive".into()));
        }
        for key in &self.keys {
            if key.len() != self.k || key.iter().zip(&self.mode_sizes).any(|(i, d)| i >= d) {
                return Err(NeshError::Config(format!(
                    "key {key:?} does not fit the mode sizes"
                )));
            }
        }
        Ok(())
    }
}

/// Samples event times on `[0, horizon]` from a Poisson process with rate
/// `rate(t) <= lambda_max`, by thinning.
pub fn thin<R, F>(rate: F, lambda_max: f64, horizon: f64, rng: &mut R) -> Result<Vec<f64>>
where
    R: Rng + ?Sized,
    F: Fn(f64) -> f64,
{
    if !(lambda_max.is_finite() && lambda_max >= 0.0) {
        return Err(NeshError::invalid(format!(
            "rate bound {lambda_max} is not valid"
        )));
    }
    if lambda_max == 0.0 {
        return Ok(Vec::new());
    }
    let n = Poisson::new(lambda_max * horizon)
        .map_err(|e| NeshError::invalid(e.to_string()))?
        .sample(rng) as usize;
    let mut out = Vec::new();
    for _ in 0..n {
        let t = rng.random::<f64>() * horizon;
        let lambda = rate(t);
        if lambda > lambda_max * (1.0 + 1e-12) {
            return Err(NeshError::invalid(format!(
                "rate {lambda} at t = {t} exceeds the declared bound {lambda_max}"
            )));
        }
        if rng.random::<f64>() * lambda_max < lambda {
            out.push(t);
        }
    }
    out.sort_by(f64::total_cmp);
    Ok(out)
}

/// Random-Fourier-feature approximation of a zero-mean SE-kernel GP.
struct FourierFunction {
    freqs: Vec<Vec<f64>>,
    phases: Vec<f64>,
    amps: Vec<f64>,
}

impl FourierFunction {
    fn sample<R: Rng + ?Sized>(
        dim: usize,
        lengthscales: &[f64],
        signal_std: f64,
        features: usize,
        rng: &mut R,
    ) -> Self {
        let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
        let amp_std = signal_std * (2.0 / features as f64).sqrt();
        let freqs = (0..features)
            .map(|_| {
                (0..dim)
                    .map(|d| std_normal.sample(rng) / lengthscales[d])
                    .collect()
            })
            .collect();
        let phases = (0..features)
            .map(|_| rng.random::<f64>() * 2.0 * PI)
            .collect();
        let amps = (0..features)
            .map(|_| amp_std * std_normal.sample(rng))
            .collect();
        FourierFunction {
            freqs,
            phases,
            amps,
        }
    }

    fn eval(&self, x: &[f64]) -> f64 {
        self.freqs
            .iter()
            .zip(&self.phases)
            .zip(&self.amps)
            .map(|((w, b), a)| a * (w.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>() + b).cos())
            .sum()
    }

    fn bound(&self) -> f64 {
        self.amps.iter().map(|a| a.abs()).sum()
    }
}

/// Generates a dataset from a spec. Keys that receive no events are
/// dropped; nodes are re-indexed by descending event count as on load.
pub fn synth_from_model<R: Rng + ?Sized>(
    spec: &GeneratorSpec,
    rng: &mut R,
) -> Result<EventDataset> {
    spec.validate()?;
    let horizon = spec.horizon;
    let mut rows = Vec::new();
    let mut emit = |key: &[usize], times: Vec<f64>| {
        for t in times {
            rows.push(RawRow {
                ids: key.iter().map(|&i| i as u64).collect(),
                t,
            });
        }
    };

    match &spec.rate {
        RateFamily::Constant { rate } => {
            if !(rate.is_finite() && *rate >= 0.0) {
                return Err(NeshError::Config(format!(
                    "constant rate {rate} is invalid"
                )));
            }
            let bound = spec.lambda_max.unwrap_or(*rate);
            for key in &spec.keys {
                emit(key, thin(|_| *rate, bound, horizon, rng)?);
            }
        }
        RateFamily::SinusoidalSquared {
            offset,
            amplitude,
            period,
            phase,
        } => {
            let period = period.unwrap_or(horizon);
            let bound = spec
                .lambda_max
                .unwrap_or((offset.abs() + amplitude.abs()).powi(2));
            let rate =
                |t: f64| (offset + amplitude * (2.0 * PI * t / period + phase).sin()).powi(2);
            for key in &spec.keys {
                emit(key, thin(rate, bound, horizon, rng)?);
            }
        }
        RateFamily::Model {
            alpha,
            rank,
            num_keys,
            signal_std,
            time_lengthscale,
            embed_lengthscale,
            features,
        } => {
            let (keys, inputs) = sample_model_keys(spec, *alpha, *rank, *num_keys, rng)?;
            let dim = spec.k * rank + 1;
            let mut ls = vec![*embed_lengthscale; dim];
            ls[dim - 1] = *time_lengthscale;
            let f = FourierFunction::sample(dim, &ls, *signal_std, (*features).max(1), rng);
            let bound = spec.lambda_max.unwrap_or(f.bound().powi(2));
            for (key, x) in keys.iter().zip(&inputs) {
                let mut point = x.clone();
                point.push(0.0);
                let rate = |t: f64| {
                    let mut p = point.clone();
                    p[dim - 1] = t;
                    f.eval(&p).powi(2)
                };
                emit(key, thin(rate, bound, horizon, rng)?);
            }
        }
    }

    if rows.is_empty() {
        return Err(NeshError::NoEvents);
    }
    EventDataset::from_raw_rows(
        &rows,
        spec.k,
        TimeFrame::Fixed {
            offset: 0.0,
            horizon,
        },
    )
}

/// Draws distinct keys from `w_i = (1/R) sum_r prod_k omega^k_{r i_k}`
/// restricted to the grid of mode sizes, and returns them with their
/// standardized embedding inputs.
#[allow(clippy::type_complexity)]
fn sample_model_keys<R: Rng + ?Sized>(
    spec: &GeneratorSpec,
    alpha: f64,
    rank: usize,
    num_keys: usize,
    rng: &mut R,
) -> Result<(Vec<Vec<usize>>, Vec<Vec<f64>>)> {
    if !(alpha.is_finite() && alpha > 0.0) || rank == 0 || num_keys == 0 {
        return Err(NeshError::Config(
            "model family needs alpha > 0, rank >= 1 and num_keys >= 1".into(),
        ));
    }
    let volume: f64 = spec.mode_sizes.iter().map(|&d| d as f64).product();
    if num_keys as f64 > volume {
        return Err(NeshError::Config(format!(
            "cannot draw {num_keys} distinct keys from {volume} possible"
        )));
    }
    let beta = Beta::new(1.0, alpha).map_err(|e| NeshError::Config(e.to_string()))?;
    // log_w[k][r][j]
    let log_w: Vec<Vec<Vec<f64>>> = spec
        .mode_sizes
        .iter()
        .map(|&d| {
            (0..rank)
                .map(|_| {
                    let mut rest = 0.0;
                    (0..d)
                        .map(|_| {
                            let v: f64 = beta.sample(rng).clamp(1e-300, 1.0 - 1e-16);
                            let lw = v.ln() + rest;
                            rest += (-v).ln_1p();
                            lw
                        })
                        .collect()
                })
                .collect()
        })
        .collect();

    let cumulative: Vec<Vec<Vec<f64>>> = log_w
        .iter()
        .map(|per_r| {
            per_r
                .iter()
                .map(|lw| {
                    let max = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut acc = 0.0;
                    let mut c: Vec<f64> = lw
                        .iter()
                        .map(|l| {
                            acc += (l - max).exp();
                            acc
                        })
                        .collect();
                    c.iter_mut().for_each(|x| *x /= acc);
                    c
                })
                .collect()
        })
        .collect();

    let mut keys: Vec<Vec<usize>> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let max_attempts = 10_000 * num_keys;
    let mut attempts = 0;
    while keys.len() < num_keys {
        attempts += 1;
        if attempts > max_attempts {
            return Err(NeshError::Config(format!(
                "only {} distinct keys after {max_attempts} draws; lower num_keys or raise alpha",
                keys.len()
            )));
        }
        let r = rng.random_range(0..rank);
        let key: Vec<usize> = cumulative
            .iter()
            .map(|per_r| {
                let u: f64 = rng.random();
                per_r[r]
                    .partition_point(|&c| c <= u)
                    .min(per_r[r].len() - 1)
            })
            .collect();
        if seen.insert(key.clone()) {
            keys.push(key);
        }
    }

    let dim = spec.k * rank;
    let mut inputs: Vec<Vec<f64>> = keys
        .iter()
        .map(|key| {
            let mut x = Vec::with_capacity(dim);
            for (m, &j) in key.iter().enumerate() {
                for lw in &log_w[m] {
                    x.push(lw[j]);
                }
            }
            x
        })
        .collect();
    for d in 0..dim {
        let n = inputs.len() as f64;
        let mean = inputs.iter().map(|x| x[d]).sum::<f64>() / n;
        let var = inputs.iter().map(|x| (x[d] - mean).powi(2)).sum::<f64>() / n;
        let sd = if var > 1e-12 { var.sqrt() } else { 1.0 };
        inputs.iter_mut().for_each(|x| x[d] = (x[d] - mean) / sd);
    }
    Ok((keys, inputs))
}
