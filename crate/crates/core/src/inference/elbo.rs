use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::{EventDataset, EventSequence, InteractionKey};
use crate::embeddings::{edge_log_weight_with_grad, embedding_table_backward, EmbeddingTable};
use crate::error::{NeshError, Result};
use crate::gp::{PointAccumulator, PointMoments, SvgpCache};
use crate::par;

use super::{Embeddings, McSettings, ModelState};

/// Interactions per parallel work unit. Fixed so that reductions, and hence
/// results, do not depend on the thread count.
const CHUNK: usize = 4;

/// Pre-drawn randomness for one interaction: `Q` times in `[0, T]` for the
/// integral, and `S` standard normals per event.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionNoise {
    pub times: Vec<f64>,
    pub normals: Vec<f64>,
}

/// Draws noise for `seqs` in order.
pub fn draw_noise<R: Rng + ?Sized>(
    seqs: &[&EventSequence],
    horizon: f64,
    mc: &McSettings,
    rng: &mut R,
) -> Vec<InteractionNoise> {
    seqs.iter()
        .map(|seq| InteractionNoise {
            times: (0..mc.time_samples)
                .map(|_| rng.random::<f64>() * horizon)
                .collect(),
            normals: (0..seq.count() * mc.samples)
                .map(|_| rng.sample(StandardNormal))
                .collect(),
        })
        .collect()
}

/// The ELBO estimate split into its terms. Per-interaction sums are stored
/// unscaled; `scale` is `N / B`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboTerms {
    pub scale: f64,
    pub kl: f64,
    /// Beta log prior of the sticks, or the Gaussian log prior of the
    /// embeddings.
    pub embedding_prior: f64,
    /// `sum log w_i` (zero under the Gaussian prior).
    pub edge: f64,
    pub integral: f64,
    pub event: f64,
}

impl ElboTerms {
    pub fn total(&self) -> f64 {
        -self.kl + self.embedding_prior + self.scale * (self.edge + self.integral + self.event)
    }
}

/// `-(T / Q) sum_q (m_q^2 + v_q)`, using `E_q[f^2] = m^2 + v`.
pub fn integral_from_moments(horizon: f64, moments: &[(f64, f64)]) -> f64 {
    if moments.is_empty() {
        return 0.0;
    }
    -horizon / moments.len() as f64 * moments.iter().map(|(m, v)| m * m + v).sum::<f64>()
}

/// `(1/S) sum_s log((m + sqrt(v) e_s)^2 + eps_f)`.
pub fn event_from_moments(mean: f64, var: f64, noise: &[f64], log_guard: f64) -> f64 {
    let sd = var.max(0.0).sqrt();
    noise
        .iter()
        .map(|e| {
            let f = mean + sd * e;
            (f * f + log_guard).ln()
        })
        .sum::<f64>()
        / noise.len().max(1) as f64
}

/// Value and `(d/dm, d/dv)` of [`event_from_moments`].
fn event_with_grad(mean: f64, var: f64, noise: &[f64], log_guard: f64) -> (f64, f64, f64) {
    let sd = var.max(0.0).sqrt();
    let inv_s = 1.0 / noise.len().max(1) as f64;
    let (mut val, mut gm, mut gv) = (0.0, 0.0, 0.0);
    for &e in noise {
        let f = mean + sd * e;
        let denom = f * f + log_guard;
        val += denom.ln();
        let df = 2.0 * f / denom;
        gm += df;
        if sd > 0.0 {
            gv += df * e / (2.0 * sd);
        }
    }
    (val * inv_s, gm * inv_s, gv * inv_s)
}

/// Integral term summed over `keys`, drawing `q` times per key.
pub fn integral_term<R: Rng + ?Sized>(
    model: &ModelState,
    keys: &[InteractionKey],
    q: usize,
    rng: &mut R,
) -> Result<f64> {
    if q == 0 {
        return Err(NeshError::invalid("need at least one time sample"));
    }
    let table = model.table();
    let cache = model.gp.cache()?;
    let mut total = 0.0;
    for key in keys {
        let x = model.embedding_input(&table, key)?;
        let moments: Vec<(f64, f64)> = (0..q)
            .map(|_| {
                let t = rng.random::<f64>() * model.horizon;
                let pm = cache.moments(&model.gp.inducing, &model.point(&x, t));
                (pm.mean, pm.var)
            })
            .collect();
        total += integral_from_moments(model.horizon, &moments);
    }
    Ok(total)
}

/// Event term summed over `(key, time)` pairs; `noise` holds `s` normals per
/// event, event-major.
pub fn event_term(
    model: &ModelState,
    events: &[(InteractionKey, f64)],
    s: usize,
    noise: &[f64],
    log_guard: f64,
) -> Result<f64> {
    if s == 0 || noise.len() != events.len() * s {
        return Err(NeshError::invalid(format!(
            "need {s} normals per event, got {} for {} events",
            noise.len(),
            events.len()
        )));
    }
    let table = model.table();
    let cache = model.gp.cache()?;
    let mut total = 0.0;
    for ((key, t), e) in events.iter().zip(noise.chunks(s)) {
        let x = model.embedding_input(&table, key)?;
        let pm = cache.moments(&model.gp.inducing, &model.point(&x, *t));
        total += event_from_moments(pm.mean, pm.var, e, log_guard);
    }
    Ok(total)
}

/// Per-interaction pieces of one pass; gradients when requested.
struct ChunkOut {
    edge: Vec<f64>,
    integral: Vec<f64>,
    event: Vec<f64>,
    grad: Option<ChunkGrad>,
}

struct ChunkGrad {
    acc: PointAccumulator,
    table: Vec<Vec<f64>>,
    bn_mean: Vec<f64>,
    bn_log_std: Vec<f64>,
}

struct Pass<'a> {
    model: &'a ModelState,
    table: &'a EmbeddingTable,
    cache: &'a SvgpCache,
    mc: &'a McSettings,
    scale: f64,
    with_edge: bool,
    with_grad: bool,
}

impl Pass<'_> {
    fn run(&self, items: &[(&EventSequence, &InteractionNoise)]) -> Result<ChunkOut> {
        let model = self.model;
        let z = &model.gp.inducing;
        let h = model.gp.num_inducing();
        let dim = model.gp.input_dim();
        let dim_e = dim - 1;
        let mut out = ChunkOut {
            edge: Vec::with_capacity(items.len()),
            integral: Vec::with_capacity(items.len()),
            event: Vec::with_capacity(items.len()),
            grad: self.with_grad.then(|| ChunkGrad {
                acc: PointAccumulator::new(h, dim),
                table: self.table.zeros_like(),
                bn_mean: vec![0.0; dim_e],
                bn_log_std: vec![0.0; dim_e],
            }),
        };
        let mut grad_p = vec![0.0; dim];
        for (seq, noise) in items {
            let s = self.mc.samples;
            if noise.normals.len() != seq.count() * s {
                return Err(NeshError::invalid("noise does not match the batch"));
            }
            let x_raw = self.table.gp_input(&seq.key);
            let x = model.embedding_input(self.table, &seq.key)?;
            let mut grad_x = vec![0.0; dim_e];
            let mut point_grad = |g: &mut ChunkGrad,
                                  p: &[f64],
                                  pm: &PointMoments,
                                  gm: f64,
                                  gv: f64,
                                  grad_x: &mut [f64]| {
                grad_p.iter_mut().for_each(|v| *v = 0.0);
                g.acc.add_point(self.cache, z, p, pm, gm, gv, &mut grad_p);
                for (a, b) in grad_x.iter_mut().zip(&grad_p) {
                    *a += b;
                }
            };

            let coef = model.horizon / noise.times.len().max(1) as f64;
            let mut integral = 0.0;
            for &t in &noise.times {
                let p = model.point(&x, t);
                let pm = self.cache.moments(z, &p);
                integral -= coef * (pm.mean * pm.mean + pm.var);
                if let Some(g) = out.grad.as_mut() {
                    let gm = -2.0 * coef * pm.mean * self.scale;
                    let gv = -coef * self.scale;
                    point_grad(g, &p, &pm, gm, gv, &mut grad_x);
                }
            }

            let mut event = 0.0;
            for (&t, e) in seq.timestamps.iter().zip(noise.normals.chunks(s)) {
                let p = model.point(&x, t);
                let pm = self.cache.moments(z, &p);
                let (val, gm, gv) = event_with_grad(pm.mean, pm.var, e, self.mc.log_guard);
                event += val;
                if let Some(g) = out.grad.as_mut() {
                    point_grad(g, &p, &pm, gm * self.scale, gv * self.scale, &mut grad_x);
                }
            }

            let edge = if self.with_edge {
                let (lw, pi) = edge_log_weight_with_grad(&seq.key, self.table);
                if let Some(g) = out.grad.as_mut() {
                    for (k, &j) in seq.key.0.iter().enumerate() {
                        let d = self.table.mode_sizes[k];
                        for (r, w) in pi.iter().enumerate() {
                            g.table[k][r * d + j] += self.scale * w;
                        }
                    }
                }
                lw
            } else {
                0.0
            };

            if let Some(g) = out.grad.as_mut() {
                let grad_raw =
                    model
                        .batchnorm
                        .backward(&x_raw, &grad_x, &mut g.bn_mean, &mut g.bn_log_std);
                self.table
                    .scatter_input_grad(&seq.key, &grad_raw, &mut g.table);
            }
            out.edge.push(edge);
            out.integral.push(integral);
            out.event.push(event);
        }
        Ok(out)
    }
}

/// Per-sequence results and, optionally, the flat gradient.
pub(crate) struct Evaluation {
    pub terms: ElboTerms,
    pub per_sequence: Vec<(f64, f64, f64)>,
    pub gradient: Option<Vec<f64>>,
}

pub(crate) fn evaluate(
    model: &ModelState,
    seqs: &[&EventSequence],
    noise: &[InteractionNoise],
    mc: &McSettings,
    scale: f64,
    with_grad: bool,
) -> Result<Evaluation> {
    if seqs.len() != noise.len() {
        return Err(NeshError::invalid("noise does not match the batch"));
    }
    let table = model.table();
    let cache = model.gp.cache()?;
    let with_edge = matches!(model.embeddings, Embeddings::Sticks(_));
    let pass = Pass {
        model,
        table: &table,
        cache: &cache,
        mc,
        scale,
        with_edge,
        with_grad,
    };
    let items: Vec<(&EventSequence, &InteractionNoise)> = seqs.iter().copied().zip(noise).collect();
    let chunks = par::map_chunks(&items, CHUNK, |c| pass.run(c));

    let mut per_sequence = Vec::with_capacity(seqs.len());
    let mut grad: Option<ChunkGrad> = None;
    for chunk in chunks {
        let chunk = chunk?;
        for i in 0..chunk.edge.len() {
            per_sequence.push((chunk.edge[i], chunk.integral[i], chunk.event[i]));
        }
        if let Some(g) = chunk.grad {
            match grad.as_mut() {
                None => grad = Some(g),
                Some(total) => {
                    total.acc.merge(&g.acc);
                    for (a, b) in total.table.iter_mut().zip(&g.table) {
                        a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                    }
                    total
                        .bn_mean
                        .iter_mut()
                        .zip(&g.bn_mean)
                        .for_each(|(x, y)| *x += y);
                    total
                        .bn_log_std
                        .iter_mut()
                        .zip(&g.bn_log_std)
                        .for_each(|(x, y)| *x += y);
                }
            }
        }
    }

    let embedding_prior = match &model.embeddings {
        Embeddings::Sticks(p) => p.log_prior(),
        Embeddings::Gaussian(t) => t
            .log_weights
            .iter()
            .flatten()
            .map(|u| -0.5 * u * u - 0.5 * (2.0 * std::f64::consts::PI).ln())
            .sum(),
    };
    let sum = |f: fn(&(f64, f64, f64)) -> f64| per_sequence.iter().map(f).sum::<f64>();
    let terms = ElboTerms {
        scale,
        kl: cache.kl(),
        embedding_prior,
        edge: sum(|s| s.0),
        integral: sum(|s| s.1),
        event: sum(|s| s.2),
    };

    let gradient = if with_grad {
        let dim = model.gp.input_dim();
        let g = grad.unwrap_or_else(|| ChunkGrad {
            acc: PointAccumulator::new(model.gp.num_inducing(), dim),
            table: table.zeros_like(),
            bn_mean: vec![0.0; dim - 1],
            bn_log_std: vec![0.0; dim - 1],
        });
        let emb = match &model.embeddings {
            Embeddings::Sticks(p) => {
                let mut e = embedding_table_backward(p, &g.table);
                p.log_prior_grad(&mut e);
                e
            }
            Embeddings::Gaussian(t) => g
                .table
                .iter()
                .zip(&t.log_weights)
                .map(|(gr, u)| gr.iter().zip(u).map(|(a, b)| a - b).collect())
                .collect(),
        };
        let gp = cache.backward(&model.gp, g.acc, 1.0);
        let mut flat = Vec::with_capacity(model.num_params());
        for block in &emb {
            flat.extend_from_slice(block);
        }
        flat.extend_from_slice(&g.bn_mean);
        flat.extend_from_slice(&g.bn_log_std);
        let (h, d) = gp.inducing.shape();
        for i in 0..h {
            for j in 0..d {
                flat.push(gp.inducing[(i, j)]);
            }
        }
        flat.extend(gp.mean.iter());
        for i in 0..h {
            for j in 0..=i {
                flat.push(gp.factor_raw[(i, j)]);
            }
        }
        flat.extend_from_slice(&gp.log_lengthscales);
        flat.push(gp.log_var_embed);
        flat.push(gp.log_var_time);
        Some(flat)
    } else {
        None
    };
    Ok(Evaluation {
        terms,
        per_sequence,
        gradient,
    })
}

fn batch_refs<'a>(ds: &'a EventDataset, batch: &[usize]) -> Result<Vec<&'a EventSequence>> {
    batch
        .iter()
        .map(|&i| {
            ds.sequences
                .get(i)
                .ok_or_else(|| NeshError::invalid(format!("batch index {i} out of range")))
        })
        .collect()
}

fn default_scale(ds: &EventDataset, batch: &[usize]) -> Result<f64> {
    if batch.is_empty() {
        return Err(NeshError::invalid("empty batch"));
    }
    Ok(ds.num_sequences() as f64 / batch.len() as f64)
}

/// Separately computed terms of the estimate for `batch` (indices into
/// `ds.sequences`) with scale `N / B`.
pub fn elbo_terms(
    model: &ModelState,
    ds: &EventDataset,
    batch: &[usize],
    noise: &[InteractionNoise],
    mc: &McSettings,
) -> Result<ElboTerms> {
    let seqs = batch_refs(ds, batch)?;
    Ok(evaluate(model, &seqs, noise, mc, default_scale(ds, batch)?, false)?.terms)
}

pub fn elbo_estimate(
    model: &ModelState,
    ds: &EventDataset,
    batch: &[usize],
    noise: &[InteractionNoise],
    mc: &McSettings,
) -> Result<f64> {
    Ok(elbo_terms(model, ds, batch, noise, mc)?.total())
}

/// Exact gradient of the estimate at fixed noise, in [`ModelState::pack`]
/// order.
pub fn elbo_gradient(
    model: &ModelState,
    ds: &EventDataset,
    batch: &[usize],
    noise: &[InteractionNoise],
    mc: &McSettings,
) -> Result<(ElboTerms, Vec<f64>)> {
    elbo_gradient_with_scale(model, ds, batch, noise, mc, default_scale(ds, batch)?)
}

/// As [`elbo_gradient`] with an explicit weight on per-interaction terms.
pub fn elbo_gradient_with_scale(
    model: &ModelState,
    ds: &EventDataset,
    batch: &[usize],
    noise: &[InteractionNoise],
    mc: &McSettings,
    scale: f64,
) -> Result<(ElboTerms, Vec<f64>)> {
    let seqs = batch_refs(ds, batch)?;
    let ev = evaluate(model, &seqs, noise, mc, scale, true)?;
    Ok((ev.terms, ev.gradient.expect("gradient requested")))
}
