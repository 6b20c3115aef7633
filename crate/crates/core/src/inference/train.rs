use nalgebra::DMatrix;
use rand::seq::{index, SliceRandom};
use rand_distr::{Distribution, StandardNormal};

use crate::data::{EventDataset, EventSequence, NodeMapping};
use crate::embeddings::{build_embedding_table, BatchNormState, StickParams};
use crate::error::{NeshError, Result};
use crate::gp::{KernelParams, SvgpState};
use crate::rng::{derive_seed, domain, stream};

use super::elbo::{draw_noise, evaluate};
use super::{adam_step, AdamState, Embeddings, ModelState, PriorMode, TrainConfig};

/// ELBO estimates recorded during training.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    /// Mean step estimate per completed epoch.
    pub epoch_elbo: Vec<f64>,
    pub step_elbo: Vec<f64>,
    /// Steps whose gradient had non-finite entries.
    pub rejected_steps: u64,
}

/// A trained (or initialized) model with everything needed to resume,
/// evaluate or export it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub model: ModelState,
    pub adam: AdamState,
    pub history: TrainHistory,
    pub mapping: NodeMapping,
    /// Internal ids that occur in at least one training sequence, per mode.
    pub active: Vec<Vec<usize>>,
    /// Raw time of model time 0.
    pub time_offset: f64,
}

impl Checkpoint {
    pub fn k(&self) -> usize {
        self.model.mode_sizes().len()
    }

    pub fn is_active(&self, mode: usize, internal: usize) -> bool {
        self.active[mode].binary_search(&internal).is_ok()
    }
}

/// Result of [`train`]. On a numerical failure mid-run, `checkpoint` holds
/// the last state whose estimate could be evaluated.
#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub failure: Option<NeshError>,
}

fn shuffled(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream(
        derive_seed(seed, domain::SHUFFLE),
        epoch as u64,
    ));
    idx
}

fn active_nodes(ds: &EventDataset) -> Vec<Vec<usize>> {
    let mut seen: Vec<Vec<bool>> = ds.mode_sizes.iter().map(|&d| vec![false; d]).collect();
    for seq in &ds.sequences {
        for (k, &j) in seq.key.0.iter().enumerate() {
            seen[k][j] = true;
        }
    }
    seen.into_iter()
        .map(|s| {
            s.iter()
                .enumerate()
                .filter(|(_, &a)| a)
                .map(|(j, _)| j)
                .collect()
        })
        .collect()
}

/// Initial state: embeddings from the prior-side init, batch norm from all
/// training inputs, inducing inputs at a random subset of training event
/// points, `q(b)` with the prior's covariance and a constant mean, and all
/// kernel parameters at 1.
pub fn initialize(ds: &EventDataset, cfg: &TrainConfig) -> Result<Checkpoint> {
    cfg.validate()?;
    if ds.num_sequences() == 0 {
        return Err(NeshError::NoEvents);
    }
    let mut rng = stream(derive_seed(cfg.seed, domain::INIT), 0);
    let stick = StickParams::init(cfg.alpha, cfg.rank, &ds.mode_sizes, &mut rng)?;
    let embeddings = match cfg.prior {
        PriorMode::Nesh => Embeddings::Sticks(stick),
        PriorMode::Gaussian => {
            let mut t = build_embedding_table(&stick);
            for x in t.log_weights.iter_mut().flatten() {
                *x = StandardNormal.sample(&mut rng);
            }
            Embeddings::Gaussian(t)
        }
    };
    let dim = ds.k * cfg.rank + 1;
    let mut model = ModelState {
        horizon: ds.horizon,
        embeddings,
        batchnorm: BatchNormState::identity(dim - 1),
        gp: SvgpState {
            inducing: DMatrix::zeros(0, dim),
            mean: Default::default(),
            factor_raw: DMatrix::zeros(0, 0),
            kernel: KernelParams::unit(dim),
        },
    };
    let table = model.table();

    // Statistics over every training sequence: a small first batch often
    // repeats one node per mode and leaves near-zero scales.
    let first: Vec<Vec<f64>> = ds
        .sequences
        .iter()
        .map(|s| table.gp_input(&s.key))
        .collect();
    model.batchnorm = BatchNormState::from_inputs(&first, cfg.batchnorm_eps);

    let events: Vec<(usize, f64)> = ds
        .sequences
        .iter()
        .enumerate()
        .flat_map(|(i, s)| s.timestamps.iter().map(move |&t| (i, t)))
        .collect();
    let h = cfg.inducing.min(events.len());
    let mut picks = index::sample(&mut rng, events.len(), h).into_vec();
    picks.sort_unstable();
    let mut z = DMatrix::zeros(h, dim);
    for (row, &e) in picks.iter().enumerate() {
        let (i, t) = events[e];
        let x = model.embedding_input(&table, &ds.sequences[i].key)?;
        for (d, v) in model.point(&x, t).into_iter().enumerate() {
            z[(row, d)] = v;
        }
    }
    let mut kernel = KernelParams::unit(dim);
    kernel.jitter = cfg.jitter;
    model.gp = SvgpState::at_prior(z, kernel)?;
    // A zero mean sits on a flat saddle of the square link; start from the
    // root of the pooled homogeneous rate instead.
    let rate = events.len() as f64 / (ds.num_sequences() as f64 * ds.horizon);
    model.gp.mean.fill(rate.sqrt());

    Ok(Checkpoint {
        config: cfg.clone(),
        adam: AdamState::new(model.num_params()),
        model,
        history: TrainHistory::default(),
        mapping: ds.mapping.clone(),
        active: active_nodes(ds),
        time_offset: ds.time_offset,
    })
}

/// Minibatch Adam ascent on the ELBO for `cfg.epochs` epochs.
pub fn train(ds: &EventDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_progress(ds, cfg, |_, _| {})
}

/// As [`train`], calling `progress(epoch, mean_elbo)` after every epoch.
pub fn train_with_progress<F: FnMut(usize, f64)>(
    ds: &EventDataset,
    cfg: &TrainConfig,
    mut progress: F,
) -> Result<TrainOutcome> {
    let mut ck = initialize(ds, cfg)?;
    let mc = cfg.mc();
    let n = ds.num_sequences();
    let mut step: u64 = 0;
    for epoch in 0..cfg.epochs {
        let order = shuffled(n, cfg.seed, epoch);
        let mut sum = 0.0;
        let mut count = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let mut rng = stream(derive_seed(cfg.seed, domain::STEP), step);
            step += 1;
            let seqs: Vec<&EventSequence> = batch.iter().map(|&i| &ds.sequences[i]).collect();
            let noise = draw_noise(&seqs, ck.model.horizon, &mc, &mut rng);
            let scale = n as f64 / batch.len() as f64;
            let ev = match evaluate(&ck.model, &seqs, &noise, &mc, scale, true) {
                Ok(ev) => ev,
                Err(e) => {
                    return Ok(TrainOutcome {
                        checkpoint: ck,
                        failure: Some(e),
                    })
                }
            };
            let elbo = ev.terms.total();
            let grad = ev.gradient.expect("gradient requested");
            let mut theta = ck.model.pack();
            let before = (ck.model.clone(), ck.adam.clone());
            match adam_step(&mut theta, &grad, &mut ck.adam, cfg.learning_rate) {
                Ok(()) => {
                    ck.model.unpack(&theta)?;
                    // the new state must still admit a factorization
                    if let Err(e) = ck.model.gp.cache() {
                        ck.model = before.0;
                        ck.adam = before.1;
                        return Ok(TrainOutcome {
                            checkpoint: ck,
                            failure: Some(e),
                        });
                    }
                }
                Err(NeshError::Numerical { .. }) => ck.history.rejected_steps += 1,
                Err(e) => return Err(e),
            }
            if elbo.is_finite() {
                sum += elbo;
                count += 1;
            }
            ck.history.step_elbo.push(elbo);
        }
        let mean = if count > 0 {
            sum / count as f64
        } else {
            f64::NAN
        };
        ck.history.epoch_elbo.push(mean);
        progress(epoch, mean);
    }
    Ok(TrainOutcome {
        checkpoint: ck,
        failure: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::checkpoint_to_bytes;
    use crate::inference::model::tests::tiny_dataset;

    fn small_config(prior: PriorMode) -> TrainConfig {
        TrainConfig {
            rank: 2,
            inducing: 6,
            batch_size: 2,
            epochs: 3,
            learning_rate: 1e-2,
            mc_samples: 2,
            time_samples: 3,
            seed: 9,
            prior,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let ds = tiny_dataset();
        let cfg = TrainConfig {
            epochs: 0,
            ..small_config(PriorMode::Nesh)
        };
        let out = train(&ds, &cfg).unwrap();
        assert!(out.failure.is_none());
        assert_eq!(out.checkpoint, initialize(&ds, &cfg).unwrap());
    }

    #[test]
    fn initialization_matches_contract() {
        let ds = tiny_dataset();
        let ck = initialize(&ds, &small_config(PriorMode::Nesh)).unwrap();
        let gp = &ck.model.gp;
        assert_eq!(gp.num_inducing(), 6);
        // mean at the root of the pooled rate, covariance at the prior's
        let root = (ds.num_events() as f64 / (ds.num_sequences() as f64 * ds.horizon)).sqrt();
        assert!(gp.mean.iter().all(|&m| m == root));
        let at_prior = SvgpState::at_prior(gp.inducing.clone(), gp.kernel.clone()).unwrap();
        assert_eq!(gp.factor_raw, at_prior.factor_raw);
        // batch norm standardizes the embedding inputs of all sequences
        let table = ck.model.table();
        let xs: Vec<Vec<f64>> = ds
            .sequences
            .iter()
            .map(|s| ck.model.embedding_input(&table, &s.key).unwrap())
            .collect();
        for d in 0..xs[0].len() {
            let m = xs.iter().map(|x| x[d]).sum::<f64>() / xs.len() as f64;
            assert!(m.abs() < 1e-6, "dim {d} mean {m}");
        }
        assert!(gp.kernel.log_lengthscales.iter().all(|&l| l == 0.0));
        assert_eq!(
            (gp.kernel.log_var_embed, gp.kernel.log_var_time),
            (0.0, 0.0)
        );
        // inducing count is capped at the number of events
        let cfg = TrainConfig {
            inducing: 500,
            ..small_config(PriorMode::Gaussian)
        };
        assert_eq!(initialize(&ds, &cfg).unwrap().model.gp.num_inducing(), 10);
        assert_eq!(ck.active, vec![vec![0, 1, 2], vec![0, 1, 2]]);
    }

    #[test]
    fn training_records_history_and_is_deterministic() {
        let ds = tiny_dataset();
        for prior in [PriorMode::Nesh, PriorMode::Gaussian] {
            let cfg = small_config(prior);
            let a = train(&ds, &cfg).unwrap();
            assert!(a.failure.is_none());
            let h = &a.checkpoint.history;
            assert_eq!(h.epoch_elbo.len(), 3);
            assert_eq!(h.step_elbo.len(), 9);
            assert!(h.epoch_elbo.iter().all(|e| e.is_finite()));
            assert_eq!(a.checkpoint.adam.t, 9);
            let b = train(&ds, &cfg).unwrap();
            assert_eq!(
                checkpoint_to_bytes(&a.checkpoint),
                checkpoint_to_bytes(&b.checkpoint)
            );
            assert_ne!(a.checkpoint.model, initialize(&ds, &cfg).unwrap().model);
        }
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn thread_count_does_not_change_results() {
        let ds = tiny_dataset();
        let cfg = small_config(PriorMode::Nesh);
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| checkpoint_to_bytes(&train(&ds, &cfg).unwrap().checkpoint))
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn invalid_config_is_rejected() {
        let ds = tiny_dataset();
        let cfg = TrainConfig {
            batch_size: 0,
            ..small_config(PriorMode::Nesh)
        };
        assert!(matches!(train(&ds, &cfg), Err(NeshError::Config(_))));
    }
}
