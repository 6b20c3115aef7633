//! Acceptance criteria 1-10. Runs without the libtest harness so the
//! PASS/FAIL lines always reach stdout:
//!
//! ```text
//! cargo test --release -p nesh --test acceptance            # all criteria
//! cargo test --release -p nesh --test acceptance -- 7 9     # a subset
//! ```
//!
//! The process exits nonzero if any hard criterion fails. Criterion 8 is
//! soft and only reported.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use nesh::data::{
    split_sequences, synth_from_model, EventDataset, EventSequence, GeneratorSpec, InteractionKey,
    RateFamily,
};
use nesh::embeddings::{build_embedding_table, BatchNormState, StickParams};
use nesh::eval::{homogeneous_loglik, test_loglik};
use nesh::gp::{gram_matrix, kernel_matrix, kl_to_prior, q_marginal, KernelParams, SvgpState};
use nesh::inference::{
    checkpoint_from_bytes, checkpoint_to_bytes, draw_noise, elbo_estimate, elbo_gradient,
    event_from_moments, load_checkpoint, save_checkpoint, train, Embeddings, InteractionNoise,
    McSettings, ModelState, PriorMode, TrainConfig,
};
use nesh::procsim::{sample_hypergraph_crp, sample_hypergraph_stick, sweep, SweepConfig};
use nesh::rng::stream;
use rand::Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let (ma, _) = mean_se(&ra);
    let (mb, _) = mean_se(&rb);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn c1_sparsity_sweep() -> Outcome {
    let start = Instant::now();
    let grid: Vec<f64> = (1..=10).map(|i| 2.0 * i as f64).collect();
    let rows = match sweep(&SweepConfig::new(3, 1, grid.clone(), 200, 7)) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("sweep failed: {e}")),
    };
    let elapsed = start.elapsed();
    let mut violations = Vec::new();
    for r in rows.iter().filter(|r| r.alpha >= 4.0) {
        if !(r.lower <= r.ratio_mean && r.ratio_mean <= r.upper) {
            violations.push(format!(
                "alpha={} ratio={:.4e} not in [{:.4e}, {:.4e}]",
                r.alpha, r.ratio_mean, r.lower, r.upper
            ));
        }
    }
    let means: Vec<f64> = rows.iter().map(|r| r.ratio_mean).collect();
    let rho = spearman(&grid, &means);
    let pass = violations.is_empty() && rho <= -0.9 && elapsed < Duration::from_secs(300);
    outcome(
        pass,
        format!(
            "spearman={rho:.3}, bound violations={:?}, {:.1}s",
            violations,
            elapsed.as_secs_f64()
        ),
    )
}

fn c2_edge_count_moment() -> Outcome {
    let mut rng = stream(2024, 0);
    let counts: Vec<f64> = (0..2000)
        .map(|_| sample_hypergraph_crp(3, 2.0, &mut rng).unwrap().raw_count as f64)
        .collect();
    let (m, se) = mean_se(&counts);
    let z = (m - 8.0) / se;
    outcome(z.abs() <= 4.0, format!("mean={m:.3}, se={se:.3}, z={z:.2}"))
}

fn c3_sampler_cross_check() -> Outcome {
    let reps = 2000;
    let mut rc = stream(31, 0);
    let mut rs = stream(31, 1);
    let crp: Vec<_> = (0..reps)
        .map(|_| sample_hypergraph_crp(2, 3.0, &mut rc).unwrap())
        .collect();
    let stick: Vec<_> = (0..reps)
        .map(|_| sample_hypergraph_stick(2, 1, 3.0, 1e-8, &mut rs).unwrap())
        .collect();
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    let stats: [(&str, Box<dyn Fn(&nesh::procsim::SampledHypergraph) -> f64>); 3] = [
        ("distinct", Box::new(|g| g.distinct_count as f64)),
        ("D1", Box::new(|g| g.active_nodes[0] as f64)),
        ("D2", Box::new(|g| g.active_nodes[1] as f64)),
    ];
    for (name, f) in stats.iter() {
        let a: Vec<f64> = crp.iter().map(f).collect();
        let b: Vec<f64> = stick.iter().map(f).collect();
        let (ma, sa) = mean_se(&a);
        let (mb, sb) = mean_se(&b);
        let z = (ma - mb) / (sa * sa + sb * sb).sqrt();
        worst = worst.max(z.abs());
        parts.push(format!("{name}: {ma:.3} vs {mb:.3} (z={z:.2})"));
    }
    outcome(worst <= 3.0, parts.join(", "))
}

fn random_svgp(h: usize, dim: usize, seed: u64) -> SvgpState {
    let mut rng = stream(seed, 0);
    let kernel = KernelParams {
        log_lengthscales: (0..dim).map(|_| rng.random::<f64>() * 0.6 - 0.1).collect(),
        log_var_embed: 0.2,
        log_var_time: -0.3,
        jitter: 1e-6,
    };
    let z = DMatrix::from_fn(h, dim, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    let mut s = SvgpState::at_prior(z, kernel).unwrap();
    s.mean = DVector::from_fn(h, |_, _| rng.random::<f64>() - 0.5);
    let mut l = DMatrix::zeros(h, h);
    for i in 0..h {
        for j in 0..i {
            l[(i, j)] = 0.3 * (rng.random::<f64>() - 0.5);
        }
        l[(i, i)] = 0.3 + 0.5 * rng.random::<f64>();
    }
    s.set_factor(&l);
    s
}

fn gauss2_logpdf(x: [f64; 2], mu: [f64; 2], cov: &DMatrix<f64>) -> f64 {
    let det = cov[(0, 0)] * cov[(1, 1)] - cov[(0, 1)] * cov[(1, 0)];
    let d = [x[0] - mu[0], x[1] - mu[1]];
    let q = (cov[(1, 1)] * d[0] * d[0] - 2.0 * cov[(0, 1)] * d[0] * d[1]
        + cov[(0, 0)] * d[1] * d[1])
        / det;
    -0.5 * q - (2.0 * std::f64::consts::PI).ln() - 0.5 * det.ln()
}

fn c4_gp_correctness() -> Outcome {
    // dense conditional oracle, h = 4, three query points
    let s = random_svgp(4, 3, 41);
    let mut rng = stream(42, 0);
    let x = DMatrix::from_fn(3, 3, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    let kzz = gram_matrix(&s.inducing, &s.kernel).unwrap();
    let kxz = kernel_matrix(&x, &s.inducing, &s.kernel).unwrap();
    let kxx = kernel_matrix(&x, &x, &s.kernel).unwrap();
    let a = &kxz * kzz.clone().try_inverse().unwrap();
    let l = s.factor();
    let cov = &kxx - &a * kxz.transpose() + &a * (&l * l.transpose()) * a.transpose();
    let mean = &a * &s.mean;
    let m = q_marginal(&x, &s).unwrap();
    let dense_err = (0..3)
        .map(|q| {
            (m.mean[q] - mean[q])
                .abs()
                .max((m.var[q] - cov[(q, q)]).abs())
        })
        .fold(0.0, f64::max);

    // q = prior
    let prior = SvgpState::at_prior(s.inducing.clone(), s.kernel.clone()).unwrap();
    let kl_prior = prior.cache().unwrap().kl().abs();

    // 2-D quadrature
    let mu = DVector::from_vec(vec![0.3, -0.2]);
    let l2 = DMatrix::from_row_slice(2, 2, &[0.8, 0.0, 0.25, 0.6]);
    let k2 = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 1.2]);
    let s2 = &l2 * l2.transpose();
    let kl = kl_to_prior(&mu, &l2, &k2).unwrap();
    let (n, half) = (800, 8.0);
    let sd = [s2[(0, 0)].sqrt(), s2[(1, 1)].sqrt()];
    let (h0, h1) = (2.0 * half * sd[0] / n as f64, 2.0 * half * sd[1] / n as f64);
    let mut quad = 0.0;
    for i in 0..n {
        let x0 = mu[0] - half * sd[0] + (i as f64 + 0.5) * h0;
        for j in 0..n {
            let x1 = mu[1] - half * sd[1] + (j as f64 + 0.5) * h1;
            let lq = gauss2_logpdf([x0, x1], [mu[0], mu[1]], &s2);
            let lp = gauss2_logpdf([x0, x1], [0.0, 0.0], &k2);
            quad += lq.exp() * (lq - lp);
        }
    }
    quad *= h0 * h1;
    let quad_err = (kl - quad).abs();
    outcome(
        dense_err < 1e-8 && kl_prior < 1e-8 && quad_err < 1e-6,
        format!(
            "dense err={dense_err:.2e}, KL at prior={kl_prior:.2e}, quadrature err={quad_err:.2e}"
        ),
    )
}

/// K=2, D=(3,3), R=2, h=5, T=2 with every parameter moved off its default.
fn tiny_model(prior: PriorMode, seed: u64) -> ModelState {
    let mut rng = stream(seed, 0);
    let sizes = vec![3, 3];
    let rank = 2;
    let embeddings = match prior {
        PriorMode::Nesh => {
            let mut p = StickParams::init(1.5, rank, &sizes, &mut rng).unwrap();
            for x in p.logits.iter_mut().flatten() {
                *x = rng.random::<f64>() * 2.0 - 1.0;
            }
            Embeddings::Sticks(p)
        }
        PriorMode::Gaussian => {
            let mut t =
                build_embedding_table(&StickParams::init(1.0, rank, &sizes, &mut rng).unwrap());
            for x in t.log_weights.iter_mut().flatten() {
                *x = rng.random::<f64>() * 2.0 - 1.0;
            }
            Embeddings::Gaussian(t)
        }
    };
    let dim = 2 * rank;
    let batchnorm = BatchNormState {
        mean: (0..dim).map(|_| rng.random::<f64>() - 0.5).collect(),
        log_std: (0..dim)
            .map(|_| 0.4 * (rng.random::<f64>() - 0.5))
            .collect(),
        eps: 1e-5,
    };
    let h = 5;
    let kernel = KernelParams {
        log_lengthscales: (0..dim + 1)
            .map(|_| 0.3 * (rng.random::<f64>() - 0.5) + 0.3)
            .collect(),
        log_var_embed: 0.1,
        log_var_time: -0.2,
        jitter: 1e-6,
    };
    let z = DMatrix::from_fn(h, dim + 1, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    let mut gp = SvgpState::at_prior(z, kernel).unwrap();
    gp.mean = DVector::from_fn(h, |_, _| rng.random::<f64>() * 1.5 - 0.5);
    for i in 0..h {
        for j in 0..i {
            gp.factor_raw[(i, j)] = 0.2 * (rng.random::<f64>() - 0.5);
        }
        gp.factor_raw[(i, i)] = -0.8 + 0.3 * rng.random::<f64>();
    }
    ModelState {
        horizon: 2.0,
        embeddings,
        batchnorm,
        gp,
    }
}

/// 5 interactions, 10 events.
fn tiny_dataset() -> EventDataset {
    let keys = [[0, 0], [1, 2], [2, 1], [0, 2], [1, 1]];
    let times = [[0.1, 1.7], [0.4, 0.45], [1.2, 1.9], [0.05, 0.8], [1.0, 1.5]];
    let seqs = keys
        .iter()
        .zip(times)
        .map(|(k, t)| EventSequence {
            key: InteractionKey(k.to_vec()),
            timestamps: t.to_vec(),
        })
        .collect();
    EventDataset::new(2, vec![3, 3], seqs, 2.0).unwrap()
}

fn mc(s: usize, q: usize) -> McSettings {
    McSettings {
        samples: s,
        time_samples: q,
        log_guard: 1e-10,
    }
}

fn full_noise(ds: &EventDataset, m: &McSettings, seed: u64) -> Vec<InteractionNoise> {
    let seqs: Vec<&EventSequence> = ds.sequences.iter().collect();
    draw_noise(&seqs, ds.horizon, m, &mut stream(seed, 0))
}

fn c5_gradient_fidelity() -> Outcome {
    let ds = tiny_dataset();
    let m = mc(4, 4);
    let batch: Vec<usize> = (0..5).collect();
    let mut parts = Vec::new();
    let mut pass = true;
    for prior in [PriorMode::Nesh, PriorMode::Gaussian] {
        let model = tiny_model(prior, 11);
        let noise = full_noise(&ds, &m, 12);
        let (_, grad) = elbo_gradient(&model, &ds, &batch, &noise, &m).unwrap();
        let theta = model.pack();
        let step = 1e-4;
        let mut bad = 0;
        let mut worst_rel: f64 = 0.0;
        for i in 0..theta.len() {
            let eval = |delta: f64| {
                let mut mm = model.clone();
                let mut th = theta.clone();
                th[i] += delta;
                mm.unpack(&th).unwrap();
                elbo_estimate(&mm, &ds, &batch, &noise, &m).unwrap()
            };
            let fd = (eval(step) - eval(-step)) / (2.0 * step);
            let err = (grad[i] - fd).abs();
            let rel = err / fd.abs().max(1e-6);
            if !(err < 1e-6 || rel < 1e-3) {
                bad += 1;
            }
            if err >= 1e-6 {
                worst_rel = worst_rel.max(rel);
            }
        }
        pass &= bad == 0;
        parts.push(format!(
            "{prior}: {} coords, {bad} mismatches, worst rel={worst_rel:.1e}",
            theta.len()
        ));
    }
    outcome(pass, parts.join("; "))
}

/// Probabilists' Gauss-Hermite rule by Golub-Welsch.
fn gauss_hermite(n: usize) -> Vec<(f64, f64)> {
    let j = DMatrix::from_fn(n, n, |a, b| {
        if a + 1 == b || b + 1 == a {
            (a.max(b) as f64).sqrt()
        } else {
            0.0
        }
    });
    let eig = j.symmetric_eigen();
    (0..n)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect()
}

fn c6_estimator_consistency() -> Outcome {
    // analytic E[f^2] against 1e5 draws
    let (m, v) = (0.7f64, 0.3f64);
    let mut rng = stream(6, 0);
    let sq: Vec<f64> = (0..100_000)
        .map(|_| {
            let e: f64 = rng.sample(StandardNormal);
            (m + v.sqrt() * e).powi(2)
        })
        .collect();
    let (mc_mean, mc_se) = mean_se(&sq);
    let z_sq = (mc_mean - (m * m + v)) / mc_se;

    // MC event term against Gauss-Hermite
    let (em, ev) = (1.0f64, 0.25f64);
    let mut rng = stream(5, 0);
    let noise: Vec<f64> = (0..10_000).map(|_| rng.sample(StandardNormal)).collect();
    let vals: Vec<f64> = noise
        .iter()
        .map(|e| event_from_moments(em, ev, &[*e], 1e-10))
        .collect();
    let (ev_mean, ev_se) = mean_se(&vals);
    let exact: f64 = gauss_hermite(200)
        .into_iter()
        .map(|(z, w)| w * ((em + ev.sqrt() * z).powi(2) + 1e-10).ln())
        .sum();
    let z_gh = (ev_mean - exact) / ev_se;

    // disjoint minibatches with independent noise against the full batch
    let ds = tiny_dataset();
    let model = tiny_model(PriorMode::Nesh, 25);
    let settings = mc(2, 3);
    let all: Vec<usize> = (0..5).collect();
    let reps = 400;
    let mut full = Vec::with_capacity(reps);
    let mut split = Vec::with_capacity(reps);
    for r in 0..reps as u64 {
        let noise = full_noise(&ds, &settings, 1000 + r);
        full.push(elbo_estimate(&model, &ds, &all, &noise, &settings).unwrap());
        let avg = [vec![0, 1], vec![2, 3], vec![4]]
            .iter()
            .enumerate()
            .map(|(b, batch)| {
                let seqs: Vec<&EventSequence> = batch.iter().map(|&i| &ds.sequences[i]).collect();
                let nz = draw_noise(
                    &seqs,
                    ds.horizon,
                    &settings,
                    &mut stream(5000 + r, b as u64),
                );
                elbo_estimate(&model, &ds, batch, &nz, &settings).unwrap() * batch.len() as f64
                    / 5.0
            })
            .sum::<f64>();
        split.push(avg);
    }
    let (fm, fs) = mean_se(&full);
    let (sm, ss) = mean_se(&split);
    let z_batch = (fm - sm) / (fs * fs + ss * ss).sqrt();
    outcome(
        z_sq.abs() <= 4.0 && z_gh.abs() <= 4.0 && z_batch.abs() <= 4.0,
        format!("E[f^2] z={z_sq:.2}, Gauss-Hermite z={z_gh:.2}, disjoint batches z={z_batch:.2}"),
    )
}

/// About 50 interactions and 500 events whose rates vary in time.
fn recovery_spec(embed_lengthscale: f64) -> GeneratorSpec {
    GeneratorSpec {
        k: 2,
        mode_sizes: vec![15, 15],
        horizon: 10.0,
        keys: Vec::new(),
        lambda_max: None,
        rate: RateFamily::Model {
            alpha: 3.0,
            rank: 2,
            num_keys: 50,
            signal_std: 1.0,
            time_lengthscale: 2.0,
            embed_lengthscale,
            features: 64,
        },
    }
}

fn recovery_config(seed: u64, prior: PriorMode) -> TrainConfig {
    TrainConfig {
        rank: 2,
        alpha: 3.0,
        inducing: 30,
        batch_size: 4,
        epochs: 50,
        learning_rate: 1e-2,
        seed,
        prior,
        // Near-zero draws of f make the event-term gradient heavy tailed
        // under the default guard. Scoring still uses the default.
        log_guard: 1e-2,
        ..TrainConfig::default()
    }
}

/// First draw on stream `base + seed` with 400 to 600 events.
fn recovery_data(embed_lengthscale: f64, base: u64, seed: u64) -> EventDataset {
    let spec = recovery_spec(embed_lengthscale);
    (0..)
        .map(|attempt| synth_from_model(&spec, &mut stream(base + seed, attempt)).unwrap())
        .find(|ds| (400..=600).contains(&ds.num_events()))
        .unwrap()
}

/// Held-out model and baseline log-likelihoods over the scored sequences.
fn held_out(ds: &EventDataset, cfg: &TrainConfig) -> Result<(f64, f64, usize), String> {
    let (tr, te) = split_sequences(ds, 0.8, cfg.seed).map_err(|e| e.to_string())?;
    let out = train(&tr, cfg).map_err(|e| e.to_string())?;
    if let Some(e) = out.failure {
        return Err(format!("training failed: {e}"));
    }
    let mc = McSettings {
        log_guard: TrainConfig::default().log_guard,
        ..cfg.mc()
    };
    let report = test_loglik(&out.checkpoint, &te, &mc, cfg.seed).map_err(|e| e.to_string())?;
    let baseline: f64 = report
        .per_sequence
        .iter()
        .map(|s| homogeneous_loglik(te.sequences[s.index].count(), te.horizon))
        .sum();
    Ok((report.total, baseline, report.per_sequence.len()))
}

fn c7_end_to_end() -> Outcome {
    let start = Instant::now();
    let mut wins = 0;
    let mut parts = Vec::new();
    for seed in 0..5u64 {
        let ds = recovery_data(8.0, 700, seed);
        match held_out(&ds, &recovery_config(seed, PriorMode::Nesh)) {
            Ok((model, base, n)) => {
                if model > base {
                    wins += 1;
                }
                parts.push(format!(
                    "seed {seed}: m={} test n={n} model={model:.1} baseline={base:.1}",
                    ds.num_events()
                ));
            }
            Err(e) => parts.push(format!("seed {seed}: {e}")),
        }
    }
    let elapsed = start.elapsed();
    outcome(
        wins >= 4 && elapsed < Duration::from_secs(600),
        format!(
            "{wins}/5 wins, {:.1}s; {}",
            elapsed.as_secs_f64(),
            parts.join("; ")
        ),
    )
}

fn c8_ablation() -> Outcome {
    let mut nesh = Vec::new();
    let mut gauss = Vec::new();
    for seed in 0..5u64 {
        let ds = recovery_data(1.0, 800, seed);
        for (prior, acc) in [
            (PriorMode::Nesh, &mut nesh),
            (PriorMode::Gaussian, &mut gauss),
        ] {
            match held_out(&ds, &recovery_config(seed, prior)) {
                Ok((model, _, n)) => acc.push(model / n as f64),
                Err(e) => return outcome(false, format!("seed {seed} {prior}: {e}")),
            }
        }
    }
    let (mn, _) = mean_se(&nesh);
    let (mg, _) = mean_se(&gauss);
    outcome(
        mn >= mg,
        format!("mean per-sequence test LL nesh={mn:.3} gaussian={mg:.3}"),
    )
}

fn epoch_seconds(ds: &EventDataset, cfg: &TrainConfig, reps: usize) -> f64 {
    let mut times: Vec<f64> = (0..reps)
        .map(|_| {
            let t = Instant::now();
            let out = train(ds, cfg).unwrap();
            assert!(out.failure.is_none());
            t.elapsed().as_secs_f64() / cfg.epochs as f64
        })
        .collect();
    times.sort_by(f64::total_cmp);
    times[reps / 2]
}

fn c9_linear_cost() -> Outcome {
    let ds = synth_from_model(&recovery_spec(4.0), &mut stream(900, 0)).unwrap();
    let mut rng = stream(901, 0);
    let jitter = 0.01 * ds.horizon;
    let doubled: Vec<EventSequence> = ds
        .sequences
        .iter()
        .map(|s| {
            let mut ts = s.timestamps.clone();
            for &t in &s.timestamps {
                ts.push((t + jitter * (2.0 * rng.random::<f64>() - 1.0)).clamp(0.0, ds.horizon));
            }
            EventSequence {
                key: s.key.clone(),
                timestamps: ts,
            }
        })
        .collect();
    let big = EventDataset::new(ds.k, ds.mode_sizes.clone(), doubled, ds.horizon).unwrap();
    let cfg = TrainConfig {
        epochs: 5,
        ..recovery_config(0, PriorMode::Nesh)
    };
    // fixed h so both runs use the same inducing set size
    let _ = epoch_seconds(&ds, &cfg, 1);
    let base = epoch_seconds(&ds, &cfg, 5);
    let twice = epoch_seconds(&big, &cfg, 5);
    let ratio = twice / base;
    outcome(
        ratio <= 2.5,
        format!(
            "m={} -> {}, per-epoch {:.2}ms -> {:.2}ms, ratio={ratio:.2}",
            ds.num_events(),
            big.num_events(),
            base * 1e3,
            twice * 1e3
        ),
    )
}

fn c10_determinism() -> Outcome {
    let ds = synth_from_model(&recovery_spec(4.0), &mut stream(1000, 0)).unwrap();
    let cfg = TrainConfig {
        epochs: 5,
        ..recovery_config(3, PriorMode::Nesh)
    };
    let a = checkpoint_to_bytes(&train(&ds, &cfg).unwrap().checkpoint);
    let b = checkpoint_to_bytes(&train(&ds, &cfg).unwrap().checkpoint);
    let dir = tempfile::tempdir().unwrap();
    let p1 = dir.path().join("a.bin");
    let p2 = dir.path().join("b.bin");
    let ck = checkpoint_from_bytes(&a, &p1).unwrap();
    save_checkpoint(&p1, &ck).unwrap();
    let reloaded = load_checkpoint(&p1).unwrap();
    save_checkpoint(&p2, &reloaded).unwrap();
    let f1 = std::fs::read(&p1).unwrap();
    let f2 = std::fs::read(&p2).unwrap();
    let identical_runs = a == b;
    let roundtrip = f1 == f2 && f1 == a;
    outcome(
        identical_runs && roundtrip,
        format!("repeat runs identical={identical_runs}, save/load/save identical={roundtrip}, {} bytes", a.len()),
    )
}

fn main() {
    let selected: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let criteria: [(usize, &str, bool, fn() -> Outcome); 10] = [
        (1, "sparsity sweep and bounds", true, c1_sparsity_sweep),
        (2, "edge-count moment", true, c2_edge_count_moment),
        (3, "CRP vs stick sampler", true, c3_sampler_cross_check),
        (4, "GP marginals and KL", true, c4_gp_correctness),
        (
            5,
            "ELBO gradient vs finite differences",
            true,
            c5_gradient_fidelity,
        ),
        (6, "estimator consistency", true, c6_estimator_consistency),
        (
            7,
            "end-to-end recovery vs homogeneous baseline",
            true,
            c7_end_to_end,
        ),
        (8, "nesh vs gaussian prior (soft)", false, c8_ablation),
        (9, "per-epoch cost linear in events", true, c9_linear_cost),
        (10, "determinism and persistence", true, c10_determinism),
    ];
    let mut hard_failures = 0;
    for (id, name, hard, run) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let o = run();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        let soft = if hard { "" } else { " [soft]" };
        println!(
            "{tag} {id:>2} {name}{soft}: {} ({:.1}s)",
            o.detail,
            t.elapsed().as_secs_f64()
        );
        if hard && !o.pass {
            hard_failures += 1;
        }
    }
    if hard_failures > 0 {
        println!("{hard_failures} hard criteria failed");
        std::process::exit(1);
    }
}
