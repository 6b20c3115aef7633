//! `nesh` command-line tool.
//!
//! Every flag can also be set through an environment variable named
//! `NESH_<FLAG>` (upper case, dashes as underscores), e.g. `NESH_SEED` or
//! `NESH_TIME_SAMPLES`. Precedence is flag, then environment, then the
//! `--config` file, then the built-in default.
//!
//! Exit codes: 0 on success, 2 on a usage error, 1 on any runtime failure.
//! Failures print a single line `error: <kind>: <message>` to stderr.

mod filecfg;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use nesh::data::{
    dataset_stats, load_events, split_sequences, synth_from_model, write_events, write_mapping,
    GeneratorSpec,
};
use nesh::embeddings::write_embedding_csv;
use nesh::eval::{
    export_embeddings, project_modes, test_loglik, write_projection_csv, write_report_csv,
    KpcaKernel,
};
use nesh::inference::{
    load_checkpoint, save_checkpoint, train_with_progress, McSettings, PriorMode,
};
use nesh::procsim::{sweep, write_sweep_csv, SweepConfig, DEFAULT_TRUNCATION_TOL};
use nesh::rng::{derive_seed, domain, stream};
use nesh::NeshError;

use filecfg::{AlphaSpec, RunFile};

#[derive(Debug, Parser)]
#[command(
    name = "nesh",
    version,
    about = "Sparse hypergraph process simulation and event embeddings"
)]
struct Cli {
    /// Base random seed [default: 0, or the checkpoint's training seed for eval]
    #[arg(long, global = true, env = "NESH_SEED")]
    seed: Option<u64>,

    /// Worker threads [default: all available cores]
    #[arg(long, global = true, env = "NESH_THREADS")]
    threads: Option<usize>,

    /// TOML file with `seed`, `threads` and [simulate], [train], [eval], [project] tables
    #[arg(long, global = true, env = "NESH_CONFIG")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sweep the concentration parameter and write sparsity statistics as CSV
    Simulate(SimulateArgs),
    /// Train embeddings on an event file and write a checkpoint
    Train(TrainArgs),
    /// Score held-out sequences under a checkpoint
    Eval(EvalArgs),
    /// Export the learned embeddings of training nodes as CSV
    Embed(EmbedArgs),
    /// Kernel PCA projection of each mode's embeddings
    Project(ProjectArgs),
    /// Generate a synthetic event file from a generator spec
    Synth(SynthArgs),
    /// Print a summary of an event file
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Number of node types K [default: 3]
    #[arg(long, env = "NESH_K")]
    k: Option<usize>,
    /// Gamma-process components R [default: 1]
    #[arg(long, env = "NESH_R")]
    r: Option<usize>,
    /// Concentration grid `start:stop:count` (inclusive, linear) or a single value [default: 2:20:10]
    #[arg(long, env = "NESH_ALPHA")]
    alpha: Option<String>,
    /// Replicates per grid value [default: 200]
    #[arg(long, env = "NESH_REPS")]
    reps: Option<usize>,
    /// Stick truncation tolerance for R > 1 [default: 1e-8]
    #[arg(long, env = "NESH_TRUNCATION_TOL")]
    truncation_tol: Option<f64>,
    /// Output CSV path
    #[arg(long, env = "NESH_OUT")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Event CSV with header `mode_0,...,mode_{K-1},t`
    #[arg(long, env = "NESH_DATA")]
    data: PathBuf,
    /// Embedding rank R [default: 5]
    #[arg(long, env = "NESH_RANK")]
    rank: Option<usize>,
    /// Stick-breaking concentration [default: 1.0]
    #[arg(long, env = "NESH_ALPHA")]
    alpha: Option<f64>,
    /// Inducing points h, capped at the number of training events [default: 100]
    #[arg(long, env = "NESH_INDUCING")]
    inducing: Option<usize>,
    /// Interactions per minibatch [default: 100]
    #[arg(long, env = "NESH_BATCH")]
    batch: Option<usize>,
    /// Training epochs [default: 400]
    #[arg(long, env = "NESH_EPOCHS")]
    epochs: Option<usize>,
    /// Adam learning rate [default: 1e-3]
    #[arg(long, env = "NESH_LR")]
    lr: Option<f64>,
    /// Monte-Carlo samples per event S [default: 8]
    #[arg(long, env = "NESH_SAMPLES")]
    samples: Option<usize>,
    /// Time samples per interaction Q [default: 20]
    #[arg(long, env = "NESH_TIME_SAMPLES")]
    time_samples: Option<usize>,
    /// Embedding prior: nesh or gaussian [default: nesh]
    #[arg(long, env = "NESH_PRIOR")]
    prior: Option<PriorMode>,
    /// Guard added inside log(f^2) [default: 1e-10]
    #[arg(long, env = "NESH_LOG_GUARD")]
    log_guard: Option<f64>,
    /// Relative kernel jitter [default: 1e-6]
    #[arg(long, env = "NESH_JITTER")]
    jitter: Option<f64>,
    /// Fraction of sequences used for training; the rest go to --test-out [default: 0.8]
    #[arg(long, env = "NESH_TRAIN_FRACTION")]
    train_fraction: Option<f64>,
    /// Checkpoint output path
    #[arg(long, env = "NESH_OUT")]
    out: PathBuf,
    /// History CSV `epoch,elbo_mean` [default: <out>.history.csv]
    #[arg(long, env = "NESH_HISTORY")]
    history: Option<PathBuf>,
    /// Held-out event CSV, written when the train fraction is below 1 [default: <out>.test.csv]
    #[arg(long, env = "NESH_TEST_OUT")]
    test_out: Option<PathBuf>,
    /// Print the mean ELBO of every epoch to stderr
    #[arg(long, env = "NESH_VERBOSE")]
    verbose: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Checkpoint written by `train`
    #[arg(long, env = "NESH_CHECKPOINT")]
    checkpoint: PathBuf,
    /// Held-out event CSV
    #[arg(long, env = "NESH_DATA")]
    data: PathBuf,
    /// Monte-Carlo samples per event [default: the checkpoint's training value]
    #[arg(long, env = "NESH_SAMPLES")]
    samples: Option<usize>,
    /// Time samples per interaction [default: the checkpoint's training value]
    #[arg(long, env = "NESH_TIME_SAMPLES")]
    time_samples: Option<usize>,
    /// Report CSV output path
    #[arg(long, env = "NESH_OUT")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EmbedArgs {
    /// Checkpoint written by `train`
    #[arg(long, env = "NESH_CHECKPOINT")]
    checkpoint: PathBuf,
    /// Embedding CSV output path
    #[arg(long, env = "NESH_OUT")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ProjectArgs {
    /// Checkpoint written by `train`
    #[arg(long, env = "NESH_CHECKPOINT")]
    checkpoint: PathBuf,
    /// Output dimension [default: 2]
    #[arg(long, env = "NESH_DIM")]
    dim: Option<usize>,
    /// SE kernel lengthscale [default: 1.0]
    #[arg(long, env = "NESH_LENGTHSCALE")]
    lengthscale: Option<f64>,
    /// SE kernel variance [default: 1.0]
    #[arg(long, env = "NESH_VARIANCE")]
    variance: Option<f64>,
    /// Coordinates CSV output path
    #[arg(long, env = "NESH_OUT")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Generator spec (TOML)
    #[arg(long, env = "NESH_SPEC")]
    spec: PathBuf,
    /// Event CSV output path
    #[arg(long, env = "NESH_OUT")]
    out: PathBuf,
    /// Optional index-mapping CSV `mode,raw_id,internal_id`
    #[arg(long, env = "NESH_MAPPING")]
    mapping: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct StatsArgs {
    /// Event CSV
    #[arg(long, env = "NESH_DATA")]
    data: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ");
            eprintln!("error: usage: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::FAILURE
        }
    }
}

fn describe(e: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !msg.contains(&text) {
            if !msg.is_empty() {
                msg.push_str(": ");
            }
            msg.push_str(&text);
        }
    }
    let msg = msg.replace('\n', " ");
    match e.chain().find_map(|c| c.downcast_ref::<NeshError>()) {
        Some(n) => format!("{}: {msg}", n.kind()),
        None => format!("runtime: {msg}"),
    }
}

fn run(cli: Cli) -> Result<()> {
    let file = RunFile::load(cli.config.as_deref())?;
    nesh::par::configure_threads(cli.threads.or(file.threads));
    let seed = cli.seed.or(file.seed);
    match cli.command {
        Command::Simulate(a) => simulate(a, &file, seed),
        Command::Train(a) => train(a, file, seed),
        Command::Eval(a) => eval(a, &file, seed),
        Command::Embed(a) => embed(a),
        Command::Project(a) => project(a, &file),
        Command::Synth(a) => synth(a, seed),
        Command::Stats(a) => {
            let ds = load_events(&a.data)?;
            println!("{}", dataset_stats(&ds));
            Ok(())
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|source| {
        NeshError::Io {
            path: path.to_path_buf(),
            source,
        }
        .into()
    })
}

fn finish(mut w: BufWriter<File>, path: &Path, res: std::io::Result<()>) -> Result<()> {
    res.and_then(|_| w.flush()).map_err(|source| {
        NeshError::Io {
            path: path.to_path_buf(),
            source,
        }
        .into()
    })
}

/// Parses `start:stop:count` (inclusive, evenly spaced) or one number.
fn parse_alpha_grid(s: &str) -> Result<Vec<f64>> {
    let bad = || {
        NeshError::InvalidArgument(format!(
            "alpha grid `{s}` is not `start:stop:count` or a number"
        ))
    };
    let parts: Vec<&str> = s.split(':').map(str::trim).collect();
    match parts.as_slice() {
        [one] => Ok(vec![one.parse().map_err(|_| bad())?]),
        [a, b, n] => {
            let a: f64 = a.parse().map_err(|_| bad())?;
            let b: f64 = b.parse().map_err(|_| bad())?;
            let n: usize = n.parse().map_err(|_| bad())?;
            match n {
                0 => Err(bad().into()),
                1 => Ok(vec![a]),
                _ => Ok((0..n)
                    .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
                    .collect()),
            }
        }
        _ => Err(bad().into()),
    }
}

fn simulate(a: SimulateArgs, file: &RunFile, seed: Option<u64>) -> Result<()> {
    let sec = &file.simulate;
    let grid = match (a.alpha, &sec.alpha) {
        (Some(s), _) => parse_alpha_grid(&s)?,
        (None, Some(AlphaSpec::Range(s))) => parse_alpha_grid(s)?,
        (None, Some(AlphaSpec::List(v))) => v.clone(),
        (None, None) => parse_alpha_grid("2:20:10")?,
    };
    let k = a.k.or(sec.k).unwrap_or(3);
    let mut cfg = SweepConfig::new(
        k,
        a.r.or(sec.r).unwrap_or(1),
        grid,
        a.reps.or(sec.reps).unwrap_or(200),
        seed.unwrap_or(0),
    );
    cfg.truncation_tol = a
        .truncation_tol
        .or(sec.truncation_tol)
        .unwrap_or(DEFAULT_TRUNCATION_TOL);
    let rows = sweep(&cfg)?;
    let mut w = create(&a.out)?;
    let res = write_sweep_csv(&mut w, k, &rows);
    finish(w, &a.out, res)
}

fn train(a: TrainArgs, file: RunFile, seed: Option<u64>) -> Result<()> {
    let mut cfg = file.train.unwrap_or_default();
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {$(
            if let Some(v) = a.$flag { cfg.$field = v; }
        )*};
    }
    set!(rank => rank, alpha => alpha, inducing => inducing, batch => batch_size, epochs => epochs,
         lr => learning_rate, samples => mc_samples, time_samples => time_samples, prior => prior,
         log_guard => log_guard, jitter => jitter, train_fraction => train_fraction);
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;

    let ds = load_events(&a.data)?;
    let train_ds = if cfg.train_fraction < 1.0 {
        let (tr, te) = split_sequences(&ds, cfg.train_fraction, cfg.seed)?;
        let test_path = a
            .test_out
            .clone()
            .unwrap_or_else(|| suffixed(&a.out, ".test.csv"));
        write_events(&test_path, &te)?;
        tr
    } else {
        ds
    };

    let verbose = a.verbose;
    let outcome = train_with_progress(&train_ds, &cfg, |epoch, mean| {
        if verbose {
            eprintln!("epoch {} elbo_mean {mean}", epoch + 1);
        }
    })?;
    let ck = &outcome.checkpoint;
    save_checkpoint(&a.out, ck)?;
    let history = a
        .history
        .unwrap_or_else(|| suffixed(&a.out, ".history.csv"));
    let mut w = create(&history)?;
    let res = (|| {
        writeln!(w, "epoch,elbo_mean")?;
        for (i, e) in ck.history.epoch_elbo.iter().enumerate() {
            writeln!(w, "{},{e}", i + 1)?;
        }
        Ok(())
    })();
    finish(w, &history, res)?;
    match outcome.failure {
        Some(e) => Err(anyhow!(e).context(format!(
            "training stopped after {} epochs; last good state saved to {}",
            ck.history.epoch_elbo.len(),
            a.out.display()
        ))),
        None => Ok(()),
    }
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn eval(a: EvalArgs, file: &RunFile, seed: Option<u64>) -> Result<()> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let test = load_events(&a.data)?;
    let base = ck.config.mc();
    let mc = McSettings {
        samples: a.samples.or(file.eval.samples).unwrap_or(base.samples),
        time_samples: a
            .time_samples
            .or(file.eval.time_samples)
            .unwrap_or(base.time_samples),
        log_guard: base.log_guard,
    };
    let report = test_loglik(&ck, &test, &mc, seed.unwrap_or(ck.config.seed))?;
    let mut w = create(&a.out)?;
    let res = write_report_csv(&mut w, &report);
    finish(w, &a.out, res)
}

fn embed(a: EmbedArgs) -> Result<()> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let rows = export_embeddings(&ck);
    let mut w = create(&a.out)?;
    let res = write_embedding_csv(&mut w, ck.model.rank(), &rows);
    finish(w, &a.out, res)
}

fn project(a: ProjectArgs, file: &RunFile) -> Result<()> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let sec = &file.project;
    let dim = a.dim.or(sec.dim).unwrap_or(2);
    let kernel = KpcaKernel {
        lengthscale: a.lengthscale.or(sec.lengthscale).unwrap_or(1.0),
        variance: a.variance.or(sec.variance).unwrap_or(1.0),
    };
    let rows = project_modes(&ck, dim, &kernel)?;
    let mut w = create(&a.out)?;
    let res = write_projection_csv(&mut w, dim, &rows);
    finish(w, &a.out, res)
}

fn synth(a: SynthArgs, seed: Option<u64>) -> Result<()> {
    let text = std::fs::read_to_string(&a.spec)
        .map_err(|source| NeshError::Io {
            path: a.spec.clone(),
            source,
        })
        .context("reading generator spec")?;
    let spec = GeneratorSpec::from_toml(&text)?;
    let mut rng = stream(derive_seed(seed.unwrap_or(0), domain::SYNTH), 0);
    let ds = synth_from_model(&spec, &mut rng)?;
    write_events(&a.out, &ds)?;
    if let Some(m) = &a.mapping {
        write_mapping(m, &ds.mapping)?;
    }
    Ok(())
}
