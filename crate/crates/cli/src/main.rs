//! `fat2thin`: dataset generation, training, evaluation and density dumps
//! for the treatment environment.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use fat2thin::dataset::OfflineDataset;
use fat2thin::env::{evaluate_policy, generate_dataset, InitialMean, TreatmentEnvConfig};
use fat2thin::harness::{density_grid, run_experiment, write_density_csv, Grid, Snapshot};
use fat2thin::trainer::{stream_rng, STREAM_EVAL};
use fat2thin::ExperimentConfig;

#[derive(Parser)]
#[command(name = "fat2thin", version, about = "Offline RL with sparse q-Gaussian policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Roll out the uniform logging policy and write an offline dataset.
    GenData(GenDataArgs),
    /// Train one configuration, optionally over several seeds.
    Train(TrainArgs),
    /// Score a saved policy on the environment.
    Eval(EvalArgs),
    /// Write proposal and actor densities over an action grid as CSV.
    DumpPolicy(DumpArgs),
}

#[derive(Args)]
struct EnvArgs {
    /// Standard deviation of the observation noise.
    #[arg(long, default_value_t = 0.05)]
    noise_scale: f64,
    #[arg(long, default_value_t = 24)]
    horizon: usize,
    /// Initial latent mean: zero or uniform.
    #[arg(long, default_value = "zero")]
    initial_mean: String,
}

impl EnvArgs {
    fn config(&self) -> Result<TreatmentEnvConfig> {
        let initial_mean = match self.initial_mean.as_str() {
            "zero" => InitialMean::Zero,
            "uniform" => InitialMean::Uniform,
            other => bail!("--initial-mean: expected zero or uniform, got {other:?}"),
        };
        let cfg = TreatmentEnvConfig {
            noise_scale: self.noise_scale,
            horizon: self.horizon,
            initial_mean,
            ..Default::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct GenDataArgs {
    /// Output file (JSON Lines).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 50)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    env: EnvArgs,
}

/// Flags mirroring the configuration keys; each overrides `--config`.
#[derive(Args, Default)]
struct ConfigFlags {
    #[arg(long)]
    algo: Option<String>,
    #[arg(long)]
    q_f: Option<String>,
    #[arg(long)]
    q_s: Option<String>,
    #[arg(long)]
    q_w: Option<String>,
    #[arg(long)]
    tau: Option<String>,
    #[arg(long)]
    w_max: Option<String>,
    #[arg(long)]
    expectile: Option<String>,
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long)]
    actor_lr: Option<String>,
    #[arg(long)]
    proposal_lr: Option<String>,
    #[arg(long)]
    critic_lr: Option<String>,
    #[arg(long)]
    polyak: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    iterations: Option<String>,
    #[arg(long)]
    eval_interval: Option<String>,
    #[arg(long)]
    eval_episodes: Option<String>,
    /// Comma-separated hidden layer sizes.
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    sigma_min: Option<String>,
    #[arg(long)]
    sigma_max: Option<String>,
    #[arg(long)]
    action_scale: Option<String>,
    /// detached or reparameterized.
    #[arg(long)]
    actor_gradient: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    out_dir: Option<String>,
    #[arg(long)]
    alpha_spot: Option<String>,
    #[arg(long)]
    rar_k: Option<String>,
    #[arg(long)]
    behavior_steps: Option<String>,
    #[arg(long)]
    behavior_lr: Option<String>,
}

impl ConfigFlags {
    fn pairs(&self) -> Vec<(&'static str, &Option<String>)> {
        vec![
            ("algo", &self.algo),
            ("q_f", &self.q_f),
            ("q_s", &self.q_s),
            ("q_w", &self.q_w),
            ("tau", &self.tau),
            ("w_max", &self.w_max),
            ("expectile", &self.expectile),
            ("gamma", &self.gamma),
            ("actor_lr", &self.actor_lr),
            ("proposal_lr", &self.proposal_lr),
            ("critic_lr", &self.critic_lr),
            ("polyak", &self.polyak),
            ("batch_size", &self.batch_size),
            ("iterations", &self.iterations),
            ("eval_interval", &self.eval_interval),
            ("eval_episodes", &self.eval_episodes),
            ("hidden", &self.hidden),
            ("sigma_min", &self.sigma_min),
            ("sigma_max", &self.sigma_max),
            ("action_scale", &self.action_scale),
            ("actor_gradient", &self.actor_gradient),
            ("seed", &self.seed),
            ("dataset", &self.dataset),
            ("out_dir", &self.out_dir),
            ("alpha_spot", &self.alpha_spot),
            ("rar_k", &self.rar_k),
            ("behavior_steps", &self.behavior_steps),
            ("behavior_lr", &self.behavior_lr),
        ]
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Flat key = value configuration file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated seeds; each run goes to `<out_dir>/seed_<n>`.
    #[arg(long, conflicts_with = "seed")]
    seeds: Option<String>,
    #[command(flatten)]
    flags: ConfigFlags,
}

#[derive(Args)]
struct EvalArgs {
    /// Snapshot directory (e.g. `<run>/final`) or a single policy file.
    #[arg(long)]
    snapshot: PathBuf,
    #[arg(long, default_value_t = 10)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    env: EnvArgs,
}

#[derive(Args)]
struct DumpArgs {
    /// Snapshot directory holding actor.bin and/or proposal.bin.
    #[arg(long)]
    snapshot: PathBuf,
    /// Comma-separated probe state; zeros when omitted.
    #[arg(long)]
    state: Option<String>,
    #[arg(long, allow_hyphen_values = true, default_value_t = -100.0)]
    lo: f64,
    #[arg(long, allow_hyphen_values = true, default_value_t = 100.0)]
    hi: f64,
    #[arg(long, default_value_t = 2001)]
    n: usize,
    /// Output CSV; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn gen_data(args: GenDataArgs) -> Result<()> {
    let cfg = args.env.config()?;
    let data = generate_dataset(&cfg, args.episodes, args.seed)?;
    data.save(&args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;
    let ts = data.transitions();
    let (amin, amax) = ts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| {
        (lo.min(t.a[0]), hi.max(t.a[0]))
    });
    let (rmin, rmax) = ts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| (lo.min(t.r), hi.max(t.r)));
    let timeouts = ts.iter().filter(|t| t.timeout).count();
    println!(
        "wrote {} transitions ({} episodes x {} steps, {} timeouts) seed={} actions=[{amin:.4}, {amax:.4}] rewards=[{rmin:.4}, {rmax:.4}] -> {}",
        data.len(),
        args.episodes,
        cfg.horizon,
        timeouts,
        args.seed,
        args.out.display()
    );
    Ok(())
}

fn load_dataset(path: &Path) -> Result<OfflineDataset> {
    OfflineDataset::load(path).with_context(|| format!("reading dataset {}", path.display()))
}

/// Returns whether every run finished without an abort.
fn train(args: TrainArgs) -> Result<bool> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    for (key, value) in args.flags.pairs() {
        if let Some(v) = value {
            cfg.set(key, v).with_context(|| format!("--{}", key.replace('_', "-")))?;
        }
    }
    cfg.validate()?;
    let dataset_path = cfg.dataset.clone().context("no dataset: pass --dataset or set it in --config")?;
    let seeds: Vec<u64> = match &args.seeds {
        Some(list) => list
            .split(',')
            .map(|s| s.trim().parse().with_context(|| format!("--seeds: bad seed {s:?}")))
            .collect::<Result<_>>()?,
        None => vec![cfg.seed],
    };
    let dataset = load_dataset(&dataset_path)?;
    let mut all_ok = true;
    for &seed in &seeds {
        let mut run = cfg.clone();
        run.seed = seed;
        if args.seeds.is_some() {
            run.out_dir = cfg.out_dir.as_ref().map(|d| d.join(format!("seed_{seed}")));
        }
        let outcome = run_experiment(&run, &dataset)?;
        let s = &outcome.summary;
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        println!(
            "algo={} seed={} iterations={} score={} std={} nonfinite_events={} actor_width={} proposal_width95={}{}",
            s.algo,
            s.seed,
            s.iterations_completed,
            fmt(s.final_eval_mean),
            fmt(s.final_eval_std),
            s.nonfinite_events,
            fmt(s.actor_support_width),
            fmt(s.proposal_interval_width),
            run.out_dir.as_ref().map_or(String::new(), |d| format!(" -> {}", d.display())),
        );
        if let Some(why) = &s.aborted {
            eprintln!("error: run aborted (seed {seed}): {why}");
            all_ok = false;
        }
    }
    Ok(all_ok)
}

fn eval(args: EvalArgs) -> Result<()> {
    let cfg = args.env.config()?;
    let policy = if args.snapshot.is_dir() {
        Snapshot::load(&args.snapshot)?.acting().clone()
    } else {
        fat2thin::QGaussianPolicy::load(&args.snapshot)
            .with_context(|| format!("reading {}", args.snapshot.display()))?
    };
    let mut rng = stream_rng(args.seed, STREAM_EVAL);
    let report = evaluate_policy(&policy, &cfg, args.episodes, &mut rng)?;
    println!("episodes={} mean={:.6} std={:.6}", args.episodes, report.mean, report.std);
    Ok(())
}

fn dump_policy(args: DumpArgs) -> Result<()> {
    let snap = Snapshot::load(&args.snapshot).with_context(|| format!("reading {}", args.snapshot.display()))?;
    let dim = snap.acting().state_dim();
    let state: Vec<f64> = match &args.state {
        Some(s) => s
            .split(',')
            .map(|v| v.trim().parse().with_context(|| format!("--state: bad value {v:?}")))
            .collect::<Result<_>>()?,
        None => vec![0.0; dim],
    };
    if state.len() != dim {
        bail!("--state has {} values, the policy expects {dim}", state.len());
    }
    let grid = Grid::new(args.lo, args.hi, args.n)?;
    let rows = density_grid(&snap, &state, &grid)?;
    match &args.out {
        Some(p) => write_density_csv(BufWriter::new(File::create(p)?), &rows)?,
        None => write_density_csv(io::stdout().lock(), &rows)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => gen_data(a).map(|_| true),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a).map(|_| true),
        Command::DumpPolicy(a) => dump_policy(a).map(|_| true),
    };
    let _ = io::stdout().flush();
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
