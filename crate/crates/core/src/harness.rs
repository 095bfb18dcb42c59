//! Run directories and density dumps.
//!
//! A run directory holds:
//!
//! ```text
//! config.txt                 effective configuration (key = value)
//! metrics.csv                one row per evaluation
//! checkpoints/iter_NNNNNNN/  actor.bin, proposal.bin, critic.bin at each evaluation
//! final/                     the same files at the end of the run
//! summary.json               final score, non-finite event count, widths
//! ```
//!
//! Feeding `config.txt` back to `train` with the same dataset reproduces the
//! run bit for bit.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::critic::Critic;
use crate::dataset::OfflineDataset;
use crate::error::{Error, Result};
use crate::policy::QGaussianPolicy;
use crate::trainer::{train, MetricsRow, Models, RunObserver, RunSummary, TrainOutcome};

pub const CONFIG_FILE: &str = "config.txt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const ACTOR_FILE: &str = "actor.bin";
pub const PROPOSAL_FILE: &str = "proposal.bin";
pub const CRITIC_FILE: &str = "critic.bin";

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse(format!("{other:?}")),
    }
}

/// Writes a run directory as training progresses.
pub struct RunDirectory {
    root: PathBuf,
    metrics: csv::Writer<File>,
}

impl RunDirectory {
    /// Creates `root` and writes the configuration echo. Refuses a directory
    /// that already holds a run.
    pub fn create(root: &Path, cfg: &ExperimentConfig) -> Result<Self> {
        if root.join(METRICS_FILE).exists() {
            return Err(Error::Config(format!("{} already contains a run", root.display())));
        }
        fs::create_dir_all(root)?;
        fs::write(root.join(CONFIG_FILE), cfg.to_kv_string())?;
        let metrics = csv::Writer::from_path(root.join(METRICS_FILE)).map_err(csv_err)?;
        Ok(Self {
            root: root.to_path_buf(),
            metrics,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Writes the final snapshots and the summary record.
    pub fn finish(mut self, outcome: &TrainOutcome) -> Result<()> {
        self.metrics.flush()?;
        write_models(
            &self.root.join("final"),
            &Models {
                actor: outcome.actor.as_ref(),
                proposal: outcome.proposal.as_ref(),
                critic: &outcome.critic,
            },
        )?;
        write_summary(&self.root.join(SUMMARY_FILE), &outcome.summary)
    }
}

impl RunObserver for RunDirectory {
    fn on_eval(&mut self, row: &MetricsRow, models: &Models<'_>) -> Result<()> {
        self.metrics.serialize(row).map_err(csv_err)?;
        self.metrics.flush()?;
        write_models(
            &self.root.join("checkpoints").join(format!("iter_{:07}", row.iteration)),
            models,
        )
    }
}

fn write_models(dir: &Path, models: &Models<'_>) -> Result<()> {
    fs::create_dir_all(dir)?;
    if let Some(a) = models.actor {
        a.save(&dir.join(ACTOR_FILE))?;
    }
    if let Some(p) = models.proposal {
        p.save(&dir.join(PROPOSAL_FILE))?;
    }
    models.critic.save(&dir.join(CRITIC_FILE))
}

pub fn write_summary(path: &Path, summary: &RunSummary) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, summary)?;
    w.write_all(b"\n")?;
    Ok(w.flush()?)
}

pub fn read_summary(path: &Path) -> Result<RunSummary> {
    Ok(serde_json::from_reader(File::open(path)?)?)
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

/// Trains `cfg` on `dataset`, writing a run directory when `cfg.out_dir` is
/// set. Returns the outcome either way.
pub fn run_experiment(cfg: &ExperimentConfig, dataset: &OfflineDataset) -> Result<TrainOutcome> {
    cfg.validate()?;
    match &cfg.out_dir {
        Some(dir) => {
            let mut run = RunDirectory::create(dir, cfg)?;
            let outcome = train(cfg, dataset, &mut run)?;
            run.finish(&outcome)?;
            Ok(outcome)
        }
        None => train(cfg, dataset, &mut crate::trainer::NoopObserver),
    }
}

/// Policies stored in a snapshot directory (`final/` or a checkpoint).
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub actor: Option<QGaussianPolicy>,
    pub proposal: Option<QGaussianPolicy>,
}

impl Snapshot {
    pub fn load(dir: &Path) -> Result<Self> {
        let load = |name: &str| -> Result<Option<QGaussianPolicy>> {
            let p = dir.join(name);
            if p.exists() {
                QGaussianPolicy::load(&p).map(Some)
            } else {
                Ok(None)
            }
        };
        let snap = Self {
            actor: load(ACTOR_FILE)?,
            proposal: load(PROPOSAL_FILE)?,
        };
        if snap.actor.is_none() && snap.proposal.is_none() {
            return Err(Error::Config(format!(
                "{} holds neither {ACTOR_FILE} nor {PROPOSAL_FILE}",
                dir.display()
            )));
        }
        Ok(snap)
    }

    /// The acting policy: the actor if present, else the proposal.
    pub fn acting(&self) -> &QGaussianPolicy {
        self.actor.as_ref().or(self.proposal.as_ref()).expect("checked in load")
    }

    pub fn load_critic(dir: &Path) -> Result<Critic> {
        Critic::load(&dir.join(CRITIC_FILE))
    }
}

/// Action grid `lo..=hi` with `n >= 2` evenly spaced points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Grid {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n < 2 || !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Config(format!("grid needs finite lo < hi and n >= 2, got [{lo}, {hi}] n={n}")));
        }
        Ok(Self { lo, hi, n })
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        let step = (self.hi - self.lo) / (self.n - 1) as f64;
        (0..self.n).map(move |i| if i + 1 == self.n { self.hi } else { self.lo + i as f64 * step })
    }
}

/// Densities of both policies at one grid point. A missing policy leaves
/// its column empty.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityRow {
    pub action: f64,
    pub proposal_density: Option<f64>,
    pub actor_density: Option<f64>,
}

/// Densities over a one-dimensional action grid at `state`.
pub fn density_grid(snapshot: &Snapshot, state: &[f64], grid: &Grid) -> Result<Vec<DensityRow>> {
    let dist = |p: &Option<QGaussianPolicy>| -> Result<Option<crate::qgaussian::QGaussian1D>> {
        match p {
            None => Ok(None),
            Some(p) if p.action_dim() != 1 => Err(Error::DimensionMismatch {
                expected: 1,
                got: p.action_dim(),
            }),
            Some(p) => Ok(Some(p.forward(state)?.marginal(0))),
        }
    };
    let proposal = dist(&snapshot.proposal)?;
    let actor = dist(&snapshot.actor)?;
    Ok(grid
        .points()
        .map(|a| DensityRow {
            action: a,
            proposal_density: proposal.as_ref().map(|d| d.density(a)),
            actor_density: actor.as_ref().map(|d| d.density(a)),
        })
        .collect())
}

pub fn write_density_csv<W: Write>(w: W, rows: &[DensityRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r).map_err(csv_err)?;
    }
    Ok(out.flush()?)
}
