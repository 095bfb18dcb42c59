//! Training loops for the two-policy method and its ablations.
//!
//! Each iteration draws one minibatch, takes one critic step (expectile `V`,
//! then TD `Q`, then the Polyak target) and one step of the variant's policy
//! objective. For [`Algorithm::Ftt`] that is, in order: a weighted
//! likelihood step on the proposal, a copy of the proposal's mean head into
//! the actor, then a reverse-KL step on the actor at samples drawn from the
//! actor *after* the copy, so every sample lies in the support it is scored
//! against.
//!
//! Randomness comes from one seed split into ChaCha streams:
//!
//! | stream | use |
//! |---|---|
//! | 1 | network initialization |
//! | 2 | minibatch indices |
//! | 3 | policy samples (actor KL, RAR candidates, SPOT, reverse KL) |
//! | 4 | evaluation episodes (initial states, observation noise, actions) |
//! | 5 | behavior-model fitting |
//!
//! Stream 0 is left for dataset generation.

use ndarray::{Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Algorithm, ExperimentConfig};
use crate::critic::{Critic, CriticOptimizer, CriticSpec};
use crate::dataset::OfflineDataset;
use crate::env::{evaluate_policy, TreatmentEnvConfig};
use crate::error::{Error, Result};
use crate::losses::{
    actor_kl_loss, fit_behavior_model, forward_kl_loss, proposal_loss_from_advantages, rar_replace,
    reverse_kl_loss, spot_actor_loss, BehaviorModel, LossOutput,
};
use crate::nn::AdamConfig;
use crate::policy::{PolicyOptimizer, PolicySpec, QGaussianPolicy};

pub const STREAM_INIT: u64 = 1;
pub const STREAM_BATCH: u64 = 2;
pub const STREAM_SAMPLING: u64 = 3;
pub const STREAM_EVAL: u64 = 4;
pub const STREAM_BEHAVIOR: u64 = 5;

/// Number of dataset states used for the copy check and width diagnostics.
pub const PROBE_STATES: usize = 10;
/// Mass of the proposal interval compared against the actor's support.
pub const PROPOSAL_INTERVAL_MASS: f64 = 0.95;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One CSV row per evaluation. Loss columns average the finite values since
/// the previous row and are empty when the variant has no such loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iteration: usize,
    pub eval_mean: f64,
    pub eval_std: f64,
    pub proposal_loss: Option<f64>,
    pub actor_loss: Option<f64>,
    pub q_loss: f64,
    pub v_loss: f64,
    /// Mean actor support width over the probe states; empty for `q >= 1`.
    pub support_width: Option<f64>,
    /// Cumulative count of non-finite policy losses.
    pub nonfinite_events: usize,
}

/// End-of-run record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub algo: String,
    pub seed: u64,
    pub iterations_completed: usize,
    pub final_eval_mean: Option<f64>,
    pub final_eval_std: Option<f64>,
    pub nonfinite_events: usize,
    /// Mean actor support width over the probe states at the end.
    pub actor_support_width: Option<f64>,
    /// Mean width of the proposal's central 95% interval at the same states.
    pub proposal_interval_width: Option<f64>,
    /// Largest post-copy mean discrepancy seen over the run.
    pub max_copy_discrepancy: Option<f64>,
    /// Why the run stopped early, if it did.
    pub aborted: Option<String>,
}

/// Per-iteration diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationReport {
    pub iteration: usize,
    /// `max |mu_actor(s) - mu_proposal(s)|` over the probe states right
    /// after the mean copy.
    pub copy_discrepancy: Option<f64>,
    pub nonfinite_event: bool,
}

/// Current models, handed to observers at each evaluation.
pub struct Models<'a> {
    pub actor: Option<&'a QGaussianPolicy>,
    pub proposal: Option<&'a QGaussianPolicy>,
    pub critic: &'a Critic,
}

/// Receives progress from [`train`]. All methods default to doing nothing.
pub trait RunObserver {
    fn on_iteration(&mut self, _report: &IterationReport) {}

    fn on_eval(&mut self, _row: &MetricsRow, _models: &Models<'_>) -> Result<()> {
        Ok(())
    }
}

pub struct NoopObserver;

impl RunObserver for NoopObserver {}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub metrics: Vec<MetricsRow>,
    pub summary: RunSummary,
    pub actor: Option<QGaussianPolicy>,
    pub proposal: Option<QGaussianPolicy>,
    pub critic: Critic,
    pub behavior: Option<BehaviorModel>,
}

impl TrainOutcome {
    /// The policy that acts: the actor, or the proposal for `proposal-only`.
    pub fn evaluated_policy(&self) -> &QGaussianPolicy {
        self.actor.as_ref().or(self.proposal.as_ref()).expect("every variant trains a policy")
    }
}

#[derive(Default)]
struct Running {
    sum: f64,
    count: usize,
}

impl Running {
    fn push(&mut self, v: f64) {
        if v.is_finite() {
            self.sum += v;
            self.count += 1;
        }
    }

    fn take(&mut self) -> Option<f64> {
        let out = (self.count > 0).then(|| self.sum / self.count as f64);
        *self = Self::default();
        out
    }
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn proposal_interval_width(p: &QGaussianPolicy, states: ArrayView2<'_, f64>) -> Result<f64> {
    let unit = crate::qgaussian::QGaussian1D::standard(p.q()).central_interval_width(PROPOSAL_INTERVAL_MASS)?;
    Ok(p.scales(states)?.mean().unwrap_or(0.0) * unit)
}

fn finite_or_nan(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Checks a policy loss for the variants that must never see non-finite
/// values; the error is the recorded diagnosis.
fn require_finite(out: Result<LossOutput>, what: &str, iteration: usize) -> Result<LossOutput> {
    match out {
        Ok(o) if o.loss.is_finite() && o.grad.norm().is_finite() => Ok(o),
        Ok(o) => Err(Error::NonFinite(format!(
            "{what} at iteration {iteration}: loss {}, gradient norm {}",
            o.loss,
            o.grad.norm()
        ))),
        Err(Error::NonFinite(msg)) => Err(Error::NonFinite(format!("{what} at iteration {iteration}: {msg}"))),
        Err(e) => Err(e),
    }
}

/// Runs `cfg.algo` on `dataset`. Configuration errors are returned before
/// any computation; a non-finite loss in a variant that forbids one ends
/// the run early with the diagnosis in `summary.aborted`.
pub fn train(cfg: &ExperimentConfig, dataset: &OfflineDataset, observer: &mut dyn RunObserver) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let env_cfg = TreatmentEnvConfig::from_header(dataset.header());
    env_cfg.validate()?;

    let mut init_rng = stream_rng(cfg.seed, STREAM_INIT);
    let mut batch_rng = stream_rng(cfg.seed, STREAM_BATCH);
    let mut sample_rng = stream_rng(cfg.seed, STREAM_SAMPLING);
    let mut eval_rng = stream_rng(cfg.seed, STREAM_EVAL);

    let policy_spec = |q| PolicySpec {
        q,
        state_dim: dataset.state_dim(),
        action_dim: dataset.action_dim(),
        hidden: cfg.hidden.clone(),
        sigma_min: cfg.sigma_min,
        sigma_max: cfg.sigma_max,
        action_scale: cfg.action_scale,
    };
    let mut proposal = if cfg.algo.trains_proposal() {
        Some(policy_spec(cfg.q_f).build(&mut init_rng)?)
    } else {
        None
    };
    let mut actor = if cfg.algo.trains_actor() {
        Some(policy_spec(cfg.q_s).build(&mut init_rng)?)
    } else {
        None
    };
    let mut critic = CriticSpec {
        state_dim: dataset.state_dim(),
        action_dim: dataset.action_dim(),
        hidden: cfg.hidden.clone(),
        expectile: cfg.expectile,
        gamma: cfg.gamma,
        action_scale: cfg.action_scale,
    }
    .build(&mut init_rng)?;
    let behavior = if cfg.algo.needs_behavior_model() {
        let mut rng = stream_rng(cfg.seed, STREAM_BEHAVIOR);
        Some(fit_behavior_model(dataset, &cfg.behavior_fit(), &mut rng)?.model)
    } else {
        None
    };

    let mut critic_opt = CriticOptimizer::new(&critic, AdamConfig::with_lr(cfg.critic_lr), cfg.polyak);
    let mut proposal_opt = proposal.as_ref().map(|p| PolicyOptimizer::new(p, AdamConfig::with_lr(cfg.proposal_lr)));
    let mut actor_opt = actor.as_ref().map(|p| PolicyOptimizer::new(p, AdamConfig::with_lr(cfg.actor_lr)));

    let probes = dataset.probe_states(PROBE_STATES);
    let weights = cfg.advantage_weights();
    let copies_mean = matches!(cfg.algo, Algorithm::Ftt | Algorithm::SpotActor);

    let mut metrics = Vec::new();
    let mut nonfinite_events = 0usize;
    let mut max_copy: Option<f64> = None;
    let mut aborted = None;
    let mut completed = 0usize;
    let (mut prop_acc, mut actor_acc, mut q_acc, mut v_acc) =
        (Running::default(), Running::default(), Running::default(), Running::default());
    let mut last_eval = None;

    for it in 0..cfg.iterations {
        let batch = dataset.sample_batch(cfg.batch_size, &mut batch_rng)?;
        let step = critic_opt.step(&mut critic, &batch)?;
        if !(step.q_loss.is_finite() && step.v_loss.is_finite()) {
            nonfinite_events += 1;
            aborted = Some(format!(
                "critic loss non-finite at iteration {it}: q {}, v {}",
                step.q_loss, step.v_loss
            ));
            break;
        }
        q_acc.push(step.q_loss);
        v_acc.push(step.v_loss);
        let mut report = IterationReport {
            iteration: it,
            copy_discrepancy: None,
            nonfinite_event: false,
        };

        let result: Result<()> = (|| {
            if let (Some(p), Some(opt)) = (proposal.as_mut(), proposal_opt.as_mut()) {
                let adv = step.advantages();
                let out = require_finite(
                    proposal_loss_from_advantages(p, batch.states.view(), batch.actions.view(), &adv, &weights),
                    "proposal loss",
                    it,
                )?;
                opt.step(p, &out.grad)?;
                prop_acc.push(out.loss);
            }
            let (Some(a), Some(opt)) = (actor.as_mut(), actor_opt.as_mut()) else {
                return Ok(());
            };
            if copies_mean {
                let p = proposal.as_ref().expect("mean-copy variants train a proposal");
                a.copy_mean_parameters(p)?;
                report.copy_discrepancy = Some(max_abs_diff(&a.means(probes.view())?, &p.means(probes.view())?));
            }
            let states = batch.states.view();
            let out = match cfg.algo {
                Algorithm::Ftt => {
                    let p = proposal.as_ref().expect("ftt trains a proposal");
                    require_finite(
                        actor_kl_loss(a, p, states, cfg.actor_gradient, &mut sample_rng),
                        "actor KL loss",
                        it,
                    )?
                }
                Algorithm::SpotActor => require_finite(
                    spot_actor_loss(
                        a,
                        &critic,
                        behavior.as_ref().expect("fitted above"),
                        states,
                        cfg.alpha_spot(),
                        &mut sample_rng,
                    ),
                    "SPOT loss",
                    it,
                )?,
                Algorithm::ReverseKlOnly => require_finite(
                    reverse_kl_loss(a, behavior.as_ref().expect("fitted above"), states, &mut sample_rng),
                    "reverse KL loss",
                    it,
                )?,
                Algorithm::ForwardKlOnly => {
                    let out = forward_kl_loss(a, states, batch.actions.view())?;
                    if !(out.loss.is_finite() && out.grad.norm().is_finite()) {
                        // the failure being measured: record it and skip the step
                        report.nonfinite_event = true;
                        return Ok(());
                    }
                    out
                }
                Algorithm::Rar => {
                    let mut replaced = batch.actions.clone();
                    for (mut row, s) in replaced.axis_iter_mut(Axis(0)).zip(batch.states.axis_iter(Axis(0))) {
                        let s = s.to_vec();
                        let r = rar_replace(&row.to_vec(), a, &s, cfg.rar_k(), &mut sample_rng)?;
                        row.assign(&ndarray::ArrayView1::from(&r));
                    }
                    require_finite(forward_kl_loss(a, states, replaced.view()), "RAR likelihood", it)?
                }
                Algorithm::ProposalOnly => unreachable!("proposal-only has no actor"),
            };
            opt.step(a, &out.grad)?;
            actor_acc.push(out.loss);
            Ok(())
        })();

        if let Some(d) = report.copy_discrepancy {
            max_copy = Some(max_copy.map_or(d, |m: f64| m.max(d)));
        }
        match result {
            Ok(()) => {}
            Err(Error::NonFinite(msg)) => {
                nonfinite_events += 1;
                report.nonfinite_event = true;
                observer.on_iteration(&report);
                aborted = Some(msg);
                break;
            }
            Err(e) => return Err(e),
        }
        if report.nonfinite_event {
            nonfinite_events += 1;
        }
        observer.on_iteration(&report);
        completed = it + 1;

        if completed.is_multiple_of(cfg.eval_interval) || completed == cfg.iterations {
            let policy = actor.as_ref().or(proposal.as_ref()).expect("a policy is trained");
            let eval = evaluate_policy(policy, &env_cfg, cfg.eval_episodes, &mut eval_rng)?;
            let width = actor.as_ref().map(|a| a.mean_support_width(probes.view())).transpose()?;
            let row = MetricsRow {
                iteration: completed,
                eval_mean: eval.mean,
                eval_std: eval.std,
                proposal_loss: prop_acc.take(),
                actor_loss: actor_acc.take(),
                q_loss: q_acc.take().unwrap_or(f64::NAN),
                v_loss: v_acc.take().unwrap_or(f64::NAN),
                support_width: width.and_then(finite_or_nan),
                nonfinite_events,
            };
            observer.on_eval(
                &row,
                &Models {
                    actor: actor.as_ref(),
                    proposal: proposal.as_ref(),
                    critic: &critic,
                },
            )?;
            last_eval = Some((eval.mean, eval.std));
            metrics.push(row);
        }
    }

    let actor_support_width = match &actor {
        Some(a) => finite_or_nan(a.mean_support_width(probes.view())?),
        None => None,
    };
    let proposal_interval_width = proposal
        .as_ref()
        .map(|p| proposal_interval_width(p, probes.view()))
        .transpose()?;
    let summary = RunSummary {
        algo: cfg.algo.to_string(),
        seed: cfg.seed,
        iterations_completed: completed,
        final_eval_mean: last_eval.map(|e| e.0),
        final_eval_std: last_eval.map(|e| e.1),
        nonfinite_events,
        actor_support_width,
        proposal_interval_width,
        max_copy_discrepancy: max_copy,
        aborted,
    };
    Ok(TrainOutcome {
        metrics,
        summary,
        actor,
        proposal,
        critic,
        behavior,
    })
}
