//! Experiment configuration as a flat `key = value` namespace.
//!
//! Files hold one pair per line; blank lines and lines starting with `#`
//! are ignored. Unknown keys are rejected, and so are parameters that belong
//! to a different algorithm (for example `alpha_spot` outside `spot-actor`).
//! [`ExperimentConfig::to_kv_string`] writes every key that is in effect and
//! parses back to an identical configuration.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::deformed::EntropicIndex;
use crate::error::{Error, Result};
use crate::losses::{AdvantageWeightConfig, BehaviorFitConfig, SampleGradient};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    /// Weighted heavy-tailed proposal, mean copy, reverse-KL sparse actor.
    Ftt,
    /// Log-likelihood of logged actions directly on the actor.
    ForwardKlOnly,
    /// Reverse KL of the actor against a fitted behavior model.
    ReverseKlOnly,
    /// Log-likelihood after random action replacement.
    Rar,
    /// Proposal and mean copy as in `Ftt`, actor trained with the SPOT objective.
    SpotActor,
    /// Only the proposal is trained; it is also the evaluated policy.
    ProposalOnly,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::Ftt,
        Algorithm::ForwardKlOnly,
        Algorithm::ReverseKlOnly,
        Algorithm::Rar,
        Algorithm::SpotActor,
        Algorithm::ProposalOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Ftt => "ftt",
            Algorithm::ForwardKlOnly => "forward-kl-only",
            Algorithm::ReverseKlOnly => "reverse-kl-only",
            Algorithm::Rar => "rar",
            Algorithm::SpotActor => "spot-actor",
            Algorithm::ProposalOnly => "proposal-only",
        }
    }

    pub fn trains_proposal(self) -> bool {
        matches!(self, Algorithm::Ftt | Algorithm::SpotActor | Algorithm::ProposalOnly)
    }

    pub fn trains_actor(self) -> bool {
        self != Algorithm::ProposalOnly
    }

    pub fn needs_behavior_model(self) -> bool {
        matches!(self, Algorithm::ReverseKlOnly | Algorithm::SpotActor)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let alias = match s {
            "fkl" => Some(Algorithm::ForwardKlOnly),
            "rkl" => Some(Algorithm::ReverseKlOnly),
            "spot" => Some(Algorithm::SpotActor),
            _ => None,
        };
        alias
            .or_else(|| Algorithm::ALL.into_iter().find(|a| a.name() == s))
            .ok_or_else(|| {
                let names: Vec<_> = Algorithm::ALL.iter().map(|a| a.name()).collect();
                Error::Config(format!("unknown algorithm {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

pub const DEFAULT_ALPHA_SPOT: f64 = 0.1;
pub const DEFAULT_RAR_K: usize = 32;
pub const DEFAULT_BEHAVIOR_STEPS: usize = 5000;
pub const DEFAULT_BEHAVIOR_LR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub algo: Algorithm,
    pub q_f: EntropicIndex,
    pub q_s: EntropicIndex,
    pub q_w: EntropicIndex,
    pub tau: f64,
    pub w_max: f64,
    pub expectile: f64,
    pub gamma: f64,
    pub actor_lr: f64,
    pub proposal_lr: f64,
    pub critic_lr: f64,
    pub polyak: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub hidden: Vec<usize>,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub action_scale: f64,
    pub actor_gradient: SampleGradient,
    pub seed: u64,
    pub dataset: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    /// `spot-actor` only.
    pub alpha_spot: Option<f64>,
    /// `rar` only.
    pub rar_k: Option<usize>,
    /// `reverse-kl-only` and `spot-actor` only.
    pub behavior_steps: Option<usize>,
    pub behavior_lr: Option<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            algo: Algorithm::Ftt,
            q_f: EntropicIndex::new(2.0).unwrap(),
            q_s: EntropicIndex::new(0.0).unwrap(),
            q_w: EntropicIndex::new(0.0).unwrap(),
            tau: 0.5,
            w_max: 100.0,
            expectile: 0.7,
            gamma: 0.9,
            actor_lr: 3e-4,
            proposal_lr: 3e-4,
            critic_lr: 3e-4,
            polyak: 0.005,
            batch_size: 256,
            iterations: 50_000,
            eval_interval: 5_000,
            eval_episodes: 10,
            hidden: vec![256, 256],
            sigma_min: 1e-3,
            sigma_max: 100.0,
            action_scale: 100.0,
            actor_gradient: SampleGradient::Detached,
            seed: 0,
            dataset: None,
            out_dir: None,
            alpha_spot: None,
            rar_k: None,
            behavior_steps: None,
            behavior_lr: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse {value:?}: {e}")))
}

fn parse_index(key: &str, value: &str) -> Result<EntropicIndex> {
    EntropicIndex::new(parse(key, value)?).map_err(|e| Error::Config(format!("{key}: {e}")))
}

fn parse_hidden(value: &str) -> Result<Vec<usize>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse("hidden", v.trim())).collect()
}

impl ExperimentConfig {
    pub const KEYS: [&'static str; 28] = [
        "algo",
        "q_f",
        "q_s",
        "q_w",
        "tau",
        "w_max",
        "expectile",
        "gamma",
        "actor_lr",
        "proposal_lr",
        "critic_lr",
        "polyak",
        "batch_size",
        "iterations",
        "eval_interval",
        "eval_episodes",
        "hidden",
        "sigma_min",
        "sigma_max",
        "action_scale",
        "actor_gradient",
        "seed",
        "dataset",
        "out_dir",
        "alpha_spot",
        "rar_k",
        "behavior_steps",
        "behavior_lr",
    ];

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "algo" => self.algo = value.parse()?,
            "q_f" => self.q_f = parse_index(key, value)?,
            "q_s" => self.q_s = parse_index(key, value)?,
            "q_w" => self.q_w = parse_index(key, value)?,
            "tau" => self.tau = parse(key, value)?,
            "w_max" => self.w_max = parse(key, value)?,
            "expectile" => self.expectile = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "actor_lr" => self.actor_lr = parse(key, value)?,
            "proposal_lr" => self.proposal_lr = parse(key, value)?,
            "critic_lr" => self.critic_lr = parse(key, value)?,
            "polyak" => self.polyak = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "iterations" => self.iterations = parse(key, value)?,
            "eval_interval" => self.eval_interval = parse(key, value)?,
            "eval_episodes" => self.eval_episodes = parse(key, value)?,
            "hidden" => self.hidden = parse_hidden(value)?,
            "sigma_min" => self.sigma_min = parse(key, value)?,
            "sigma_max" => self.sigma_max = parse(key, value)?,
            "action_scale" => self.action_scale = parse(key, value)?,
            "actor_gradient" => {
                self.actor_gradient = match value {
                    "detached" => SampleGradient::Detached,
                    "reparameterized" => SampleGradient::Reparameterized,
                    other => {
                        return Err(Error::Config(format!(
                            "actor_gradient: expected detached or reparameterized, got {other:?}"
                        )))
                    }
                }
            }
            "seed" => self.seed = parse(key, value)?,
            "dataset" => self.dataset = Some(PathBuf::from(value)),
            "out_dir" => self.out_dir = Some(PathBuf::from(value)),
            "alpha_spot" => self.alpha_spot = Some(parse(key, value)?),
            "rar_k" => self.rar_k = Some(parse(key, value)?),
            "behavior_steps" => self.behavior_steps = Some(parse(key, value)?),
            "behavior_lr" => self.behavior_lr = Some(parse(key, value)?),
            other => return Err(Error::Config(format!("unknown configuration key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`.
    pub fn apply_kv_str(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {line:?}", n + 1)))?;
            self.set(key.trim(), value)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_kv_str(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_kv_str(&std::fs::read_to_string(path)?)
    }

    /// Every key in effect, one per line, in [`Self::KEYS`] order.
    pub fn to_kv_string(&self) -> String {
        let hidden: Vec<String> = self.hidden.iter().map(|h| h.to_string()).collect();
        let mut pairs: Vec<(&str, String)> = vec![
            ("algo", self.algo.to_string()),
            ("q_f", self.q_f.value().to_string()),
            ("q_s", self.q_s.value().to_string()),
            ("q_w", self.q_w.value().to_string()),
            ("tau", self.tau.to_string()),
            ("w_max", self.w_max.to_string()),
            ("expectile", self.expectile.to_string()),
            ("gamma", self.gamma.to_string()),
            ("actor_lr", self.actor_lr.to_string()),
            ("proposal_lr", self.proposal_lr.to_string()),
            ("critic_lr", self.critic_lr.to_string()),
            ("polyak", self.polyak.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("iterations", self.iterations.to_string()),
            ("eval_interval", self.eval_interval.to_string()),
            ("eval_episodes", self.eval_episodes.to_string()),
            ("hidden", hidden.join(",")),
            ("sigma_min", self.sigma_min.to_string()),
            ("sigma_max", self.sigma_max.to_string()),
            ("action_scale", self.action_scale.to_string()),
            (
                "actor_gradient",
                match self.actor_gradient {
                    SampleGradient::Detached => "detached".into(),
                    SampleGradient::Reparameterized => "reparameterized".into(),
                },
            ),
            ("seed", self.seed.to_string()),
        ];
        let optional = [
            ("dataset", self.dataset.as_ref().map(|p| p.display().to_string())),
            ("out_dir", self.out_dir.as_ref().map(|p| p.display().to_string())),
            ("alpha_spot", self.alpha_spot.map(|v| v.to_string())),
            ("rar_k", self.rar_k.map(|v| v.to_string())),
            ("behavior_steps", self.behavior_steps.map(|v| v.to_string())),
            ("behavior_lr", self.behavior_lr.map(|v| v.to_string())),
        ];
        pairs.extend(optional.into_iter().filter_map(|(k, v)| v.map(|v| (k, v))));
        pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.algo.trains_proposal() && self.q_f.is_sparse() {
            return bad(format!("{}: the proposal needs q_f >= 1, got {}", self.algo, self.q_f));
        }
        if self.algo == Algorithm::Ftt && !self.q_s.is_sparse() {
            return bad(format!("ftt: the actor needs q_s < 1, got {}", self.q_s));
        }
        self.advantage_weights().validate()?;
        if !(self.expectile > 0.0 && self.expectile < 1.0) {
            return bad(format!("expectile must be in (0, 1), got {}", self.expectile));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma must be in [0, 1), got {}", self.gamma));
        }
        for (name, lr) in [
            ("actor_lr", self.actor_lr),
            ("proposal_lr", self.proposal_lr),
            ("critic_lr", self.critic_lr),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("{name} must be positive, got {lr}"));
            }
        }
        if !(self.polyak > 0.0 && self.polyak <= 1.0) {
            return bad(format!("polyak must be in (0, 1], got {}", self.polyak));
        }
        if self.batch_size == 0 || self.eval_interval == 0 || self.eval_episodes == 0 {
            return bad("batch_size, eval_interval and eval_episodes must be at least 1".into());
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer sizes must be positive".into());
        }
        if !(self.sigma_min > 0.0 && self.sigma_min <= self.sigma_max && self.sigma_max.is_finite()) {
            return bad(format!(
                "need 0 < sigma_min <= sigma_max < inf, got [{}, {}]",
                self.sigma_min, self.sigma_max
            ));
        }
        if !(self.action_scale > 0.0 && self.action_scale.is_finite()) {
            return bad(format!("action_scale must be positive, got {}", self.action_scale));
        }
        if self.alpha_spot.is_some() && self.algo != Algorithm::SpotActor {
            return bad(format!("alpha_spot applies only to spot-actor, not {}", self.algo));
        }
        if let Some(a) = self.alpha_spot {
            if !(a > 0.0 && a.is_finite()) {
                return bad(format!("alpha_spot must be positive, got {a}"));
            }
        }
        if self.rar_k.is_some() && self.algo != Algorithm::Rar {
            return bad(format!("rar_k applies only to rar, not {}", self.algo));
        }
        if self.rar_k == Some(0) {
            return bad("rar_k must be at least 1".into());
        }
        if (self.behavior_steps.is_some() || self.behavior_lr.is_some()) && !self.algo.needs_behavior_model() {
            return bad(format!("behavior_steps/behavior_lr do not apply to {}", self.algo));
        }
        if let Some(lr) = self.behavior_lr {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("behavior_lr must be positive, got {lr}"));
            }
        }
        Ok(())
    }

    pub fn advantage_weights(&self) -> AdvantageWeightConfig {
        AdvantageWeightConfig {
            q_w: self.q_w,
            tau: self.tau,
            w_max: self.w_max,
        }
    }

    pub fn alpha_spot(&self) -> f64 {
        self.alpha_spot.unwrap_or(DEFAULT_ALPHA_SPOT)
    }

    pub fn rar_k(&self) -> usize {
        self.rar_k.unwrap_or(DEFAULT_RAR_K)
    }

    pub fn behavior_fit(&self) -> BehaviorFitConfig {
        BehaviorFitConfig {
            hidden: self.hidden.clone(),
            steps: self.behavior_steps.unwrap_or(DEFAULT_BEHAVIOR_STEPS),
            batch_size: self.batch_size,
            lr: self.behavior_lr.unwrap_or(DEFAULT_BEHAVIOR_LR),
            sigma_min: self.sigma_min,
            sigma_max: self.sigma_max,
            action_scale: self.action_scale,
        }
    }
}
