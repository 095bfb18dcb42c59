//! Simulated treatment environment.
//!
//! An 8-dimensional latent mean evolves as `tanh(mu + a/100)` on the first
//! four coordinates (efficacy) and `tanh(mu - a/100)` on the last four
//! (toxicity). The agent observes `s = mu + noise_scale * xi` with standard
//! normal `xi`, and the reward is a cubic function of the next observation.
//! The action is an unbounded scalar dose; logged data uses uniform doses in
//! `(-100, 100)`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::{Open01, StandardNormal};

use crate::dataset::{DatasetHeader, OfflineDataset, Transition, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::policy::QGaussianPolicy;

pub const ENV_ID: &str = "treatment-v0";
pub const STATE_DIM: usize = 8;
pub const ACTION_DIM: usize = 1;
/// Dose divisor inside the dynamics.
pub const DOSE_SCALE: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialMean {
    Zero,
    /// Each coordinate uniform on (-1, 1).
    Uniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreatmentEnvConfig {
    pub noise_scale: f64,
    pub horizon: usize,
    /// Range of the uniform logging policy.
    pub action_range: (f64, f64),
    pub initial_mean: InitialMean,
}

impl Default for TreatmentEnvConfig {
    fn default() -> Self {
        Self {
            noise_scale: 0.05,
            horizon: 24,
            action_range: (-100.0, 100.0),
            initial_mean: InitialMean::Zero,
        }
    }
}

impl TreatmentEnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::Config(format!("noise_scale must be >= 0, got {}", self.noise_scale)));
        }
        let (lo, hi) = self.action_range;
        if !(lo < hi && lo.is_finite() && hi.is_finite()) {
            return Err(Error::Config(format!("invalid action range ({lo}, {hi})")));
        }
        Ok(())
    }

    /// Environment settings recorded in a dataset header.
    pub fn from_header(header: &DatasetHeader) -> Self {
        Self {
            noise_scale: header.noise_scale,
            horizon: header.horizon,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvState {
    pub mu: [f64; STATE_DIM],
    pub t: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: EnvState,
    pub observation: [f64; STATE_DIM],
    pub reward: f64,
    pub timeout: bool,
}

pub fn transition_mean(mu: &[f64; STATE_DIM], a: f64) -> [f64; STATE_DIM] {
    let dose = a / DOSE_SCALE;
    let mut next = [0.0; STATE_DIM];
    for j in 0..STATE_DIM {
        next[j] = if j < 4 { (dose + mu[j]).tanh() } else { (-dose + mu[j]).tanh() };
    }
    next
}

pub fn reward(s: &[f64; STATE_DIM]) -> f64 {
    let c = |x: f64| (x / 2.0).powi(3);
    c(s[0]) + c(s[1]) + s[2] + s[3] + 2.0 * (c(s[4]) + c(s[5])) + 0.5 * (s[6] + s[7])
}

fn observe<R: Rng + ?Sized>(mu: &[f64; STATE_DIM], noise_scale: f64, rng: &mut R) -> [f64; STATE_DIM] {
    let mut s = *mu;
    if noise_scale > 0.0 {
        for x in &mut s {
            let xi: f64 = rng.sample(StandardNormal);
            *x += noise_scale * xi;
        }
    }
    s
}

/// Initial latent state and its observation.
pub fn reset<R: Rng + ?Sized>(cfg: &TreatmentEnvConfig, rng: &mut R) -> (EnvState, [f64; STATE_DIM]) {
    let mut mu = [0.0; STATE_DIM];
    if cfg.initial_mean == InitialMean::Uniform {
        for m in &mut mu {
            *m = 2.0 * rng.sample::<f64, _>(Open01) - 1.0;
        }
    }
    let obs = observe(&mu, cfg.noise_scale, rng);
    (EnvState { mu, t: 0 }, obs)
}

pub fn step<R: Rng + ?Sized>(state: &EnvState, a: f64, cfg: &TreatmentEnvConfig, rng: &mut R) -> Result<StepOutcome> {
    if state.t >= cfg.horizon {
        return Err(Error::EpisodeFinished(state.t));
    }
    let mu = transition_mean(&state.mu, a);
    let observation = observe(&mu, cfg.noise_scale, rng);
    let t = state.t + 1;
    Ok(StepOutcome {
        state: EnvState { mu, t },
        reward: reward(&observation),
        observation,
        timeout: t == cfg.horizon,
    })
}

/// Rolls out `episodes` episodes of the uniform logging policy. The same
/// `(cfg, episodes, seed)` always yields the same dataset.
pub fn generate_dataset(cfg: &TreatmentEnvConfig, episodes: usize, seed: u64) -> Result<OfflineDataset> {
    cfg.validate()?;
    if episodes == 0 {
        return Err(Error::Config("episodes must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = cfg.action_range;
    let mut transitions = Vec::with_capacity(episodes * cfg.horizon);
    for _ in 0..episodes {
        let (mut state, mut obs) = reset(cfg, &mut rng);
        while state.t < cfg.horizon {
            let u: f64 = rng.sample(Open01);
            let a = lo + (hi - lo) * u;
            let out = step(&state, a, cfg, &mut rng)?;
            transitions.push(Transition {
                s: obs.to_vec(),
                a: vec![a],
                r: out.reward,
                s_next: out.observation.to_vec(),
                terminal: false,
                timeout: out.timeout,
            });
            state = out.state;
            obs = out.observation;
        }
    }
    let header = DatasetHeader {
        format_version: FORMAT_VERSION,
        env_id: ENV_ID.to_string(),
        state_dim: STATE_DIM,
        action_dim: ACTION_DIM,
        episodes,
        horizon: cfg.horizon,
        seed,
        noise_scale: cfg.noise_scale,
    };
    OfflineDataset::new(header, transitions)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mean: f64,
    pub std: f64,
    pub returns: Vec<f64>,
}

/// Undiscounted returns of full-horizon episodes with actions sampled from
/// `policy`. `std` is the population standard deviation.
pub fn evaluate_policy<R: Rng + ?Sized>(
    policy: &QGaussianPolicy,
    cfg: &TreatmentEnvConfig,
    episodes: usize,
    rng: &mut R,
) -> Result<EvalReport> {
    cfg.validate()?;
    if episodes == 0 {
        return Err(Error::Config("episodes must be at least 1".into()));
    }
    if policy.state_dim() != STATE_DIM || policy.action_dim() != ACTION_DIM {
        return Err(Error::DimensionMismatch {
            expected: STATE_DIM,
            got: policy.state_dim(),
        });
    }
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let (mut state, mut obs) = reset(cfg, rng);
        let mut total = 0.0;
        while state.t < cfg.horizon {
            let a = policy.sample_action(&obs, rng)?[0];
            let out = step(&state, a, cfg, rng)?;
            total += out.reward;
            state = out.state;
            obs = out.observation;
        }
        returns.push(total);
    }
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let std = (returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(EvalReport { mean, std, returns })
}
