//! Policy objectives.
//!
//! * weighted maximum likelihood for the heavy-tailed proposal, with
//!   truncating q-exponential advantage weights;
//! * a reverse-KL estimator `r - 1 - ln r`, `r = pi_proposal / pi_actor`,
//!   evaluated at actor samples, for the sparse actor;
//! * the plain forward-KL (log-likelihood) loss, which is undefined when a
//!   logged action leaves a sparse policy's support, and the reverse-KL,
//!   random-action-replacement and SPOT alternatives.
//!
//! Every loss is a batch mean and returns gradients for the policy's two
//! heads. Losses that sample take the randomness as an argument; each also
//! has a `*_at` form with the draws fixed, which is what the gradient checks
//! exercise.

use ndarray::{Array1, Array2, ArrayView2, Zip};
use rand::Rng;

use crate::critic::Critic;
use crate::dataset::OfflineDataset;
use crate::deformed::EntropicIndex;
use crate::error::{Error, Result};
use crate::nn::AdamConfig;
use crate::policy::{PolicyGradient, PolicyOptimizer, PolicySpec, QGaussianPolicy};
use crate::qgaussian::{log_density_grad, log_unit_normalizer, sample_standard};

/// Truncating advantage weight `min(w_max, exp_{q_w}(adv / tau))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdvantageWeightConfig {
    pub q_w: EntropicIndex,
    pub tau: f64,
    pub w_max: f64,
}

impl Default for AdvantageWeightConfig {
    fn default() -> Self {
        Self {
            q_w: EntropicIndex::new(0.0).unwrap(),
            tau: 0.5,
            w_max: 100.0,
        }
    }
}

impl AdvantageWeightConfig {
    pub fn validate(&self) -> Result<()> {
        if self.q_w.value() > 1.0 {
            return Err(Error::Config(format!("q_w must be <= 1, got {}", self.q_w)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.w_max > 0.0) {
            return Err(Error::Config(format!("w_max must be positive, got {}", self.w_max)));
        }
        Ok(())
    }
}

/// Zero exactly when `adv <= -tau/(1 - q_w)` (for `q_w < 1`). `q_w = 1` gives
/// the exponential weight.
pub fn qexp_advantage_weight(adv: f64, cfg: &AdvantageWeightConfig) -> f64 {
    let q = cfg.q_w.value();
    if q == 1.0 {
        return (adv / cfg.tau).exp().min(cfg.w_max);
    }
    let k = 1.0 - q;
    if adv <= -cfg.tau / k {
        return 0.0;
    }
    // (tau + k adv) / tau rather than 1 + k adv / tau: the numerator is exact
    // next to the threshold, so an advantage just above it keeps a positive
    // weight
    let base = (cfg.tau + k * adv) / cfg.tau;
    base.powf(1.0 / k).min(cfg.w_max)
}

/// Batch loss with gradients for one policy.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    pub grad: PolicyGradient,
    /// Per-row loss terms before averaging.
    pub terms: Array1<f64>,
}

impl LossOutput {
    pub fn is_finite(&self) -> bool {
        self.loss.is_finite()
    }
}

/// Row-wise joint log-density and its element-wise partials.
struct JointLogProb {
    value: Array1<f64>,
    d_mu: Array2<f64>,
    d_sigma: Array2<f64>,
    d_x: Array2<f64>,
}

fn joint_log_prob(q: EntropicIndex, mu: &Array2<f64>, sigma: &Array2<f64>, x: ArrayView2<'_, f64>) -> JointLogProb {
    let lz = log_unit_normalizer(q);
    let (rows, cols) = mu.dim();
    let mut out = JointLogProb {
        value: Array1::zeros(rows),
        d_mu: Array2::zeros((rows, cols)),
        d_sigma: Array2::zeros((rows, cols)),
        d_x: Array2::zeros((rows, cols)),
    };
    for i in 0..rows {
        let mut total = 0.0;
        for j in 0..cols {
            let g = log_density_grad(q, lz, mu[[i, j]], sigma[[i, j]], x[[i, j]]);
            total += g.value;
            out.d_mu[[i, j]] = g.d_mu;
            out.d_sigma[[i, j]] = g.d_sigma;
            out.d_x[[i, j]] = g.d_x;
        }
        out.value[i] = total;
    }
    out
}

fn check_rows(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

fn standard_noise<R: Rng + ?Sized>(q: EntropicIndex, rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let mut z = Array2::zeros((rows, cols));
    z.iter_mut().for_each(|v| *v = sample_standard(q, rng));
    z
}

/// Mean of `-w_i ln pi(a_i | s_i)`. Rows with weight 0 contribute nothing,
/// not even through an infinite log-density; any other non-finite
/// log-density makes the loss `+inf`.
pub fn weighted_nll_loss(
    policy: &QGaussianPolicy,
    states: ArrayView2<'_, f64>,
    actions: ArrayView2<'_, f64>,
    weights: &Array1<f64>,
) -> Result<LossOutput> {
    check_rows(states.nrows(), actions.nrows())?;
    check_rows(states.nrows(), weights.len())?;
    check_rows(policy.action_dim(), actions.ncols())?;
    let pass = policy.pass(states)?;
    let lp = joint_log_prob(policy.q(), &pass.mu, &pass.sigma, actions);
    let n = states.nrows() as f64;
    let terms = Zip::from(weights)
        .and(&lp.value)
        .map_collect(|&w, &l| if w == 0.0 { 0.0 } else { -w * l });
    let loss = terms.sum() / n;
    let scale = weights.mapv(|w| -w / n).insert_axis(ndarray::Axis(1));
    let d_mu = &lp.d_mu * &scale;
    let d_sigma = &lp.d_sigma * &scale;
    let grad = policy.backward(&pass, d_mu.view(), d_sigma.view());
    Ok(LossOutput { loss, grad, terms })
}

/// Log-likelihood loss on logged pairs. For a sparse policy a logged action
/// outside the support makes the loss `+inf`; that value is returned as is.
pub fn forward_kl_loss(
    policy: &QGaussianPolicy,
    states: ArrayView2<'_, f64>,
    actions: ArrayView2<'_, f64>,
) -> Result<LossOutput> {
    weighted_nll_loss(policy, states, actions, &Array1::ones(states.nrows()))
}

/// Advantage-weighted log-likelihood of logged pairs for the proposal. The
/// weights come from `advantages` and carry no gradient.
pub fn proposal_loss_from_advantages(
    proposal: &QGaussianPolicy,
    states: ArrayView2<'_, f64>,
    actions: ArrayView2<'_, f64>,
    advantages: &Array1<f64>,
    cfg: &AdvantageWeightConfig,
) -> Result<LossOutput> {
    let weights = advantages.mapv(|a| qexp_advantage_weight(a, cfg));
    let pass = proposal.pass(states)?;
    let lp = joint_log_prob(proposal.q(), &pass.mu, &pass.sigma, actions);
    if let Some(i) = lp.value.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "proposal log-density at logged row {i} is {}; the proposal must have unbounded support",
            lp.value[i]
        )));
    }
    weighted_nll_loss(proposal, states, actions, &weights)
}

/// [`proposal_loss_from_advantages`] with advantages from `critic`.
pub fn proposal_loss(
    proposal: &QGaussianPolicy,
    critic: &Critic,
    states: ArrayView2<'_, f64>,
    actions: ArrayView2<'_, f64>,
    cfg: &AdvantageWeightConfig,
) -> Result<LossOutput> {
    let adv = critic.advantages(states, actions)?;
    proposal_loss_from_advantages(proposal, states, actions, &adv, cfg)
}

/// How the actor loss differentiates through its own samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SampleGradient {
    /// Samples are constants; only the density evaluations carry gradient.
    #[default]
    Detached,
    /// Samples are `mu + sigma * z` with `z` fixed.
    Reparameterized,
}

/// Reverse-KL estimator of the actor against the proposal: the mean over
/// actor samples `b` of `r - 1 - ln r`, `r = pi_proposal(b|s) / pi_actor(b|s)`.
/// Every term is non-negative. Gradients are for the actor only.
pub fn actor_kl_loss<R: Rng + ?Sized>(
    actor: &QGaussianPolicy,
    proposal: &QGaussianPolicy,
    states: ArrayView2<'_, f64>,
    mode: SampleGradient,
    rng: &mut R,
) -> Result<LossOutput> {
    let noise = standard_noise(actor.q(), states.nrows(), actor.action_dim(), rng);
    actor_kl_loss_at(actor, proposal, states, noise.view(), mode)
}

/// [`actor_kl_loss`] with the standard draws `z` fixed; samples are
/// `b = mu_actor(s) + sigma_actor(s) * z`.
pub fn actor_kl_loss_at(
    actor: &QGaussianPolicy,
    proposal: &QGaussianPolicy,
    states: ArrayView2<'_, f64>,
    noise: ArrayView2<'_, f64>,
    mode: SampleGradient,
) -> Result<LossOutput> {
    check_rows(states.nrows(), noise.nrows())?;
    let pass = actor.pass(states)?;
    let samples = &pass.mu + &(&pass.sigma * &noise);
    actor_kl_core(actor, proposal, states, &pass, samples.view(), Some(noise), mode)
}

/// Actor KL loss at given actor samples, which are treated as constants.
pub fn actor_kl_loss_on_samples(
    actor: &QGaussianPolicy,
    proposal: &QGaussianPolicy,
    states: ArrayView2<'_, f64>,
    samples: ArrayView2<'_, f64>,
) -> Result<LossOutput> {
    check_rows(states.nrows(), samples.nrows())?;
    let pass = actor.pass(states)?;
    actor_kl_core(actor, proposal, states, &pass, samples, None, SampleGradient::Detached)
}

fn actor_kl_core(
    actor: &QGaussianPolicy,
    proposal: &QGaussianPolicy,
    states: ArrayView2<'_, f64>,
    pass: &crate::policy::PolicyPass,
    samples: ArrayView2<'_, f64>,
    noise: Option<ArrayView2<'_, f64>>,
    mode: SampleGradient,
) -> Result<LossOutput> {
    let prop_mu = proposal.means(states)?;
    let prop_sigma = proposal.scales(states)?;
    let own = joint_log_prob(actor.q(), &pass.mu, &pass.sigma, samples);
    let other = joint_log_prob(proposal.q(), &prop_mu, &prop_sigma, samples);
    if let Some(i) = own.value.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "actor log-density at its own sample (row {i}) is {}",
            own.value[i]
        )));
    }
    if let Some(i) = other.value.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "proposal log-density at actor sample (row {i}) is {}",
            other.value[i]
        )));
    }
    let n = states.nrows() as f64;
    // d = ln r; term = (r - 1) - ln r = expm1(d) - d
    let log_ratio = &other.value - &own.value;
    let terms = log_ratio.mapv(|d| d.exp_m1() - d);
    let loss = terms.sum() / n;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("actor KL estimate is {loss}")));
    }
    let slope = log_ratio.mapv(|d| d.exp_m1() / n).insert_axis(ndarray::Axis(1));
    // direct dependence through the actor density: d term / d lp_actor = -(r - 1)
    let mut d_mu = -&(&own.d_mu * &slope);
    let mut d_sigma = -&(&own.d_sigma * &slope);
    if mode == SampleGradient::Reparameterized {
        let z = noise.ok_or_else(|| Error::Domain("reparameterized gradient needs the draws".into()))?;
        let d_b = &(&other.d_x - &own.d_x) * &slope;
        d_mu += &d_b;
        d_sigma += &(&d_b * &z);
    }
    let grad = actor.backward(pass, d_mu.view(), d_sigma.view());
    Ok(LossOutput { loss, grad, terms })
}

/// Gaussian model of the logging policy, fitted by maximum likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorModel {
    policy: QGaussianPolicy,
}

impl BehaviorModel {
    pub fn new(policy: QGaussianPolicy) -> Result<Self> {
        if !policy.q().is_exponential() {
            return Err(Error::Config(format!(
                "behavior model must be Gaussian (q = 1), got q = {}",
                policy.q()
            )));
        }
        Ok(Self { policy })
    }

    pub fn policy(&self) -> &QGaussianPolicy {
        &self.policy
    }

    pub fn log_prob(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        self.policy.log_prob(state, action)
    }

    /// Mean negative log-likelihood over the whole dataset.
    pub fn mean_nll(&self, dataset: &OfflineDataset) -> Result<f64> {
        let b = dataset.full_batch();
        Ok(forward_kl_loss(&self.policy, b.states.view(), b.actions.view())?.loss)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorFitConfig {
    pub hidden: Vec<usize>,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub action_scale: f64,
}

impl Default for BehaviorFitConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256],
            steps: 2000,
            batch_size: 256,
            lr: 1e-3,
            sigma_min: 1e-3,
            sigma_max: 100.0,
            action_scale: 100.0,
        }
    }
}

/// Fitted model plus the mean minibatch NLL of each pass over the data.
#[derive(Debug, Clone)]
pub struct BehaviorFit {
    pub model: BehaviorModel,
    pub epoch_nll: Vec<f64>,
}

pub fn fit_behavior_model<R: Rng + ?Sized>(
    dataset: &OfflineDataset,
    cfg: &BehaviorFitConfig,
    rng: &mut R,
) -> Result<BehaviorFit> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let spec = PolicySpec {
        q: EntropicIndex::GAUSSIAN,
        state_dim: dataset.state_dim(),
        action_dim: dataset.action_dim(),
        hidden: cfg.hidden.clone(),
        sigma_min: cfg.sigma_min,
        sigma_max: cfg.sigma_max,
        action_scale: cfg.action_scale,
    };
    let mut policy = spec.build(rng)?;
    let mut opt = PolicyOptimizer::new(&policy, AdamConfig::with_lr(cfg.lr));
    let steps_per_epoch = dataset.len().div_ceil(cfg.batch_size).max(1);
    let mut epoch_nll = Vec::new();
    let mut acc = 0.0;
    for step in 0..cfg.steps {
        let batch = dataset.sample_batch(cfg.batch_size, rng)?;
        let out = forward_kl_loss(&policy, batch.states.view(), batch.actions.view())?;
        if !out.is_finite() {
            return Err(Error::NonFinite(format!("behavior NLL is {} at step {step}", out.loss)));
        }
        opt.step(&mut policy, &out.grad)?;
        acc += out.loss;
        if (step + 1) % steps_per_epoch == 0 {
            epoch_nll.push(acc / steps_per_epoch as f64);
            acc = 0.0;
        }
    }
    Ok(BehaviorFit {
        model: BehaviorModel::new(policy)?,
        epoch_nll,
    })
}

/// Reverse KL of `policy` against the behavior model, estimated at policy
/// samples with pathwise gradients.
pub fn reverse_kl_loss<R: Rng + ?Sized>(
    policy: &QGaussianPolicy,
    behavior: &BehaviorModel,
    states: ArrayView2<'_, f64>,
    rng: &mut R,
) -> Result<LossOutput> {
    let noise = standard_noise(policy.q(), states.nrows(), policy.action_dim(), rng);
    reverse_kl_loss_at(policy, behavior, states, noise.view())
}

/// [`reverse_kl_loss`] at fixed standard draws `z`: mean over rows of
/// `ln pi(a|s) - ln pi_D(a|s)` with `a = mu(s) + sigma(s) * z`.
pub fn reverse_kl_loss_at(
    policy: &QGaussianPolicy,
    behavior: &BehaviorModel,
    states: ArrayView2<'_, f64>,
    noise: ArrayView2<'_, f64>,
) -> Result<LossOutput> {
    check_rows(states.nrows(), noise.nrows())?;
    let pass = policy.pass(states)?;
    let actions = &pass.mu + &(&pass.sigma * &noise);
    let b = behavior.policy();
    let own = joint_log_prob(policy.q(), &pass.mu, &pass.sigma, actions.view());
    let beh = joint_log_prob(b.q(), &b.means(states)?, &b.scales(states)?, actions.view());
    let terms = &own.value - &beh.value;
    let n = states.nrows() as f64;
    let loss = terms.sum() / n;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("reverse KL estimate is {loss}")));
    }
    let d_a = (&own.d_x - &beh.d_x) / n;
    let d_mu = &own.d_mu / n + &d_a;
    let d_sigma = &own.d_sigma / n + &(&d_a * &noise);
    let grad = policy.backward(&pass, d_mu.view(), d_sigma.view());
    Ok(LossOutput { loss, grad, terms })
}

/// Returns `action` unchanged if it lies in the policy's support at `state`;
/// otherwise the closest (Euclidean) of `k` fresh policy samples.
pub fn rar_replace<R: Rng + ?Sized>(
    action: &[f64],
    policy: &QGaussianPolicy,
    state: &[f64],
    k: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::Config("RAR needs at least one candidate".into()));
    }
    let dist = policy.forward(state)?;
    if action.len() != dist.dim() {
        return Err(Error::DimensionMismatch {
            expected: dist.dim(),
            got: action.len(),
        });
    }
    if dist.in_support(action) {
        return Ok(action.to_vec());
    }
    let sq = |c: &[f64]| c.iter().zip(action).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let mut best = dist.sample(rng);
    let mut best_d = sq(&best);
    for _ in 1..k {
        let c = dist.sample(rng);
        let d = sq(&c);
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    Ok(best)
}

/// SPOT actor objective: mean of `-Q(s, a) - alpha ln pi_D(a|s)` with
/// `a = mu(s) + sigma(s) * z` drawn from the actor.
pub fn spot_actor_loss<R: Rng + ?Sized>(
    actor: &QGaussianPolicy,
    critic: &Critic,
    behavior: &BehaviorModel,
    states: ArrayView2<'_, f64>,
    alpha: f64,
    rng: &mut R,
) -> Result<LossOutput> {
    let noise = standard_noise(actor.q(), states.nrows(), actor.action_dim(), rng);
    spot_actor_loss_at(actor, critic, behavior, states, alpha, noise.view())
}

pub fn spot_actor_loss_at(
    actor: &QGaussianPolicy,
    critic: &Critic,
    behavior: &BehaviorModel,
    states: ArrayView2<'_, f64>,
    alpha: f64,
    noise: ArrayView2<'_, f64>,
) -> Result<LossOutput> {
    check_rows(states.nrows(), noise.nrows())?;
    let pass = actor.pass(states)?;
    let actions = &pass.mu + &(&pass.sigma * &noise);
    let (q, dq_da) = critic.q_and_action_grad(states, actions.view())?;
    let b = behavior.policy();
    let beh = joint_log_prob(b.q(), &b.means(states)?, &b.scales(states)?, actions.view());
    let terms = -&q - &(&beh.value * alpha);
    let n = states.nrows() as f64;
    let loss = terms.sum() / n;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("SPOT loss is {loss}")));
    }
    let d_a = -(&dq_da + &(&beh.d_x * alpha)) / n;
    let d_sigma = &d_a * &noise;
    let grad = actor.backward(&pass, d_a.view(), d_sigma.view());
    Ok(LossOutput { loss, grad, terms })
}
