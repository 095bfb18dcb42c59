//! State-conditioned q-Gaussian policies.
//!
//! The mean and the log-scale come from two independent networks so the
//! mean can be copied between policies without touching the scale. Both heads
//! work in normalized units and are mapped to raw actions by `action_scale`:
//!
//! ```text
//! mu(s)    = action_scale * mean_net(s)
//! sigma(s) = clamp(action_scale * exp(logsigma_net(s)), sigma_min, sigma_max)
//! ```
//!
//! Fresh policies start with `sigma` near `sqrt(sigma_min * sigma_max)`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2, Zip};
use rand::Rng;

use crate::deformed::EntropicIndex;
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, Gradient, Mlp, Tape};
use crate::qgaussian::{radius, QGaussianProduct};

const MAGIC: &[u8; 8] = b"F2TPOL\0\0";
const FORMAT_VERSION: u32 = 1;

/// Everything needed to build a fresh policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySpec {
    pub q: EntropicIndex,
    pub state_dim: usize,
    pub action_dim: usize,
    pub hidden: Vec<usize>,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub action_scale: f64,
}

impl PolicySpec {
    pub fn build<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<QGaussianPolicy> {
        if !(self.sigma_min > 0.0 && self.sigma_min <= self.sigma_max && self.sigma_max.is_finite()) {
            return Err(Error::Config(format!(
                "scale bounds must satisfy 0 < sigma_min <= sigma_max < inf, got [{}, {}]",
                self.sigma_min, self.sigma_max
            )));
        }
        if !(self.action_scale > 0.0 && self.action_scale.is_finite()) {
            return Err(Error::Config(format!("action_scale must be positive, got {}", self.action_scale)));
        }
        let mut sizes = vec![self.state_dim];
        sizes.extend(&self.hidden);
        sizes.push(self.action_dim);
        let mean_net = Mlp::new(&sizes, rng)?;
        let mut logsigma_net = Mlp::new(&sizes, rng)?;
        // start the scale at the log-midpoint of its bounds; starting on a
        // bound would zero its gradient
        let mid = 0.5 * (self.sigma_min.ln() + self.sigma_max.ln()) - self.action_scale.ln();
        logsigma_net.output_bias_mut().iter_mut().for_each(|b| *b = mid);
        Ok(QGaussianPolicy {
            q: self.q,
            mean_net,
            logsigma_net,
            sigma_min: self.sigma_min,
            sigma_max: self.sigma_max,
            action_scale: self.action_scale,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QGaussianPolicy {
    q: EntropicIndex,
    mean_net: Mlp,
    logsigma_net: Mlp,
    sigma_min: f64,
    sigma_max: f64,
    action_scale: f64,
}

/// Batched head outputs plus the tapes for backpropagation.
#[derive(Debug, Clone)]
pub struct PolicyPass {
    pub mu: Array2<f64>,
    pub sigma: Array2<f64>,
    /// `d sigma / d logsigma_net output`: the unclamped scale inside the
    /// bounds, zero where the clamp is active.
    sigma_slope: Array2<f64>,
    mean_tape: Tape,
    logsigma_tape: Tape,
}

impl PolicyPass {
    pub fn batch_size(&self) -> usize {
        self.mu.nrows()
    }
}

/// Gradients for both heads of a policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGradient {
    pub mean: Gradient,
    pub logsigma: Gradient,
}

impl PolicyGradient {
    pub fn zeros(policy: &QGaussianPolicy) -> Self {
        Self {
            mean: Gradient::zeros(policy.mean_net.num_params()),
            logsigma: Gradient::zeros(policy.logsigma_net.num_params()),
        }
    }

    pub fn norm(&self) -> f64 {
        (self.mean.norm().powi(2) + self.logsigma.norm().powi(2)).sqrt()
    }
}

impl QGaussianPolicy {
    pub fn from_parts(
        q: EntropicIndex,
        mean_net: Mlp,
        logsigma_net: Mlp,
        sigma_min: f64,
        sigma_max: f64,
        action_scale: f64,
    ) -> Result<Self> {
        if mean_net.sizes() != logsigma_net.sizes() {
            return Err(Error::ArchitectureMismatch(format!(
                "mean net {:?} and scale net {:?} differ",
                mean_net.sizes(),
                logsigma_net.sizes()
            )));
        }
        if !(sigma_min > 0.0 && sigma_min <= sigma_max && action_scale > 0.0) {
            return Err(Error::Config("invalid scale bounds or action scale".into()));
        }
        Ok(Self {
            q,
            mean_net,
            logsigma_net,
            sigma_min,
            sigma_max,
            action_scale,
        })
    }

    pub fn q(&self) -> EntropicIndex {
        self.q
    }

    pub fn state_dim(&self) -> usize {
        self.mean_net.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.mean_net.output_dim()
    }

    pub fn sigma_bounds(&self) -> (f64, f64) {
        (self.sigma_min, self.sigma_max)
    }

    pub fn action_scale(&self) -> f64 {
        self.action_scale
    }

    pub fn mean_net(&self) -> &Mlp {
        &self.mean_net
    }

    pub fn mean_net_mut(&mut self) -> &mut Mlp {
        &mut self.mean_net
    }

    pub fn logsigma_net(&self) -> &Mlp {
        &self.logsigma_net
    }

    pub fn logsigma_net_mut(&mut self) -> &mut Mlp {
        &mut self.logsigma_net
    }

    fn check_state(&self, state: &[f64]) -> Result<()> {
        if state.len() != self.state_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.state_dim(),
                got: state.len(),
            });
        }
        Ok(())
    }

    fn scale_from_raw(&self, raw: f64) -> f64 {
        (self.action_scale * raw.exp()).clamp(self.sigma_min, self.sigma_max)
    }

    /// Action distribution at `state`.
    pub fn forward(&self, state: &[f64]) -> Result<QGaussianProduct> {
        self.check_state(state)?;
        let mu = self.mean_net.forward_one(state)?.into_iter().map(|m| self.action_scale * m).collect();
        let sigma = self
            .logsigma_net
            .forward_one(state)?
            .into_iter()
            .map(|l| self.scale_from_raw(l))
            .collect();
        QGaussianProduct::new(self.q, mu, sigma)
    }

    /// Batched means only.
    pub fn means(&self, states: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.mean_net.forward(states)? * self.action_scale)
    }

    /// Batched scales only.
    pub fn scales(&self, states: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.logsigma_net.forward(states)?.mapv(|l| self.scale_from_raw(l)))
    }

    /// Batched forward pass keeping what [`QGaussianPolicy::backward`] needs.
    pub fn pass(&self, states: ArrayView2<'_, f64>) -> Result<PolicyPass> {
        let (mean_out, mean_tape) = self.mean_net.forward_tape(states)?;
        let (log_out, logsigma_tape) = self.logsigma_net.forward_tape(states)?;
        let raw = log_out.mapv(|l| self.action_scale * l.exp());
        let sigma = raw.mapv(|s| s.clamp(self.sigma_min, self.sigma_max));
        let sigma_slope = raw.mapv(|s| if s > self.sigma_min && s < self.sigma_max { s } else { 0.0 });
        Ok(PolicyPass {
            mu: mean_out * self.action_scale,
            sigma,
            sigma_slope,
            mean_tape,
            logsigma_tape,
        })
    }

    /// Accumulates parameter gradients given `d loss / d mu` and
    /// `d loss / d sigma` for every row of the pass.
    pub fn backward_into(
        &self,
        pass: &PolicyPass,
        d_mu: ArrayView2<'_, f64>,
        d_sigma: ArrayView2<'_, f64>,
        grad: &mut PolicyGradient,
    ) {
        let g_mean = &d_mu * self.action_scale;
        self.mean_net.backward_into(&pass.mean_tape, g_mean.view(), &mut grad.mean, false);
        let mut g_log = d_sigma.to_owned();
        Zip::from(&mut g_log).and(&pass.sigma_slope).for_each(|g, &s| *g *= s);
        self.logsigma_net.backward_into(&pass.logsigma_tape, g_log.view(), &mut grad.logsigma, false);
    }

    pub fn backward(&self, pass: &PolicyPass, d_mu: ArrayView2<'_, f64>, d_sigma: ArrayView2<'_, f64>) -> PolicyGradient {
        let mut grad = PolicyGradient::zeros(self);
        self.backward_into(pass, d_mu, d_sigma, &mut grad);
        grad
    }

    /// Joint log-density; `-inf` when any coordinate is out of support.
    pub fn log_prob(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        self.forward(state)?.log_density(action)
    }

    pub fn sample_action<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        Ok(self.forward(state)?.sample(rng))
    }

    /// Makes this policy's mean head bit-identical to `source`'s. The scale
    /// head is left alone.
    pub fn copy_mean_parameters(&mut self, source: &QGaussianPolicy) -> Result<()> {
        if self.action_scale != source.action_scale {
            return Err(Error::ArchitectureMismatch(format!(
                "action scales differ: {} vs {}",
                self.action_scale, source.action_scale
            )));
        }
        self.mean_net.copy_from(&source.mean_net)
    }

    /// Per-dimension support width `2 sigma sqrt(2/(1-q))`; infinite for `q >= 1`.
    pub fn support_width(&self, state: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(state)?.support_widths())
    }

    /// Mean support width over a batch of states, averaged across dimensions.
    pub fn mean_support_width(&self, states: ArrayView2<'_, f64>) -> Result<f64> {
        if !self.q.is_sparse() {
            return Ok(f64::INFINITY);
        }
        let sigma = self.scales(states)?;
        let unit = 2.0 * radius(self.q, 1.0);
        Ok(sigma.mean().unwrap_or(0.0) * unit)
    }

    /// Snapshot: 8-byte magic `F2TPOL\0\0`, `u32` version, then `q`,
    /// `sigma_min`, `sigma_max`, `action_scale` as `f64`, `state_dim` and
    /// `action_dim` as `u64`, followed by the mean and scale networks in the
    /// network snapshot format. Little-endian throughout.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        for v in [self.q.value(), self.sigma_min, self.sigma_max, self.action_scale] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&(self.state_dim() as u64).to_le_bytes())?;
        w.write_all(&(self.action_dim() as u64).to_le_bytes())?;
        self.mean_net.write_to(w)?;
        self.logsigma_net.write_to(w)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Parse("not a policy snapshot (bad magic)".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let mut b8 = [0u8; 8];
        let mut f = || -> Result<f64> {
            r.read_exact(&mut b8)?;
            Ok(f64::from_le_bytes(b8))
        };
        let (q, sigma_min, sigma_max, action_scale) = (f()?, f()?, f()?, f()?);
        let mut dims = [0u64; 2];
        for d in &mut dims {
            r.read_exact(&mut b8)?;
            *d = u64::from_le_bytes(b8);
        }
        let mean_net = Mlp::read_from(r)?;
        let logsigma_net = Mlp::read_from(r)?;
        if mean_net.input_dim() as u64 != dims[0] || mean_net.output_dim() as u64 != dims[1] {
            return Err(Error::Parse("policy header dimensions disagree with networks".into()));
        }
        Self::from_parts(EntropicIndex::new(q)?, mean_net, logsigma_net, sigma_min, sigma_max, action_scale)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

/// Adam state for both heads of one policy.
#[derive(Debug, Clone)]
pub struct PolicyOptimizer {
    mean: Adam,
    logsigma: Adam,
}

impl PolicyOptimizer {
    pub fn new(policy: &QGaussianPolicy, config: AdamConfig) -> Self {
        Self {
            mean: Adam::new(policy.mean_net.num_params(), config),
            logsigma: Adam::new(policy.logsigma_net.num_params(), config),
        }
    }

    pub fn step(&mut self, policy: &mut QGaussianPolicy, grad: &PolicyGradient) -> Result<()> {
        self.mean.step(policy.mean_net.params_mut(), grad.mean.as_slice())?;
        self.logsigma.step(policy.logsigma_net.params_mut(), grad.logsigma.as_slice())
    }
}
