//! In-sample value learning: `V` by expectile regression onto a Polyak
//! target `Q` at dataset actions, `Q` by a one-step backup onto `V`. Neither
//! loss queries `Q` at actions outside the dataset.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::dataset::Batch;
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, Gradient, Mlp};

const MAGIC: &[u8; 8] = b"F2TCRT\0\0";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CriticSpec {
    pub state_dim: usize,
    pub action_dim: usize,
    pub hidden: Vec<usize>,
    /// Expectile level in (0, 1).
    pub expectile: f64,
    pub gamma: f64,
    /// Actions are divided by this before entering the Q network.
    pub action_scale: f64,
}

impl CriticSpec {
    pub fn build<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Critic> {
        if !(self.expectile > 0.0 && self.expectile < 1.0) {
            return Err(Error::Config(format!("expectile must be in (0, 1), got {}", self.expectile)));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must be in [0, 1), got {}", self.gamma)));
        }
        if !(self.action_scale > 0.0) {
            return Err(Error::Config("action_scale must be positive".into()));
        }
        let mut q_sizes = vec![self.state_dim + self.action_dim];
        q_sizes.extend(&self.hidden);
        q_sizes.push(1);
        let mut v_sizes = vec![self.state_dim];
        v_sizes.extend(&self.hidden);
        v_sizes.push(1);
        let q_net = Mlp::new(&q_sizes, rng)?;
        let v_net = Mlp::new(&v_sizes, rng)?;
        Ok(Critic {
            q_target: q_net.clone(),
            q_net,
            v_net,
            expectile: self.expectile,
            gamma: self.gamma,
            action_scale: self.action_scale,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    pub q_net: Mlp,
    pub v_net: Mlp,
    pub q_target: Mlp,
    expectile: f64,
    gamma: f64,
    action_scale: f64,
}

/// Scalar loss, its gradient for the trained network, and the network's
/// outputs on the batch before any update.
#[derive(Debug, Clone)]
pub struct LossEval {
    pub loss: f64,
    pub grad: Gradient,
    pub outputs: Array1<f64>,
}

fn column(a: Array2<f64>) -> Array1<f64> {
    a.index_axis_move(Axis(1), 0)
}

impl Critic {
    pub fn from_parts(q_net: Mlp, v_net: Mlp, q_target: Mlp, expectile: f64, gamma: f64, action_scale: f64) -> Result<Self> {
        if q_net.sizes() != q_target.sizes() {
            return Err(Error::ArchitectureMismatch("q target differs from q network".into()));
        }
        if q_net.output_dim() != 1 || v_net.output_dim() != 1 {
            return Err(Error::ArchitectureMismatch("value networks must have scalar output".into()));
        }
        if q_net.input_dim() <= v_net.input_dim() {
            return Err(Error::ArchitectureMismatch("q network must take state and action".into()));
        }
        Ok(Self {
            q_net,
            v_net,
            q_target,
            expectile,
            gamma,
            action_scale,
        })
    }

    pub fn expectile(&self) -> f64 {
        self.expectile
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn action_scale(&self) -> f64 {
        self.action_scale
    }

    pub fn state_dim(&self) -> usize {
        self.v_net.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.q_net.input_dim() - self.v_net.input_dim()
    }

    fn q_input(&self, states: ArrayView2<'_, f64>, actions: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if states.nrows() != actions.nrows() {
            return Err(Error::DimensionMismatch {
                expected: states.nrows(),
                got: actions.nrows(),
            });
        }
        let scaled = &actions / self.action_scale;
        let joined = concatenate(Axis(1), &[states.view(), scaled.view()]).map_err(|e| Error::Domain(e.to_string()))?;
        Ok(joined)
    }

    pub fn q_values(&self, states: ArrayView2<'_, f64>, actions: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        Ok(column(self.q_net.forward(self.q_input(states, actions)?.view())?))
    }

    pub fn q_target_values(&self, states: ArrayView2<'_, f64>, actions: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        Ok(column(self.q_target.forward(self.q_input(states, actions)?.view())?))
    }

    pub fn v_values(&self, states: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        Ok(column(self.v_net.forward(states)?))
    }

    /// `Q(s, a) - V(s)` for a single pair.
    pub fn advantage(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        let s = ArrayView2::from_shape((1, state.len()), state).map_err(|e| Error::Domain(e.to_string()))?;
        let a = ArrayView2::from_shape((1, action.len()), action).map_err(|e| Error::Domain(e.to_string()))?;
        Ok(self.q_values(s, a)?[0] - self.v_values(s)?[0])
    }

    pub fn advantages(&self, states: ArrayView2<'_, f64>, actions: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        Ok(self.q_values(states, actions)? - self.v_values(states)?)
    }

    /// `Q(s, a)` and `dQ/da` in raw action units, one row per pair.
    pub fn q_and_action_grad(
        &self,
        states: ArrayView2<'_, f64>,
        actions: ArrayView2<'_, f64>,
    ) -> Result<(Array1<f64>, Array2<f64>)> {
        let input = self.q_input(states, actions)?;
        let (out, tape) = self.q_net.forward_tape(input.view())?;
        let ones = Array2::ones((input.nrows(), 1));
        let mut scratch = Gradient::zeros(self.q_net.num_params());
        let g_in = self
            .q_net
            .backward_into(&tape, ones.view(), &mut scratch, true)
            .expect("input gradient requested");
        let sd = self.state_dim();
        let da = g_in.slice(s![.., sd..]).to_owned() / self.action_scale;
        Ok((column(out), da))
    }

    /// Expectile regression of `V(s)` onto the target `Q(s, a)`:
    /// mean of `|tau - 1{u < 0}| u^2` with `u = Q_target(s, a) - V(s)`.
    /// The gradient is for `v_net` only.
    pub fn expectile_value_loss(&self, states: ArrayView2<'_, f64>, actions: ArrayView2<'_, f64>) -> Result<LossEval> {
        let target = self.q_target_values(states, actions)?;
        let (v_out, tape) = self.v_net.forward_tape(states)?;
        let v = column(v_out);
        let n = v.len() as f64;
        let mut loss = 0.0;
        let mut g_out = Array2::zeros((v.len(), 1));
        for i in 0..v.len() {
            let u = target[i] - v[i];
            let w = if u < 0.0 { 1.0 - self.expectile } else { self.expectile };
            loss += w * u * u;
            g_out[[i, 0]] = -2.0 * w * u / n;
        }
        let mut grad = Gradient::zeros(self.v_net.num_params());
        self.v_net.backward_into(&tape, g_out.view(), &mut grad, false);
        Ok(LossEval {
            loss: loss / n,
            grad,
            outputs: v,
        })
    }

    /// Mean squared error between `Q(s, a)` and the fixed target
    /// `r + gamma (1 - terminal) V(s')`. The gradient is for `q_net` only.
    pub fn q_td_loss(&self, batch: &Batch) -> Result<LossEval> {
        let v_next = self.v_values(batch.next_states.view())?;
        let target = &batch.rewards + &((1.0 - &batch.terminals) * &v_next * self.gamma);
        let input = self.q_input(batch.states.view(), batch.actions.view())?;
        let (q_out, tape) = self.q_net.forward_tape(input.view())?;
        let q = column(q_out);
        let n = q.len() as f64;
        let diff = &q - &target;
        let loss = diff.mapv(|d| d * d).sum() / n;
        let g_out = (diff * (2.0 / n)).insert_axis(Axis(1));
        let mut grad = Gradient::zeros(self.q_net.num_params());
        self.q_net.backward_into(&tape, g_out.view(), &mut grad, false);
        Ok(LossEval { loss, grad, outputs: q })
    }

    /// Snapshot: magic `F2TCRT\0\0`, `u32` version, `expectile`, `gamma`,
    /// `action_scale` as `f64`, then `q_net`, `v_net`, `q_target` in the
    /// network snapshot format. Little-endian.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        for v in [self.expectile, self.gamma, self.action_scale] {
            w.write_all(&v.to_le_bytes())?;
        }
        self.q_net.write_to(w)?;
        self.v_net.write_to(w)?;
        self.q_target.write_to(w)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Parse("not a critic snapshot (bad magic)".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let mut vals = [0.0; 3];
        let mut b8 = [0u8; 8];
        for v in &mut vals {
            r.read_exact(&mut b8)?;
            *v = f64::from_le_bytes(b8);
        }
        let q_net = Mlp::read_from(r)?;
        let v_net = Mlp::read_from(r)?;
        let q_target = Mlp::read_from(r)?;
        Self::from_parts(q_net, v_net, q_target, vals[0], vals[1], vals[2])
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

/// Losses and pre-update values from one critic step.
#[derive(Debug, Clone)]
pub struct CriticStep {
    pub v_loss: f64,
    pub q_loss: f64,
    /// `V(s)` before this step's update.
    pub v_before: Array1<f64>,
    /// `Q(s, a)` before this step's update.
    pub q_before: Array1<f64>,
}

impl CriticStep {
    pub fn advantages(&self) -> Array1<f64> {
        &self.q_before - &self.v_before
    }
}

#[derive(Debug, Clone)]
pub struct CriticOptimizer {
    q: Adam,
    v: Adam,
    polyak: f64,
}

impl CriticOptimizer {
    pub fn new(critic: &Critic, config: AdamConfig, polyak: f64) -> Self {
        Self {
            q: Adam::new(critic.q_net.num_params(), config),
            v: Adam::new(critic.v_net.num_params(), config),
            polyak,
        }
    }

    /// One V step, one Q step, then Polyak-average the Q target.
    pub fn step(&mut self, critic: &mut Critic, batch: &Batch) -> Result<CriticStep> {
        let v_eval = critic.expectile_value_loss(batch.states.view(), batch.actions.view())?;
        self.v.step(critic.v_net.params_mut(), v_eval.grad.as_slice())?;
        let q_eval = critic.q_td_loss(batch)?;
        self.q.step(critic.q_net.params_mut(), q_eval.grad.as_slice())?;
        let Critic { q_net, q_target, .. } = critic;
        q_target.polyak_toward(q_net, self.polyak)?;
        Ok(CriticStep {
            v_loss: v_eval.loss,
            q_loss: q_eval.loss,
            v_before: v_eval.outputs,
            q_before: q_eval.outputs,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn constant_net(inputs: usize, value: f64) -> Mlp {
        let mut m = Mlp::zeros(&[inputs, 1]).unwrap();
        m.output_bias_mut()[0] = value;
        m
    }

    fn constant_critic(q: f64, v: f64, expectile: f64, gamma: f64) -> Critic {
        Critic::from_parts(constant_net(3, q), constant_net(2, v), constant_net(3, q), expectile, gamma, 1.0).unwrap()
    }

    fn batch(r: f64, terminal: f64) -> Batch {
        Batch {
            states: array![[0.1, 0.2]],
            actions: array![[0.5]],
            rewards: array![r],
            next_states: array![[0.3, -0.1]],
            terminals: array![terminal],
        }
    }

    #[test]
    fn expectile_examples() {
        // u = q - v = -2 with tau 0.7: weight 0.3, loss 1.2
        let c = constant_critic(1.0, 3.0, 0.7, 0.9);
        let b = batch(0.0, 0.0);
        let e = c.expectile_value_loss(b.states.view(), b.actions.view()).unwrap();
        assert!((e.loss - 1.2).abs() < 1e-12);
        let sym = constant_critic(1.0, 3.0, 0.5, 0.9);
        let e = sym.expectile_value_loss(b.states.view(), b.actions.view()).unwrap();
        assert!((e.loss - 0.5 * 4.0).abs() < 1e-12);
        let zero = constant_critic(2.0, 2.0, 0.7, 0.9);
        let e = zero.expectile_value_loss(b.states.view(), b.actions.view()).unwrap();
        assert_eq!(e.loss, 0.0);
    }

    #[test]
    fn td_targets() {
        // q = 0: loss = target^2
        let c = constant_critic(0.0, 2.0, 0.7, 0.9);
        assert!((c.q_td_loss(&batch(1.0, 0.0)).unwrap().loss - 2.8f64.powi(2)).abs() < 1e-12);
        assert!((c.q_td_loss(&batch(1.0, 1.0)).unwrap().loss - 1.0).abs() < 1e-12);
        let g0 = constant_critic(0.0, 2.0, 0.7, 0.0);
        assert!((g0.q_td_loss(&batch(1.5, 0.0)).unwrap().loss - 2.25).abs() < 1e-12);
    }

    #[test]
    fn advantage_of_constant_nets() {
        let c = constant_critic(3.0, 1.0, 0.7, 0.9);
        assert_eq!(c.advantage(&[0.4, 0.1], &[2.0]).unwrap(), 2.0);
        let e = constant_critic(1.5, 1.5, 0.7, 0.9);
        assert_eq!(e.advantage(&[0.4, 0.1], &[2.0]).unwrap(), 0.0);
    }

    #[test]
    fn advantage_is_q_minus_v() {
        let spec = CriticSpec {
            state_dim: 2,
            action_dim: 1,
            hidden: vec![6],
            expectile: 0.7,
            gamma: 0.9,
            action_scale: 10.0,
        };
        let c = spec.build(&mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let s = array![[0.3, -0.2], [1.0, 0.0]];
        let a = array![[4.0], [-7.0]];
        let adv = c.advantages(s.view(), a.view()).unwrap();
        for i in 0..2 {
            let q = c.q_values(s.slice(s![i..i + 1, ..]), a.slice(s![i..i + 1, ..])).unwrap()[0];
            let v = c.v_values(s.slice(s![i..i + 1, ..])).unwrap()[0];
            assert_eq!(adv[i], q - v);
            assert_eq!(c.advantage(&s.row(i).to_vec(), &a.row(i).to_vec()).unwrap(), q - v);
        }
    }

    #[test]
    fn polyak_target_contracts() {
        let spec = CriticSpec {
            state_dim: 2,
            action_dim: 1,
            hidden: vec![4],
            expectile: 0.7,
            gamma: 0.9,
            action_scale: 1.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut c = spec.build(&mut rng).unwrap();
        c.q_target = Mlp::new(c.q_net.sizes(), &mut rng).unwrap();
        let dist = |c: &Critic| -> f64 {
            c.q_net.params().iter().zip(c.q_target.params()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
        };
        let d0 = dist(&c);
        let alpha = 0.005;
        let k = 200;
        for _ in 0..k {
            let Critic { q_net, q_target, .. } = &mut c;
            q_target.polyak_toward(q_net, alpha).unwrap();
        }
        let expect = d0 * (1.0 - alpha).powi(k);
        assert!((dist(&c) - expect).abs() < 1e-10 * d0);
    }

    #[test]
    fn snapshot_roundtrip() {
        let spec = CriticSpec {
            state_dim: 3,
            action_dim: 1,
            hidden: vec![5, 5],
            expectile: 0.8,
            gamma: 0.9,
            action_scale: 100.0,
        };
        let c = spec.build(&mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        assert_eq!(Critic::read_from(&mut buf.as_slice()).unwrap(), c);
    }

    #[test]
    fn spec_validation() {
        let mut spec = CriticSpec {
            state_dim: 3,
            action_dim: 1,
            hidden: vec![5],
            expectile: 1.0,
            gamma: 0.9,
            action_scale: 1.0,
        };
        assert!(spec.build(&mut ChaCha8Rng::seed_from_u64(0)).is_err());
        spec.expectile = 0.7;
        spec.gamma = 1.0;
        assert!(spec.build(&mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
