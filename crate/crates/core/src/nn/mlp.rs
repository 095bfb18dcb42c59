use std::io::{Read, Write};

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"F2TMLP\0\0";
const FORMAT_VERSION: u32 = 1;

/// Multilayer perceptron with ReLU hidden layers and an affine output layer.
///
/// Parameters live in one flat vector, layer by layer; each layer stores its
/// weight matrix row-major as `(out, in)` followed by its bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Flat gradient aligned with [`Mlp::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient(pub Vec<f64>);

impl Gradient {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn scale(&mut self, k: f64) {
        self.0.iter_mut().for_each(|g| *g *= k);
    }

    pub fn add_scaled(&mut self, other: &Gradient, k: f64) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += k * b;
        }
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// Layer inputs recorded by [`Mlp::forward_tape`] for the backward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    inputs: Vec<Array2<f64>>,
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

impl Mlp {
    /// Fan-in scaled uniform initialization, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`
    /// for weights and biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        let mut offset = 0;
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let n = fan_out * fan_in + fan_out;
            for p in &mut net.params[offset..offset + n] {
                *p = rng.gen_range(-bound..bound);
            }
            offset += n;
        }
        Ok(net)
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::ArchitectureMismatch(format!(
                "layer sizes must list at least two positive widths, got {sizes:?}"
            )));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            params: vec![0.0; param_count(sizes)],
        })
    }

    pub fn from_parts(sizes: Vec<usize>, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(&sizes)?;
        if params.len() != net.params.len() {
            return Err(Error::DimensionMismatch {
                expected: net.params.len(),
                got: params.len(),
            });
        }
        net.params = params;
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layer_offset(&self, layer: usize) -> usize {
        param_count(&self.sizes[..=layer])
    }

    fn layer(&self, layer: usize) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let (fan_in, fan_out) = (self.sizes[layer], self.sizes[layer + 1]);
        let off = self.layer_offset(layer);
        let w = ArrayView2::from_shape((fan_out, fan_in), &self.params[off..off + fan_out * fan_in]).unwrap();
        let b = ArrayView1::from(&self.params[off + fan_out * fan_in..off + fan_out * fan_in + fan_out]);
        (w, b)
    }

    /// Output-layer bias, for tests and hand-built networks.
    pub fn output_bias_mut(&mut self) -> &mut [f64] {
        let last = self.num_layers() - 1;
        let (fan_in, fan_out) = (self.sizes[last], self.sizes[last + 1]);
        let off = self.layer_offset(last) + fan_out * fan_in;
        &mut self.params[off..off + fan_out]
    }

    fn check_input(&self, x: &ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        Ok(())
    }

    fn affine(&self, layer: usize, a: &ArrayView2<'_, f64>) -> Array2<f64> {
        let (w, b) = self.layer(layer);
        let mut z = Array2::zeros((a.nrows(), w.nrows()));
        z.rows_mut().into_iter().for_each(|mut row| row.assign(&b));
        general_mat_mul(1.0, a, &w.t(), 1.0, &mut z);
        z
    }

    /// Batched forward pass; rows of `x` are inputs.
    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let last = self.num_layers() - 1;
        let mut a = self.affine(0, &x);
        for l in 1..=last {
            a.mapv_inplace(|v| v.max(0.0));
            a = self.affine(l, &a.view());
        }
        Ok(a)
    }

    pub fn forward_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, x.len()), x).unwrap();
        Ok(self.forward(view)?.into_raw_vec_and_offset().0)
    }

    /// Forward pass that records what [`Mlp::backward`] needs.
    pub fn forward_tape(&self, x: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Tape)> {
        self.check_input(&x)?;
        let mut inputs = Vec::with_capacity(self.num_layers());
        inputs.push(x.to_owned());
        let mut a = self.affine(0, &x);
        for l in 1..self.num_layers() {
            a.mapv_inplace(|v| v.max(0.0));
            let next = self.affine(l, &a.view());
            inputs.push(a);
            a = next;
        }
        Ok((a, Tape { inputs }))
    }

    /// Accumulates `d loss / d params` into `grad` given `grad_out = d loss / d output`
    /// (rows aligned with the taped batch). Returns `d loss / d input` when asked.
    pub fn backward_into(
        &self,
        tape: &Tape,
        grad_out: ArrayView2<'_, f64>,
        grad: &mut Gradient,
        want_input_grad: bool,
    ) -> Option<Array2<f64>> {
        assert_eq!(grad.len(), self.num_params(), "gradient does not match network");
        assert_eq!(grad_out.ncols(), self.output_dim(), "output gradient width");
        let mut g = grad_out.to_owned();
        for l in (0..self.num_layers()).rev() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = self.layer_offset(l);
            let a = &tape.inputs[l];
            {
                let (dw, rest) = grad.0[off..off + fan_out * fan_in + fan_out].split_at_mut(fan_out * fan_in);
                let mut dw = ArrayViewMut2::from_shape((fan_out, fan_in), dw).unwrap();
                general_mat_mul(1.0, &g.t(), a, 1.0, &mut dw);
                for (db, col) in rest.iter_mut().zip(g.axis_iter(Axis(1))) {
                    *db += col.sum();
                }
            }
            if l == 0 && !want_input_grad {
                return None;
            }
            let (w, _) = self.layer(l);
            let mut g_in = g.dot(&w);
            if l > 0 {
                g_in.zip_mut_with(a, |gi, &ai| {
                    if ai <= 0.0 {
                        *gi = 0.0;
                    }
                });
            }
            g = g_in;
        }
        Some(g)
    }

    pub fn backward(&self, tape: &Tape, grad_out: ArrayView2<'_, f64>) -> (Gradient, Array2<f64>) {
        let mut grad = Gradient::zeros(self.num_params());
        let g_in = self.backward_into(tape, grad_out, &mut grad, true).unwrap();
        (grad, g_in)
    }

    fn check_same_shape(&self, other: &Mlp) -> Result<()> {
        if self.sizes != other.sizes {
            return Err(Error::ArchitectureMismatch(format!(
                "{:?} vs {:?}",
                self.sizes, other.sizes
            )));
        }
        Ok(())
    }

    /// Overwrites this network's parameters with `other`'s.
    pub fn copy_from(&mut self, other: &Mlp) -> Result<()> {
        self.check_same_shape(other)?;
        self.params.copy_from_slice(&other.params);
        Ok(())
    }

    /// `self <- (1 - alpha) self + alpha online`.
    pub fn polyak_toward(&mut self, online: &Mlp, alpha: f64) -> Result<()> {
        self.check_same_shape(online)?;
        super::polyak_update(&mut self.params, &online.params, alpha);
        Ok(())
    }

    /// Binary snapshot: 8-byte magic `F2TMLP\0\0`, `u32` format version, `u32`
    /// number of layer sizes, each size as `u64`, `u64` parameter count, then
    /// every parameter as an IEEE-754 `f64`. All integers and floats are
    /// little-endian; parameters follow the flat layer order.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.sizes.len() as u32).to_le_bytes())?;
        for &s in &self.sizes {
            w.write_all(&(s as u64).to_le_bytes())?;
        }
        w.write_all(&(self.params.len() as u64).to_le_bytes())?;
        for p in &self.params {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Parse("not a network snapshot (bad magic)".into()));
        }
        let version = read_u32(r)?;
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let n_sizes = read_u32(r)? as usize;
        if !(2..=64).contains(&n_sizes) {
            return Err(Error::Parse(format!("implausible layer count {n_sizes}")));
        }
        let sizes = (0..n_sizes)
            .map(|_| read_u64(r).map(|s| s as usize))
            .collect::<Result<Vec<_>>>()?;
        let n_params = read_u64(r)? as usize;
        if sizes.contains(&0) || n_params != param_count(&sizes) {
            return Err(Error::Parse(format!(
                "parameter count {n_params} does not match sizes {sizes:?}"
            )));
        }
        let mut params = Vec::with_capacity(n_params);
        let mut buf = [0u8; 8];
        for _ in 0..n_params {
            r.read_exact(&mut buf)?;
            params.push(f64::from_le_bytes(buf));
        }
        Self::from_parts(sizes, params)
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_net_outputs_zero() {
        let net = Mlp::zeros(&[3, 5, 2]).unwrap();
        let y = net.forward_one(&[1.0, -2.0, 3.0]).unwrap();
        assert_eq!(y, vec![0.0, 0.0]);
    }

    #[test]
    fn identity_linear_layer() {
        let net = Mlp::from_parts(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(net.forward_one(&[0.25, -7.0]).unwrap(), vec![0.25, -7.0]);
    }

    #[test]
    fn hand_computed_2_2_1() {
        // h = relu(W1 x + b1), y = W2 h + b2
        // W1 = [[1, -1], [0.5, 2]], b1 = [0, -1], W2 = [3, -2], b2 = 0.5
        let net = Mlp::from_parts(vec![2, 2, 1], vec![1.0, -1.0, 0.5, 2.0, 0.0, -1.0, 3.0, -2.0, 0.5]).unwrap();
        // x = (2, 1): pre = (1, 2), h = (1, 2), y = 3 - 4 + 0.5 = -0.5
        assert_eq!(net.forward_one(&[2.0, 1.0]).unwrap(), vec![-0.5]);
        // x = (0, 0.2): pre = (-0.2, -0.6), h = 0, y = 0.5
        assert_eq!(net.forward_one(&[0.0, 0.2]).unwrap(), vec![0.5]);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let net = Mlp::zeros(&[3, 2]).unwrap();
        assert!(matches!(
            net.forward_one(&[1.0]),
            Err(Error::DimensionMismatch { expected: 3, got: 1 })
        ));
        assert!(Mlp::zeros(&[3]).is_err());
        assert!(Mlp::zeros(&[3, 0, 1]).is_err());
    }

    #[test]
    fn param_count_matches_sizes() {
        let net = Mlp::zeros(&[8, 256, 256, 1]).unwrap();
        assert_eq!(net.num_params(), 8 * 256 + 256 + 256 * 256 + 256 + 256 + 1);
    }

    fn fd_check(net: &Mlp, x: &Array2<f64>, weights: &Array2<f64>) {
        // loss = sum(weights * out^2) / B
        let b = x.nrows() as f64;
        let loss = |n: &Mlp| -> f64 { (n.forward(x.view()).unwrap().mapv(|v| v * v) * weights).sum() / b };
        let (out, tape) = net.forward_tape(x.view()).unwrap();
        let g_out = &out * weights * 2.0 / b;
        let (grad, g_in) = net.backward(&tape, g_out.view());
        let h = 1e-5;
        let mut probe = net.clone();
        for i in 0..net.num_params() {
            let orig = probe.params[i];
            probe.params[i] = orig + h;
            let up = loss(&probe);
            probe.params[i] = orig - h;
            let down = loss(&probe);
            probe.params[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let denom = fd.abs().max(grad.0[i].abs()).max(1e-6);
            assert!((fd - grad.0[i]).abs() / denom < 1e-4, "param {i}: fd {fd} vs {}", grad.0[i]);
        }
        for r in 0..x.nrows() {
            for c in 0..x.ncols() {
                let mut xp = x.clone();
                xp[[r, c]] += h;
                let mut xm = x.clone();
                xm[[r, c]] -= h;
                let lp = (net.forward(xp.view()).unwrap().mapv(|v| v * v) * weights).sum() / b;
                let lm = (net.forward(xm.view()).unwrap().mapv(|v| v * v) * weights).sum() / b;
                let fd = (lp - lm) / (2.0 * h);
                assert!((fd - g_in[[r, c]]).abs() <= 1e-4 * fd.abs().max(1e-6) + 1e-9);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = Mlp::new(&[3, 4, 4, 2], &mut rng).unwrap();
        let x = Array2::from_shape_fn((5, 3), |_| rng.gen_range(-1.0..1.0));
        let w = Array2::from_shape_fn((5, 2), |_| rng.gen_range(0.5..1.5));
        fd_check(&net, &x, &w);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::new(&[2, 4, 1], &mut rng).unwrap();
        let x = array![[0.1, 0.2], [0.3, -0.4]];
        let (_, tape) = net.forward_tape(x.view()).unwrap();
        let (g, _) = net.backward(&tape, Array2::zeros((2, 1)).view());
        assert!(g.0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_is_linear_in_output_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Mlp::new(&[2, 4, 2], &mut rng).unwrap();
        let x = array![[0.1, 0.2], [0.3, -0.4], [1.0, 0.5]];
        let (_, tape) = net.forward_tape(x.view()).unwrap();
        let g1 = Array2::from_shape_fn((3, 2), |_| rng.gen_range(-1.0..1.0));
        let g2 = Array2::from_shape_fn((3, 2), |_| rng.gen_range(-1.0..1.0));
        let (a, _) = net.backward(&tape, g1.view());
        let (b, _) = net.backward(&tape, g2.view());
        let (c, _) = net.backward(&tape, (&g1 * 2.0 - &g2 * 3.0).view());
        for i in 0..a.len() {
            assert!((c.0[i] - (2.0 * a.0[i] - 3.0 * b.0[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn snapshot_roundtrip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = Mlp::new(&[4, 7, 3], &mut rng).unwrap();
        let mut buf = Vec::new();
        net.write_to(&mut buf).unwrap();
        let back = Mlp::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(net.params().len(), back.params().len());
        assert!(net.params().iter().zip(back.params()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(back.sizes(), net.sizes());
    }

    #[test]
    fn snapshot_rejects_unknown_version() {
        let net = Mlp::zeros(&[1, 1]).unwrap();
        let mut buf = Vec::new();
        net.write_to(&mut buf).unwrap();
        buf[8] = 9;
        assert!(matches!(Mlp::read_from(&mut buf.as_slice()), Err(Error::UnsupportedVersion(9))));
        buf[0] = b'X';
        assert!(Mlp::read_from(&mut buf.as_slice()).is_err());
    }
}
