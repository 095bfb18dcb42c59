use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(num_params: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::DimensionMismatch {
                expected: self.m.len(),
                got: if params.len() != self.m.len() { params.len() } else { grad.len() },
            });
        }
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        self.t += 1;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// `target <- (1 - alpha) target + alpha online`, element-wise.
pub fn polyak_update(target: &mut [f64], online: &[f64], alpha: f64) {
    assert_eq!(target.len(), online.len(), "polyak_update shape mismatch");
    for (t, &o) in target.iter_mut().zip(online) {
        *t = (1.0 - alpha) * *t + alpha * o;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_keeps_params() {
        let mut adam = Adam::new(3, AdamConfig::default());
        let mut p = vec![1.0, -2.0, 0.5];
        adam.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut adam = Adam::new(1, AdamConfig::with_lr(0.1));
        let mut p = vec![0.0];
        adam.step(&mut p, &[1.0]).unwrap();
        assert!((p[0] + 0.1).abs() < 1e-8);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut adam = Adam::new(1, AdamConfig::with_lr(5e-4));
        let mut x = vec![1.0];
        let mut prev = 1.0;
        for _ in 0..1000 {
            let g = 2.0 * x[0];
            adam.step(&mut x, &[g]).unwrap();
            let f = x[0] * x[0];
            assert!(f < prev, "f(x) must decrease: {f} >= {prev}");
            prev = f;
        }
        assert!(prev < 0.3, "f = {prev}");
        assert_eq!(adam.steps(), 1000);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut adam = Adam::new(2, AdamConfig::default());
        assert!(adam.step(&mut [0.0; 3], &[0.0; 3]).is_err());
    }

    #[test]
    fn polyak_examples() {
        let mut t = vec![0.0, 2.0];
        polyak_update(&mut t, &[1.0, 4.0], 1.0);
        assert_eq!(t, vec![1.0, 4.0]);
        let mut t = vec![0.0, 2.0];
        polyak_update(&mut t, &[1.0, 4.0], 0.0);
        assert_eq!(t, vec![0.0, 2.0]);
        let mut t = vec![0.0];
        polyak_update(&mut t, &[1.0], 0.005);
        assert_eq!(t, vec![0.005]);
    }
}
