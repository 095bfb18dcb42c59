//! q-Gaussian distributions.
//!
//! The univariate density is `exp_q(-(x-mu)^2 / (2 sigma^2)) / Z_q(sigma)`.
//! For `q < 1` it is supported on `(mu - R, mu + R)` with
//! `R = sigma * sqrt(2/(1-q))`; for `1 <= q < 3` it is supported everywhere,
//! with polynomial tails when `q > 1`.
//!
//! Normalizers (`k = 1/|1-q|`):
//!
//! ```text
//! q < 1:  Z = sigma * sqrt(2 pi / (1-q)) * Gamma(k + 1)   / Gamma(k + 3/2)
//! q = 1:  Z = sigma * sqrt(2 pi)
//! q > 1:  Z = sigma * sqrt(2 pi / (q-1)) * Gamma(k - 1/2) / Gamma(k)
//! ```
//!
//! Samples come from the generalized Box-Muller method: with `u1, u2` uniform
//! on `(0, 1)` and `q' = (1+q)/(3-q)`, the deviate
//! `sqrt(-2 ln_{q'} u1) cos(2 pi u2)` has density proportional to
//! `exp_q(-x^2/(3-q))`, so it is rescaled by `sqrt(2/(3-q))` to unit scale.

use std::f64::consts::{LN_2, PI};

use rand::Rng;
use rand_distr::Open01;
use statrs::distribution::{Beta, Continuous, ContinuousCDF, Normal, StudentsT};
use statrs::function::gamma::ln_gamma;

use crate::deformed::{ln_q_unchecked, EntropicIndex};
use crate::error::{Error, Result};

/// `ln Z_q` at unit scale.
pub fn log_unit_normalizer(q: EntropicIndex) -> f64 {
    let q = q.value();
    if q == 1.0 {
        0.5 * (2.0 * PI).ln()
    } else if q < 1.0 {
        let k = 1.0 / (1.0 - q);
        0.5 * LN_2 + 0.5 * (PI / (1.0 - q)).ln() + ln_gamma(k + 1.0) - ln_gamma(k + 1.5)
    } else {
        let k = 1.0 / (q - 1.0);
        0.5 * LN_2 + 0.5 * (PI / (q - 1.0)).ln() + ln_gamma(k - 0.5) - ln_gamma(k)
    }
}

/// Normalizing constant `Z_q(sigma)`.
pub fn normalizer(q: EntropicIndex, sigma: f64) -> Result<f64> {
    check_scale(sigma)?;
    Ok(sigma * log_unit_normalizer(q).exp())
}

fn check_scale(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("scale must be positive and finite, got {sigma}")))
    }
}

/// Support half-width `sigma * sqrt(2/(1-q))`, infinite for `q >= 1`.
#[inline]
pub fn radius(q: EntropicIndex, sigma: f64) -> f64 {
    if q.is_sparse() {
        sigma * (2.0 / (1.0 - q.value())).sqrt()
    } else {
        f64::INFINITY
    }
}

/// Log-density together with its partial derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogDensityGrad {
    pub value: f64,
    pub d_mu: f64,
    pub d_sigma: f64,
    pub d_x: f64,
}

/// Log-density of `N_q(mu, sigma)` at `x` with derivatives in `mu`, `sigma`
/// and `x`. Outside the support the value is `-inf` and all derivatives are 0.
///
/// `log_z_unit` is [`log_unit_normalizer`] for `q`, passed in so batched
/// callers evaluate the Gamma functions once.
#[inline]
pub fn log_density_grad(q: EntropicIndex, log_z_unit: f64, mu: f64, sigma: f64, x: f64) -> LogDensityGrad {
    let diff = x - mu;
    let inv_var = 1.0 / (sigma * sigma);
    let y = 0.5 * diff * diff * inv_var;
    let qv = q.value();
    let (kernel, g_y) = if qv == 1.0 {
        (-y, -1.0)
    } else {
        let base = deformed_base(q, diff, sigma, y);
        if base <= 0.0 {
            return LogDensityGrad {
                value: f64::NEG_INFINITY,
                d_mu: 0.0,
                d_sigma: 0.0,
                d_x: 0.0,
            };
        }
        (base.ln() / (1.0 - qv), -1.0 / base)
    };
    let d_x = g_y * diff * inv_var;
    LogDensityGrad {
        value: kernel - sigma.ln() - log_z_unit,
        d_mu: -d_x,
        d_sigma: -2.0 * g_y * y / sigma - 1.0 / sigma,
        d_x,
    }
}

/// `1 + (1-q)(-y)`, computed for sparse indices as `(1-t)(1+t)` with
/// `t = |x-mu|/R` so it is positive exactly when `|x-mu|/R < 1`.
#[inline]
fn deformed_base(q: EntropicIndex, diff: f64, sigma: f64, y: f64) -> f64 {
    if q.is_sparse() {
        let t = diff.abs() / radius(q, sigma);
        (1.0 - t) * (1.0 + t)
    } else {
        1.0 - (1.0 - q.value()) * y
    }
}

/// Univariate q-Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QGaussian1D {
    q: EntropicIndex,
    mu: f64,
    sigma: f64,
}

impl QGaussian1D {
    pub fn new(q: EntropicIndex, mu: f64, sigma: f64) -> Result<Self> {
        check_scale(sigma)?;
        if !mu.is_finite() {
            return Err(Error::Domain(format!("location must be finite, got {mu}")));
        }
        Ok(Self { q, mu, sigma })
    }

    pub fn standard(q: EntropicIndex) -> Self {
        Self { q, mu: 0.0, sigma: 1.0 }
    }

    pub fn q(&self) -> EntropicIndex {
        self.q
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// `-inf` outside the support.
    pub fn log_density(&self, x: f64) -> f64 {
        log_density_grad(self.q, log_unit_normalizer(self.q), self.mu, self.sigma, x).value
    }

    pub fn density(&self, x: f64) -> f64 {
        self.log_density(x).exp()
    }

    pub fn support_radius(&self) -> f64 {
        radius(self.q, self.sigma)
    }

    pub fn in_support(&self, x: f64) -> bool {
        (x - self.mu).abs() / self.support_radius() < 1.0
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.mu + self.sigma * sample_standard(self.q, rng)
    }

    /// Width of the central interval holding `mass` of the probability.
    pub fn central_interval_width(&self, mass: f64) -> Result<f64> {
        Ok(self.sigma * standard_central_interval_width(self.q, mass)?)
    }
}

/// Entropic index `q'` fed to the Box-Muller q-logarithm so the output has
/// index `q`; inverse of `q = (3q' - 1)/(q' + 1)`.
#[inline]
pub fn gbmm_index(q: EntropicIndex) -> f64 {
    let q = q.value();
    (1.0 + q) / (3.0 - q)
}

/// One draw from the unit-scale q-Gaussian `N_q(0, 1)`.
pub fn sample_standard<R: Rng + ?Sized>(q: EntropicIndex, rng: &mut R) -> f64 {
    let u1: f64 = rng.sample(Open01);
    let u2: f64 = rng.sample(Open01);
    let q_prime = gbmm_index(q);
    let radius_sq = -2.0 * ln_q_unchecked(u1, q_prime);
    let scale = (2.0 / (3.0 - q.value())).sqrt();
    scale * radius_sq.sqrt() * (2.0 * PI * u2).cos()
}

fn standard_central_interval_width(q: EntropicIndex, mass: f64) -> Result<f64> {
    if !(mass > 0.0 && mass < 1.0) {
        return Err(Error::Domain(format!("interval mass must be in (0, 1), got {mass}")));
    }
    let upper = 0.5 + 0.5 * mass;
    let qv = q.value();
    let half = if qv == 1.0 {
        Normal::new(0.0, 1.0).map_err(stat_err)?.inverse_cdf(upper)
    } else if qv < 1.0 {
        // (x/R + 1)/2 ~ Beta(k+1, k+1) with k = 1/(1-q)
        let k = 1.0 / (1.0 - qv);
        let beta = Beta::new(k + 1.0, k + 1.0).map_err(stat_err)?;
        // statrs stops its quantile search near 1e-5; polish with Newton
        let mut b = beta.inverse_cdf(upper);
        for _ in 0..8 {
            let pdf = beta.pdf(b);
            if pdf <= 0.0 {
                break;
            }
            b = (b - (beta.cdf(b) - upper) / pdf).clamp(0.5, 1.0);
        }
        radius(q, 1.0) * (2.0 * b - 1.0)
    } else {
        // Student-t with nu = (3-q)/(q-1) and scale sqrt(2/(3-q))
        let nu = (3.0 - qv) / (qv - 1.0);
        let scale = (2.0 / (3.0 - qv)).sqrt();
        StudentsT::new(0.0, scale, nu).map_err(stat_err)?.inverse_cdf(upper)
    };
    Ok(2.0 * half)
}

fn stat_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Domain(e.to_string())
}

/// Product of independent per-dimension q-Gaussians sharing one index.
#[derive(Debug, Clone, PartialEq)]
pub struct QGaussianProduct {
    q: EntropicIndex,
    mu: Vec<f64>,
    sigma: Vec<f64>,
}

impl QGaussianProduct {
    pub fn new(q: EntropicIndex, mu: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        if mu.len() != sigma.len() {
            return Err(Error::DimensionMismatch {
                expected: mu.len(),
                got: sigma.len(),
            });
        }
        for (&m, &s) in mu.iter().zip(&sigma) {
            QGaussian1D::new(q, m, s)?;
        }
        Ok(Self { q, mu, sigma })
    }

    pub fn q(&self) -> EntropicIndex {
        self.q
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn marginal(&self, i: usize) -> QGaussian1D {
        QGaussian1D {
            q: self.q,
            mu: self.mu[i],
            sigma: self.sigma[i],
        }
    }

    pub fn marginals(&self) -> impl Iterator<Item = QGaussian1D> + '_ {
        (0..self.dim()).map(|i| self.marginal(i))
    }

    /// Sum of the per-dimension log-densities; `-inf` if any coordinate lies
    /// outside its support.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(self.marginals().zip(x).map(|(d, &xi)| d.log_density(xi)).sum())
    }

    pub fn in_support(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && self.marginals().zip(x).all(|(d, &xi)| d.in_support(xi))
    }

    /// `mu + sigma * z` with `z` drawn entry-wise by [`sample_standard`].
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.mu
            .iter()
            .zip(&self.sigma)
            .map(|(&m, &s)| m + s * sample_standard(self.q, rng))
            .collect()
    }

    /// Per-dimension support widths `2R`.
    pub fn support_widths(&self) -> Vec<f64> {
        self.sigma.iter().map(|&s| 2.0 * radius(self.q, s)).collect()
    }
}
