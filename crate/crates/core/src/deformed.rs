//! Deformed (Tsallis) exponential and logarithm.
//!
//! `exp_q(x) = [1 + (1-q) x]_+^{1/(1-q)}` for `q != 1` and `exp(x)` at `q = 1`;
//! `ln_q` is its inverse on the positive reals. For `q < 1` the exponential
//! truncates to exactly zero at and below `x = -1/(1-q)`, which is what makes
//! sparse distributions and sparse advantage weights possible.

use std::fmt;

use crate::error::{Error, Result};

/// Entropic index `q < 3`.
///
/// `q = 1` is matched exactly (no tolerance band): indices come from
/// configuration, never from arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct EntropicIndex(f64);

impl EntropicIndex {
    pub const GAUSSIAN: EntropicIndex = EntropicIndex(1.0);

    pub fn new(q: f64) -> Result<Self> {
        if q.is_finite() && q < 3.0 {
            Ok(Self(q))
        } else {
            Err(Error::InvalidIndex(q))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    #[inline]
    pub fn is_exponential(self) -> bool {
        self.0 == 1.0
    }

    /// `q < 1`: the q-exponential truncates and q-Gaussians have compact support.
    #[inline]
    pub fn is_sparse(self) -> bool {
        self.0 < 1.0
    }

    /// `1 < q < 3`: polynomial tails.
    #[inline]
    pub fn is_heavy_tailed(self) -> bool {
        self.0 > 1.0
    }
}

impl fmt::Display for EntropicIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl TryFrom<f64> for EntropicIndex {
    type Error = Error;

    fn try_from(q: f64) -> Result<Self> {
        Self::new(q)
    }
}

/// q-exponential.
///
/// Errors only on the heavy-tailed branch when `1 + (1-q) x <= 0`, where the
/// function diverges.
pub fn exp_q(x: f64, q: EntropicIndex) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::Domain(format!("exp_q argument {x} is not finite")));
    }
    let q = q.value();
    if q == 1.0 {
        return Ok(x.exp());
    }
    let one_minus_q = 1.0 - q;
    let base = 1.0 + one_minus_q * x;
    if q < 1.0 {
        Ok(base.max(0.0).powf(1.0 / one_minus_q))
    } else if base > 0.0 {
        Ok(base.powf(1.0 / one_minus_q))
    } else {
        Err(Error::Domain(format!(
            "exp_q diverges for q={q} at x={x} (1+(1-q)x = {base})"
        )))
    }
}

/// `ln(exp_q(x))`, returning `-inf` where a sparse `exp_q` truncates.
///
/// Callers on the heavy-tailed branch must stay inside the domain; outside it
/// the result is NaN.
#[inline]
pub fn ln_exp_q(x: f64, q: EntropicIndex) -> f64 {
    let q = q.value();
    if q == 1.0 {
        return x;
    }
    let one_minus_q = 1.0 - q;
    let base = 1.0 + one_minus_q * x;
    if base <= 0.0 {
        if q < 1.0 {
            f64::NEG_INFINITY
        } else {
            f64::NAN
        }
    } else {
        base.ln() / one_minus_q
    }
}

/// q-logarithm, defined for `x > 0`.
pub fn ln_q(x: f64, q: EntropicIndex) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("ln_q requires a positive finite argument, got {x}")));
    }
    Ok(ln_q_unchecked(x, q.value()))
}

#[inline]
pub(crate) fn ln_q_unchecked(x: f64, q: f64) -> f64 {
    if q == 1.0 {
        x.ln()
    } else {
        let one_minus_q = 1.0 - q;
        // exp_m1 keeps precision when x^{1-q} is close to 1.
        (one_minus_q * x.ln()).exp_m1() / one_minus_q
    }
}

/// Largest argument at which a sparse q-exponential is exactly zero:
/// `-1/(1-q)`. `None` for `q >= 1`.
pub fn truncation_threshold(q: EntropicIndex) -> Option<f64> {
    q.is_sparse().then(|| -1.0 / (1.0 - q.value()))
}
