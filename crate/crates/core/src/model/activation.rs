use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Strictly increasing elementwise nonlinearities, both with derivative
/// bounded away from zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Nonlinearity {
    /// `αx + (1 − α)·softplus(x)`, `α ∈ (0, 1)`.
    SmoothLeakyRelu { alpha: f64 },
    /// `tanh(αx) + βx`, `α, β > 0`.
    TanhPlusLinear { alpha: f64, beta: f64 },
}

impl Default for Nonlinearity {
    fn default() -> Self {
        Nonlinearity::SmoothLeakyRelu { alpha: 0.3 }
    }
}

#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn sech_sq(x: f64) -> f64 {
    let t = x.tanh();
    1.0 - t * t
}

impl Nonlinearity {
    pub fn smooth_leaky_relu(alpha: f64) -> Result<Self> {
        let nl = Nonlinearity::SmoothLeakyRelu { alpha };
        nl.validate()?;
        Ok(nl)
    }

    pub fn tanh_plus_linear(alpha: f64, beta: f64) -> Result<Self> {
        let nl = Nonlinearity::TanhPlusLinear { alpha, beta };
        nl.validate()?;
        Ok(nl)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Nonlinearity::SmoothLeakyRelu { alpha } if alpha > 0.0 && alpha < 1.0 => Ok(()),
            Nonlinearity::TanhPlusLinear { alpha, beta }
                if alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite() =>
            {
                Ok(())
            }
            other => Err(Error::InvalidArgument(format!(
                "nonlinearity parameters out of range: {other}"
            ))),
        }
    }

    #[inline]
    pub fn act(&self, x: f64) -> f64 {
        match *self {
            Nonlinearity::SmoothLeakyRelu { alpha } => alpha * x + (1.0 - alpha) * softplus(x),
            Nonlinearity::TanhPlusLinear { alpha, beta } => (alpha * x).tanh() + beta * x,
        }
    }

    #[inline]
    pub fn act_prime(&self, x: f64) -> f64 {
        match *self {
            Nonlinearity::SmoothLeakyRelu { alpha } => alpha + (1.0 - alpha) * sigmoid(x),
            Nonlinearity::TanhPlusLinear { alpha, beta } => alpha * sech_sq(alpha * x) + beta,
        }
    }

    #[inline]
    pub fn act_second(&self, x: f64) -> f64 {
        match *self {
            Nonlinearity::SmoothLeakyRelu { alpha } => {
                let s = sigmoid(x);
                (1.0 - alpha) * s * (1.0 - s)
            }
            Nonlinearity::TanhPlusLinear { alpha, .. } => {
                let t = (alpha * x).tanh();
                -2.0 * alpha * alpha * (1.0 - t * t) * t
            }
        }
    }

    /// Lower bound of the derivative over ℝ.
    pub fn min_slope(&self) -> f64 {
        match *self {
            Nonlinearity::SmoothLeakyRelu { alpha } => alpha,
            Nonlinearity::TanhPlusLinear { beta, .. } => beta,
        }
    }
}

impl fmt::Display for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Nonlinearity::SmoothLeakyRelu { alpha } => write!(f, "sl:{alpha}"),
            Nonlinearity::TanhPlusLinear { alpha, beta } => write!(f, "st:{alpha}:{beta}"),
        }
    }
}

/// Parses `sl:<alpha>`, `st:<alpha>:<beta>`, or bare `sl` / `st` for the
/// defaults (`α = 0.3`; `α = 1, β = 0.1`).
impl FromStr for Nonlinearity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |p: &str| {
            p.parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("bad number '{p}' in '{s}'")))
        };
        match parts.as_slice() {
            ["sl"] => Nonlinearity::smooth_leaky_relu(0.3),
            ["sl", a] => Nonlinearity::smooth_leaky_relu(num(a)?),
            ["st"] => Nonlinearity::tanh_plus_linear(1.0, 0.1),
            ["st", a, b] => Nonlinearity::tanh_plus_linear(num(a)?, num(b)?),
            _ => Err(Error::InvalidArgument(format!(
                "unknown nonlinearity '{s}' (expected sl:ALPHA or st:ALPHA:BETA)"
            ))),
        }
    }
}
