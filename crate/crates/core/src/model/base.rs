use std::f64::consts::{FRAC_PI_2, LN_2, PI};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Rng, Vector};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Factorized latent density.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseDistribution {
    #[default]
    #[serde(alias = "normal")]
    StandardNormal,
    /// Unit-variance hyperbolic secant, `p(s) = ½·sech(πs/2)`.
    #[serde(alias = "sech")]
    HyperbolicSecant,
}

/// `log sech(x)` without overflow for large `|x|`.
#[inline]
fn log_sech(x: f64) -> f64 {
    let a = x.abs();
    // sech(a) = 2e^{-a} / (1 + e^{-2a})
    LN_2 - a - (-2.0 * a).exp().ln_1p()
}

impl BaseDistribution {
    #[inline]
    pub fn logpdf_1d(&self, s: f64) -> f64 {
        match self {
            BaseDistribution::StandardNormal => -0.5 * s * s - HALF_LN_2PI,
            BaseDistribution::HyperbolicSecant => -LN_2 + log_sech(FRAC_PI_2 * s),
        }
    }

    /// `d/ds log p(s)`
    #[inline]
    pub fn score_1d(&self, s: f64) -> f64 {
        match self {
            BaseDistribution::StandardNormal => -s,
            BaseDistribution::HyperbolicSecant => -FRAC_PI_2 * (FRAC_PI_2 * s).tanh(),
        }
    }

    pub fn logpdf(&self, z: &[f64]) -> f64 {
        z.iter().map(|&s| self.logpdf_1d(s)).sum()
    }

    pub fn score(&self, z: &[f64]) -> Vector {
        Vector::from_vec_unchecked(z.iter().map(|&s| self.score_1d(s)).collect())
    }

    pub fn sample_1d(&self, rng: &mut Rng) -> f64 {
        match self {
            BaseDistribution::StandardNormal => rng.normal(),
            // inverse CDF: F(s) = (2/π)·atan(exp(πs/2))
            BaseDistribution::HyperbolicSecant => {
                let u = rng.uniform_open();
                (2.0 / PI) * (FRAC_PI_2 * u).tan().ln()
            }
        }
    }

    pub fn sample(&self, rng: &mut Rng, dim: usize) -> Vector {
        Vector::from_vec_unchecked((0..dim).map(|_| self.sample_1d(rng)).collect())
    }
}

impl fmt::Display for BaseDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaseDistribution::StandardNormal => "normal",
            BaseDistribution::HyperbolicSecant => "sech",
        })
    }
}

impl FromStr for BaseDistribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" | "standard-normal" => Ok(BaseDistribution::StandardNormal),
            "sech" | "hyperbolic-secant" => Ok(BaseDistribution::HyperbolicSecant),
            other => Err(Error::InvalidArgument(format!(
                "unknown base distribution '{other}' (expected normal or sech)"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn densities_integrate_to_one() {
        for bd in [
            BaseDistribution::StandardNormal,
            BaseDistribution::HyperbolicSecant,
        ] {
            let mass = simpson(|s| bd.logpdf_1d(s).exp(), -50.0, 50.0, 200_000);
            assert!((mass - 1.0).abs() < 1e-6, "{bd}: {mass}");
        }
    }

    #[test]
    fn sech_has_unit_variance() {
        let bd = BaseDistribution::HyperbolicSecant;
        let var = simpson(|s| s * s * bd.logpdf_1d(s).exp(), -50.0, 50.0, 200_000);
        assert_abs_diff_eq!(var, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn logpdf_examples() {
        let n = BaseDistribution::StandardNormal;
        assert_abs_diff_eq!(n.logpdf(&[0.0, 0.0]), -1.8378771, epsilon = 1e-7);
        assert_eq!(n.score(&[0.0, 0.0]).as_slice(), &[0.0, 0.0]);
        assert_abs_diff_eq!(n.logpdf(&[1.0, -1.0]), -2.8378771, epsilon = 1e-7);
        let h = BaseDistribution::HyperbolicSecant;
        assert_abs_diff_eq!(h.logpdf(&[0.0]), -std::f64::consts::LN_2, epsilon = 1e-15);
        assert_eq!(h.score(&[0.0]).as_slice(), &[0.0]);
        assert!(h.logpdf(&[1e6]).is_finite());
    }

    #[test]
    fn scores_match_finite_differences() {
        for bd in [
            BaseDistribution::StandardNormal,
            BaseDistribution::HyperbolicSecant,
        ] {
            for s in [-3.0, -0.4, 0.0, 0.7, 5.0] {
                let h = 1e-6;
                let fd = (bd.logpdf_1d(s + h) - bd.logpdf_1d(s - h)) / (2.0 * h);
                assert_abs_diff_eq!(fd, bd.score_1d(s), epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn sech_sampler_moments() {
        let bd = BaseDistribution::HyperbolicSecant;
        let mut rng = Rng::new(1);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| bd.sample_1d(&mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| x * x).sum::<f64>() / n as f64 - mean * mean;
        assert!(mean.abs() < 3.0 / (n as f64).sqrt(), "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }
}
