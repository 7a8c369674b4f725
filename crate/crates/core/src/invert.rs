//! Exact inversion of a trained network and sampling from it.

use crate::error::{Error, Result};
use crate::linalg::{LuFactors, Rng, Vector};
use crate::model::{BaseDistribution, Network, Nonlinearity};

pub const NEWTON_ITERATIONS: usize = 100;

fn newton_start(nl: Nonlinearity, y: f64) -> f64 {
    match nl {
        Nonlinearity::SmoothLeakyRelu { alpha } if y < 0.0 => y / alpha,
        _ => y,
    }
}

/// Solve `σ(x) = y` with a fixed number of safeguarded Newton steps.
///
/// Since `σ' ≥ m > 0`, the root lies within `|σ(x₀) − y| / m` of any point
/// `x₀`; steps that leave the current bracket are replaced by bisection.
pub fn act_inverse(nl: Nonlinearity, y: f64) -> Result<f64> {
    if !y.is_finite() {
        return Err(Error::NonFinite(format!("cannot invert σ at {y}")));
    }
    let m = nl.min_slope();
    let mut x = newton_start(nl, y);
    let f0 = nl.act(x) - y;
    let (mut lo, mut hi) = if f0 > 0.0 {
        (x - f0 / m, x)
    } else {
        (x, x - f0 / m)
    };
    for _ in 0..NEWTON_ITERATIONS {
        let f = nl.act(x) - y;
        if f == 0.0 {
            break;
        }
        if f > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let step = x - f / nl.act_prime(x);
        x = if step > lo && step < hi {
            step
        } else {
            0.5 * (lo + hi)
        };
    }
    let residual = (nl.act(x) - y).abs();
    if residual > 1e-9 * (1.0 + y.abs()) {
        return Err(Error::NoConvergence { y, residual });
    }
    Ok(x)
}

/// Inverse map with one LU factorization per layer, computed once.
#[derive(Clone, Debug)]
pub struct InverseMap<'a> {
    net: &'a Network,
    factors: Vec<LuFactors>,
}

impl<'a> InverseMap<'a> {
    pub fn new(net: &'a Network) -> Result<Self> {
        let factors = net
            .layers()
            .iter()
            .enumerate()
            .map(|(k, l)| {
                crate::linalg::lu_factor(&l.weight).map_err(|_| Error::SingularLayer { layer: k })
            })
            .collect::<Result<_>>()?;
        Ok(InverseMap { net, factors })
    }

    pub fn apply(&self, z: &[f64]) -> Result<Vector> {
        let net = self.net;
        let dim = net.dim();
        if z.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: z.len(),
            });
        }
        let nl = net.nonlinearity();
        let mut v = z.to_vec();
        let mut out = vec![0.0; dim];
        for k in (0..net.depth()).rev() {
            if net.has_nonlinearity(k) {
                for vi in v.iter_mut() {
                    *vi = act_inverse(nl, *vi)?;
                }
            }
            if net.use_bias() {
                crate::linalg::axpy(-1.0, &net.layers()[k].bias, &mut v);
            }
            self.factors[k].solve_into(&v, &mut out);
            std::mem::swap(&mut v, &mut out);
        }
        Ok(Vector::from_vec_unchecked(v))
    }
}

pub fn inverse(net: &Network, z: &[f64]) -> Result<Vector> {
    InverseMap::new(net)?.apply(z)
}

/// Draw `n` latents from `bd` and push them through the inverse network.
pub fn sample(net: &Network, bd: BaseDistribution, rng: &mut Rng, n: usize) -> Result<Vec<Vector>> {
    let map = InverseMap::new(net)?;
    (0..n)
        .map(|_| map.apply(&bd.sample(rng, net.dim())))
        .collect()
}
