//! Network definition, forward evaluation and exact log-likelihood.
//!
//! A network of depth `L` maps data `x = z_0` to latents `z_L` through
//! `y_k = W_k z_{k-1} + b_k`, `z_k = σ(y_k)`, with `σ` skipped on the last
//! layer unless `apply_final_nonlinearity` is set. The log-likelihood splits as
//!
//! ```text
//! log p(x) = log p_s(z_L) + Σ_k Σ_i log σ'(y_k^i) + Σ_k log |det W_k|
//!          =      l_p     +         l_j1         +        l_j2
//! ```
//!
//! and only `l_j2` needs anything more expensive than matrix-vector products.

mod activation;
mod base;
pub mod io;

pub use activation::Nonlinearity;
pub use base::BaseDistribution;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Rng, SlogDet, Vector};

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    nonlinearity: Nonlinearity,
    use_bias: bool,
    apply_final_nonlinearity: bool,
}

impl Network {
    /// Validates shapes and nonsingularity of every weight matrix.
    pub fn new(
        layers: Vec<Layer>,
        nonlinearity: Nonlinearity,
        use_bias: bool,
        apply_final_nonlinearity: bool,
    ) -> Result<Self> {
        nonlinearity.validate()?;
        let dim = layers
            .first()
            .ok_or_else(|| Error::InvalidArgument("network needs at least one layer".into()))?
            .weight
            .rows();
        for layer in &layers {
            if !layer.weight.is_square() || layer.weight.rows() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: layer.weight.cols().max(layer.weight.rows()),
                });
            }
            if layer.bias.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: layer.bias.len(),
                });
            }
        }
        let net = Network {
            layers,
            nonlinearity,
            use_bias,
            apply_final_nonlinearity,
        };
        net.log_det_cache().ensure_nonsingular()?;
        Ok(net)
    }

    /// Single-layer network with identity weights and zero bias.
    pub fn identity(dim: usize, depth: usize) -> Self {
        let layers = (0..depth)
            .map(|_| Layer {
                weight: Matrix::identity(dim),
                bias: Vector::zeros(dim),
            })
            .collect();
        Network {
            layers,
            nonlinearity: Nonlinearity::default(),
            use_bias: false,
            apply_final_nonlinearity: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Mutable access for optimizers. Callers are responsible for checking
    /// nonsingularity afterwards.
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn nonlinearity(&self) -> Nonlinearity {
        self.nonlinearity
    }

    pub fn use_bias(&self) -> bool {
        self.use_bias
    }

    pub fn apply_final_nonlinearity(&self) -> bool {
        self.apply_final_nonlinearity
    }

    /// Whether `σ` follows layer `k` (0-based).
    pub fn has_nonlinearity(&self, k: usize) -> bool {
        k + 1 < self.layers.len() || self.apply_final_nonlinearity
    }

    pub fn param_count(&self) -> usize {
        let d = self.dim();
        self.depth() * (d * d + if self.use_bias { d } else { 0 })
    }

    pub fn log_det_cache(&self) -> LogDetCache {
        LogDetCache::new(self)
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardTrace> {
        forward(self, x)
    }
}

/// Per-layer `slogdet(W_k)`, valid for one parameter state.
#[derive(Clone, Debug)]
pub struct LogDetCache {
    pub per_layer: Vec<SlogDet>,
    pub total: f64,
}

impl LogDetCache {
    pub fn new(net: &Network) -> Self {
        let per_layer: Vec<SlogDet> = net
            .layers
            .iter()
            .map(|l| linalg::slogdet(&l.weight).expect("weights are square"))
            .collect();
        let total = per_layer.iter().map(|s| s.logabsdet).sum();
        LogDetCache { per_layer, total }
    }

    pub fn singular_layer(&self) -> Option<usize> {
        self.per_layer.iter().position(|s| s.is_singular())
    }

    pub fn ensure_nonsingular(&self) -> Result<()> {
        match self.singular_layer() {
            Some(layer) => Err(Error::SingularLayer { layer }),
            None => Ok(()),
        }
    }
}

/// Cached quantities from one forward pass.
///
/// `inputs[k]` is `z_k` for `k = 0..=L`; the other vectors are indexed by
/// layer `0..L`. Layers without a nonlinearity store `σ' = 1`, `σ'' = 0`.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub inputs: Vec<Vector>,
    pub pre_activations: Vec<Vector>,
    pub sigma_prime: Vec<Vector>,
    pub sigma_second: Vec<Vector>,
}

impl ForwardTrace {
    pub fn output(&self) -> &Vector {
        self.inputs.last().expect("trace has at least the input")
    }

    pub fn depth(&self) -> usize {
        self.pre_activations.len()
    }

    /// `l_j1 = Σ_k Σ_i log σ'(y_k^i)`.
    pub fn log_slope_sum(&self) -> f64 {
        self.sigma_prime
            .iter()
            .flat_map(|d| d.iter())
            .map(|v| v.ln())
            .sum()
    }
}

pub fn forward(net: &Network, x: &[f64]) -> Result<ForwardTrace> {
    let dim = net.dim();
    if x.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: x.len(),
        });
    }
    let depth = net.depth();
    let nl = net.nonlinearity;
    let mut inputs = Vec::with_capacity(depth + 1);
    let mut pre = Vec::with_capacity(depth);
    let mut sp = Vec::with_capacity(depth);
    let mut ss = Vec::with_capacity(depth);
    inputs.push(Vector::from_vec_unchecked(x.to_vec()));
    for (k, layer) in net.layers.iter().enumerate() {
        let mut y = vec![0.0; dim];
        linalg::matvec_into(&layer.weight, &inputs[k], &mut y);
        if net.use_bias {
            linalg::axpy(1.0, &layer.bias, &mut y);
        }
        if net.has_nonlinearity(k) {
            inputs.push(Vector::from_vec_unchecked(
                y.iter().map(|&v| nl.act(v)).collect(),
            ));
            sp.push(Vector::from_vec_unchecked(
                y.iter().map(|&v| nl.act_prime(v)).collect(),
            ));
            ss.push(Vector::from_vec_unchecked(
                y.iter().map(|&v| nl.act_second(v)).collect(),
            ));
        } else {
            inputs.push(Vector::from_vec_unchecked(y.clone()));
            sp.push(Vector::filled(dim, 1.0));
            ss.push(Vector::zeros(dim));
        }
        pre.push(Vector::from_vec_unchecked(y));
    }
    Ok(ForwardTrace {
        inputs,
        pre_activations: pre,
        sigma_prime: sp,
        sigma_second: ss,
    })
}

/// Log-likelihood split into its three terms (nats).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_p: f64,
    pub l_j1: f64,
    pub l_j2: f64,
    pub total: f64,
    /// Set when some weight matrix is singular; `total` is then `-inf`.
    pub singular: bool,
}

impl LossBreakdown {
    pub fn new(l_p: f64, l_j1: f64, l_j2: f64) -> Self {
        let total = l_p + l_j1 + l_j2;
        LossBreakdown {
            l_p,
            l_j1,
            l_j2,
            total,
            singular: false,
        }
    }
}

pub fn log_likelihood(net: &Network, bd: BaseDistribution, x: &[f64]) -> Result<LossBreakdown> {
    log_likelihood_cached(net, bd, x, &net.log_det_cache())
}

/// Same as [`log_likelihood`] but with `l_j2` taken from `cache`, which must
/// belong to the current parameter state of `net`. Per-sample cost is then
/// `O(L·D²)`.
pub fn log_likelihood_cached(
    net: &Network,
    bd: BaseDistribution,
    x: &[f64],
    cache: &LogDetCache,
) -> Result<LossBreakdown> {
    let trace = forward(net, x)?;
    let l_p = bd.logpdf(trace.output());
    let l_j1 = trace.log_slope_sum();
    if cache.singular_layer().is_some() {
        return Ok(LossBreakdown {
            l_p,
            l_j1,
            l_j2: f64::NEG_INFINITY,
            total: f64::NEG_INFINITY,
            singular: true,
        });
    }
    Ok(LossBreakdown::new(l_p, l_j1, cache.total))
}

const INIT_ATTEMPTS: usize = 3;

/// Random network with `N(0, scale²)` weights (`scale` defaults to `1/√D`)
/// and zero biases.
pub fn init_network(
    rng: &mut Rng,
    dim: usize,
    depth: usize,
    nonlinearity: Nonlinearity,
    use_bias: bool,
    apply_final_nonlinearity: bool,
    scale: Option<f64>,
) -> Result<Network> {
    if dim == 0 || depth == 0 {
        return Err(Error::InvalidArgument(format!(
            "dimension and depth must be positive, got D={dim}, L={depth}"
        )));
    }
    nonlinearity.validate()?;
    let scale = scale.unwrap_or(1.0 / (dim as f64).sqrt());
    let mut layers = Vec::with_capacity(depth);
    for layer in 0..depth {
        let mut attempt = 0;
        let weight = loop {
            let w = linalg::random_matrix(rng, dim, dim, scale)?;
            if !linalg::slogdet(&w)?.is_singular() {
                break w;
            }
            attempt += 1;
            if attempt == INIT_ATTEMPTS {
                return Err(Error::SingularLayer { layer });
            }
        };
        layers.push(Layer {
            weight,
            bias: Vector::zeros(dim),
        });
    }
    Ok(Network {
        layers,
        nonlinearity,
        use_bias,
        apply_final_nonlinearity,
    })
}
