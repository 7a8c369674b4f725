//! Gradient engines for the exact log-likelihood.
//!
//! All gradients are of the log-likelihood (ascent directions). With
//! `y_k = W_k z_{k-1} + b_k` the backpropagated error is
//! `δ_k = ∂(l_p + l_j1)/∂y_k`, obtained by
//!
//! ```text
//! δ_L = D_L e + G_L h_L
//! δ_k = D_k (W_{k+1}ᵀ δ_{k+1}) + G_k h_k
//! ```
//!
//! where `e` is the base score at `z_L`, `D_k = diag σ'(y_k)`,
//! `G_k = diag σ''(y_k)` and `h_k = 1/σ'(y_k)`.
//!
//! The ordinary weight gradient is `δ_k z_{k-1}ᵀ + W_k⁻ᵀ` and needs an
//! `O(D³)` inverse per layer. The relative gradient right-multiplies it by
//! `W_kᵀ W_k`, which turns the inverse into `W_k` itself and the data term
//! into `δ_k (W_kᵀ y_k)ᵀ`: one transposed matvec on a vector the forward pass
//! already produced. With biases the same chain (since `y_k` contains `b_k`)
//! yields the weight block of the projected augmented-matrix update; see
//! [`bias_relative_gradient`].

pub mod oracle;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::model::{self, BaseDistribution, ForwardTrace, Network};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientFlavor {
    /// Euclidean gradient, explicit `W⁻ᵀ` per layer.
    Ordinary,
    /// Gradient times `WᵀW` from the right.
    #[default]
    #[serde(alias = "relative")]
    RelativeRight,
    /// `WWᵀ` times the gradient (transposed relative gradient).
    RelativeLeft,
}

impl GradientFlavor {
    pub fn is_relative(&self) -> bool {
        !matches!(self, GradientFlavor::Ordinary)
    }
}

impl fmt::Display for GradientFlavor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GradientFlavor::Ordinary => "ordinary",
            GradientFlavor::RelativeRight => "relative",
            GradientFlavor::RelativeLeft => "relative-left",
        })
    }
}

impl FromStr for GradientFlavor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ordinary" => Ok(GradientFlavor::Ordinary),
            "relative" | "relative-right" => Ok(GradientFlavor::RelativeRight),
            "relative-left" => Ok(GradientFlavor::RelativeLeft),
            other => Err(Error::InvalidArgument(format!(
                "unknown gradient flavor '{other}' (expected ordinary, relative or relative-left)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGradient {
    pub d_weight: Matrix,
    pub d_bias: Vector,
    pub flavor: GradientFlavor,
}

impl LayerGradient {
    pub fn zeros(dim: usize, flavor: GradientFlavor) -> Self {
        LayerGradient {
            d_weight: Matrix::zeros(dim, dim),
            d_bias: Vector::zeros(dim),
            flavor,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.d_weight.is_finite() && self.d_bias.is_finite()
    }
}

/// Backpropagated errors `δ_k` and reciprocal slopes `h_k`, one per layer.
#[derive(Clone, Debug)]
pub struct DeltaStack {
    pub deltas: Vec<Vector>,
    pub h: Vec<Vector>,
}

fn check_trace(trace: &ForwardTrace, net: &Network) -> Result<()> {
    if trace.depth() != net.depth() {
        return Err(Error::DimensionMismatch {
            expected: net.depth(),
            actual: trace.depth(),
        });
    }
    if trace.output().len() != net.dim() {
        return Err(Error::DimensionMismatch {
            expected: net.dim(),
            actual: trace.output().len(),
        });
    }
    Ok(())
}

pub fn backprop_deltas(trace: &ForwardTrace, score: &[f64], net: &Network) -> Result<DeltaStack> {
    check_trace(trace, net)?;
    let dim = net.dim();
    if score.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: score.len(),
        });
    }
    let depth = net.depth();
    let h: Vec<Vector> = trace
        .sigma_prime
        .iter()
        .map(|d| Vector::from_vec_unchecked(d.iter().map(|v| 1.0 / v).collect()))
        .collect();
    let mut deltas = vec![Vector::zeros(dim); depth];
    let mut back = score.to_vec();
    for k in (0..depth).rev() {
        if k + 1 < depth {
            linalg::matvec_transposed_into(&net.layers()[k + 1].weight, &deltas[k + 1], &mut back);
        }
        let (d, g, hk) = (&trace.sigma_prime[k], &trace.sigma_second[k], &h[k]);
        for i in 0..dim {
            deltas[k][i] = d[i] * back[i] + g[i] * hk[i];
        }
    }
    Ok(DeltaStack { deltas, h })
}

fn zero_bias(net: &Network, delta: &Vector) -> Vector {
    if net.use_bias() {
        delta.clone()
    } else {
        Vector::zeros(delta.len())
    }
}

/// Per-sample Euclidean gradient, `δ_k z_{k-1}ᵀ + W_k⁻ᵀ`.
pub fn ordinary_gradient(
    trace: &ForwardTrace,
    deltas: &DeltaStack,
    net: &Network,
) -> Result<Vec<LayerGradient>> {
    check_trace(trace, net)?;
    net.layers()
        .iter()
        .enumerate()
        .map(|(k, layer)| {
            let lu =
                linalg::lu_factor(&layer.weight).map_err(|_| Error::SingularLayer { layer: k })?;
            let mut d_weight = lu.inverse_transpose();
            d_weight.add_outer(1.0, &deltas.deltas[k], &trace.inputs[k]);
            Ok(LayerGradient {
                d_weight,
                d_bias: zero_bias(net, &deltas.deltas[k]),
                flavor: GradientFlavor::Ordinary,
            })
        })
        .collect()
}

/// Per-sample relative gradient. Uses only matvecs, one outer product and one
/// matrix add per layer.
///
/// * `RelativeRight`: `δ_k (W_kᵀ y_k)ᵀ + W_k`; bias `δ_k (y_kᵀ b_k + 1) + b_k`.
/// * `RelativeLeft`: `(W_k W_kᵀ δ_k) z_{k-1}ᵀ + W_k`; bias keeps the ordinary
///   gradient `δ_k`.
pub fn relative_gradient(
    trace: &ForwardTrace,
    deltas: &DeltaStack,
    net: &Network,
    flavor: GradientFlavor,
) -> Result<Vec<LayerGradient>> {
    check_trace(trace, net)?;
    if !flavor.is_relative() {
        return Err(Error::InvalidArgument(
            "relative_gradient needs a relative flavor".into(),
        ));
    }
    let dim = net.dim();
    let mut scratch = vec![0.0; dim];
    let mut chain = vec![0.0; dim];
    Ok(net
        .layers()
        .iter()
        .enumerate()
        .map(|(k, layer)| {
            let delta = &deltas.deltas[k];
            let mut d_weight = layer.weight.clone();
            let d_bias = match flavor {
                GradientFlavor::RelativeRight => {
                    let y = &trace.pre_activations[k];
                    linalg::matvec_transposed_into(&layer.weight, y, &mut chain);
                    d_weight.add_outer(1.0, delta, &chain);
                    if net.use_bias() {
                        right_bias_update(delta, y, &layer.bias)
                    } else {
                        Vector::zeros(dim)
                    }
                }
                _ => {
                    linalg::matvec_transposed_into(&layer.weight, delta, &mut scratch);
                    linalg::matvec_into(&layer.weight, &scratch, &mut chain);
                    d_weight.add_outer(1.0, &chain, &trace.inputs[k]);
                    zero_bias(net, delta)
                }
            };
            LayerGradient {
                d_weight,
                d_bias,
                flavor,
            }
        })
        .collect())
}

/// `δ (yᵀb + 1) + b`, with `y = Wz + b`.
fn right_bias_update(delta: &[f64], y: &[f64], b: &[f64]) -> Vector {
    let s = linalg::dot(y, b) + 1.0;
    Vector::from_vec_unchecked(delta.iter().zip(b).map(|(d, bi)| d * s + bi).collect())
}

/// Bias terms of the projected relative gradient for one layer, given the
/// ordinary gradient in factored form `G = δ zᵀ + W⁻ᵀ`, `g_b = δ`:
///
/// ```text
/// ΔW = G WᵀW + g_b (bᵀW)        ΔB = G (Wᵀb) + g_b (1 + bᵀb)
/// ```
///
/// Returns the extra weight term `g_b (bᵀW)` (the `G WᵀW` part is the plain
/// relative chain) and the full bias update. `G (Wᵀb)` is evaluated as
/// `δ (zᵀ Wᵀ b) + b` so no inverse is formed.
pub fn bias_relative_gradient(
    delta: &[f64],
    z_prev: &[f64],
    weight: &Matrix,
    bias: &[f64],
) -> Result<(Matrix, Vector)> {
    let wt_b = linalg::matvec_transposed(weight, bias)?;
    if z_prev.len() != wt_b.len() || delta.len() != bias.len() {
        return Err(Error::DimensionMismatch {
            expected: wt_b.len(),
            actual: z_prev.len(),
        });
    }
    let extra = linalg::outer(delta, &wt_b);
    let s = linalg::dot(z_prev, &wt_b) + 1.0 + linalg::dot(bias, bias);
    let d_bias = delta.iter().zip(bias).map(|(d, b)| d * s + b).collect();
    Ok((extra, Vector::from_vec_unchecked(d_bias)))
}

/// Mean gradient over a minibatch, plus the mean of `l_p + l_j1` at the
/// current parameters (the `l_j2` term is not evaluated here).
#[derive(Clone, Debug)]
pub struct BatchGradient {
    pub layers: Vec<LayerGradient>,
    pub mean_partial_log_likelihood: f64,
}

/// Mean per-sample gradient of the requested flavor. The per-sample outer
/// products are accumulated in place and the `W`-dependent terms (`W⁻ᵀ` or
/// `W`) are added once, so relative flavors cost `O(B·L·D²)` and the ordinary
/// flavor adds `O(L·D³)`.
pub fn batch_gradient<X: AsRef<[f64]>>(
    net: &Network,
    bd: BaseDistribution,
    batch: &[X],
    flavor: GradientFlavor,
) -> Result<BatchGradient> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let dim = net.dim();
    let depth = net.depth();
    let scale = 1.0 / batch.len() as f64;
    let mut acc: Vec<LayerGradient> = (0..depth)
        .map(|_| LayerGradient::zeros(dim, flavor))
        .collect();
    let mut scratch = vec![0.0; dim];
    let mut chain = vec![0.0; dim];
    let mut partial = 0.0;
    // Σ δ (yᵀb) and Σ δ for the right-relative bias update
    let mut bias_weighted: Vec<Vector> = vec![Vector::zeros(dim); depth];

    for x in batch {
        let trace = model::forward(net, x.as_ref())?;
        let score = bd.score(trace.output());
        partial += bd.logpdf(trace.output()) + trace.log_slope_sum();
        let ds = backprop_deltas(&trace, &score, net)?;
        for (k, layer) in net.layers().iter().enumerate() {
            let delta = &ds.deltas[k];
            let g = &mut acc[k];
            match flavor {
                GradientFlavor::Ordinary => {
                    g.d_weight.add_outer(scale, delta, &trace.inputs[k]);
                    g.d_bias.axpy(scale, delta);
                }
                GradientFlavor::RelativeRight => {
                    let y = &trace.pre_activations[k];
                    linalg::matvec_transposed_into(&layer.weight, y, &mut chain);
                    g.d_weight.add_outer(scale, delta, &chain);
                    if net.use_bias() {
                        let s = linalg::dot(y, &layer.bias) + 1.0;
                        bias_weighted[k].axpy(scale * s, delta);
                    }
                }
                GradientFlavor::RelativeLeft => {
                    linalg::matvec_transposed_into(&layer.weight, delta, &mut scratch);
                    linalg::matvec_into(&layer.weight, &scratch, &mut chain);
                    g.d_weight.add_outer(scale, &chain, &trace.inputs[k]);
                    g.d_bias.axpy(scale, delta);
                }
            }
        }
    }

    for (k, (g, layer)) in acc.iter_mut().zip(net.layers()).enumerate() {
        match flavor {
            GradientFlavor::Ordinary => {
                let lu = linalg::lu_factor(&layer.weight)
                    .map_err(|_| Error::SingularLayer { layer: k })?;
                g.d_weight.axpy(1.0, &lu.inverse_transpose());
            }
            GradientFlavor::RelativeRight => {
                g.d_weight.axpy(1.0, &layer.weight);
                if net.use_bias() {
                    g.d_bias = std::mem::replace(&mut bias_weighted[k], Vector::zeros(0));
                    g.d_bias.axpy(1.0, &layer.bias);
                }
            }
            GradientFlavor::RelativeLeft => g.d_weight.axpy(1.0, &layer.weight),
        }
        if !net.use_bias() {
            g.d_bias = Vector::zeros(dim);
        }
    }

    Ok(BatchGradient {
        layers: acc,
        mean_partial_log_likelihood: partial * scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{dense_matmul, dense_matmul_calls, relative_frobenius_error, Rng};
    use crate::model::{init_network, log_likelihood, Layer, Nonlinearity};
    use approx::assert_abs_diff_eq;

    const NORMAL: BaseDistribution = BaseDistribution::StandardNormal;

    fn scalar_net(w: f64, b: f64, final_nl: bool) -> Network {
        Network::new(
            vec![Layer {
                weight: Matrix::new(1, 1, vec![w]).unwrap(),
                bias: Vector::new(vec![b]).unwrap(),
            }],
            Nonlinearity::default(),
            true,
            final_nl,
        )
        .unwrap()
    }

    fn grads(net: &Network, x: &[f64], flavor: GradientFlavor) -> Vec<LayerGradient> {
        let t = net.forward(x).unwrap();
        let ds = backprop_deltas(&t, &NORMAL.score(t.output()), net).unwrap();
        match flavor {
            GradientFlavor::Ordinary => ordinary_gradient(&t, &ds, net).unwrap(),
            f => relative_gradient(&t, &ds, net, f).unwrap(),
        }
    }

    fn random_net(seed: u64, d: usize, depth: usize, bias: bool) -> Network {
        let mut rng = Rng::new(seed);
        let mut net = init_network(
            &mut rng,
            d,
            depth,
            Nonlinearity::default(),
            bias,
            false,
            None,
        )
        .unwrap();
        if bias {
            for l in net.layers_mut() {
                l.bias.iter_mut().for_each(|b| *b = 0.5 * rng.normal());
            }
        }
        net
    }

    #[test]
    fn score_passes_through_linear_layer() {
        let net = random_net(1, 3, 1, true);
        let x = [0.2, -0.4, 1.0];
        let t = net.forward(&x).unwrap();
        let ds = backprop_deltas(&t, &NORMAL.score(t.output()), &net).unwrap();
        for i in 0..3 {
            assert_eq!(ds.deltas[0][i], -t.output()[i]);
        }
    }

    #[test]
    fn scalar_examples() {
        let net = scalar_net(2.0, 0.0, false);
        let t = net.forward(&[1.0]).unwrap();
        let ds = backprop_deltas(&t, &NORMAL.score(t.output()), &net).unwrap();
        assert_eq!(ds.deltas[0][0], -2.0);
        let ord = grads(&net, &[1.0], GradientFlavor::Ordinary);
        assert_abs_diff_eq!(ord[0].d_weight.get(0, 0), -1.5, epsilon = 1e-15);
        let rel = grads(&net, &[1.0], GradientFlavor::RelativeRight);
        assert_abs_diff_eq!(rel[0].d_weight.get(0, 0), -6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(rel[0].d_weight.get(0, 0), -1.5 * 4.0, epsilon = 1e-15);
    }

    #[test]
    fn identity_at_mode() {
        let net = Network::identity(3, 1);
        let ord = grads(&net, &[0.0; 3], GradientFlavor::Ordinary);
        assert_eq!(ord[0].d_weight, Matrix::identity(3));
        let x = [0.3, -1.2, 0.8];
        let ord = grads(&net, &x, GradientFlavor::Ordinary);
        for flavor in [GradientFlavor::RelativeRight, GradientFlavor::RelativeLeft] {
            assert_eq!(grads(&net, &x, flavor)[0].d_weight, ord[0].d_weight);
        }
    }

    #[test]
    fn relative_identities_random() {
        let net = random_net(8, 8, 3, false);
        let x = [0.1, -0.3, 0.5, 1.0, -1.0, 0.2, 0.0, 0.7];
        let ord = grads(&net, &x, GradientFlavor::Ordinary);
        let right = grads(&net, &x, GradientFlavor::RelativeRight);
        let left = grads(&net, &x, GradientFlavor::RelativeLeft);
        for (k, layer) in net.layers().iter().enumerate() {
            let w = &layer.weight;
            let wtw = dense_matmul(&w.transpose(), w).unwrap();
            let wwt = dense_matmul(w, &w.transpose()).unwrap();
            let want_r = dense_matmul(&ord[k].d_weight, &wtw).unwrap();
            let want_l = dense_matmul(&wwt, &ord[k].d_weight).unwrap();
            assert!(relative_frobenius_error(&right[k].d_weight, &want_r) < 1e-9);
            assert!(relative_frobenius_error(&left[k].d_weight, &want_l) < 1e-9);
        }
    }

    #[test]
    fn relative_path_never_multiplies_matrices() {
        let net = random_net(2, 6, 3, true);
        let batch: Vec<Vec<f64>> = (0..5).map(|i| vec![0.1 * i as f64; 6]).collect();
        let before = dense_matmul_calls();
        for flavor in [GradientFlavor::RelativeRight, GradientFlavor::RelativeLeft] {
            grads(&net, &batch[1], flavor);
            batch_gradient(&net, NORMAL, &batch, flavor).unwrap();
        }
        assert_eq!(dense_matmul_calls(), before);
    }

    #[test]
    fn bias_terms_vanish_at_zero_bias() {
        let net = random_net(3, 4, 1, false);
        let x = [0.5, -0.5, 0.25, 1.0];
        let t = net.forward(&x).unwrap();
        let ds = backprop_deltas(&t, &NORMAL.score(t.output()), &net).unwrap();
        let (extra, d_bias) =
            bias_relative_gradient(&ds.deltas[0], &x, &net.layers()[0].weight, &[0.0; 4]).unwrap();
        assert_eq!(extra, Matrix::zeros(4, 4));
        assert_eq!(d_bias, ds.deltas[0]);
    }

    #[test]
    fn folded_bias_chain_matches_explicit_terms() {
        let net = random_net(5, 5, 2, true);
        let x = [0.3, 0.1, -0.7, 0.2, 0.9];
        let t = net.forward(&x).unwrap();
        let ds = backprop_deltas(&t, &NORMAL.score(t.output()), &net).unwrap();
        let rel = relative_gradient(&t, &ds, &net, GradientFlavor::RelativeRight).unwrap();
        for (k, layer) in net.layers().iter().enumerate() {
            let w = &layer.weight;
            let (extra, d_bias) =
                bias_relative_gradient(&ds.deltas[k], &t.inputs[k], w, &layer.bias).unwrap();
            let wz = linalg::matvec(w, &t.inputs[k]).unwrap();
            let chain = linalg::matvec_transposed(w, &wz).unwrap();
            let mut want = linalg::outer(&ds.deltas[k], &chain);
            want.axpy(1.0, w);
            want.axpy(1.0, &extra);
            assert!(relative_frobenius_error(&rel[k].d_weight, &want) < 1e-12);
            for i in 0..5 {
                assert_abs_diff_eq!(rel[k].d_bias[i], d_bias[i], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn batch_matches_mean_of_samples() {
        let net = random_net(6, 4, 2, true);
        let batch: Vec<Vec<f64>> = (0..7)
            .map(|i| (0..4).map(|j| ((i * 4 + j) as f64 * 0.37).sin()).collect())
            .collect();
        for flavor in [
            GradientFlavor::Ordinary,
            GradientFlavor::RelativeRight,
            GradientFlavor::RelativeLeft,
        ] {
            let bg = batch_gradient(&net, NORMAL, &batch, flavor).unwrap();
            let mut mean: Vec<LayerGradient> =
                (0..2).map(|_| LayerGradient::zeros(4, flavor)).collect();
            let mut partial = 0.0;
            for x in &batch {
                for (m, g) in mean.iter_mut().zip(grads(&net, x, flavor)) {
                    m.d_weight.axpy(1.0 / 7.0, &g.d_weight);
                    m.d_bias.axpy(1.0 / 7.0, &g.d_bias);
                }
                let ll = log_likelihood(&net, NORMAL, x).unwrap();
                partial += (ll.l_p + ll.l_j1) / 7.0;
            }
            for (a, b) in bg.layers.iter().zip(&mean) {
                assert!(
                    relative_frobenius_error(&a.d_weight, &b.d_weight) < 1e-12,
                    "{flavor}"
                );
                for i in 0..4 {
                    assert_abs_diff_eq!(a.d_bias[i], b.d_bias[i], epsilon = 1e-12);
                }
            }
            assert_abs_diff_eq!(bg.mean_partial_log_likelihood, partial, epsilon = 1e-12);
        }
    }

    #[test]
    fn final_nonlinearity_delta() {
        // δ_L = σ'(y) e + σ''(y)/σ'(y)
        let net = scalar_net(1.5, 0.2, true);
        let nl = net.nonlinearity();
        let t = net.forward(&[0.4]).unwrap();
        let y = 1.5 * 0.4 + 0.2;
        let ds = backprop_deltas(&t, &NORMAL.score(t.output()), &net).unwrap();
        let want = nl.act_prime(y) * -nl.act(y) + nl.act_second(y) / nl.act_prime(y);
        assert_abs_diff_eq!(ds.deltas[0][0], want, epsilon = 1e-15);
    }

    #[test]
    fn mismatched_trace_rejected() {
        let a = random_net(1, 3, 2, false);
        let b = random_net(1, 3, 1, false);
        let t = a.forward(&[0.0; 3]).unwrap();
        assert!(backprop_deltas(&t, &[0.0; 3], &b).is_err());
        assert!(backprop_deltas(&t, &[0.0; 2], &a).is_err());
        let ds = backprop_deltas(&t, &[0.0; 3], &a).unwrap();
        assert!(relative_gradient(&t, &ds, &a, GradientFlavor::Ordinary).is_err());
    }

    #[test]
    fn flavor_parsing() {
        assert_eq!(
            "relative".parse::<GradientFlavor>().unwrap(),
            GradientFlavor::RelativeRight
        );
        assert_eq!(
            "relative-left".parse::<GradientFlavor>().unwrap(),
            GradientFlavor::RelativeLeft
        );
        assert!("natural".parse::<GradientFlavor>().is_err());
    }
}
