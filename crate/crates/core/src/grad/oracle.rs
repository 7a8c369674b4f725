//! Independent gradient routes: explicit Jacobian products and central
//! finite differences. Both are `O(D³)` or worse and exist for validation
//! and as the naive baseline in benchmarks.

use super::{backprop_deltas, GradientFlavor, LayerGradient};
use crate::error::{Error, Result};
use crate::linalg::{self, dense_matmul, Matrix};
use crate::model::{self, BaseDistribution, ForwardTrace, Network};

/// Largest dimension for which explicit Jacobians are formed.
pub const ORACLE_BOUND: usize = 64;

fn check_bound(dim: usize, bound: usize) -> Result<()> {
    if dim > bound {
        Err(Error::OracleBound { dim, bound })
    } else {
        Ok(())
    }
}

/// `M_k = diag(σ'(y_k)) W_k`
fn layer_jacobians(net: &Network, trace: &ForwardTrace) -> Vec<Matrix> {
    net.layers()
        .iter()
        .zip(&trace.sigma_prime)
        .map(|(l, d)| {
            let mut m = l.weight.clone();
            m.scale_rows(d);
            m
        })
        .collect()
}

/// `J = M_L ⋯ M_1`, formed with dense products.
pub fn explicit_jacobian(net: &Network, x: &[f64], bound: usize) -> Result<Matrix> {
    check_bound(net.dim(), bound)?;
    let trace = model::forward(net, x)?;
    let mut factors = layer_jacobians(net, &trace).into_iter();
    let mut j = factors.next().expect("depth >= 1");
    for m in factors {
        j = dense_matmul(&m, &j)?;
    }
    Ok(j)
}

/// Per-sample Euclidean gradient with the log-determinant term obtained from
/// the explicit Jacobian: writing `J = P_k W_k S_k`,
/// `∂ log|det J| / ∂W_k = P_kᵀ J⁻ᵀ S_kᵀ` through the linear factor, while the
/// data and slope terms come from the δ recursion. Costs `O(L·D³)` per sample.
pub fn jacobian_gradient(
    net: &Network,
    bd: BaseDistribution,
    x: &[f64],
    bound: usize,
) -> Result<Vec<LayerGradient>> {
    let dim = net.dim();
    check_bound(dim, bound)?;
    let depth = net.depth();
    let trace = model::forward(net, x)?;
    let deltas = backprop_deltas(&trace, &bd.score(trace.output()), net)?;
    let ms = layer_jacobians(net, &trace);

    // suffix[k] = M_{k-1} ⋯ M_1 (identity for the first layer)
    let mut suffix = Vec::with_capacity(depth);
    suffix.push(Matrix::identity(dim));
    for k in 1..depth {
        let next = dense_matmul(&ms[k - 1], &suffix[k - 1])?;
        suffix.push(next);
    }
    // prefix[k] = M_L ⋯ M_{k+1}
    let mut prefix = vec![Matrix::identity(dim); depth];
    for k in (0..depth.saturating_sub(1)).rev() {
        prefix[k] = dense_matmul(&prefix[k + 1], &ms[k + 1])?;
    }
    let j = dense_matmul(&prefix[0], &ms[0])?;
    let j_inv_t = linalg::lu_factor(&j)?.inverse_transpose();

    (0..depth)
        .map(|k| {
            // P_k = prefix_k · diag(σ'_k): scale columns
            let mut p_t = prefix[k].transpose();
            p_t.scale_rows(&trace.sigma_prime[k]);
            let left = dense_matmul(&p_t, &j_inv_t)?;
            let mut d_weight = dense_matmul(&left, &suffix[k].transpose())?;
            d_weight.add_outer(1.0, &deltas.deltas[k], &trace.inputs[k]);
            let d_bias = if net.use_bias() {
                deltas.deltas[k].clone()
            } else {
                linalg::Vector::zeros(dim)
            };
            Ok(LayerGradient {
                d_weight,
                d_bias,
                flavor: GradientFlavor::Ordinary,
            })
        })
        .collect()
}

/// Mean of [`jacobian_gradient`] over a batch.
pub fn batch_jacobian_gradient<X: AsRef<[f64]>>(
    net: &Network,
    bd: BaseDistribution,
    batch: &[X],
    bound: usize,
) -> Result<Vec<LayerGradient>> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    let dim = net.dim();
    let mut acc: Vec<LayerGradient> = (0..net.depth())
        .map(|_| LayerGradient::zeros(dim, GradientFlavor::Ordinary))
        .collect();
    for x in batch {
        for (a, g) in acc
            .iter_mut()
            .zip(jacobian_gradient(net, bd, x.as_ref(), bound)?)
        {
            a.d_weight.axpy(scale, &g.d_weight);
            a.d_bias.axpy(scale, &g.d_bias);
        }
    }
    Ok(acc)
}

/// Central differences of the total log-likelihood, one parameter at a time.
/// Bias entries are perturbed only when the network uses biases.
pub fn finite_difference_gradient(
    net: &Network,
    bd: BaseDistribution,
    x: &[f64],
    h: f64,
) -> Result<Vec<LayerGradient>> {
    if h.is_nan() || h <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "step must be positive, got {h}"
        )));
    }
    let dim = net.dim();
    let mut probe = net.clone();
    let eval = |n: &Network| -> Result<f64> { Ok(model::log_likelihood(n, bd, x)?.total) };
    let mut out = Vec::with_capacity(net.depth());
    for k in 0..net.depth() {
        let mut g = LayerGradient::zeros(dim, GradientFlavor::Ordinary);
        for idx in 0..dim * dim {
            let orig = probe.layers()[k].weight.as_slice()[idx];
            probe.layers_mut()[k].weight.as_mut_slice()[idx] = orig + h;
            let plus = eval(&probe)?;
            probe.layers_mut()[k].weight.as_mut_slice()[idx] = orig - h;
            let minus = eval(&probe)?;
            probe.layers_mut()[k].weight.as_mut_slice()[idx] = orig;
            g.d_weight.as_mut_slice()[idx] = (plus - minus) / (2.0 * h);
        }
        if net.use_bias() {
            for i in 0..dim {
                let orig = probe.layers()[k].bias[i];
                probe.layers_mut()[k].bias[i] = orig + h;
                let plus = eval(&probe)?;
                probe.layers_mut()[k].bias[i] = orig - h;
                let minus = eval(&probe)?;
                probe.layers_mut()[k].bias[i] = orig;
                g.d_bias[i] = (plus - minus) / (2.0 * h);
            }
        }
        out.push(g);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::ordinary_gradient;
    use crate::linalg::{relative_frobenius_error, Rng, Vector};
    use crate::model::{init_network, log_likelihood, Nonlinearity};

    const NORMAL: BaseDistribution = BaseDistribution::StandardNormal;

    fn net(seed: u64, d: usize, depth: usize) -> Network {
        let mut rng = Rng::new(seed);
        let mut n = init_network(
            &mut rng,
            d,
            depth,
            Nonlinearity::default(),
            true,
            false,
            None,
        )
        .unwrap();
        for l in n.layers_mut() {
            l.bias.iter_mut().for_each(|b| *b = 0.3 * rng.normal());
        }
        n
    }

    fn ordinary(n: &Network, x: &[f64]) -> Vec<LayerGradient> {
        let t = n.forward(x).unwrap();
        let ds = backprop_deltas(&t, &NORMAL.score(t.output()), n).unwrap();
        ordinary_gradient(&t, &ds, n).unwrap()
    }

    fn rel_err(a: &LayerGradient, b: &LayerGradient) -> f64 {
        let mut da = a.d_weight.as_slice().to_vec();
        da.extend_from_slice(&a.d_bias);
        let mut db = b.d_weight.as_slice().to_vec();
        db.extend_from_slice(&b.d_bias);
        let n = da.len();
        relative_frobenius_error(
            &Matrix::new(1, n, da).unwrap(),
            &Matrix::new(1, n, db).unwrap(),
        )
    }

    #[test]
    fn jacobian_of_linear_layer_is_weight() {
        let n = net(1, 3, 1);
        let j = explicit_jacobian(&n, &[0.1, 0.2, 0.3], ORACLE_BOUND).unwrap();
        assert_eq!(j, n.layers()[0].weight);
        let j = explicit_jacobian(&Network::identity(4, 1), &[0.0; 4], ORACLE_BOUND).unwrap();
        assert_eq!(j, Matrix::identity(4));
    }

    #[test]
    fn jacobian_logdet_matches_decomposition() {
        let n = net(2, 4, 2);
        let x = [0.4, -0.1, 0.9, -1.3];
        let j = explicit_jacobian(&n, &x, ORACLE_BOUND).unwrap();
        let ll = log_likelihood(&n, NORMAL, &x).unwrap();
        let s = linalg::slogdet(&j).unwrap();
        assert!((s.logabsdet - (ll.l_j1 + ll.l_j2)).abs() < 1e-9);
    }

    #[test]
    fn bound_enforced() {
        let n = Network::identity(5, 1);
        assert!(matches!(
            explicit_jacobian(&n, &[0.0; 5], 4),
            Err(Error::OracleBound { dim: 5, bound: 4 })
        ));
    }

    #[test]
    fn finite_differences_match_ordinary() {
        let n = net(3, 3, 2);
        let x = [0.5, -0.2, 0.1];
        let fd = finite_difference_gradient(&n, NORMAL, &x, 1e-5).unwrap();
        for (a, b) in fd.iter().zip(ordinary(&n, &x)) {
            assert!(rel_err(a, &b) < 1e-6, "{}", rel_err(a, &b));
        }
    }

    #[test]
    fn jacobian_route_matches_ordinary() {
        let n = net(4, 5, 3);
        let x = [0.5, -0.2, 0.1, 1.0, -0.6];
        let jg = jacobian_gradient(&n, NORMAL, &x, ORACLE_BOUND).unwrap();
        for (a, b) in jg.iter().zip(ordinary(&n, &x)) {
            assert!(rel_err(a, &b) < 1e-10);
        }
    }

    #[test]
    fn second_order_convergence() {
        let n = net(5, 3, 2);
        let x = [0.3, 0.8, -0.5];
        let exact = ordinary(&n, &x);
        let err = |h: f64| -> f64 {
            let fd = finite_difference_gradient(&n, NORMAL, &x, h).unwrap();
            fd.iter()
                .zip(&exact)
                .map(|(a, b)| rel_err(a, b))
                .fold(0.0, f64::max)
        };
        let ratio = err(2e-2) / err(1e-2);
        assert!((3.0..5.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn symmetric_net_gives_symmetric_gradient() {
        // W = 2I, zero input: the gradient is invariant under swapping coordinates
        let layer = crate::model::Layer {
            weight: Matrix::scaled_identity(3, 2.0),
            bias: Vector::zeros(3),
        };
        let n = Network::new(
            vec![layer.clone(), layer],
            Nonlinearity::default(),
            false,
            false,
        )
        .unwrap();
        let fd = finite_difference_gradient(&n, NORMAL, &[0.0; 3], 1e-5).unwrap();
        for g in &fd {
            let w = &g.d_weight;
            for i in 0..3 {
                for j in 0..3 {
                    assert!((w.get(i, j) - w.get(j, i)).abs() < 1e-8);
                }
                assert!((w.get(i, i) - w.get(0, 0)).abs() < 1e-8);
            }
        }
    }
}
