//! Central-finite-difference verification of analytic gradients.

use super::{Graph, Scalar, Tensor};
use crate::error::{Error, Result};

/// Compares analytic gradients of a scalar-valued function against central
/// finite differences for every coordinate of every tensor in `params`.
///
/// Returns the maximum of `|analytic − fd| / max(1, |fd|)` over all
/// coordinates. The finite-difference side re-evaluates `f` on a
/// non-recording graph, so it is independent of the adjoint path it checks.
pub fn grad_check_params<F: Scalar>(
    f: impl Fn(&Graph<F>) -> Result<Tensor<F>>,
    params: &[Tensor<F>],
    eps: F,
) -> Result<F> {
    for p in params {
        p.zero_grad();
    }
    let graph = Graph::new();
    let loss = f(&graph)?;
    if loss.numel() != 1 {
        return Err(Error::arg("grad_check", "function must be scalar-valued"));
    }
    if !loss.all_finite() {
        return Err(Error::NonFinite("grad_check loss".into()));
    }
    graph.backward(&loss)?;
    let analytic: Vec<Vec<F>> = params
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![F::zero(); p.numel()]))
        .collect();

    let eval = |g: &Graph<F>| -> Result<F> { Ok(f(g)?.item()) };
    let mut max_rel = F::zero();
    for (pi, p) in params.iter().enumerate() {
        for i in 0..p.numel() {
            let orig = p.with_data(|d| d[i]);
            p.update_data(|d| d[i] = orig + eps);
            let plus = eval(&Graph::inference())?;
            p.update_data(|d| d[i] = orig - eps);
            let minus = eval(&Graph::inference())?;
            p.update_data(|d| d[i] = orig);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!("grad_check fd at param {} coord {}", pi, i)));
            }
            let fd = (plus - minus) / (eps + eps);
            let an = analytic[pi][i];
            let rel = (an - fd).abs() / F::one().max(fd.abs());
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}

/// Single-input convenience wrapper: checks `f` at `point`.
pub fn grad_check<F: Scalar>(
    f: impl Fn(&Graph<F>, &Tensor<F>) -> Result<Tensor<F>>,
    point: &Tensor<F>,
    eps: F,
) -> Result<F> {
    let p = point.clone();
    grad_check_params(move |g| f(g, &p), std::slice::from_ref(point), eps)
}
