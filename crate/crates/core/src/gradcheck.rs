//! Central finite differences, used as the independent oracle for every
//! analytic gradient in the crate.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::model::{Binding, BoundParams, ModelParams};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Central-difference estimate `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate of `x`.
pub fn finite_difference_gradient<S, F>(mut f: F, x: &Tensor<S>, h: S) -> Result<Tensor<S>>
where
    S: Scalar,
    F: FnMut(&Tensor<S>) -> Result<S>,
{
    if !(h > S::zero()) {
        return Err(Error::Argument(format!("finite-difference step must be positive, got {h}")));
    }
    let mut probe = x.detached();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Domain(format!(
                "non-finite function value at coordinate {i}"
            )));
        }
        out.push((plus - minus) / (h + h));
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Largest elementwise relative error `|a - b| / max(|a|, |b|, floor)`.
///
/// The floor keeps coordinates whose true derivative is (numerically) zero
/// from dominating; below it the comparison is effectively absolute.
pub fn max_relative_error<S: Scalar>(analytic: &[S], numeric: &[S], floor: S) -> S {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(S::zero(), S::max)
}

/// Worst-case agreement between analytic and finite-difference gradients for
/// one parameter tensor.
#[derive(Clone, Debug)]
pub struct TensorAudit<S> {
    pub name: String,
    pub max_relative_error: S,
    pub max_abs_gradient: S,
}

/// Compares the gradient of a scalar `term` with respect to every trainable
/// parameter tensor of `model` against central differences of step `h`.
///
/// `term` must be deterministic: it is rebuilt on a fresh graph for every
/// function evaluation, so any randomness has to be fixed by the caller.
pub fn audit_parameters<S, F>(model: &ModelParams<S>, mut term: F, h: S, floor: S) -> Result<Vec<TensorAudit<S>>>
where
    S: Scalar,
    F: FnMut(&mut Graph<S>, &BoundParams) -> Result<NodeId>,
{
    let mut graph = Graph::new();
    let bound = model.bind(&mut graph, Binding::Trainable)?;
    let root = term(&mut graph, &bound)?;
    let grads = graph.backward(root)?;

    let names: Vec<String> = model.named_tensors().into_iter().map(|(n, _)| n).collect();
    let mut probe = model.clone();
    let mut out = Vec::new();
    for (i, name) in names.into_iter().enumerate() {
        if !model.is_trainable(i) {
            continue;
        }
        let analytic = grads.wrt(bound.ids[i]);
        let original = model.named_tensors()[i].1.detached();
        let numeric = finite_difference_gradient(
            |t: &Tensor<S>| {
                probe.tensors_mut()[i].data_mut().copy_from_slice(t.data());
                let mut g = Graph::new();
                let b = probe.bind(&mut g, Binding::Frozen)?;
                let r = term(&mut g, &b)?;
                Ok(g.value(r).item())
            },
            &original,
            h,
        )?;
        probe.tensors_mut()[i].data_mut().copy_from_slice(original.data());
        out.push(TensorAudit {
            name,
            max_relative_error: max_relative_error(analytic.data(), numeric.data(), floor),
            max_abs_gradient: analytic.data().iter().fold(S::zero(), |m, &x| m.max(x.abs())),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic() {
        let x = Tensor::from_vec(vec![1.0, 2.0]);
        let g = finite_difference_gradient(
            |t: &Tensor<f64>| Ok(t.data().iter().map(|v| v * v).sum()),
            &x,
            1e-5,
        )
        .unwrap();
        assert!((g.data()[0] - 2.0).abs() < 1e-8);
        assert!((g.data()[1] - 4.0).abs() < 1e-8);
    }

    #[test]
    fn linear_is_exact() {
        let x = Tensor::from_vec(vec![0.5, -1.5, 3.0]);
        let f = |t: &Tensor<f64>| Ok(2.0 * t.data()[0] - 4.0 * t.data()[1] + 0.5 * t.data()[2]);
        for h in [1e-3, 1e-5, 0.25] {
            let g = finite_difference_gradient(f, &x, h).unwrap();
            assert!((g.data()[0] - 2.0).abs() < 1e-9);
            assert!((g.data()[1] + 4.0).abs() < 1e-9);
            assert!((g.data()[2] - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_bad_step_and_non_finite() {
        let x = Tensor::from_vec(vec![1.0]);
        assert!(finite_difference_gradient(|_: &Tensor<f64>| Ok(0.0), &x, 0.0).is_err());
        let r = finite_difference_gradient(|t: &Tensor<f64>| Ok(t.data()[0].ln() / 0.0), &x, 1e-3);
        assert!(matches!(r, Err(Error::Domain(_))));
    }
}
