//! Adam with bias correction, global-norm clipping, and per-epoch
//! exponential learning-rate decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Consecutive non-finite steps tolerated before training aborts.
pub const MAX_CONSECUTIVE_SKIPS: u32 = 10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.0,
            beta2: 0.98,
            eps: 1e-8,
        }
    }
}

/// First/second moment buffers mirroring the parameter tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct OptimizerState<S> {
    pub m: Vec<Vec<S>>,
    pub v: Vec<Vec<S>>,
    pub step: u64,
    pub anomalies: u64,
    pub consecutive_skips: u32,
}

impl<S: Scalar> OptimizerState<S> {
    pub fn new(params: &[&Tensor<S>]) -> Self {
        OptimizerState {
            m: params.iter().map(|t| vec![S::zero(); t.len()]).collect(),
            v: params.iter().map(|t| vec![S::zero(); t.len()]).collect(),
            step: 0,
            anomalies: 0,
            consecutive_skips: 0,
        }
    }

    fn check_shapes(&self, params: &[&mut Tensor<S>]) -> Result<()> {
        if self.m.len() != params.len() || self.m.iter().zip(params).any(|(m, p)| m.len() != p.len()) {
            return Err(Error::Contract("optimizer state does not match parameters".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// Gradients were non-finite; parameters and moments are untouched.
    Skipped,
}

/// Global L2 norm over every gradient buffer present.
pub fn global_grad_norm<S: Scalar>(params: &[&mut Tensor<S>]) -> S {
    params
        .iter()
        .filter_map(|p| p.grad.as_ref())
        .flat_map(|g| g.iter())
        .map(|&x| x * x)
        .sum::<S>()
        .sqrt()
}

/// Scales all gradients by `clip_norm / norm` when the global norm exceeds
/// `clip_norm`. Returns the norm before clipping and whether clipping fired.
pub fn clip_gradients<S: Scalar>(params: &mut [&mut Tensor<S>], clip_norm: S) -> (S, bool) {
    let norm = global_grad_norm(params);
    if norm > clip_norm && norm.is_finite() {
        let scale = clip_norm / norm;
        for g in params.iter_mut().filter_map(|p| p.grad.as_mut()) {
            g.iter_mut().for_each(|x| *x *= scale);
        }
        (norm, true)
    } else {
        (norm, false)
    }
}

/// One bias-corrected Adam update over tensors that carry a gradient.
/// Non-finite gradients skip the step; too many in a row is an error.
pub fn adam_step<S: Scalar>(
    params: &mut [&mut Tensor<S>],
    state: &mut OptimizerState<S>,
    lr: S,
    config: &AdamConfig,
) -> Result<StepOutcome> {
    state.check_shapes(params)?;
    let finite = params
        .iter()
        .filter_map(|p| p.grad.as_ref())
        .all(|g| g.iter().all(|x| x.is_finite()));
    if !finite {
        state.anomalies += 1;
        state.consecutive_skips += 1;
        log::warn!(
            "non-finite gradient at step {}; skipping update ({} in a row)",
            state.step + 1,
            state.consecutive_skips
        );
        if state.consecutive_skips >= MAX_CONSECUTIVE_SKIPS {
            return Err(Error::Numeric(format!(
                "{} consecutive non-finite gradient steps",
                state.consecutive_skips
            )));
        }
        return Ok(StepOutcome::Skipped);
    }
    state.consecutive_skips = 0;
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (S::lit(config.beta1), S::lit(config.beta2), S::lit(config.eps));
    let c1 = S::one() - b1.powi(t);
    let c2 = S::one() - b2.powi(t);
    for ((p, m), v) in params.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        let Some(grad) = p.grad.take() else { continue };
        for (((w, &g), mi), vi) in p.data_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + (S::one() - b1) * g;
            *vi = b2 * *vi + (S::one() - b2) * g * g;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        p.grad = Some(grad);
    }
    Ok(StepOutcome::Applied)
}

/// `base_lr * decay^epoch`.
pub fn lr_schedule(epoch: usize, base_lr: f64, decay: f64) -> Result<f64> {
    if !(decay > 0.0 && decay <= 1.0) {
        return Err(Error::Config(format!("decay rate must be in (0, 1], got {decay}")));
    }
    Ok(base_lr * decay.powi(epoch as i32))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn param(data: Vec<f64>, grad: Vec<f64>) -> Tensor<f64> {
        let mut t = Tensor::from_vec(data);
        t.grad = Some(grad);
        t
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = param(vec![0.5, -2.0], vec![0.0, 0.0]);
        let mut s = OptimizerState::new(&[&p]);
        adam_step(&mut [&mut p], &mut s, 1e-3, &AdamConfig::default()).unwrap();
        assert_eq!(p.data(), &[0.5, -2.0]);
    }

    #[test]
    fn first_step_hand_value() {
        let mut p = param(vec![0.0], vec![1.0]);
        let mut s = OptimizerState::new(&[&p]);
        adam_step(&mut [&mut p], &mut s, 1e-3, &AdamConfig::default()).unwrap();
        // m_hat = 1, v_hat = 0.02 / 0.02 = 1
        assert!((p.data()[0] + 1e-3 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn non_finite_skips_then_aborts() {
        let mut p = param(vec![1.0], vec![f64::NAN]);
        let mut s = OptimizerState::new(&[&p]);
        for _ in 0..MAX_CONSECUTIVE_SKIPS - 1 {
            let out = adam_step(&mut [&mut p], &mut s, 1e-3, &AdamConfig::default()).unwrap();
            assert_eq!(out, StepOutcome::Skipped);
        }
        assert_eq!(p.data(), &[1.0]);
        assert_eq!(s.step, 0);
        assert!(adam_step(&mut [&mut p], &mut s, 1e-3, &AdamConfig::default()).is_err());
        assert_eq!(s.anomalies, MAX_CONSECUTIVE_SKIPS as u64);
    }

    #[test]
    fn clipping_examples() {
        let mut a = param(vec![0.0; 2], vec![0.3, 0.4]);
        let (n, fired) = clip_gradients(&mut [&mut a], 1.0);
        assert!(!fired && (n - 0.5).abs() < 1e-15);
        let mut a = param(vec![0.0; 2], vec![0.0, 4.0]);
        let mut b = param(vec![0.0], vec![0.0]);
        let (_, fired) = clip_gradients(&mut [&mut a, &mut b], 1.0);
        assert!(fired);
        assert_eq!(a.grad.as_ref().unwrap(), &vec![0.0, 1.0]);
        let mut z = param(vec![0.0], vec![0.0]);
        assert_eq!(clip_gradients(&mut [&mut z], 1.0), (0.0, false));
    }

    #[test]
    fn schedule() {
        assert_eq!(lr_schedule(0, 1e-3, 0.95).unwrap(), 1e-3);
        assert!((lr_schedule(2, 1e-3, 0.9).unwrap() - 8.1e-4).abs() < 1e-18);
        assert_eq!(lr_schedule(7, 1e-3, 1.0).unwrap(), 1e-3);
        assert!(lr_schedule(1, 1e-3, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn clipped_norm_bounded(g in prop::collection::vec(-100.0f64..100.0, 1..30), clip in 0.01f64..10.0) {
            let mut p = param(vec![0.0; g.len()], g);
            clip_gradients(&mut [&mut p], clip);
            prop_assert!(global_grad_norm(&[&mut p]) <= clip + 1e-9);
        }
    }
}
