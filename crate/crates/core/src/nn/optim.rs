//! Adaptive first-order optimizer (per-parameter moment estimates with bias
//! correction) used by every trainable component.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::nn::params::ParamVector;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        AdamHyper {
            lr,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(param_len: usize) -> Self {
        AdamState {
            m: vec![0.0; param_len],
            v: vec![0.0; param_len],
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One update step. Gradients are validated first; on a non-finite gradient
/// the parameters and moments are left untouched.
pub fn adam_step(
    params: &mut ParamVector,
    grads: &[f64],
    state: &mut AdamState,
    hy: &AdamHyper,
) -> Result<()> {
    if grads.len() != params.len() || grads.len() != state.m.len() {
        return Err(CoreError::DimMismatch(format!(
            "adam: params {}, grads {}, state {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if !grads.iter().all(|g| g.is_finite()) {
        return Err(CoreError::NonFinite("gradient passed to optimizer".into()));
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - hy.beta1.powi(t);
    let bc2 = 1.0 - hy.beta2.powi(t);
    let data = params.data_mut();
    for i in 0..grads.len() {
        state.m[i] = hy.beta1 * state.m[i] + (1.0 - hy.beta1) * grads[i];
        state.v[i] = hy.beta2 * state.v[i] + (1.0 - hy.beta2) * grads[i] * grads[i];
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        data[i] -= hy.lr * m_hat / (v_hat.sqrt() + hy.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::ParamBuilder;

    fn three_params(vals: &[f64]) -> ParamVector {
        let mut b = ParamBuilder::new();
        b.vector("p", vals.len());
        let mut p = b.finish();
        p.tensor_mut("p").unwrap().copy_from_slice(vals);
        p
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = three_params(&[1.0, -2.0, 0.5]);
        let before = p.data().to_vec();
        let mut st = AdamState::new(p.len());
        for _ in 0..5 {
            adam_step(&mut p, &[0.0, 0.0, 0.0], &mut st, &AdamHyper::default()).unwrap();
        }
        assert_eq!(p.data(), before.as_slice());
        assert_eq!(st.step_count(), 5);
    }

    #[test]
    fn quadratic_bowl_converges() {
        // f(p) = |p|^2, grad = 2p; 200 steps at lr 0.05 drives |p| below 1e-3.
        let mut p = three_params(&[1.0, 0.3, -1.0]);
        let mut st = AdamState::new(p.len());
        let hy = AdamHyper::with_lr(0.05);
        for _ in 0..200 {
            let g: Vec<f64> = p.data().iter().map(|x| 2.0 * x).collect();
            adam_step(&mut p, &g, &mut st, &hy).unwrap();
        }
        let norm = p.data().iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm < 1e-3, "final |p| = {norm}");
    }

    #[test]
    fn nan_gradient_is_rejected_and_params_untouched() {
        let mut p = three_params(&[1.0, 2.0, 3.0]);
        let before = p.data().to_vec();
        let mut st = AdamState::new(p.len());
        let err = adam_step(&mut p, &[0.1, f64::NAN, 0.2], &mut st, &AdamHyper::default());
        assert!(err.is_err());
        assert_eq!(p.data(), before.as_slice());
        assert_eq!(st.step_count(), 0);
    }
}
