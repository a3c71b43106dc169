use super::params::{ParamGrads, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Per-parameter Adam moments, aligned with [`ParamStore`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        Self {
            first_moment: zeros.clone(),
            second_moment: zeros,
            step_count: 0,
        }
    }
}

/// One bias-corrected Adam update (β₁ = 0.9, β₂ = 0.999, ε = 1e-8).
///
/// All gradients are validated before any parameter is touched.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &ParamGrads,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if lr.is_nan() || lr <= 0.0 {
        return Err(Error::Contract(format!("learning rate must be positive, got {lr}")));
    }
    if state.first_moment.len() != params.len() {
        return Err(Error::Contract("optimizer state does not match parameters".into()));
    }
    for (name, t) in params.iter() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::Contract(format!("missing gradient for `{name}`")))?;
        if g.shape() != t.shape() {
            return Err(Error::dim(format!("adam `{name}`"), t.shape(), g.shape()));
        }
    }

    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - BETA1.powi(t);
    let bc2 = 1.0 - BETA2.powi(t);
    for (i, (name, p)) in params.iter_mut().enumerate() {
        let g = grads.get(name).unwrap().data();
        let m = state.first_moment[i].data_mut();
        let v = state.second_moment[i].data_mut();
        for (k, pv) in p.data_mut().iter_mut().enumerate() {
            m[k] = BETA1 * m[k] + (1.0 - BETA1) * g[k];
            v[k] = BETA2 * v[k] + (1.0 - BETA2) * g[k] * g[k];
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            *pv -= lr * m_hat / (v_hat.sqrt() + EPSILON);
        }
    }
    Ok(())
}
