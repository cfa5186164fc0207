use std::collections::BTreeMap;

use crate::numeric::{Gradients, ParamSet, Tensor};

use super::TrainError;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moment estimates, keyed by parameter name so the state
/// survives parameter-set reshaping between stages.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    moments: BTreeMap<String, (Tensor, Tensor)>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn moments(&self, name: &str) -> Option<(&Tensor, &Tensor)> {
        self.moments.get(name).map(|(m, v)| (m, v))
    }
}

/// One bias-corrected Adam update of every parameter accepted by `trainable`.
/// Non-finite gradients leave both parameters and state untouched.
pub fn adam_step(
    params: &mut ParamSet,
    grads: &Gradients,
    state: &mut AdamState,
    lr: f64,
    trainable: impl Fn(&str) -> bool,
) -> Result<(), TrainError> {
    if grads.len() != params.len() {
        return Err(TrainError::Config(format!(
            "{} gradient tensors for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    if !grads.is_finite() {
        return Err(TrainError::NonFiniteGradient);
    }
    for id in params.ids() {
        if params.get(id).shape() != grads.get(id).shape() {
            return Err(TrainError::Config(format!("gradient shape mismatch for `{}`", params.name(id))));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let name = params.name(id).to_string();
        if !trainable(&name) {
            continue;
        }
        let g = grads.get(id).data();
        let (m, v) = state
            .moments
            .entry(name)
            .or_insert_with(|| (Tensor::zeros(grads.get(id).shape()), Tensor::zeros(grads.get(id).shape())));
        let p = params.get_mut(id).data_mut();
        for i in 0..p.len() {
            let mi = &mut m.data_mut()[i];
            *mi = BETA1 * *mi + (1.0 - BETA1) * g[i];
            let vi = &mut v.data_mut()[i];
            *vi = BETA2 * *vi + (1.0 - BETA2) * g[i] * g[i];
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + EPSILON);
        }
    }
    Ok(())
}
