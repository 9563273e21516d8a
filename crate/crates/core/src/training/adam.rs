use serde::{Deserialize, Serialize};

use crate::model::{GradientSet, ModelParameters};

use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates, shaped like the parameters.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub config: AdamConfig,
    first: GradientSet,
    second: GradientSet,
    step: u64,
}

impl OptimizerState {
    pub fn new(params: &ModelParameters, config: AdamConfig) -> Self {
        OptimizerState {
            config,
            first: params.zeros_like(),
            second: params.zeros_like(),
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(
    params: &mut ModelParameters,
    grads: &GradientSet,
    state: &mut OptimizerState,
) -> Result<(), TrainError> {
    if !params.same_shape(grads) || !params.same_shape(&state.first) {
        return Err(TrainError::ShapeMismatch);
    }
    state.step += 1;
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let t = state.step as i32;
    let correction1 = 1.0 - beta1.powi(t);
    let correction2 = 1.0 - beta2.powi(t);
    let grads = grads.tensors();
    let firsts = state.first.tensors_mut();
    let seconds = state.second.tensors_mut();
    for ((((_, _, p), (_, _, g)), (_, _, m)), (_, _, v)) in params
        .tensors_mut()
        .into_iter()
        .zip(grads)
        .zip(firsts)
        .zip(seconds)
    {
        for (((p, &g), m), v) in p
            .as_mut_slice()
            .iter_mut()
            .zip(g.as_slice())
            .zip(m.as_mut_slice())
            .zip(v.as_mut_slice())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / correction1;
            let v_hat = *v / correction2;
            *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}
