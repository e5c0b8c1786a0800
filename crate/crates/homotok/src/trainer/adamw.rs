//! AdamW with decoupled weight decay and the warmup-free cosine schedule.

use super::TrainError;
use crate::model::{Gradients, Parameters};
use crate::tensor::Tensor;

/// Optimizer hyperparameters plus the schedule horizon.
#[derive(Clone, Copy, Debug)]
pub struct OptimSettings {
    pub base_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub total_steps: usize,
}

/// First and second moment accumulators, keyed like the parameters.
pub struct AdamState {
    pub m: Gradients,
    pub v: Gradients,
}

impl AdamState {
    pub fn new(params: &Parameters) -> AdamState {
        AdamState { m: params.zeros_like(), v: params.zeros_like() }
    }
}

/// base_lr * 0.5 * (1 + cos(pi * step / total_steps)); no warmup.
pub fn cosine_lr(step: usize, total_steps: usize, base_lr: f64) -> Result<f64, TrainError> {
    if total_steps == 0 || step > total_steps {
        return Err(TrainError::StepBeyondSchedule { step, total: total_steps });
    }
    Ok(base_lr * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total_steps as f64).cos()))
}

/// One decoupled-weight-decay Adam update with bias correction. `step` is
/// the 0-based training step; bias correction uses t = step + 1 and the
/// learning rate is `cosine_lr(step)`. Non-finite gradients abort with a
/// diagnostic naming the offending tensor.
pub fn adamw_step(
    params: &mut Parameters,
    grads: &Gradients,
    state: &mut AdamState,
    step: usize,
    opt: &OptimSettings,
) -> Result<(), TrainError> {
    for (name, g) in &grads.tensors {
        if g.data.iter().any(|x| !x.is_finite()) {
            return Err(TrainError::NonFiniteGradient { tensor: name.clone() });
        }
    }
    let lr = cosine_lr(step, opt.total_steps, opt.base_lr)?;
    let t = (step + 1) as i32;
    let bc1 = 1.0 - opt.beta1.powi(t);
    let bc2 = 1.0 - opt.beta2.powi(t);
    for (name, g) in &grads.tensors {
        let theta: &mut Tensor = params.get_mut(name);
        let m = state.m.get_mut(name);
        let v = state.v.get_mut(name);
        for i in 0..g.data.len() {
            m.data[i] = opt.beta1 * m.data[i] + (1.0 - opt.beta1) * g.data[i];
            v.data[i] = opt.beta2 * v.data[i] + (1.0 - opt.beta2) * g.data[i] * g.data[i];
            let m_hat = m.data[i] / bc1;
            let v_hat = v.data[i] / bc2;
            theta.data[i] -= lr * (m_hat / (v_hat.sqrt() + opt.eps) + opt.weight_decay * theta.data[i]);
        }
    }
    Ok(())
}
