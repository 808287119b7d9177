//! AdamW with decoupled weight decay.

use alloc::vec::Vec;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f32,
    pub weight_decay: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 5e-5,
            weight_decay: 0.02,
            beta1: 0.9,
            beta2: 0.98,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub step: u64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
    /// per-parameter weight-decay switch
    pub decay: Vec<bool>,
    pub hyper: AdamHyper,
}

impl OptState {
    /// Zero moments shaped like `params`. Weight decay applies to matrices
    /// only; vectors (biases, embeddings rows, the temperature) are exempt.
    pub fn new(params: &[Tensor], hyper: AdamHyper) -> Self {
        OptState {
            step: 0,
            first_moment: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            second_moment: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            decay: params.iter().map(|p| p.rank() >= 2).collect(),
            hyper,
        }
    }
}

fn check_shapes(params: &[Tensor], grads: &[Tensor], state: &OptState) -> Result<()> {
    if params.len() != grads.len()
        || params.len() != state.first_moment.len()
        || params.len() != state.second_moment.len()
        || params.len() != state.decay.len()
    {
        return Err(Error::InvalidArgument(alloc::format!(
            "adamw: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.first_moment.len()
        )));
    }
    for (i, p) in params.iter().enumerate() {
        for other in [&grads[i], &state.first_moment[i], &state.second_moment[i]] {
            if other.shape() != p.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adamw",
                    lhs: p.shape().to_vec(),
                    rhs: other.shape().to_vec(),
                });
            }
        }
    }
    Ok(())
}

/// One AdamW update at learning rate `lr` (the schedule owns the rate;
/// `state.hyper.lr` is only the default).
pub fn adamw_step(params: &mut [Tensor], grads: &[Tensor], state: &mut OptState, lr: f32) -> Result<()> {
    check_shapes(params, grads, state)?;
    state.step += 1;
    let h = state.hyper;
    let t = state.step as i32;
    let bc1 = 1.0 - math::powi(h.beta1 as f64, t);
    let bc2 = 1.0 - math::powi(h.beta2 as f64, t);
    for (i, p) in params.iter_mut().enumerate() {
        let decay = if state.decay[i] { h.weight_decay } else { 0.0 };
        let g = grads[i].data();
        let m = state.first_moment[i].data_mut();
        for (mj, &gj) in m.iter_mut().zip(g) {
            *mj = h.beta1 * *mj + (1.0 - h.beta1) * gj;
        }
        let v = state.second_moment[i].data_mut();
        for (vj, &gj) in v.iter_mut().zip(g) {
            *vj = h.beta2 * *vj + (1.0 - h.beta2) * gj * gj;
        }
        let m = state.first_moment[i].data();
        let v = state.second_moment[i].data();
        for ((x, &mj), &vj) in p.data_mut().iter_mut().zip(m).zip(v) {
            *x -= lr * decay * *x;
            let mhat = mj as f64 / bc1;
            let vhat = vj as f64 / bc2;
            *x -= (lr as f64 * mhat / (math::sqrt(vhat) + h.epsilon as f64)) as f32;
        }
    }
    Ok(())
}
