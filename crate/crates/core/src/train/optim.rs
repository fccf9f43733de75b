use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWParams {
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWParams {
    fn default() -> Self {
        AdamWParams {
            weight_decay: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<T: Scalar>(params: &[Tensor<T>]) -> Self {
        AdamState {
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
        }
    }
}

/// One AdamW update with decoupled weight decay:
/// `w ← w − lr·wd·w − lr·m̂/(√v̂ + eps)`.
///
/// Moments are kept in `f64` whatever the parameter type. A non-finite
/// gradient aborts before any parameter is touched.
pub fn adamw_step<T: Scalar>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState,
    lr: f64,
    hp: &AdamWParams,
) -> Result<()> {
    if lr < 0.0 {
        return Err(Error::contract(format!("negative learning rate {lr}")));
    }
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::contract(format!(
            "{} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(Error::Shape {
                op: "adamw_step",
                left: p.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
        if let Some(j) = g.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite gradient at parameter {i}, element {j}"
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hp.beta1.powi(t);
    let bc2 = 1.0 - hp.beta2.powi(t);
    let decay = 1.0 - lr * hp.weight_decay;
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            let gi = gi.as_f64();
            *mi = hp.beta1 * *mi + (1.0 - hp.beta1) * gi;
            *vi = hp.beta2 * *vi + (1.0 - hp.beta2) * gi * gi;
            let mhat = *mi / bc1;
            let vhat = *vi / bc2;
            let wf = w.as_f64() * decay - lr * mhat / (vhat.sqrt() + hp.eps);
            *w = T::of(wf);
        }
    }
    Ok(())
}

/// Linear warmup from 0 to `lr_peak` over `warmup` epochs, then cosine
/// decay to 0 at `max_epochs`. `epoch` may be fractional.
pub fn lr_at(epoch: f64, lr_peak: f64, warmup: f64, max_epochs: f64) -> f64 {
    if epoch <= 0.0 {
        return 0.0;
    }
    if epoch < warmup {
        return lr_peak * epoch / warmup;
    }
    if epoch >= max_epochs {
        return 0.0;
    }
    let progress = (epoch - warmup) / (max_epochs - warmup);
    lr_peak * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}
