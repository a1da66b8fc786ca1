use std::collections::BTreeMap;

use super::{NnError, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moments for one parameter. `t` counts the updates this
/// parameter has received, so a parameter unfrozen late starts its own bias
/// correction from step one.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m: Tensor,
    pub v: Tensor,
    pub t: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub moments: BTreeMap<String, Moments>,
    /// Number of optimizer steps taken.
    pub step: u64,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One bias-corrected Adam update over every parameter accepted by
/// `trainable`. The effective learning rate of a parameter is
/// `lr * lr_multiplier`.
///
/// Gradients are checked first; a non-finite gradient aborts the step before
/// anything is modified.
pub fn adam_step(
    params: &mut ParamStore,
    state: &mut AdamState,
    lr: f64,
    cfg: AdamConfig,
    trainable: impl Fn(&str) -> bool,
) -> Result<(), NnError> {
    for p in params.iter().filter(|p| trainable(&p.name)) {
        if !p.grad.is_finite() {
            return Err(NnError::NonFiniteGradient { path: p.name.clone() });
        }
    }
    state.step += 1;
    for p in params.iter_mut().filter(|p| trainable(&p.name)) {
        let mom = state.moments.entry(p.name.clone()).or_insert_with(|| Moments {
            m: Tensor::zeros(p.value.shape()),
            v: Tensor::zeros(p.value.shape()),
            t: 0,
        });
        mom.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(mom.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(mom.t as i32);
        let step = lr * p.lr_multiplier;
        let g = p.grad.data();
        let m = mom.m.data_mut();
        for (mi, gi) in m.iter_mut().zip(g) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
        }
        let v = mom.v.data_mut();
        for (vi, gi) in v.iter_mut().zip(g) {
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
        }
        let (m, v) = (mom.m.data(), mom.v.data());
        for ((w, mi), vi) in p.value.data_mut().iter_mut().zip(m).zip(v) {
            let mhat = mi / bc1;
            let vhat = vi / bc2;
            *w -= step * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
