use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::GradMap;
use crate::error::{Error, Result};
use crate::model::ParameterStore;
use crate::tensor::Scalar;

/// AdamW hyperparameters other than the learning rate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Moment estimates and step count.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub hyper: AdamW,
    pub step: u64,
    pub m: BTreeMap<String, Vec<T>>,
    pub v: BTreeMap<String, Vec<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(hyper: AdamW, params: &ParameterStore<T>) -> Self {
        let zeros: BTreeMap<String, Vec<T>> = params
            .iter()
            .map(|(k, t)| (k.clone(), vec![T::zero(); t.numel()]))
            .collect();
        OptimizerState {
            hyper,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One AdamW update with decoupled weight decay and bias-corrected moments.
///
/// Every gradient is checked before anything is modified, so a rejected
/// step leaves both parameters and state untouched. Parameters without a
/// gradient entry are treated as having zero gradient.
pub fn adamw_step<T: Scalar>(
    params: &mut ParameterStore<T>,
    grads: &GradMap<T>,
    state: &mut OptimizerState<T>,
    lr: f64,
) -> Result<()> {
    for (path, g) in grads {
        let p = params
            .get(path)
            .ok_or_else(|| Error::InvalidArgument(format!("gradient for unknown parameter {path}")))?;
        if g.len() != p.numel() {
            return Err(Error::Shape(format!(
                "gradient for {path} has {} entries, parameter has {}",
                g.len(),
                p.numel()
            )));
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {path}")));
        }
    }
    if !lr.is_finite() || lr < 0.0 {
        return Err(Error::InvalidArgument(format!("learning rate {lr}")));
    }
    let h = state.hyper;
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - h.beta1.powi(t);
    let bc2 = 1.0 - h.beta2.powi(t);
    let decay = 1.0 - lr * h.weight_decay;
    let paths: Vec<String> = params.paths().cloned().collect();
    for path in paths {
        let grad = grads.get(&path);
        let m = state.m.entry(path.clone()).or_default();
        let v = state.v.entry(path.clone()).or_default();
        let w = params.get_mut(&path).expect("path from store").data_mut();
        if m.len() != w.len() {
            *m = vec![T::zero(); w.len()];
            *v = vec![T::zero(); w.len()];
        }
        for i in 0..w.len() {
            let g = grad.map_or(0.0, |g| g[i].to_f64().unwrap_or(0.0));
            let mi = h.beta1 * m[i].to_f64().unwrap_or(0.0) + (1.0 - h.beta1) * g;
            let vi = h.beta2 * v[i].to_f64().unwrap_or(0.0) + (1.0 - h.beta2) * g * g;
            m[i] = T::of(mi);
            v[i] = T::of(vi);
            let update = (mi / bc1) / ((vi / bc2).sqrt() + h.eps);
            let wi = w[i].to_f64().unwrap_or(0.0);
            w[i] = T::of(wi * decay - lr * update);
        }
    }
    Ok(())
}

/// Learning rate as a function of the 1-based optimizer step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LrSchedule {
    Constant {
        lr: f64,
    },
    /// Linear warmup to `base_lr`, then `base_lr·sqrt(warmup/step)`.
    InverseSqrt {
        base_lr: f64,
        warmup: u64,
    },
}

impl LrSchedule {
    pub fn lr(&self, step: u64) -> f64 {
        let step = step.max(1) as f64;
        match *self {
            LrSchedule::Constant { lr } => lr,
            LrSchedule::InverseSqrt { base_lr, warmup } => {
                let warmup = warmup.max(1) as f64;
                if step <= warmup {
                    base_lr * step / warmup
                } else {
                    base_lr * (warmup / step).sqrt()
                }
            }
        }
    }
}
