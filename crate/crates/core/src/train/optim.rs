use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::model::{ModelParams, ParamKind};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr_peak: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr_peak: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Moment estimates for every parameter, shaped like the model.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub hyper: AdamWConfig,
    pub step: u64,
    m: ModelParams,
    v: ModelParams,
}

impl OptimizerState {
    pub fn new(params: &ModelParams, hyper: AdamWConfig) -> Self {
        Self {
            hyper,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

fn same_shapes(a: &ModelParams, b: &ModelParams) -> bool {
    let (ta, tb) = (a.named_tensors(), b.named_tensors());
    ta.len() == tb.len() && ta.iter().zip(&tb).all(|(x, y)| x.2.shape() == y.2.shape())
}

/// One bias-corrected Adam step with decoupled weight decay at rate `lr`.
/// Normalization gains and offsets are not decayed.
pub fn adamw_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut OptimizerState,
    lr: f64,
) -> Result<(), TrainError> {
    if !same_shapes(params, grads) || !same_shapes(params, &state.m) {
        return Err(TrainError::ShapeMismatch);
    }
    let h = state.hyper;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - h.beta1.powi(t);
    let c2 = 1.0 - h.beta2.powi(t);
    let kinds: Vec<ParamKind> = grads.named_tensors().iter().map(|(_, k, _)| *k).collect();
    let g_all = grads.named_tensors();
    let p_all = params.tensors_mut();
    let m_all = state.m.tensors_mut();
    let v_all = state.v.tensors_mut();
    for ((((p, m), v), (_, _, g)), kind) in p_all
        .into_iter()
        .zip(m_all)
        .zip(v_all)
        .zip(g_all)
        .zip(kinds)
    {
        let decay = if kind == ParamKind::Norm {
            0.0
        } else {
            h.weight_decay
        };
        let ps = p.as_mut_slice();
        let ms = m.as_mut_slice();
        let vs = v.as_mut_slice();
        for (i, &gi) in g.as_slice().iter().enumerate() {
            ms[i] = h.beta1 * ms[i] + (1.0 - h.beta1) * gi;
            vs[i] = h.beta2 * vs[i] + (1.0 - h.beta2) * gi * gi;
            let mhat = ms[i] / c1;
            let vhat = vs[i] / c2;
            let old = ps[i];
            ps[i] = old - lr * (mhat / (vhat.sqrt() + h.eps)) - lr * decay * old;
        }
    }
    Ok(())
}
