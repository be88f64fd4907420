use super::model::{ModelParams, ParamGrads};
use super::TrainConfig;

/// Moment estimates for every tensor of [`ModelParams`], in the same order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .tensors()
            .iter()
            .map(|t| vec![0.0; t.len()])
            .collect();
        Self {
            first: zeros.clone(),
            second: zeros,
            step: 0,
        }
    }
}

/// Learning rate of each tensor: projector, prototypes (data and top), classifier.
pub fn group_learning_rates(cfg: &TrainConfig) -> [f64; 6] {
    [
        cfg.lr_projector,
        cfg.lr_projector,
        cfg.lr_prototypes,
        cfg.lr_prototypes,
        cfg.lr_cls,
        cfg.lr_cls,
    ]
}

/// One bias-corrected Adam update with per-group learning rates.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ParamGrads,
    state: &mut AdamState,
    cfg: &TrainConfig,
) {
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let lrs = group_learning_rates(cfg);
    let freeze_bias = !cfg.cls_bias;
    for (slot, ((p, g), lr)) in params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(lrs)
        .enumerate()
    {
        if slot == 5 && freeze_bias {
            continue;
        }
        let m = &mut state.first[slot];
        let v = &mut state.second[slot];
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            p[i] -= lr * mhat / (vhat.sqrt() + cfg.adam_eps);
        }
    }
}
