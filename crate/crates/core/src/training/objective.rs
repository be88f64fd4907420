use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{distance_with_grad, exp_map0_raw, exp_map0_vjp, PoincarePoint};
use crate::grad::{Loss, LossGrad};
use crate::hierarchy::{loss_hsl, Triplet};
use crate::linalg::{axpy, dot};
use crate::prototypes::{loss_aug, loss_proto, LabeledEmbedding};
use crate::whitening::loss_pfw;

use super::model::{bce_with_logit, sigmoid, Batch, ModelParams, ParamGrads};
use super::TrainConfig;

/// Which loss terms to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TermSet {
    pub cls: bool,
    pub proto: bool,
    pub aug: bool,
    pub hsl: bool,
    pub pfw: bool,
}

impl TermSet {
    pub const NONE: TermSet = TermSet {
        cls: false,
        proto: false,
        aug: false,
        hsl: false,
        pfw: false,
    };

    /// The terms a training step optimizes under `cfg`.
    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self {
            cls: true,
            proto: cfg.losses.ppl,
            aug: cfg.losses.ppl,
            hsl: cfg.losses.hsl,
            pfw: cfg.losses.pfw,
        }
    }
}

/// Per-term values of one evaluation; disabled terms read zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cls: f64,
    pub proto: f64,
    pub aug: f64,
    pub ppl: f64,
    pub hsl: f64,
    pub pfw: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn first_non_finite(&self) -> Option<&'static str> {
        [
            ("cls", self.cls),
            ("proto", self.proto),
            ("aug", self.aug),
            ("hsl", self.hsl),
            ("pfw", self.pfw),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

#[derive(Debug, Clone)]
pub struct Objective {
    pub value: f64,
    pub grads: ParamGrads,
    pub breakdown: LossBreakdown,
    pub warnings: Vec<String>,
}

struct Forward {
    v: Vec<Vec<f64>>,
    v_aug: Vec<Vec<f64>>,
    embeddings: Vec<LabeledEmbedding>,
}

fn forward(batch: &Batch, params: &ModelParams) -> Result<Forward> {
    if batch.is_empty() {
        return Err(Error::InvalidBatch("empty batch".into()));
    }
    if batch.x.len() != batch.len() || batch.x_aug.len() != batch.len() {
        return Err(Error::InvalidBatch("ragged batch".into()));
    }
    let d_in = params.d_in();
    if batch.x.iter().chain(&batch.x_aug).any(|x| x.len() != d_in) {
        return Err(Error::InvalidInput(format!(
            "feature length differs from {d_in}"
        )));
    }
    let g = params.bank.geometry();
    let v: Vec<Vec<f64>> = batch.x.iter().map(|x| params.project(x)).collect();
    let v_aug: Vec<Vec<f64>> = batch.x_aug.iter().map(|x| params.project(x)).collect();
    let embeddings = v
        .iter()
        .zip(&v_aug)
        .zip(&batch.y)
        .map(|((a, b), y)| LabeledEmbedding {
            z: PoincarePoint::new_unchecked(exp_map0_raw(a, g)),
            z_aug: PoincarePoint::new_unchecked(exp_map0_raw(b, g)),
            y: *y,
        })
        .collect();
    Ok(Forward {
        v,
        v_aug,
        embeddings,
    })
}

/// Mean BCE of the distance classifier over the original views (and the
/// augmented ones when `cls_on_augmented` is set).
fn cls_term(
    fw: &Forward,
    params: &ModelParams,
    cfg: &TrainConfig,
) -> (f64, LossGrad, Vec<f64>, f64) {
    let bank = &params.bank;
    let protos = bank.materialize().data;
    let c = bank.geometry().c;
    let n = fw.embeddings.len();
    let mut pg = bank.point_grad(n);
    let mut g_w = vec![0.0; bank.num_data()];
    let mut g_b = 0.0;
    let mut value = 0.0;

    let views: &[bool] = if cfg.cls_on_augmented {
        &[false, true]
    } else {
        &[false]
    };
    let count = (n * views.len()) as f64;
    for &aug in views {
        for (i, e) in fw.embeddings.iter().enumerate() {
            let z = if aug { &e.z_aug } else { &e.z };
            let dg: Vec<_> = protos.iter().map(|p| distance_with_grad(z, p, c)).collect();
            let d: Vec<f64> = dg.iter().map(|x| x.0).collect();
            let logit = dot(&params.cls_weight, &d) + params.cls_bias;
            let target = e.y.target();
            value += bce_with_logit(logit, target) / count;
            let dl = (sigmoid(logit) - target) / count;
            axpy(&mut g_w, dl, &d);
            g_b += dl;
            let gz = if aug { &mut pg.z_aug[i] } else { &mut pg.z[i] };
            for (m, (_, grads)) in dg.iter().enumerate() {
                if let Some((g_z, g_p)) = grads {
                    let w = dl * params.cls_weight[m];
                    axpy(gz, w, g_z);
                    axpy(pg.data.row_mut(m), w, g_p);
                }
            }
        }
    }
    if !cfg.cls_bias {
        g_b = 0.0;
    }
    (value, bank.pull_back(pg), g_w, g_b)
}

/// Evaluates the selected terms and their gradients with respect to every
/// model tensor. `triplets` must already carry their selected ancestors.
pub fn evaluate(
    batch: &Batch,
    params: &ModelParams,
    cfg: &TrainConfig,
    triplets: &[Triplet],
    terms: TermSet,
) -> Result<Objective> {
    let fw = forward(batch, params)?;
    let bank = &params.bank;
    let n = batch.len();
    let dim = params.dim();
    let mut acc = LossGrad::zeros(n, dim, bank.num_data(), bank.num_top());
    let mut grads = ParamGrads::zeros_like(params);
    let mut bd = LossBreakdown::default();
    let mut warnings = Vec::new();

    if terms.cls {
        let (v, lg, gw, gb) = cls_term(&fw, params, cfg);
        bd.cls = v;
        acc.add_assign(&lg);
        grads.cls_weight = gw;
        grads.cls_bias = gb;
    }
    let mut add = |slot: &mut f64, loss: Loss| {
        *slot = loss.value;
        acc.add_assign(&loss.grad);
    };
    if terms.proto {
        add(&mut bd.proto, loss_proto(&fw.embeddings, bank)?);
    }
    if terms.aug {
        add(&mut bd.aug, loss_aug(&fw.embeddings, bank)?);
    }
    if terms.hsl {
        add(&mut bd.hsl, loss_hsl(triplets, bank, &cfg.hsl)?);
    }
    if terms.pfw {
        let out = loss_pfw(
            &fw.embeddings,
            bank.geometry(),
            cfg.mask_ratio_bonafide,
            cfg.mask_ratio_spoof,
        )?;
        warnings.extend(out.warnings);
        add(&mut bd.pfw, out.loss);
    }
    bd.ppl = bd.proto + bd.aug;
    bd.total = bd.cls + bd.ppl + bd.hsl + bd.pfw;

    // embeddings -> tangent pre-activations -> projector
    let g = bank.geometry();
    for (vs, gzs, xs) in [
        (&fw.v, &acc.z, &batch.x),
        (&fw.v_aug, &acc.z_aug, &batch.x_aug),
    ] {
        for ((v, gz), x) in vs.iter().zip(gzs).zip(xs) {
            if gz.iter().all(|e| *e == 0.0) {
                continue;
            }
            let gv = exp_map0_vjp(v, gz, g);
            axpy(&mut grads.projector_bias, 1.0, &gv);
            for (r, gvr) in gv.iter().enumerate() {
                axpy(grads.projector_weight.row_mut(r), *gvr, x);
            }
        }
    }
    grads.theta_data = acc.theta_data;
    grads.theta_top = acc.theta_top;

    Ok(Objective {
        value: bd.total,
        grads,
        breakdown: bd,
        warnings,
    })
}

/// Unit-weighted sum of classification and every term enabled in `cfg.losses`.
pub fn total_loss(
    batch: &Batch,
    params: &ModelParams,
    cfg: &TrainConfig,
    triplets: &[Triplet],
) -> Result<Objective> {
    evaluate(batch, params, cfg, triplets, TermSet::from_config(cfg))
}

pub fn loss_cls(batch: &Batch, params: &ModelParams, cfg: &TrainConfig) -> Result<Objective> {
    evaluate(
        batch,
        params,
        cfg,
        &[],
        TermSet {
            cls: true,
            ..TermSet::NONE
        },
    )
}
