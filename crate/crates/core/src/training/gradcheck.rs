use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::error::Result;
use crate::gradcheck::{max_relative_error, numeric_gradient, GradCheckReport, TensorCheck};
use crate::hierarchy::{sample_triplets, select_ancestors, HslConfig, Triplet};
use crate::prototypes::Label;

use super::model::{Batch, ModelParams, TENSOR_NAMES};
use super::objective::{evaluate, TermSet};
use super::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LossSelector {
    Proto,
    Aug,
    Hsl,
    Pfw,
    Cls,
    All,
}

impl LossSelector {
    pub const ALL: [LossSelector; 6] = [
        LossSelector::Proto,
        LossSelector::Aug,
        LossSelector::Hsl,
        LossSelector::Pfw,
        LossSelector::Cls,
        LossSelector::All,
    ];

    pub fn terms(self) -> TermSet {
        let none = TermSet::NONE;
        match self {
            LossSelector::Proto => TermSet {
                proto: true,
                ..none
            },
            LossSelector::Aug => TermSet { aug: true, ..none },
            LossSelector::Hsl => TermSet { hsl: true, ..none },
            LossSelector::Pfw => TermSet { pfw: true, ..none },
            LossSelector::Cls => TermSet { cls: true, ..none },
            LossSelector::All => TermSet {
                cls: true,
                proto: true,
                aug: true,
                hsl: true,
                pfw: true,
            },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LossSelector::Proto => "L_proto",
            LossSelector::Aug => "L_aug",
            LossSelector::Hsl => "L_HSL",
            LossSelector::Pfw => "L_PFW",
            LossSelector::Cls => "L_cls",
            LossSelector::All => "L_all",
        }
    }
}

/// Compares the analytic gradient of the selected loss against central
/// differences for every scalar parameter.
#[allow(clippy::too_many_arguments)]
pub fn finite_diff_check(
    selector: LossSelector,
    params: &ModelParams,
    batch: &Batch,
    cfg: &TrainConfig,
    triplets: &[Triplet],
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let terms = selector.terms();
    let analytic = evaluate(batch, params, cfg, triplets, terms)?.grads;
    let mut tensors = Vec::new();
    for (slot, name) in TENSOR_NAMES.iter().enumerate() {
        let base = params.tensors()[slot].to_vec();
        let mut probe = params.clone();
        let numeric = numeric_gradient(
            |x| {
                probe.tensors_mut()[slot].copy_from_slice(x);
                evaluate(batch, &probe, cfg, triplets, terms)
                    .map(|o| o.value)
                    .unwrap_or(f64::NAN)
            },
            &base,
            step,
        );
        let err = max_relative_error(analytic.tensors()[slot], &numeric);
        tensors.push(TensorCheck {
            name: (*name).to_string(),
            len: base.len(),
            max_rel_err: err,
            pass: err < tolerance,
        });
    }
    Ok(GradCheckReport {
        tolerance,
        step,
        tensors,
    })
}

/// Shapes of the small gradient-check problem.
pub const CHECK_DIM: usize = 8;
pub const CHECK_D_IN: usize = 12;
pub const CHECK_BONAFIDE: usize = 3;
pub const CHECK_SPOOF: usize = 2;
pub const CHECK_TOP: usize = 4;
pub const CHECK_BATCH: usize = 8;

/// A random but well-conditioned `(config, params, batch, triplets)` state at
/// the gradient-check shapes. Even seeds use `c = 1`, odd seeds `c = 0.01`.
pub fn random_check_state(seed: u64) -> Result<(TrainConfig, ModelParams, Batch, Vec<Triplet>)> {
    let mut cfg = TrainConfig::default();
    cfg.geometry.c = if seed.is_multiple_of(2) { 1.0 } else { 0.01 };
    cfg.geometry.dim = CHECK_DIM;
    cfg.num_bonafide_protos = CHECK_BONAFIDE;
    cfg.num_spoof_protos = CHECK_SPOOF;
    cfg.num_top_protos = CHECK_TOP;
    cfg.batch_size = CHECK_BATCH;
    // large enough ratios that the masks are non-empty at D = 8
    cfg.mask_ratio_bonafide = 0.1;
    cfg.mask_ratio_spoof = 0.05;
    cfg.hsl = HslConfig {
        k: 3,
        delta: 0.1,
        triplets_per_step: Some(6),
        gumbel_enabled: true,
    };
    cfg.seed = seed;
    cfg.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let scale = 1.0 / cfg.geometry.c.sqrt();
    let mut params = ModelParams::init_with(&cfg, CHECK_D_IN, &mut rng)?;
    let mut fill = |t: &mut [f64], std: f64| {
        let n = Normal::new(0.0, std).expect("valid std");
        t.iter_mut().for_each(|v| *v = n.sample(&mut rng));
    };
    fill(
        params.projector_weight.as_mut_slice(),
        0.3 * scale / (CHECK_D_IN as f64).sqrt(),
    );
    fill(&mut params.projector_bias, 0.1 * scale);
    fill(
        params.bank.theta_data.as_mut_slice(),
        scale / (CHECK_DIM as f64).sqrt(),
    );
    fill(
        params.bank.theta_top.as_mut_slice(),
        scale / (CHECK_DIM as f64).sqrt(),
    );
    fill(&mut params.cls_weight, 1.0);
    fill(std::slice::from_mut(&mut params.cls_bias), 1.0);

    let normal = Normal::new(0.0, 1.0).expect("valid std");
    let x: Vec<Vec<f64>> = (0..CHECK_BATCH)
        .map(|_| (0..CHECK_D_IN).map(|_| normal.sample(&mut rng)).collect())
        .collect();
    let x_aug = x
        .iter()
        .map(|r| {
            r.iter()
                .map(|v| v + 0.3 * normal.sample(&mut rng))
                .collect()
        })
        .collect();
    let y = (0..CHECK_BATCH)
        .map(|i| {
            if i % 2 == 0 {
                Label::Bonafide
            } else {
                Label::Spoof
            }
        })
        .collect();
    let batch = Batch { x, x_aug, y };

    let triples = sample_triplets(&params.bank, &cfg.hsl, &mut rng)?;
    let triplets = select_ancestors(&triples, &params.bank, &mut rng, true);
    Ok((cfg, params, batch, triplets))
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteEntry {
    pub seed: u64,
    pub loss: LossSelector,
    pub report: GradCheckReport,
}

/// Runs every loss selector on `states` consecutive seeds starting at `seed`.
pub fn gradcheck_suite(
    seed: u64,
    states: usize,
    step: f64,
    tolerance: f64,
) -> Result<Vec<SuiteEntry>> {
    let mut out = Vec::new();
    for s in seed..seed + states as u64 {
        let (cfg, params, batch, triplets) = random_check_state(s)?;
        for loss in LossSelector::ALL {
            let report =
                finite_diff_check(loss, &params, &batch, &cfg, &triplets, step, tolerance)?;
            out.push(SuiteEntry {
                seed: s,
                loss,
                report,
            });
        }
    }
    Ok(out)
}
