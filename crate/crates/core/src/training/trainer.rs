use serde::{Deserialize, Serialize};

use crate::data::{augment_pair, EmbeddingDataset};
use crate::error::{Error, Result};
use crate::eval::{compute_eer, score_dataset};
use crate::hierarchy::{sample_triplets, select_ancestors};
use crate::prototypes::balanced_batch_indices;
use crate::rng::{stream, Stream};

use super::adam::{adam_step, AdamState};
use super::model::{Batch, ModelParams};
use super::objective::{total_loss, LossBreakdown};
use super::TrainConfig;

/// Epoch means of every loss term plus the training-set EER.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub steps: usize,
    pub l_cls: f64,
    pub l_proto: f64,
    pub l_aug: f64,
    pub l_ppl: f64,
    pub l_hsl: f64,
    pub l_pfw: f64,
    pub l_all: f64,
    pub train_eer: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    pub epochs: Vec<EpochMetrics>,
}

impl MetricsLog {
    pub fn to_json_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("metrics serialize");
        out.push(b'\n');
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: MetricsLog,
}

fn check_dataset(cfg: &TrainConfig, ds: &EmbeddingDataset) -> Result<()> {
    ds.validate()?;
    if ds.n() == 0 {
        return Err(Error::InvalidDataset("dataset is empty".into()));
    }
    let spoof = ds.labels.iter().filter(|l| l.as_u8() == 1).count();
    if spoof == 0 || spoof == ds.n() {
        return Err(Error::InvalidDataset("training needs both classes".into()));
    }
    cfg.validate()
}

/// Trains from a fresh initialization. Deterministic for a given config and
/// dataset.
pub fn train(cfg: &TrainConfig, dataset: &EmbeddingDataset) -> Result<TrainOutcome> {
    check_dataset(cfg, dataset)?;
    let owned;
    let ds = if dataset.aug_features.is_some() {
        dataset
    } else {
        owned = augment_pair(dataset.clone(), cfg.aug_sigma, cfg.seed)?;
        &owned
    };

    let mut params = ModelParams::init(cfg, ds.d_in)?;
    let mut log = MetricsLog::default();
    if cfg.epochs == 0 {
        return Ok(TrainOutcome { params, log });
    }

    let mut adam = AdamState::new(&params);
    let mut batch_rng = stream(cfg.seed, Stream::Batching);
    let mut triplet_rng = stream(cfg.seed, Stream::Triplets);
    let mut gumbel_rng = stream(cfg.seed, Stream::Gumbel);
    let steps = cfg
        .steps_per_epoch
        .unwrap_or_else(|| ds.n().div_ceil(cfg.batch_size));

    for epoch in 1..=cfg.epochs {
        let mut sum = LossBreakdown::default();
        for step in 0..steps {
            let (bona, spoof) = balanced_batch_indices(
                &ds.labels,
                cfg.batch_size,
                cfg.num_bonafide_protos,
                cfg.num_spoof_protos,
                &mut batch_rng,
            )?;
            let indices: Vec<usize> = bona.into_iter().chain(spoof).collect();
            let batch = Batch::from_dataset(ds, &indices)?;
            let triplets = if cfg.losses.hsl {
                let triples = sample_triplets(&params.bank, &cfg.hsl, &mut triplet_rng)?;
                select_ancestors(
                    &triples,
                    &params.bank,
                    &mut gumbel_rng,
                    cfg.hsl.gumbel_enabled,
                )
            } else {
                Vec::new()
            };
            let obj = total_loss(&batch, &params, cfg, &triplets)?;
            let bad = obj.breakdown.first_non_finite().or_else(|| {
                (!obj
                    .grads
                    .tensors()
                    .iter()
                    .all(|t| t.iter().all(|v| v.is_finite())))
                .then_some("gradient")
            });
            if let Some(term) = bad {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    term: term.to_string(),
                    last_good: Box::new(params),
                });
            }
            let before = params.clone();
            adam_step(&mut params, &obj.grads, &mut adam, cfg);
            if !params.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    term: "parameters".into(),
                    last_good: Box::new(before),
                });
            }
            let b = obj.breakdown;
            sum.cls += b.cls;
            sum.proto += b.proto;
            sum.aug += b.aug;
            sum.ppl += b.ppl;
            sum.hsl += b.hsl;
            sum.pfw += b.pfw;
            sum.total += b.total;
        }

        let scores = score_dataset(&params, ds)?;
        let train_eer = compute_eer(&scores)?.eer;
        let k = steps as f64;
        let m = EpochMetrics {
            epoch,
            steps,
            l_cls: sum.cls / k,
            l_proto: sum.proto / k,
            l_aug: sum.aug / k,
            l_ppl: sum.ppl / k,
            l_hsl: sum.hsl / k,
            l_pfw: sum.pfw / k,
            l_all: sum.total / k,
            train_eer,
        };
        log::debug!(
            "epoch {epoch}: L_all {:.5} (cls {:.5}, ppl {:.5}, hsl {:.5}, pfw {:.5}), train EER {:.4}",
            m.l_all,
            m.l_cls,
            m.l_ppl,
            m.l_hsl,
            m.l_pfw,
            m.train_eer
        );
        log.epochs.push(m);
    }
    Ok(TrainOutcome { params, log })
}
