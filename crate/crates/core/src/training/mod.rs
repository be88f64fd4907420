//! The trainable model, its objective, the optimizer and the training loop.

mod adam;
mod config;
mod gradcheck;
mod model;
mod objective;
mod serialize;
mod trainer;

pub use adam::{adam_step, group_learning_rates, AdamState};
pub use config::{LossToggles, TrainConfig};
pub use gradcheck::{
    finite_diff_check, gradcheck_suite, random_check_state, LossSelector, SuiteEntry, CHECK_BATCH,
    CHECK_BONAFIDE, CHECK_DIM, CHECK_D_IN, CHECK_SPOOF, CHECK_TOP,
};
pub(crate) use model::logit_against;
pub use model::{
    bce_with_logit, classifier_logit, forward_embed, sigmoid, Batch, ModelParams, ParamGrads,
    TENSOR_NAMES,
};
pub use objective::{evaluate, loss_cls, total_loss, LossBreakdown, Objective, TermSet};
pub use serialize::{
    load_model, model_from_bytes, model_to_bytes, save_model, MODEL_MAGIC, MODEL_VERSION,
};
pub use trainer::{train, EpochMetrics, MetricsLog, TrainOutcome};
