//! Hierarchical prototype learning in the Poincaré ball.
//!
//! Features are projected into a curvature-`c` Poincaré ball, where a bank of
//! class prototypes and a larger set of ancestor ("top") prototypes are
//! trained jointly with four objectives:
//!
//! * [`prototypes`]: pull each sample toward its nearest same-class prototype
//!   and keep augmented views aligned;
//! * [`hierarchy`]: triplet refinement that arranges data prototypes under
//!   shared ancestors among the top prototypes;
//! * [`whitening`]: suppress the dimension-similarity entries that vary most
//!   between original and augmented views;
//! * a distance-based binary classifier ([`training::classifier_logit`]).
//!
//! All gradients are analytic; [`training::finite_diff_check`] verifies them.

pub mod data;
pub mod error;
pub mod eval;
mod fsutil;
pub mod geometry;
pub mod grad;
pub mod gradcheck;
pub mod hierarchy;
pub mod linalg;
pub mod prototypes;
pub mod rng;
pub mod training;
pub mod viz;
pub mod whitening;

pub use error::{Error, Result};
pub use fsutil::write_atomic;
pub use geometry::{GeometryConfig, PoincarePoint, TangentVector};
pub use linalg::Matrix;
pub use prototypes::{Label, LabeledEmbedding, PrototypeBank};
pub use training::{ModelParams, TrainConfig};
