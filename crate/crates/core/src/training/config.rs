use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::GeometryConfig;
use crate::hierarchy::HslConfig;

/// Switches for the optional loss terms. Classification is always on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossToggles {
    pub ppl: bool,
    pub hsl: bool,
    pub pfw: bool,
}

impl Default for LossToggles {
    fn default() -> Self {
        Self {
            ppl: true,
            hsl: true,
            pfw: true,
        }
    }
}

impl LossToggles {
    pub fn ppl_only() -> Self {
        Self {
            ppl: true,
            hsl: false,
            pfw: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub geometry: GeometryConfig,
    pub num_bonafide_protos: usize,
    pub num_spoof_protos: usize,
    pub num_top_protos: usize,
    pub hsl: HslConfig,
    /// Fraction of similarity entries masked for bonafide sub-batches.
    pub mask_ratio_bonafide: f64,
    /// Fraction of similarity entries masked for spoof sub-batches.
    pub mask_ratio_spoof: f64,
    pub batch_size: usize,
    pub lr_prototypes: f64,
    pub lr_projector: f64,
    pub lr_cls: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    /// Optimizer steps per epoch; `None` means `ceil(n / batch_size)`.
    pub steps_per_epoch: Option<usize>,
    pub seed: u64,
    pub losses: LossToggles,
    /// Learn an additive bias in the classifier.
    pub cls_bias: bool,
    /// Also feed augmented views to the classification loss.
    pub cls_on_augmented: bool,
    /// Noise level used to synthesize augmented views when a dataset has none.
    pub aug_sigma: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            geometry: GeometryConfig::default(),
            num_bonafide_protos: 10,
            num_spoof_protos: 6,
            num_top_protos: 256,
            hsl: HslConfig::default(),
            mask_ratio_bonafide: 0.003,
            mask_ratio_spoof: 0.0006,
            batch_size: 256,
            lr_prototypes: 1e-3,
            lr_projector: 1e-4,
            lr_cls: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 50,
            steps_per_epoch: None,
            seed: 0,
            losses: LossToggles::default(),
            cls_bias: true,
            cls_on_augmented: false,
            aug_sigma: 0.3,
        }
    }
}

impl TrainConfig {
    pub fn num_data_protos(&self) -> usize {
        self.num_bonafide_protos + self.num_spoof_protos
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        if self.num_bonafide_protos == 0 || self.num_spoof_protos == 0 || self.num_top_protos == 0 {
            return Err(Error::Config("prototype counts must be positive".into()));
        }
        if self.losses.hsl {
            self.hsl.validate(self.num_data_protos())?;
        }
        for (name, r) in [
            ("mask_ratio_bonafide", self.mask_ratio_bonafide),
            ("mask_ratio_spoof", self.mask_ratio_spoof),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {r}")));
            }
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        for (name, lr) in [
            ("lr_prototypes", self.lr_prototypes),
            ("lr_projector", self.lr_projector),
            ("lr_cls", self.lr_cls),
        ] {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(Error::Config(format!("{name} must be > 0, got {lr}")));
            }
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            return Err(Error::Config("adam_eps must be > 0".into()));
        }
        if self.steps_per_epoch == Some(0) {
            return Err(Error::Config("steps_per_epoch must be positive".into()));
        }
        if !(self.aug_sigma >= 0.0 && self.aug_sigma.is_finite()) {
            return Err(Error::Config("aug_sigma must be >= 0".into()));
        }
        Ok(())
    }
}
