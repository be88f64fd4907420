use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::EmbeddingDataset;
use crate::error::{Error, Result};
use crate::geometry::{distance, exp_map0_raw, PoincarePoint};
use crate::linalg::{dot, Matrix};
use crate::prototypes::{Label, PrototypeBank};
use crate::rng::{stream, Stream};

use super::TrainConfig;

/// Everything that is learned: an affine projector into the tangent space at
/// the origin, the prototype bank, and a linear head over prototype distances.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// `D × D_in`
    pub projector_weight: Matrix,
    pub projector_bias: Vec<f64>,
    pub bank: PrototypeBank,
    /// One weight per data prototype.
    pub cls_weight: Vec<f64>,
    pub cls_bias: f64,
}

pub const TENSOR_NAMES: [&str; 6] = [
    "projector_weight",
    "projector_bias",
    "theta_data",
    "theta_top",
    "cls_weight",
    "cls_bias",
];

impl ModelParams {
    /// Projector weights from `N(0, 1/D_in)`, zero bias, prototypes from the
    /// bank initializer, zero classifier. Draws from the `Init` stream.
    pub fn init(cfg: &TrainConfig, d_in: usize) -> Result<Self> {
        cfg.validate()?;
        if d_in == 0 {
            return Err(Error::InvalidInput(
                "input dimension must be positive".into(),
            ));
        }
        let mut rng = stream(cfg.seed, Stream::Init);
        Self::init_with(cfg, d_in, &mut rng)
    }

    pub fn init_with<R: Rng + ?Sized>(cfg: &TrainConfig, d_in: usize, rng: &mut R) -> Result<Self> {
        let dim = cfg.geometry.dim;
        let normal = Normal::new(0.0, (1.0 / d_in as f64).sqrt()).expect("valid std");
        let w = (0..dim * d_in).map(|_| normal.sample(rng)).collect();
        let bank = PrototypeBank::random(
            cfg.num_bonafide_protos,
            cfg.num_spoof_protos,
            cfg.num_top_protos,
            cfg.geometry,
            rng,
        )?;
        Ok(Self {
            projector_weight: Matrix::from_vec(dim, d_in, w),
            projector_bias: vec![0.0; dim],
            cls_weight: vec![0.0; bank.num_data()],
            cls_bias: 0.0,
            bank,
        })
    }

    pub fn d_in(&self) -> usize {
        self.projector_weight.cols()
    }

    pub fn dim(&self) -> usize {
        self.projector_weight.rows()
    }

    /// Flat views of every tensor, in [`TENSOR_NAMES`] order.
    pub fn tensors(&self) -> [&[f64]; 6] {
        [
            self.projector_weight.as_slice(),
            &self.projector_bias,
            self.bank.theta_data.as_slice(),
            self.bank.theta_top.as_slice(),
            &self.cls_weight,
            std::slice::from_ref(&self.cls_bias),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.projector_weight.as_mut_slice(),
            &mut self.projector_bias,
            self.bank.theta_data.as_mut_slice(),
            self.bank.theta_top.as_mut_slice(),
            &mut self.cls_weight,
            std::slice::from_mut(&mut self.cls_bias),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Tangent-space pre-activation `W·x + b`.
    pub(crate) fn project(&self, x: &[f64]) -> Vec<f64> {
        let mut v = self.projector_weight.matvec(x);
        for (vi, bi) in v.iter_mut().zip(&self.projector_bias) {
            *vi += bi;
        }
        v
    }
}

/// Gradients mirroring [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub projector_weight: Matrix,
    pub projector_bias: Vec<f64>,
    pub theta_data: Matrix,
    pub theta_top: Matrix,
    pub cls_weight: Vec<f64>,
    pub cls_bias: f64,
}

impl ParamGrads {
    pub fn zeros_like(p: &ModelParams) -> Self {
        Self {
            projector_weight: Matrix::zeros(p.dim(), p.d_in()),
            projector_bias: vec![0.0; p.dim()],
            theta_data: Matrix::zeros(p.bank.num_data(), p.dim()),
            theta_top: Matrix::zeros(p.bank.num_top(), p.dim()),
            cls_weight: vec![0.0; p.bank.num_data()],
            cls_bias: 0.0,
        }
    }

    pub fn tensors(&self) -> [&[f64]; 6] {
        [
            self.projector_weight.as_slice(),
            &self.projector_bias,
            self.theta_data.as_slice(),
            self.theta_top.as_slice(),
            &self.cls_weight,
            std::slice::from_ref(&self.cls_bias),
        ]
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        let theirs = other.tensors();
        let mine = [
            self.projector_weight.as_mut_slice(),
            &mut self.projector_bias,
            self.theta_data.as_mut_slice(),
            self.theta_top.as_mut_slice(),
            &mut self.cls_weight,
            std::slice::from_mut(&mut self.cls_bias),
        ];
        for (m, t) in mine.into_iter().zip(theirs) {
            crate::linalg::axpy(m, 1.0, t);
        }
    }
}

/// Raw input features for one optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x: Vec<Vec<f64>>,
    pub x_aug: Vec<Vec<f64>>,
    pub y: Vec<Label>,
}

impl Batch {
    /// Gathers rows of `ds`; augmented views are required.
    pub fn from_dataset(ds: &EmbeddingDataset, indices: &[usize]) -> Result<Self> {
        let aug = ds
            .aug_features
            .as_ref()
            .ok_or_else(|| Error::InvalidDataset("augmented views are missing".into()))?;
        let row = |m: &[f32], i: usize| -> Vec<f64> {
            m[i * ds.d_in..(i + 1) * ds.d_in]
                .iter()
                .map(|v| f64::from(*v))
                .collect()
        };
        Ok(Self {
            x: indices.iter().map(|&i| row(&ds.features, i)).collect(),
            x_aug: indices.iter().map(|&i| row(aug, i)).collect(),
            y: indices.iter().map(|&i| ds.labels[i]).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// `exp_0(W·x + b)`.
pub fn forward_embed(x: &[f64], params: &ModelParams) -> Result<PoincarePoint> {
    if x.len() != params.d_in() {
        return Err(Error::InvalidInput(format!(
            "feature length {} != projector input {}",
            x.len(),
            params.d_in()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite feature".into()));
    }
    let v = params.project(x);
    Ok(PoincarePoint::new_unchecked(exp_map0_raw(
        &v,
        params.bank.geometry(),
    )))
}

pub(crate) fn logit_against(z: &[f64], protos: &[PoincarePoint], params: &ModelParams) -> f64 {
    let c = params.bank.geometry().c;
    let d: Vec<f64> = protos.iter().map(|p| distance(z, p, c)).collect();
    dot(&params.cls_weight, &d) + params.cls_bias
}

/// `W · [d(z, p_1), …, d(z, p_K)] + b`; the sigmoid of this is the spoof probability.
pub fn classifier_logit(z: &PoincarePoint, params: &ModelParams) -> f64 {
    logit_against(z, &params.bank.materialize().data, params)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy on a logit, `softplus(l) − y·l`.
pub fn bce_with_logit(logit: f64, target: f64) -> f64 {
    logit.max(0.0) + (-logit.abs()).exp().ln_1p() - target * logit
}
