//! Class prototypes in the ball and the prototype-alignment losses.
//!
//! Prototypes are stored as tangent vectors at the origin and materialized with
//! the exponential map, so any Euclidean optimizer keeps them on the manifold.

use std::ops::Range;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    distance_with_grad, exp_map0_raw, exp_map0_vjp, GeometryConfig, PoincarePoint,
};
use crate::grad::{Loss, LossGrad, PointGrad};
use crate::linalg::{axpy, Matrix};

pub const INIT_STD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum Label {
    Bonafide = 0,
    Spoof = 1,
}

impl Label {
    pub fn from_u8(v: u8) -> Option<Label> {
        match v {
            0 => Some(Label::Bonafide),
            1 => Some(Label::Spoof),
            _ => None,
        }
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn target(self) -> f64 {
        f64::from(self.as_u8())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeBank {
    /// `(K_b + K_s) × D`; the first `K_b` rows are bonafide.
    pub theta_data: Matrix,
    /// `K_top × D`.
    pub theta_top: Matrix,
    num_bonafide: usize,
    num_spoof: usize,
    geometry: GeometryConfig,
}

/// Ball points of every data and top prototype.
#[derive(Debug, Clone)]
pub struct Materialized {
    pub data: Vec<PoincarePoint>,
    pub top: Vec<PoincarePoint>,
}

impl PrototypeBank {
    pub fn from_parts(
        theta_data: Matrix,
        theta_top: Matrix,
        num_bonafide: usize,
        num_spoof: usize,
        geometry: GeometryConfig,
    ) -> Result<Self> {
        geometry.validate()?;
        if num_bonafide == 0 || num_spoof == 0 {
            return Err(Error::Config(
                "each class needs at least one prototype".into(),
            ));
        }
        if theta_data.shape() != (num_bonafide + num_spoof, geometry.dim) {
            return Err(Error::InvalidInput(format!(
                "data prototype matrix has shape {:?}, expected ({}, {})",
                theta_data.shape(),
                num_bonafide + num_spoof,
                geometry.dim
            )));
        }
        if theta_top.rows() == 0 || theta_top.cols() != geometry.dim {
            return Err(Error::InvalidInput(format!(
                "top prototype matrix has shape {:?}",
                theta_top.shape()
            )));
        }
        Ok(Self {
            theta_data,
            theta_top,
            num_bonafide,
            num_spoof,
            geometry,
        })
    }

    /// Tangent parameters drawn iid from `N(0, INIT_STD²)`.
    pub fn random<R: Rng + ?Sized>(
        num_bonafide: usize,
        num_spoof: usize,
        num_top: usize,
        geometry: GeometryConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut draw = |rows: usize| {
            let data = (0..rows * geometry.dim)
                .map(|_| normal.sample(rng))
                .collect();
            Matrix::from_vec(rows, geometry.dim, data)
        };
        let theta_data = draw(num_bonafide + num_spoof);
        let theta_top = draw(num_top);
        Self::from_parts(theta_data, theta_top, num_bonafide, num_spoof, geometry)
    }

    pub fn geometry(&self) -> &GeometryConfig {
        &self.geometry
    }

    pub fn num_bonafide(&self) -> usize {
        self.num_bonafide
    }

    pub fn num_spoof(&self) -> usize {
        self.num_spoof
    }

    pub fn num_data(&self) -> usize {
        self.num_bonafide + self.num_spoof
    }

    pub fn num_top(&self) -> usize {
        self.theta_top.rows()
    }

    pub fn class_of(&self, index: usize) -> Label {
        if index < self.num_bonafide {
            Label::Bonafide
        } else {
            Label::Spoof
        }
    }

    pub fn class_range(&self, label: Label) -> Range<usize> {
        match label {
            Label::Bonafide => 0..self.num_bonafide,
            Label::Spoof => self.num_bonafide..self.num_data(),
        }
    }

    pub fn materialize(&self) -> Materialized {
        let map = |m: &Matrix| {
            m.iter_rows()
                .map(|r| PoincarePoint::new_unchecked(exp_map0_raw(r, &self.geometry)))
                .collect()
        };
        Materialized {
            data: map(&self.theta_data),
            top: map(&self.theta_top),
        }
    }

    /// Pulls ball-point gradients back to tangent parameters.
    pub(crate) fn pull_back(&self, pg: PointGrad) -> LossGrad {
        let back = |theta: &Matrix, g: &Matrix| {
            let mut out = Matrix::zeros(theta.rows(), theta.cols());
            for i in 0..theta.rows() {
                let gi = g.row(i);
                if gi.iter().any(|v| *v != 0.0) {
                    out.row_mut(i)
                        .copy_from_slice(&exp_map0_vjp(theta.row(i), gi, &self.geometry));
                }
            }
            out
        };
        LossGrad {
            theta_data: back(&self.theta_data, &pg.data),
            theta_top: back(&self.theta_top, &pg.top),
            z: pg.z,
            z_aug: pg.z_aug,
        }
    }

    pub(crate) fn point_grad(&self, batch: usize) -> PointGrad {
        PointGrad::zeros(batch, self.geometry.dim, self.num_data(), self.num_top())
    }
}

/// One embedded sample and its augmented view.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEmbedding {
    pub z: PoincarePoint,
    pub z_aug: PoincarePoint,
    pub y: Label,
}

/// Index of the smallest entry of `dists` within `range`; ties go to the lowest index.
pub(crate) fn argmin_in(dists: &[f64], range: Range<usize>) -> usize {
    let mut best = range.start;
    for i in range {
        if dists[i] < dists[best] {
            best = i;
        }
    }
    best
}

/// Closest prototype of class `class_filter` to `z`.
pub fn nearest_prototype(z: &PoincarePoint, bank: &PrototypeBank, class_filter: Label) -> usize {
    let m = bank.materialize();
    let c = bank.geometry.c;
    let dists: Vec<f64> = m
        .data
        .iter()
        .map(|p| crate::geometry::distance(z, p, c))
        .collect();
    argmin_in(&dists, bank.class_range(class_filter))
}

fn check_batch(batch: &[LabeledEmbedding], bank: &PrototypeBank) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidBatch("empty batch".into()));
    }
    let dim = bank.geometry.dim;
    if batch
        .iter()
        .any(|e| e.z.len() != dim || e.z_aug.len() != dim)
    {
        return Err(Error::InvalidInput(format!(
            "embedding dimension differs from {dim}"
        )));
    }
    Ok(())
}

type DistGrad = (f64, Option<(Vec<f64>, Vec<f64>)>);

fn distances_to(z: &[f64], protos: &[PoincarePoint], c: f64) -> Vec<DistGrad> {
    protos.iter().map(|p| distance_with_grad(z, p, c)).collect()
}

/// Softmax cross-entropy between each sample and its nearest same-class
/// prototype, normalized over all data prototypes:
/// `Σ_n [ d(z_n, p_k) + log Σ_r exp(−d(z_n, p_r)) ]`.
pub fn loss_proto(batch: &[LabeledEmbedding], bank: &PrototypeBank) -> Result<Loss> {
    check_batch(batch, bank)?;
    let m = bank.materialize();
    let c = bank.geometry.c;
    let mut pg = bank.point_grad(batch.len());
    let mut value = 0.0;
    for (n, e) in batch.iter().enumerate() {
        let dg = distances_to(&e.z, &m.data, c);
        let d: Vec<f64> = dg.iter().map(|x| x.0).collect();
        let k = argmin_in(&d, bank.class_range(e.y));
        let shift = d.iter().cloned().fold(f64::INFINITY, f64::min);
        let sum: f64 = d.iter().map(|di| (shift - di).exp()).sum();
        value += d[k] - shift + sum.ln();
        for (r, (dr, grads)) in dg.iter().enumerate() {
            let mut w = -(shift - dr).exp() / sum;
            if r == k {
                w += 1.0;
            }
            if let Some((gz, gp)) = grads {
                axpy(&mut pg.z[n], w, gz);
                axpy(pg.data.row_mut(r), w, gp);
            }
        }
    }
    Ok(Loss {
        value,
        grad: bank.pull_back(pg),
    })
}

/// Augmentation alignment:
/// `Σ_n [ d(z_n, z_n^aug) + | d(z_n, p_k) − d(z_n^aug, p_k) | ]`, with `k` the
/// nearest same-class prototype of the original view.
pub fn loss_aug(batch: &[LabeledEmbedding], bank: &PrototypeBank) -> Result<Loss> {
    check_batch(batch, bank)?;
    let m = bank.materialize();
    let c = bank.geometry.c;
    let mut pg = bank.point_grad(batch.len());
    let mut value = 0.0;
    for (n, e) in batch.iter().enumerate() {
        let (d_pair, g_pair) = distance_with_grad(&e.z, &e.z_aug, c);
        value += d_pair;
        if let Some((gz, ga)) = g_pair {
            axpy(&mut pg.z[n], 1.0, &gz);
            axpy(&mut pg.z_aug[n], 1.0, &ga);
        }

        let d: Vec<f64> = m
            .data
            .iter()
            .map(|p| crate::geometry::distance(&e.z, p, c))
            .collect();
        let k = argmin_in(&d, bank.class_range(e.y));
        let (a, ga) = distance_with_grad(&e.z, &m.data[k], c);
        let (b, gb) = distance_with_grad(&e.z_aug, &m.data[k], c);
        value += (a - b).abs();
        let s = if a > b {
            1.0
        } else if a < b {
            -1.0
        } else {
            0.0
        };
        if s != 0.0 {
            if let Some((gz, gp)) = ga {
                axpy(&mut pg.z[n], s, &gz);
                axpy(pg.data.row_mut(k), s, &gp);
            }
            if let Some((gza, gp)) = gb {
                axpy(&mut pg.z_aug[n], -s, &gza);
                axpy(pg.data.row_mut(k), -s, &gp);
            }
        }
    }
    Ok(Loss {
        value,
        grad: bank.pull_back(pg),
    })
}

pub fn loss_ppl(batch: &[LabeledEmbedding], bank: &PrototypeBank) -> Result<Loss> {
    Ok(loss_proto(batch, bank)?.sum(&loss_aug(batch, bank)?))
}

/// Number of bonafide slots in a batch of `batch_size`: `round(B·K_b/(K_b+K_s))`,
/// halves rounded up.
pub fn bonafide_share(batch_size: usize, num_bonafide: usize, num_spoof: usize) -> usize {
    let total = num_bonafide + num_spoof;
    (2 * batch_size * num_bonafide + total) / (2 * total)
}

/// Draws a class-balanced batch. Each class is sampled without replacement when
/// its pool is large enough, with replacement otherwise.
pub fn balanced_batch_indices<R: Rng + ?Sized>(
    labels: &[Label],
    batch_size: usize,
    num_bonafide: usize,
    num_spoof: usize,
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if batch_size < 2 {
        return Err(Error::InvalidBatch(format!("batch size {batch_size} < 2")));
    }
    if num_bonafide == 0 || num_spoof == 0 {
        return Err(Error::Config("prototype counts must be positive".into()));
    }
    let pool = |l: Label| -> Vec<usize> {
        labels
            .iter()
            .enumerate()
            .filter(|(_, x)| **x == l)
            .map(|(i, _)| i)
            .collect()
    };
    let bona_pool = pool(Label::Bonafide);
    let spoof_pool = pool(Label::Spoof);
    if bona_pool.is_empty() || spoof_pool.is_empty() {
        return Err(Error::InvalidDataset("both classes must be present".into()));
    }
    let n_bona = bonafide_share(batch_size, num_bonafide, num_spoof);
    let n_spoof = batch_size - n_bona;
    let mut take = |pool: &[usize], count: usize| -> Vec<usize> {
        if pool.len() >= count {
            index::sample(rng, pool.len(), count)
                .into_iter()
                .map(|i| pool[i])
                .collect()
        } else {
            (0..count)
                .map(|_| pool[rng.random_range(0..pool.len())])
                .collect()
        }
    };
    let bona = take(&bona_pool, n_bona);
    let spoof = take(&spoof_pool, n_spoof);
    Ok((bona, spoof))
}
