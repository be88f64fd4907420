//! Feature whitening in the ball.
//!
//! Each feature dimension is treated as a point: its values across the batch
//! form a length-`B` vector, radially projected into the curvature-`c` ball of
//! dimension `B`. Pairwise hyperbolic distances between these points give a
//! `D × D` similarity matrix. Entries whose value changes most between the
//! original and augmented views are masked and pushed toward zero.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{distance, distance_with_grad, project_raw, project_vjp, GeometryConfig};
use crate::grad::{Loss, LossGrad};
use crate::linalg::{axpy, Matrix};
use crate::prototypes::{Label, LabeledEmbedding};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum View {
    Original,
    Augmented,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    /// `D × D`, symmetric with zero diagonal.
    pub values: Matrix,
    pub source: Option<(Label, View)>,
}

impl SimilarityMatrix {
    pub fn dim(&self) -> usize {
        self.values.rows()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimilarityMask {
    dim: usize,
    /// Row-major flat indices of the selected entries, in selection order.
    selected: Vec<usize>,
    bits: Vec<bool>,
}

impl SimilarityMask {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.selected.len()
    }

    pub fn is_set(&self, r: usize, s: usize) -> bool {
        self.bits[r * self.dim + s]
    }

    /// Selected `(row, col)` pairs, largest variance first.
    pub fn positions(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.selected
            .iter()
            .map(move |f| (f / self.dim, f % self.dim))
    }

    /// One byte per entry, row-major.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.bits.iter().map(|b| u8::from(*b)).collect()
    }
}

/// `floor(D² · ratio)`, guarded against the product landing a hair below an integer.
pub fn mask_cardinality(dim: usize, ratio: f64) -> usize {
    let total = dim * dim;
    let n = ((total as f64) * ratio + 1e-9).floor();
    (n.max(0.0) as usize).min(total)
}

/// Columns of `z` (one per feature dimension) projected into the ball.
fn projected_columns(z: &Matrix, g: &GeometryConfig) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let (b, d) = z.shape();
    let raw: Vec<Vec<f64>> = (0..d)
        .map(|r| (0..b).map(|n| z.get(n, r)).collect())
        .collect();
    let proj = raw.iter().map(|col| project_raw(col, g)).collect();
    (raw, proj)
}

/// `Σ[r][s] = d(col_r, col_s)` for a `B × D` batch of ball coordinates.
pub fn dimension_similarity_matrix(z: &Matrix, g: &GeometryConfig) -> Result<SimilarityMatrix> {
    let (b, d) = z.shape();
    if b < 2 {
        return Err(Error::InvalidBatch(format!(
            "need at least 2 samples, got {b}"
        )));
    }
    if !z.is_finite() {
        return Err(Error::InvalidInput("non-finite embedding".into()));
    }
    let (_, cols) = projected_columns(z, g);
    let mut values = Matrix::zeros(d, d);
    for r in 0..d {
        for s in r + 1..d {
            let v = distance(&cols[r], &cols[s], g.c);
            values.set(r, s, v);
            values.set(s, r, v);
        }
    }
    Ok(SimilarityMatrix {
        values,
        source: None,
    })
}

/// Selects the `floor(D²·ratio)` entries with the largest variance across the
/// two views. Ties go to the lexicographically smallest `(row, col)`.
pub fn variance_mask(
    sigma_org: &SimilarityMatrix,
    sigma_aug: &SimilarityMatrix,
    ratio: f64,
) -> Result<SimilarityMask> {
    if sigma_org.values.shape() != sigma_aug.values.shape()
        || sigma_org.dim() != sigma_org.values.cols()
    {
        return Err(Error::InvalidInput(format!(
            "similarity shapes differ: {:?} vs {:?}",
            sigma_org.values.shape(),
            sigma_aug.values.shape()
        )));
    }
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::InvalidInput(format!(
            "mask ratio {ratio} outside [0, 1]"
        )));
    }
    let d = sigma_org.dim();
    let variance: Vec<f64> = sigma_org
        .values
        .as_slice()
        .iter()
        .zip(sigma_aug.values.as_slice())
        .map(|(a, b)| {
            let mu = 0.5 * (a + b);
            0.5 * ((a - mu) * (a - mu) + (b - mu) * (b - mu))
        })
        .collect();
    let mut order: Vec<usize> = (0..d * d).collect();
    // stable: equal variances keep row-major order
    order.sort_by(|x, y| variance[*y].total_cmp(&variance[*x]));
    order.truncate(mask_cardinality(d, ratio));
    let mut bits = vec![false; d * d];
    for f in &order {
        bits[*f] = true;
    }
    Ok(SimilarityMask {
        dim: d,
        selected: order,
        bits,
    })
}

/// Mean of `Σ` over the masked entries; zero for an empty mask.
pub fn masked_mean(sigma: &SimilarityMatrix, mask: &SimilarityMask) -> f64 {
    if mask.count() == 0 {
        return 0.0;
    }
    mask.positions()
        .map(|(r, s)| sigma.values.get(r, s))
        .sum::<f64>()
        / mask.count() as f64
}

#[derive(Debug, Clone)]
pub struct PfwLoss {
    pub loss: Loss,
    /// Per-class masks in `(bonafide, spoof)` order; `None` where the class was absent.
    pub masks: [Option<SimilarityMask>; 2],
    pub warnings: Vec<String>,
}

/// Adds `weight · ∂Σ[r][s]/∂Z` into `grad` (rows = samples).
fn accumulate_entry_grad(
    raw: &[Vec<f64>],
    proj: &[Vec<f64>],
    r: usize,
    s: usize,
    weight: f64,
    g: &GeometryConfig,
    grad: &mut [Vec<f64>],
) {
    let (_, pair) = distance_with_grad(&proj[r], &proj[s], g.c);
    let Some((gr, gs)) = pair else { return };
    for (col, gcol) in [(r, gr), (s, gs)] {
        let back = project_vjp(&raw[col], &gcol, g);
        for (n, v) in back.iter().enumerate() {
            grad[n][col] += weight * v;
        }
    }
}

/// Whitening loss: for each class present, the masked mean of the original
/// and augmented similarity matrices, with the class's own mask ratio
/// (`ratio_bonafide` for label 0, `ratio_spoof` for label 1). The mask is
/// treated as a constant.
pub fn loss_pfw(
    batch: &[LabeledEmbedding],
    g: &GeometryConfig,
    ratio_bonafide: f64,
    ratio_spoof: f64,
) -> Result<PfwLoss> {
    let dim = g.dim;
    let mut grad = LossGrad {
        z: vec![vec![0.0; dim]; batch.len()],
        z_aug: vec![vec![0.0; dim]; batch.len()],
        theta_data: Matrix::zeros(0, dim),
        theta_top: Matrix::zeros(0, dim),
    };
    let mut value = 0.0;
    let mut masks = [None, None];
    let mut warnings = Vec::new();

    for (slot, (label, ratio)) in [
        (Label::Bonafide, ratio_bonafide),
        (Label::Spoof, ratio_spoof),
    ]
    .into_iter()
    .enumerate()
    {
        let members: Vec<usize> = (0..batch.len()).filter(|n| batch[*n].y == label).collect();
        if members.is_empty() {
            let msg = format!("no {label:?} samples in batch; whitening term skipped");
            log::warn!("{msg}");
            warnings.push(msg);
            continue;
        }
        let gather = |aug: bool| {
            let rows: Vec<Vec<f64>> = members
                .iter()
                .map(|n| {
                    if aug {
                        batch[*n].z_aug.to_vec()
                    } else {
                        batch[*n].z.to_vec()
                    }
                })
                .collect();
            Matrix::from_rows(&rows)
        };
        let (z_org, z_aug) = (gather(false), gather(true));
        if z_org.cols() != dim {
            return Err(Error::InvalidInput(format!(
                "embedding dimension differs from {dim}"
            )));
        }
        let mut s_org = dimension_similarity_matrix(&z_org, g)?;
        let mut s_aug = dimension_similarity_matrix(&z_aug, g)?;
        s_org.source = Some((label, View::Original));
        s_aug.source = Some((label, View::Augmented));
        let mask = variance_mask(&s_org, &s_aug, ratio)?;
        value += masked_mean(&s_org, &mask) + masked_mean(&s_aug, &mask);

        if mask.count() > 0 {
            let w = 1.0 / mask.count() as f64;
            for (z, aug) in [(&z_org, false), (&z_aug, true)] {
                let (raw, proj) = projected_columns(z, g);
                let mut local = vec![vec![0.0; dim]; members.len()];
                for (r, s) in mask.positions() {
                    accumulate_entry_grad(&raw, &proj, r, s, w, g, &mut local);
                }
                let target = if aug { &mut grad.z_aug } else { &mut grad.z };
                for (row, n) in local.iter().zip(&members) {
                    axpy(&mut target[*n], 1.0, row);
                }
            }
        }
        masks[slot] = Some(mask);
    }

    Ok(PfwLoss {
        loss: Loss { value, grad },
        masks,
        warnings,
    })
}
