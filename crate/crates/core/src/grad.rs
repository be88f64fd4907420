//! Gradient containers shared by the loss terms.

use crate::linalg::{axpy, Matrix};

/// Gradients of one scalar loss with respect to the embedded batch and the
/// tangent-space prototype parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    /// One row per sample, with respect to the original embedding `z`.
    pub z: Vec<Vec<f64>>,
    /// One row per sample, with respect to the augmented embedding `z_aug`.
    pub z_aug: Vec<Vec<f64>>,
    pub theta_data: Matrix,
    pub theta_top: Matrix,
}

impl LossGrad {
    pub fn zeros(batch: usize, dim: usize, data_rows: usize, top_rows: usize) -> Self {
        Self {
            z: vec![vec![0.0; dim]; batch],
            z_aug: vec![vec![0.0; dim]; batch],
            theta_data: Matrix::zeros(data_rows, dim),
            theta_top: Matrix::zeros(top_rows, dim),
        }
    }

    pub fn add_assign(&mut self, other: &LossGrad) {
        for (a, b) in self.z.iter_mut().zip(&other.z) {
            axpy(a, 1.0, b);
        }
        for (a, b) in self.z_aug.iter_mut().zip(&other.z_aug) {
            axpy(a, 1.0, b);
        }
        // terms without prototype parameters carry empty matrices
        for (mine, theirs) in [
            (&mut self.theta_data, &other.theta_data),
            (&mut self.theta_top, &other.theta_top),
        ] {
            if theirs.rows() == 0 {
                continue;
            }
            assert_eq!(mine.shape(), theirs.shape(), "gradient shape mismatch");
            axpy(mine.as_mut_slice(), 1.0, theirs.as_slice());
        }
    }
}

/// A scalar loss together with its gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Loss {
    pub value: f64,
    pub grad: LossGrad,
}

impl Loss {
    pub fn sum(mut self, other: &Loss) -> Loss {
        self.value += other.value;
        self.grad.add_assign(&other.grad);
        self
    }
}

/// Gradients with respect to materialized ball points, before they are pulled
/// back through the exponential map.
#[derive(Debug, Clone)]
pub(crate) struct PointGrad {
    pub z: Vec<Vec<f64>>,
    pub z_aug: Vec<Vec<f64>>,
    pub data: Matrix,
    pub top: Matrix,
}

impl PointGrad {
    pub fn zeros(batch: usize, dim: usize, data_rows: usize, top_rows: usize) -> Self {
        Self {
            z: vec![vec![0.0; dim]; batch],
            z_aug: vec![vec![0.0; dim]; batch],
            data: Matrix::zeros(data_rows, dim),
            top: Matrix::zeros(top_rows, dim),
        }
    }
}
