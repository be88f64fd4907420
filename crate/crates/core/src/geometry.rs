//! Poincaré ball primitives at curvature `c`.
//!
//! The ball is `{x : sqrt(c)·‖x‖ < 1}`, i.e. radius `1/sqrt(c)`. Distances use
//! the curvature-scaled form
//!
//! ```text
//! d_c(u, v) = (1/√c) · arcosh(1 + 2c‖u−v‖² / ((1 − c‖u‖²)(1 − c‖v‖²)))
//! ```
//!
//! which is the usual unit-ball formula at `c = 1`. Everything runs in `f64`.

use std::ops::Deref;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dist_sq, dot, norm, norm_sq, Matrix};

pub const DEFAULT_EPS_BALL: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    /// Curvature magnitude; the ball radius is `1/sqrt(c)`.
    pub c: f64,
    /// Clearance kept from the boundary, in units of the scaled radius.
    pub eps_ball: f64,
    /// Embedding dimension.
    pub dim: usize,
}

impl GeometryConfig {
    pub fn new(c: f64, dim: usize) -> Result<Self> {
        let g = Self {
            c,
            eps_ball: DEFAULT_EPS_BALL,
            dim,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(Error::Config(format!(
                "curvature must be > 0, got {}",
                self.c
            )));
        }
        if !(self.eps_ball > 0.0 && self.eps_ball <= 0.01) {
            return Err(Error::Config(format!(
                "eps_ball must lie in (0, 0.01], got {}",
                self.eps_ball
            )));
        }
        if self.dim == 0 {
            return Err(Error::Config("dimension must be at least 1".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn sqrt_c(&self) -> f64 {
        self.c.sqrt()
    }

    /// Largest Euclidean norm a projected point may have.
    #[inline]
    pub fn max_norm(&self) -> f64 {
        (1.0 - self.eps_ball) / self.sqrt_c()
    }
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            c: 0.01,
            eps_ball: DEFAULT_EPS_BALL,
            dim: 160,
        }
    }
}

/// A point strictly inside the ball.
#[derive(Debug, Clone, PartialEq)]
pub struct PoincarePoint(Vec<f64>);

impl PoincarePoint {
    /// Checks the open-ball condition `sqrt(c)·‖coords‖ < 1`.
    pub fn new(coords: Vec<f64>, g: &GeometryConfig) -> Result<Self> {
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite coordinate".into()));
        }
        if g.sqrt_c() * norm(&coords) >= 1.0 {
            return Err(Error::InvalidInput(format!(
                "point with norm {} lies outside the ball of radius {}",
                norm(&coords),
                1.0 / g.sqrt_c()
            )));
        }
        Ok(Self(coords))
    }

    /// Wraps coordinates already known to be interior.
    pub(crate) fn new_unchecked(coords: Vec<f64>) -> Self {
        Self(coords)
    }

    pub fn origin(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for PoincarePoint {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// A tangent vector at the origin; unconstrained apart from finiteness.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector(Vec<f64>);

impl TangentVector {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite tangent coordinate".into()));
        }
        Ok(Self(coords))
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for TangentVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

fn check_finite(v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput("non-finite input".into()))
    }
}

/// Radially rescales `v` so that `sqrt(c)·‖v‖ ≤ 1 − eps_ball`. Interior inputs
/// are returned untouched.
pub fn project_to_ball(v: &[f64], g: &GeometryConfig) -> Result<PoincarePoint> {
    check_finite(v)?;
    Ok(PoincarePoint(project_raw(v, g)))
}

pub(crate) fn project_raw(v: &[f64], g: &GeometryConfig) -> Vec<f64> {
    let n = norm(v);
    let max = g.max_norm();
    if n <= max {
        v.to_vec()
    } else {
        let s = max / n;
        v.iter().map(|x| x * s).collect()
    }
}

/// Pulls an output gradient back through [`project_to_ball`].
pub fn project_vjp(v: &[f64], grad_out: &[f64], g: &GeometryConfig) -> Vec<f64> {
    let n = norm(v);
    let max = g.max_norm();
    if n <= max {
        return grad_out.to_vec();
    }
    // p = max · v/‖v‖  ⇒  J = (max/‖v‖)(I − v̂v̂ᵀ)
    let s = max / n;
    let radial = dot(grad_out, v) / (n * n);
    grad_out
        .iter()
        .zip(v)
        .map(|(go, vi)| s * (go - radial * vi))
        .collect()
}

/// Exponential map at the origin: `tanh(√c‖v‖) · v / (√c‖v‖)`, then projected.
pub fn exp_map0(v: &[f64], g: &GeometryConfig) -> Result<PoincarePoint> {
    check_finite(v)?;
    Ok(PoincarePoint(exp_map0_raw(v, g)))
}

pub(crate) fn exp_map0_raw(v: &[f64], g: &GeometryConfig) -> Vec<f64> {
    let n = norm(v);
    if n == 0.0 {
        return vec![0.0; v.len()];
    }
    let sc = g.sqrt_c();
    let x = sc * n;
    let r = x.tanh();
    let scale = if r > 1.0 - g.eps_ball {
        (1.0 - g.eps_ball) / x
    } else {
        r / x
    };
    v.iter().map(|vi| vi * scale).collect()
}

/// `tanh(x)/x` and its derivative divided by `x`, stable near zero.
fn tanhc_and_dlog(x: f64) -> (f64, f64) {
    if x < 1e-4 {
        let x2 = x * x;
        // tanh(x)/x = 1 − x²/3 + 2x⁴/15;  d/dx(tanh(x)/x) / x = −2/3 + 8x²/15
        (
            1.0 - x2 / 3.0 + 2.0 * x2 * x2 / 15.0,
            -2.0 / 3.0 + 8.0 * x2 / 15.0,
        )
    } else {
        let t = x.tanh();
        let sech2 = 1.0 - t * t;
        (t / x, (x * sech2 - t) / (x * x * x))
    }
}

/// Pulls an output gradient back through [`exp_map0`], including the boundary clip.
pub fn exp_map0_vjp(v: &[f64], grad_out: &[f64], g: &GeometryConfig) -> Vec<f64> {
    let n = norm(v);
    if n == 0.0 {
        // derivative of tanh(x)/x at 0 is the identity
        return grad_out.to_vec();
    }
    let sc = g.sqrt_c();
    let x = sc * n;
    if x.tanh() > 1.0 - g.eps_ball {
        let s = (1.0 - g.eps_ball) / x;
        let radial = dot(grad_out, v) / (n * n);
        return grad_out
            .iter()
            .zip(v)
            .map(|(go, vi)| s * (go - radial * vi))
            .collect();
    }
    // p = f(x)·v with x = √c‖v‖;  ∂p/∂v = f·I + f'(x)·c/x · v vᵀ
    let (f, dlog) = tanhc_and_dlog(x);
    let coef = dlog * g.c * dot(grad_out, v);
    let mut out: Vec<f64> = grad_out.iter().map(|go| f * go).collect();
    axpy(&mut out, coef, v);
    out
}

/// Inverse of [`exp_map0`] on the open ball.
pub fn log_map0(p: &[f64], g: &GeometryConfig) -> Result<TangentVector> {
    check_finite(p)?;
    let n = norm(p);
    if n == 0.0 {
        return Ok(TangentVector(vec![0.0; p.len()]));
    }
    let x = g.sqrt_c() * n;
    if x >= 1.0 {
        return Err(Error::InvalidInput(format!(
            "point with scaled norm {x} is not inside the ball"
        )));
    }
    let scale = x.atanh() / x;
    Ok(TangentVector(p.iter().map(|pi| pi * scale).collect()))
}

/// `arcosh(1 + t)` without forming `1 + t`.
#[inline]
fn acosh1p(t: f64) -> f64 {
    (t + (t * (t + 2.0)).sqrt()).ln_1p()
}

/// Unchecked distance kernel for points already known to be interior.
#[inline]
pub fn distance(u: &[f64], v: &[f64], c: f64) -> f64 {
    let alpha = 1.0 - c * norm_sq(u);
    let beta = 1.0 - c * norm_sq(v);
    let t = 2.0 * c * dist_sq(u, v) / (alpha * beta);
    acosh1p(t) / c.sqrt()
}

/// Partial derivatives of a distance with respect to its two arguments.
pub type DistanceGrad = (Vec<f64>, Vec<f64>);

/// Distance and, when `u != v`, its partial derivatives with respect to `u` and `v`.
pub fn distance_with_grad(u: &[f64], v: &[f64], c: f64) -> (f64, Option<DistanceGrad>) {
    let alpha = 1.0 - c * norm_sq(u);
    let beta = 1.0 - c * norm_sq(v);
    let delta = dist_sq(u, v);
    let t = 2.0 * c * delta / (alpha * beta);
    let d = acosh1p(t) / c.sqrt();
    if delta == 0.0 {
        return (d, None);
    }
    let dd_dt = 1.0 / (c.sqrt() * (t * (t + 2.0)).sqrt());
    let k = dd_dt * 4.0 * c / (alpha * beta);
    let gu_self = c * delta / alpha;
    let gv_self = c * delta / beta;
    let mut gu = Vec::with_capacity(u.len());
    let mut gv = Vec::with_capacity(u.len());
    for (ui, vi) in u.iter().zip(v) {
        let diff = ui - vi;
        gu.push(k * (diff + gu_self * ui));
        gv.push(k * (-diff + gv_self * vi));
    }
    (d, Some((gu, gv)))
}

fn check_denominators(u: &[f64], v: &[f64], g: &GeometryConfig) -> Result<()> {
    let floor = g.eps_ball * 1e-6;
    for p in [u, v] {
        let a = 1.0 - g.c * norm_sq(p);
        // also catches NaN
        if a.is_nan() || a <= floor {
            return Err(Error::NumericalInstability(format!(
                "conformal denominator {a:e} at or beyond the ball boundary"
            )));
        }
    }
    Ok(())
}

pub fn hyperbolic_distance(
    u: &PoincarePoint,
    v: &PoincarePoint,
    g: &GeometryConfig,
) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::InvalidInput("dimension mismatch".into()));
    }
    check_denominators(u, v, g)?;
    let d = distance(u, v, g.c);
    if d.is_finite() {
        Ok(d)
    } else {
        Err(Error::NumericalInstability("non-finite distance".into()))
    }
}

/// `(∂d/∂u, ∂d/∂v)`. Fails with [`Error::ZeroDistanceGradient`] when `u == v`.
pub fn dist_grad(
    u: &PoincarePoint,
    v: &PoincarePoint,
    g: &GeometryConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if u.len() != v.len() {
        return Err(Error::InvalidInput("dimension mismatch".into()));
    }
    check_denominators(u, v, g)?;
    distance_with_grad(u, v, g.c)
        .1
        .ok_or(Error::ZeroDistanceGradient)
}

/// `|A| × |B|` matrix of distances; rows are computed in parallel, each entry
/// with the scalar kernel.
pub fn pairwise_distances(
    a: &[PoincarePoint],
    b: &[PoincarePoint],
    g: &GeometryConfig,
) -> Result<Matrix> {
    for p in a.iter().chain(b) {
        if p.len() != g.dim {
            return Err(Error::InvalidInput(format!(
                "point dimension {} != {}",
                p.len(),
                g.dim
            )));
        }
        check_denominators(p, p, g)?;
    }
    let rows: Vec<Vec<f64>> = a
        .par_iter()
        .map(|u| b.iter().map(|v| distance(u, v, g.c)).collect())
        .collect();
    let mut out = Matrix::zeros(a.len(), b.len());
    for (i, r) in rows.into_iter().enumerate() {
        out.row_mut(i).copy_from_slice(&r);
    }
    Ok(out)
}
