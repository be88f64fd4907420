//! Central finite differences for checking analytic gradients.

use serde::Serialize;

/// Smallest magnitude used as the denominator of the relative error; below it
/// the comparison is effectively absolute.
pub const REL_ERR_FLOOR: f64 = 1e-3;

/// `(f(x + h·e_i) − f(x − h·e_i)) / 2h` for every coordinate `i`.
pub fn numeric_gradient<F>(mut f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let fp = f(&probe);
            probe[i] = x[i] - h;
            let fm = f(&probe);
            probe[i] = x[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// `|a − n| / max(|a|, |n|, REL_ERR_FLOOR)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let den = analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
    (analytic - numeric).abs() / den
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| relative_error(*a, *n))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub len: usize,
    pub max_rel_err: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub step: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn pass(&self) -> bool {
        self.tensors.iter().all(|t| t.pass)
    }

    pub fn worst(&self) -> f64 {
        self.tensors
            .iter()
            .map(|t| t.max_rel_err)
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let f = |v: &[f64]| 3.0 * v[0] * v[0] + v[0] * v[1] - 2.0 * v[1] * v[1];
        let x = [1.5, -0.7];
        let num = numeric_gradient(f, &x, 1e-5);
        let exact = [6.0 * x[0] + x[1], x[0] - 4.0 * x[1]];
        assert!(max_relative_error(&exact, &num) < 1e-9);
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let f = |v: &[f64]| v[0].sin() * v[1];
        let x = [0.4, 2.0];
        let num = numeric_gradient(f, &x, 1e-5);
        let wrong = [x[0].cos() * x[1] * 1.01, x[0].sin()];
        assert!(max_relative_error(&wrong, &num) > 1e-4);
    }
}
