//! Affine least-squares fitting `y ≈ M·x + b`. Inputs are centered before
//! solving, so a direction in which the inputs never vary gets zero slope
//! instead of borrowing from the offset.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `y = m·x + b`, `m` stored row-major (one row per output).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub m: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl AffineMap {
    pub fn input_dim(&self) -> usize {
        self.m.first().map_or(0, Vec::len)
    }

    pub fn output_dim(&self) -> usize {
        self.b.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.m
            .iter()
            .zip(&self.b)
            .map(|(row, b)| row.iter().zip(x).map(|(m, v)| m * v).sum::<f64>() + b)
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.b
            .iter()
            .chain(self.m.iter().flatten())
            .all(|v| v.is_finite())
    }

    /// `[I | 0]` on the first `out` inputs, zero offset.
    pub fn identity(out: usize, input: usize) -> Self {
        let m = (0..out)
            .map(|i| (0..input).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        AffineMap {
            m,
            b: vec![0.0; out],
        }
    }
}

/// Fits an affine map to `(inputs[i], outputs[i])` pairs by ordinary least
/// squares. The slope is the minimum-norm solution on centered inputs, and
/// the offset makes the fit pass through the data means.
pub fn fit_affine(inputs: &[Vec<f64>], outputs: &[Vec<f64>]) -> Result<AffineMap> {
    let n = inputs.len();
    if n == 0 || n != outputs.len() {
        return Err(Error::Fit(format!(
            "{n} inputs vs {} outputs",
            outputs.len()
        )));
    }
    let p = inputs[0].len();
    let q = outputs[0].len();
    if inputs.iter().any(|r| r.len() != p) || outputs.iter().any(|r| r.len() != q) {
        return Err(Error::Fit("ragged rows".into()));
    }
    if inputs
        .iter()
        .chain(outputs)
        .flatten()
        .any(|v| !v.is_finite())
    {
        return Err(Error::Fit("non-finite data".into()));
    }
    let mean = |rows: &[Vec<f64>], j: usize| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64;
    let x_mean: Vec<f64> = (0..p).map(|j| mean(inputs, j)).collect();
    let y_mean: Vec<f64> = (0..q).map(|j| mean(outputs, j)).collect();
    let x = DMatrix::from_fn(n, p, |i, j| inputs[i][j] - x_mean[j]);
    let y = DMatrix::from_fn(n, q, |i, j| outputs[i][j] - y_mean[j]);
    let svd = x.svd(true, true);
    let smax = svd.singular_values.max();
    let coef = if smax > 0.0 {
        let tol = smax * (n.max(p) as f64) * f64::EPSILON;
        svd.solve(&y, tol).map_err(|e| Error::Fit(e.to_string()))?
    } else {
        DMatrix::zeros(p, q)
    };
    let m: Vec<Vec<f64>> = (0..q)
        .map(|o| (0..p).map(|j| coef[(j, o)]).collect())
        .collect();
    let b = (0..q)
        .map(|o| y_mean[o] - m[o].iter().zip(&x_mean).map(|(c, x)| c * x).sum::<f64>())
        .collect();
    let map = AffineMap { m, b };
    if !map.is_finite() {
        return Err(Error::Fit("solution is not finite".into()));
    }
    Ok(map)
}
