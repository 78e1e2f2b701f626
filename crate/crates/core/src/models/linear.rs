use nalgebra::DMatrix;
use ndarray::{Array1, ArrayView2};

use crate::neural::Parameters;
use crate::{Error, Result};

/// Static readout `y = W r`, weights only.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearReadout {
    weights: Array1<f64>,
}

impl LinearReadout {
    pub fn zeros(n: usize) -> Self {
        LinearReadout {
            weights: Array1::zeros(n),
        }
    }

    pub fn from_weights(weights: Vec<f64>) -> Self {
        LinearReadout {
            weights: Array1::from(weights),
        }
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn forward(&self, r: &[f64]) -> Result<f64> {
        if r.len() != self.weights.len() {
            return Err(Error::shape(format!(
                "readout expects {} measurements, got {}",
                self.weights.len(),
                r.len()
            )));
        }
        Ok(dot(self.weights.as_slice().expect("contiguous"), r))
    }

    pub fn forward_batch(&self, r: ArrayView2<f64>) -> Result<Array1<f64>> {
        if r.ncols() != self.weights.len() {
            return Err(Error::shape(format!(
                "readout expects {} measurements, got {}",
                self.weights.len(),
                r.ncols()
            )));
        }
        Ok(r.dot(&self.weights))
    }

    /// Adds `sum_b d[b] * r[b]` into `grad`.
    pub fn backward_batch(&self, r: ArrayView2<f64>, d: &[f64], grad: &mut [f64]) {
        for (row, &db) in r.rows().into_iter().zip(d) {
            for (g, &v) in grad.iter_mut().zip(row.iter()) {
                *g += db * v;
            }
        }
    }
}

impl Parameters for LinearReadout {
    fn n_params(&self) -> usize {
        self.weights.len()
    }

    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        f(self.weights.as_slice().expect("contiguous"))
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        f(self.weights.as_slice_mut().expect("contiguous"))
    }
}

/// Sequential dot product; the fixed summation order is relied on for
/// bit-identical predictions across models.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Minimizes `|R w - y|^2 + lambda |w|^2` by a QR factorization of the
/// stacked system `[R; sqrt(lambda) I]`.
pub fn ridge_fit(r: ArrayView2<f64>, y: &[f64], lambda: f64) -> Result<LinearReadout> {
    let (rows, cols) = r.dim();
    if rows != y.len() {
        return Err(Error::shape(format!("{rows} states but {} targets", y.len())));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::config("ridge penalty must be a finite non-negative number"));
    }
    if cols == 0 {
        return Err(Error::config("ridge fit needs at least one feature"));
    }
    let extra = if lambda > 0.0 { cols } else { 0 };
    let mut a = DMatrix::<f64>::zeros(rows + extra, cols);
    let mut b = DMatrix::<f64>::zeros(rows + extra, 1);
    for i in 0..rows {
        for j in 0..cols {
            a[(i, j)] = r[[i, j]];
        }
        b[(i, 0)] = y[i];
    }
    let s = lambda.sqrt();
    for j in 0..extra {
        a[(rows + j, j)] = s;
    }
    if rows + extra < cols {
        return Err(Error::Singular(format!(
            "{rows} states cannot determine {cols} weights; use a positive ridge penalty"
        )));
    }
    let qr = a.qr();
    let rmat = qr.r();
    let scale = rmat.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tiny = rmat.diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if !(tiny > scale * 1e-12) {
        return Err(Error::Singular(
            "least-squares system is rank deficient; use a positive ridge penalty".into(),
        ));
    }
    let qtb = qr.q().transpose() * b;
    let w = rmat
        .solve_upper_triangular(&qtb)
        .ok_or_else(|| Error::Singular("triangular solve failed".into()))?;
    Ok(LinearReadout::from_weights(w.iter().copied().collect()))
}
