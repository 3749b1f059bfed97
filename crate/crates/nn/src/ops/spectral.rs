//! Spectral normalization: divide a weight by an estimate of its largest
//! singular value obtained from power iteration.

use crate::error::{arg_err, Result};
use crate::graph::{Op, Var};
use crate::tensor::Tensor;

/// Lower bound applied to the singular-value estimate.
pub const SIGMA_FLOOR: f64 = 1e-12;
const NORM_EPS: f64 = 1e-12;

/// Row/column split of a weight viewed as `(shape[0], rest)`.
pub fn matrix_dims(w: &Tensor) -> (usize, usize) {
    let rows = w.shape().first().copied().unwrap_or(1);
    (rows, w.numel() / rows.max(1))
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(NORM_EPS);
    v.iter_mut().for_each(|x| *x /= n);
}

fn mat_vec(w: &[f64], rows: usize, cols: usize, v: &[f64]) -> Vec<f64> {
    (0..rows)
        .map(|r| w[r * cols..(r + 1) * cols].iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

fn mat_t_vec(w: &[f64], rows: usize, cols: usize, u: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for r in 0..rows {
        let ur = u[r];
        for (o, a) in out.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
            *o += a * ur;
        }
    }
    out
}

/// Left/right singular vector estimates and `σ̂ = uᵀ W v`.
#[derive(Debug, Clone)]
pub struct PowerIteration {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub sigma: f64,
}

/// `σ̂ = uᵀ W v` for given vectors.
pub fn sigma_estimate(w: &Tensor, u: &[f64], v: &[f64]) -> f64 {
    let (rows, cols) = matrix_dims(w);
    mat_vec(w.data(), rows, cols, v)
        .iter()
        .zip(u)
        .map(|(a, b)| a * b)
        .sum()
}

/// Runs `iters` rounds of `v ← n(Wᵀu), u ← n(Wv)` starting from `u`.
pub fn power_iterate(w: &Tensor, u: &[f64], iters: usize) -> Result<PowerIteration> {
    let (rows, cols) = matrix_dims(w);
    if u.len() != rows {
        return arg_err(
            "spectral_norm",
            format!("u has {} entries for {rows} rows", u.len()),
        );
    }
    let mut u = u.to_vec();
    let mut v = mat_t_vec(w.data(), rows, cols, &u);
    normalize(&mut v);
    for _ in 0..iters {
        v = mat_t_vec(w.data(), rows, cols, &u);
        normalize(&mut v);
        u = mat_vec(w.data(), rows, cols, &v);
        normalize(&mut u);
    }
    let sigma = sigma_estimate(w, &u, &v);
    Ok(PowerIteration { u, v, sigma })
}

impl<'g> Var<'g> {
    /// `W / σ̂` with `σ̂ = uᵀ W v`; `u` and `v` are held constant for
    /// differentiation.
    pub fn spectral_normalize(&self, u: &[f64], v: &[f64]) -> Result<Var<'g>> {
        let w = self.value();
        let (rows, cols) = matrix_dims(&w);
        if u.len() != rows || v.len() != cols {
            return arg_err(
                "spectral_norm",
                format!("vectors {}/{} for a {rows}x{cols} weight", u.len(), v.len()),
            );
        }
        let raw = sigma_estimate(&w, u, v);
        let sigma_floored = !(raw > SIGMA_FLOOR);
        let sigma = if sigma_floored { SIGMA_FLOOR } else { raw };
        let out = w.map(|x| x / sigma);
        Ok(self.graph.push(
            out,
            Op::SpectralNorm {
                w: self.id,
                u: u.to_vec(),
                v: v.to_vec(),
                sigma,
                sigma_floored,
            },
        ))
    }
}

/// `dW = G/σ − (⟨G, W⟩/σ²)·u vᵀ`; only `G/σ` when the floor was active.
pub(crate) fn backward(w: &Tensor, gout: &Tensor, u: &[f64], v: &[f64], sigma: f64, floored: bool) -> Result<Tensor> {
    let (rows, cols) = matrix_dims(w);
    let mut dw = gout.map(|g| g / sigma);
    if !floored {
        let inner: f64 = gout.data().iter().zip(w.data()).map(|(g, x)| g * x).sum();
        let k = inner / (sigma * sigma);
        for r in 0..rows {
            for c in 0..cols {
                dw.data_mut()[r * cols + c] -= k * u[r] * v[c];
            }
        }
    }
    Ok(dw)
}
