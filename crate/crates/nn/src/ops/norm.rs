use std::sync::Arc;

use crate::error::{arg_err, shape_err, Result};
use crate::graph::{Op, Var};
use crate::ops::activation::channel_layout;
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel statistics of one training batch.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance, the value folded into running statistics.
    pub var: Vec<f64>,
}

impl BatchStats {
    /// Exponential moving average update of `(running_mean, running_var)`.
    pub fn fold_into(&self, running_mean: &mut [f64], running_var: &mut [f64]) {
        for (r, m) in running_mean.iter_mut().zip(&self.mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
        }
        for (r, v) in running_var.iter_mut().zip(&self.var) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v;
        }
    }
}

fn check_affine(gamma: &Tensor, beta: &Tensor, c: usize) -> Result<()> {
    if gamma.numel() != c || beta.numel() != c {
        return shape_err(
            "batch_norm",
            format!(
                "affine sizes {}/{} for {c} channels",
                gamma.numel(),
                beta.numel()
            ),
        );
    }
    Ok(())
}

impl<'g> Var<'g> {
    /// Normalizes with the statistics of this batch.
    pub fn batch_norm_train(&self, gamma: &Var<'g>, beta: &Var<'g>) -> Result<(Var<'g>, BatchStats)> {
        let x = self.value();
        let (n, c, inner) = channel_layout(&x)?;
        if n < 2 {
            return arg_err("batch_norm", "train mode needs a batch of at least 2");
        }
        let (gv, bv) = (gamma.value(), beta.value());
        check_affine(&gv, &bv, c)?;
        let m = (n * inner) as f64;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for ci in 0..c {
            let mut s = 0.0;
            for ni in 0..n {
                let base = (ni * c + ci) * inner;
                s += x.data()[base..base + inner].iter().sum::<f64>();
            }
            let mu = s / m;
            let mut ss = 0.0;
            for ni in 0..n {
                let base = (ni * c + ci) * inner;
                ss += x.data()[base..base + inner]
                    .iter()
                    .map(|v| (v - mu) * (v - mu))
                    .sum::<f64>();
            }
            mean[ci] = mu;
            var[ci] = ss / m;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut xhat = x.as_ref().clone();
        let mut out = x.as_ref().clone();
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * inner;
                for i in base..base + inner {
                    let h = (x.data()[i] - mean[ci]) * inv_std[ci];
                    xhat.data_mut()[i] = h;
                    out.data_mut()[i] = gv.data()[ci] * h + bv.data()[ci];
                }
            }
        }
        let unbiased = var.iter().map(|v| v * m / (m - 1.0)).collect();
        let y = self.graph.push(
            out,
            Op::BatchNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                xhat: Arc::new(xhat),
                inv_std,
                train: true,
            },
        );
        Ok((y, BatchStats { mean, var: unbiased }))
    }

    /// Affine map with stored running statistics.
    pub fn batch_norm_eval(
        &self,
        gamma: &Var<'g>,
        beta: &Var<'g>,
        running_mean: &[f64],
        running_var: &[f64],
    ) -> Result<Var<'g>> {
        let x = self.value();
        let (n, c, inner) = channel_layout(&x)?;
        let (gv, bv) = (gamma.value(), beta.value());
        check_affine(&gv, &bv, c)?;
        if running_mean.len() != c || running_var.len() != c {
            return shape_err("batch_norm", "running statistics do not match channels");
        }
        let inv_std: Vec<f64> = running_var
            .iter()
            .map(|v| 1.0 / (v + BN_EPS).sqrt())
            .collect();
        let mut xhat = x.as_ref().clone();
        let mut out = x.as_ref().clone();
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * inner;
                for i in base..base + inner {
                    let h = (x.data()[i] - running_mean[ci]) * inv_std[ci];
                    xhat.data_mut()[i] = h;
                    out.data_mut()[i] = gv.data()[ci] * h + bv.data()[ci];
                }
            }
        }
        Ok(self.graph.push(
            out,
            Op::BatchNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                xhat: Arc::new(xhat),
                inv_std,
                train: false,
            },
        ))
    }
}

/// Gradients for both modes; `stats_depend_on_x` selects the train-mode
/// formula where mean and variance are functions of the batch.
pub(crate) fn backward(
    x: &Tensor,
    xhat: &Tensor,
    gamma: &Tensor,
    inv_std: &[f64],
    gout: &Tensor,
    stats_depend_on_x: bool,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, c, inner) = channel_layout(x)?;
    let m = (n * inner) as f64;
    let mut dx = Tensor::zeros(x.shape());
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for ci in 0..c {
        let (mut sg, mut sgx) = (0.0, 0.0);
        for ni in 0..n {
            let base = (ni * c + ci) * inner;
            for i in base..base + inner {
                sg += gout.data()[i];
                sgx += gout.data()[i] * xhat.data()[i];
            }
        }
        dgamma[ci] = sgx;
        dbeta[ci] = sg;
        let k = gamma.data()[ci] * inv_std[ci];
        for ni in 0..n {
            let base = (ni * c + ci) * inner;
            for i in base..base + inner {
                dx.data_mut()[i] = if stats_depend_on_x {
                    k * (gout.data()[i] - sg / m - xhat.data()[i] * sgx / m)
                } else {
                    k * gout.data()[i]
                };
            }
        }
    }
    Ok((
        dx,
        Tensor::from_vec(gamma.shape(), dgamma)?,
        Tensor::from_vec(gamma.shape(), dbeta)?,
    ))
}
