use crate::error::{shape_err, Result};
use crate::graph::{Op, Var};
use crate::tensor::Tensor;

/// Derivative convention at exactly zero: the positive side (1).
#[inline]
pub(crate) fn leaky_grad(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        slope
    }
}

#[inline]
fn leaky(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

/// Spatial size per channel for `(n, c, ...)` tensors.
pub(crate) fn channel_layout(t: &Tensor) -> Result<(usize, usize, usize)> {
    if t.rank() < 2 {
        return shape_err("channel_layout", format!("rank {} < 2", t.rank()));
    }
    let n = t.shape()[0];
    let c = t.shape()[1];
    let inner = t.shape()[2..].iter().product();
    Ok((n, c, inner))
}

pub(crate) fn prelu_slopes(a: &Tensor, c: usize) -> Result<Vec<f64>> {
    match a.numel() {
        1 => Ok(vec![a.data()[0]; c]),
        m if m == c => Ok(a.data().to_vec()),
        m => shape_err("prelu", format!("{m} slopes for {c} channels")),
    }
}

impl<'g> Var<'g> {
    pub fn leaky_relu(&self, slope: f64) -> Var<'g> {
        let out = self.value().map(|v| leaky(v, slope));
        self.graph.push(out, Op::LeakyRelu { x: self.id, slope })
    }

    pub fn relu(&self) -> Var<'g> {
        self.leaky_relu(0.0)
    }

    /// Leaky ReLU with a learnable slope per channel (or one shared slope).
    pub fn prelu(&self, a: &Var<'g>) -> Result<Var<'g>> {
        let x = self.value();
        let (n, c, inner) = channel_layout(&x)?;
        let slopes = prelu_slopes(&a.value(), c)?;
        let mut out = x.as_ref().clone();
        for ni in 0..n {
            for (ci, &s) in slopes.iter().enumerate() {
                let base = (ni * c + ci) * inner;
                for v in &mut out.data_mut()[base..base + inner] {
                    *v = leaky(*v, s);
                }
            }
        }
        Ok(self.graph.push(out, Op::Prelu { x: self.id, a: a.id }))
    }

    pub fn sigmoid(&self) -> Var<'g> {
        let out = self.value().map(sigmoid);
        self.graph.push(out, Op::Sigmoid { x: self.id })
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&self) -> Var<'g> {
        let out = self.value().map(softplus);
        self.graph.push(out, Op::Softplus { x: self.id })
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}
