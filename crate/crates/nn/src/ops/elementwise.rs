use crate::error::{shape_err, Result};
use crate::graph::{Op, Var};
use crate::tensor::Tensor;

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return shape_err(op, format!("{:?} vs {:?}", a.shape(), b.shape()));
    }
    Ok(())
}

/// Splits `(n, c, ...)` into per-item channel-block length.
fn channel_block(t: &Tensor) -> (usize, usize) {
    let n = t.shape()[0];
    (n, t.numel() / n.max(1))
}

impl<'g> Var<'g> {
    pub fn add(&self, other: &Var<'g>) -> Result<Var<'g>> {
        let (a, b) = (self.value(), other.value());
        same_shape("add", &a, &b)?;
        let out = a.zip_map(&b, |x, y| x + y)?;
        Ok(self.graph.push(out, Op::Add { a: self.id, b: other.id }))
    }

    pub fn sub(&self, other: &Var<'g>) -> Result<Var<'g>> {
        let (a, b) = (self.value(), other.value());
        same_shape("sub", &a, &b)?;
        let out = a.zip_map(&b, |x, y| x - y)?;
        Ok(self.graph.push(out, Op::Sub { a: self.id, b: other.id }))
    }

    pub fn mul(&self, other: &Var<'g>) -> Result<Var<'g>> {
        let (a, b) = (self.value(), other.value());
        same_shape("mul", &a, &b)?;
        let out = a.zip_map(&b, |x, y| x * y)?;
        Ok(self.graph.push(out, Op::Mul { a: self.id, b: other.id }))
    }

    pub fn scale(&self, k: f64) -> Var<'g> {
        let out = self.value().map(|x| x * k);
        self.graph.push(out, Op::Scale { x: self.id, k })
    }

    pub fn neg(&self) -> Var<'g> {
        self.scale(-1.0)
    }

    pub fn add_scalar(&self, k: f64) -> Var<'g> {
        let out = self.value().map(|x| x + k);
        self.graph.push(out, Op::AddScalar { x: self.id })
    }

    /// Subtracts the single value held by `s` from every element.
    pub fn sub_scalar(&self, s: &Var<'g>) -> Result<Var<'g>> {
        let sv = s.value();
        if sv.numel() != 1 {
            return shape_err("sub_scalar", format!("scalar expected, got {:?}", sv.shape()));
        }
        let k = sv.data()[0];
        let out = self.value().map(|x| x - k);
        Ok(self.graph.push(out, Op::SubScalarVar { x: self.id, s: s.id }))
    }

    pub fn abs(&self) -> Var<'g> {
        let out = self.value().map(f64::abs);
        self.graph.push(out, Op::Abs { x: self.id })
    }

    pub fn mean(&self) -> Var<'g> {
        let out = Tensor::scalar(self.value().mean());
        self.graph.push(out, Op::Mean { x: self.id })
    }

    pub fn sum(&self) -> Var<'g> {
        let out = Tensor::scalar(self.value().sum());
        self.graph.push(out, Op::Sum { x: self.id })
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'g>> {
        let out = self.value().reshape(shape)?;
        Ok(self.graph.push(out, Op::Reshape { x: self.id }))
    }

    /// `(n, ...) → (n, rest)`.
    pub fn flatten(&self) -> Result<Var<'g>> {
        let v = self.value();
        let (n, rest) = channel_block(&v);
        self.reshape(&[n, rest])
    }

    /// Concatenation along the channel axis (axis 1).
    pub fn concat(parts: &[Var<'g>]) -> Result<Var<'g>> {
        let Some(first) = parts.first() else {
            return shape_err("concat", "no inputs");
        };
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let base = values[0].shape();
        if base.len() < 2 {
            return shape_err("concat", "rank must be at least 2");
        }
        let mut channels = 0;
        for v in &values {
            let s = v.shape();
            if s.len() != base.len() || s[0] != base[0] || s[2..] != base[2..] {
                return shape_err("concat", format!("{base:?} vs {s:?}"));
            }
            channels += s[1];
        }
        let n = base[0];
        let mut out = Vec::with_capacity(values.iter().map(|v| v.numel()).sum());
        for ni in 0..n {
            for v in &values {
                let (_, block) = channel_block(v);
                out.extend_from_slice(&v.data()[ni * block..(ni + 1) * block]);
            }
        }
        let mut shape = base.to_vec();
        shape[1] = channels;
        let out = Tensor::from_vec(&shape, out)?;
        Ok(first.graph.push(
            out,
            Op::Concat {
                parts: parts.iter().map(|p| p.id).collect(),
            },
        ))
    }
}

/// Splits a concatenated gradient back into per-part gradients.
pub(crate) fn concat_backward(part_shapes: &[Vec<usize>], gout: &Tensor) -> Result<Vec<Tensor>> {
    let n = gout.shape()[0];
    let (_, total) = channel_block(gout);
    let blocks: Vec<usize> = part_shapes
        .iter()
        .map(|s| s.iter().skip(1).product())
        .collect();
    let mut grads: Vec<Vec<f64>> = blocks.iter().map(|b| Vec::with_capacity(b * n)).collect();
    for ni in 0..n {
        let mut off = ni * total;
        for (g, &b) in grads.iter_mut().zip(&blocks) {
            g.extend_from_slice(&gout.data()[off..off + b]);
            off += b;
        }
    }
    grads
        .into_iter()
        .zip(part_shapes)
        .map(|(g, s)| Tensor::from_vec(s, g))
        .collect()
}
