use crate::error::{shape_err, Result};
use crate::graph::{Op, Var};
use crate::linalg::{gemm, MatRef};
use crate::tensor::Tensor;

pub(crate) fn forward(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    let (n, fin) = x.dims2()?;
    let (fout, wfin) = w.dims2()?;
    if fin != wfin {
        return shape_err("dense", format!("{fin} inputs, weight expects {wfin}"));
    }
    let mut out = vec![0.0; n * fout];
    gemm(
        MatRef::new(x.data(), n, fin),
        MatRef::new(w.data(), fout, fin).t(),
        &mut out,
        0.0,
    );
    if let Some(b) = b {
        if b.numel() != fout {
            return shape_err("dense", format!("bias {} for {fout} outputs", b.numel()));
        }
        for row in out.chunks_mut(fout) {
            for (v, bb) in row.iter_mut().zip(b.data()) {
                *v += bb;
            }
        }
    }
    Tensor::from_vec(&[n, fout], out)
}

pub(crate) fn backward(
    x: &Tensor,
    w: &Tensor,
    gout: &Tensor,
    need: (bool, bool, bool),
) -> Result<(Option<Tensor>, Option<Tensor>, Option<Tensor>)> {
    let (n, fin) = x.dims2()?;
    let (fout, _) = w.dims2()?;
    let gm = MatRef::new(gout.data(), n, fout);
    let dx = if need.0 {
        let mut d = vec![0.0; n * fin];
        gemm(gm, MatRef::new(w.data(), fout, fin), &mut d, 0.0);
        Some(Tensor::from_vec(x.shape(), d)?)
    } else {
        None
    };
    let dw = if need.1 {
        let mut d = vec![0.0; fout * fin];
        gemm(gm.t(), MatRef::new(x.data(), n, fin), &mut d, 0.0);
        Some(Tensor::from_vec(w.shape(), d)?)
    } else {
        None
    };
    let db = if need.2 {
        let mut d = vec![0.0; fout];
        for row in gout.data().chunks(fout) {
            for (a, g) in d.iter_mut().zip(row) {
                *a += g;
            }
        }
        Some(Tensor::from_vec(&[fout], d)?)
    } else {
        None
    };
    Ok((dx, dw, db))
}

impl<'g> Var<'g> {
    /// `x·Wᵀ + b` for `x: (n, in)`, `W: (out, in)`.
    pub fn dense(&self, w: &Var<'g>, b: Option<&Var<'g>>) -> Result<Var<'g>> {
        let bv = b.map(|b| b.value());
        let out = forward(&self.value(), &w.value(), bv.as_deref())?;
        Ok(self.graph.push(
            out,
            Op::Dense {
                x: self.id,
                w: w.id,
                b: b.map(|b| b.id),
            },
        ))
    }
}
