//! Sub-pixel rearrangement between channel and spatial axes.

use crate::error::{arg_err, shape_err, Result};
use crate::graph::{Op, Var};
use crate::tensor::Tensor;

/// `(N, C·r², H, W) → (N, C, H·r, W·r)` with
/// `out[n, c, h·r+i, w·r+j] = in[n, c·r²+i·r+j, h, w]`.
pub fn pixel_shuffle(x: &Tensor, r: usize) -> Result<Tensor> {
    let (n, cin, h, w) = x.dims4()?;
    if r == 0 {
        return arg_err("pixel_shuffle", "factor must be positive");
    }
    if cin % (r * r) != 0 {
        return shape_err(
            "pixel_shuffle",
            format!("{cin} channels not divisible by {}", r * r),
        );
    }
    let c = cin / (r * r);
    let (ho, wo) = (h * r, w * r);
    let mut out = vec![0.0; x.numel()];
    let src = x.data();
    for ni in 0..n {
        for ci in 0..c {
            for i in 0..r {
                for j in 0..r {
                    let plane = ((ni * cin) + ci * r * r + i * r + j) * h * w;
                    for hy in 0..h {
                        let orow = ((ni * c + ci) * ho + hy * r + i) * wo;
                        for wx in 0..w {
                            out[orow + wx * r + j] = src[plane + hy * w + wx];
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[n, c, ho, wo], out)
}

/// Inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle(x: &Tensor, r: usize) -> Result<Tensor> {
    let (n, c, ho, wo) = x.dims4()?;
    if r == 0 {
        return arg_err("pixel_unshuffle", "factor must be positive");
    }
    if ho % r != 0 || wo % r != 0 {
        return shape_err(
            "pixel_unshuffle",
            format!("{ho}x{wo} not divisible by {r}"),
        );
    }
    let (h, w) = (ho / r, wo / r);
    let cout = c * r * r;
    let mut out = vec![0.0; x.numel()];
    let src = x.data();
    for ni in 0..n {
        for ci in 0..c {
            for i in 0..r {
                for j in 0..r {
                    let plane = ((ni * cout) + ci * r * r + i * r + j) * h * w;
                    for hy in 0..h {
                        let irow = ((ni * c + ci) * ho + hy * r + i) * wo;
                        for wx in 0..w {
                            out[plane + hy * w + wx] = src[irow + wx * r + j];
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[n, cout, h, w], out)
}

impl<'g> Var<'g> {
    pub fn pixel_shuffle(&self, r: usize) -> Result<Var<'g>> {
        let out = pixel_shuffle(&self.value(), r)?;
        Ok(self.graph.push(out, Op::PixelShuffle { x: self.id, r }))
    }

    pub fn pixel_unshuffle(&self, r: usize) -> Result<Var<'g>> {
        let out = pixel_unshuffle(&self.value(), r)?;
        Ok(self.graph.push(out, Op::PixelUnshuffle { x: self.id, r }))
    }
}
