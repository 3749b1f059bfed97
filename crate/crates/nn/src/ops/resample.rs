//! Integer-factor upsampling and 2x2 max pooling on NCHW tensors.

use crate::error::{arg_err, shape_err, Result};
use crate::graph::{Op, Var};
use crate::tensor::Tensor;

/// Source taps `(i0, i1, t)` for half-pixel-centered linear interpolation.
fn linear_taps(out_len: usize, in_len: usize, scale: usize) -> Vec<(usize, usize, f64)> {
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) / scale as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub(crate) fn nearest_forward(x: &Tensor, scale: usize) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let (ho, wo) = (h * scale, w * scale);
    let mut out = vec![0.0; n * c * ho * wo];
    for p in 0..n * c {
        let src = &x.data()[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * ho * wo..(p + 1) * ho * wo];
        for oy in 0..ho {
            for ox in 0..wo {
                dst[oy * wo + ox] = src[(oy / scale) * w + ox / scale];
            }
        }
    }
    Tensor::from_vec(&[n, c, ho, wo], out)
}

pub(crate) fn nearest_backward(x_shape: &[usize], gout: &Tensor, scale: usize) -> Result<Tensor> {
    let (n, c, h, w) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    let (ho, wo) = (h * scale, w * scale);
    let mut dx = vec![0.0; n * c * h * w];
    for p in 0..n * c {
        let g = &gout.data()[p * ho * wo..(p + 1) * ho * wo];
        let d = &mut dx[p * h * w..(p + 1) * h * w];
        for oy in 0..ho {
            for ox in 0..wo {
                d[(oy / scale) * w + ox / scale] += g[oy * wo + ox];
            }
        }
    }
    Tensor::from_vec(x_shape, dx)
}

pub(crate) fn bilinear_forward(x: &Tensor, scale: usize) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let (ho, wo) = (h * scale, w * scale);
    let ty = linear_taps(ho, h, scale);
    let tx = linear_taps(wo, w, scale);
    let mut out = vec![0.0; n * c * ho * wo];
    for p in 0..n * c {
        let src = &x.data()[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * ho * wo..(p + 1) * ho * wo];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
                let bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
                dst[oy * wo + ox] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    Tensor::from_vec(&[n, c, ho, wo], out)
}

pub(crate) fn bilinear_backward(x_shape: &[usize], gout: &Tensor, scale: usize) -> Result<Tensor> {
    let (n, c, h, w) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    let (ho, wo) = (h * scale, w * scale);
    let ty = linear_taps(ho, h, scale);
    let tx = linear_taps(wo, w, scale);
    let mut dx = vec![0.0; n * c * h * w];
    for p in 0..n * c {
        let g = &gout.data()[p * ho * wo..(p + 1) * ho * wo];
        let d = &mut dx[p * h * w..(p + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let go = g[oy * wo + ox];
                d[y0 * w + x0] += go * (1.0 - fy) * (1.0 - fx);
                d[y0 * w + x1] += go * (1.0 - fy) * fx;
                d[y1 * w + x0] += go * fy * (1.0 - fx);
                d[y1 * w + x1] += go * fy * fx;
            }
        }
    }
    Tensor::from_vec(x_shape, dx)
}

fn max_pool2(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let (n, c, h, w) = x.dims4()?;
    if h < 2 || w < 2 {
        return shape_err("max_pool2", format!("input {h}x{w} smaller than 2x2"));
    }
    let (ho, wo) = (h / 2, w / 2);
    let mut out = vec![0.0; n * c * ho * wo];
    let mut arg = vec![0; out.len()];
    for p in 0..n * c {
        let base = p * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + (2 * oy) * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x.data()[idx] > x.data()[best] {
                        best = idx;
                    }
                }
                let o = (p * ho + oy) * wo + ox;
                out[o] = x.data()[best];
                arg[o] = best;
            }
        }
    }
    Ok((Tensor::from_vec(&[n, c, ho, wo], out)?, arg))
}

impl<'g> Var<'g> {
    pub fn upsample_nearest(&self, scale: usize) -> Result<Var<'g>> {
        if scale == 0 {
            return arg_err("upsample_nearest", "scale must be positive");
        }
        let out = nearest_forward(&self.value(), scale)?;
        Ok(self.graph.push(out, Op::UpsampleNearest { x: self.id, scale }))
    }

    /// Linear interpolation with half-pixel centers and edge clamping.
    pub fn upsample_bilinear(&self, scale: usize) -> Result<Var<'g>> {
        if scale == 0 {
            return arg_err("upsample_bilinear", "scale must be positive");
        }
        let out = bilinear_forward(&self.value(), scale)?;
        Ok(self.graph.push(out, Op::UpsampleBilinear { x: self.id, scale }))
    }

    /// 2x2 window, stride 2, trailing odd row/column dropped.
    pub fn max_pool2(&self) -> Result<Var<'g>> {
        let (out, argmax) = max_pool2(&self.value())?;
        Ok(self.graph.push(out, Op::MaxPool2 { x: self.id, argmax }))
    }
}
