//! 2-D cross-correlation over NCHW tensors via im2col + GEMM.

use crate::error::{shape_err, Result};
use crate::graph::{Op, Var};
use crate::linalg::{gemm, MatRef};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
struct Geom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geom {
    fn new(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Result<Self> {
        let (n, c, h, wd) = x.dims4()?;
        let (o, wc, kh, kw) = w.dims4()?;
        if wc != c {
            return shape_err(
                "conv2d",
                format!("input has {c} channels, kernel expects {wc}"),
            );
        }
        if kh != kw {
            return shape_err("conv2d", format!("non-square kernel {kh}x{kw}"));
        }
        if stride == 0 {
            return shape_err("conv2d", "stride must be positive");
        }
        if h + 2 * pad < kh || wd + 2 * pad < kw {
            return shape_err(
                "conv2d",
                format!("kernel {kh} larger than padded input {h}x{wd} (pad {pad})"),
            );
        }
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (wd + 2 * pad - kw) / stride + 1;
        Ok(Self {
            n,
            c,
            h,
            w: wd,
            o,
            k: kh,
            stride,
            pad,
            ho,
            wo,
        })
    }

    fn patch_len(&self) -> usize {
        self.c * self.k * self.k
    }

    fn out_len(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    /// Range of output columns whose input column `ow*s + kj - pad` is in bounds.
    fn valid_range(&self, kj: usize, in_len: usize, out_len: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = kj as isize - self.pad as isize;
        // smallest o with o*s + off >= 0
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        // largest o with o*s + off <= in_len - 1
        let hi_num = in_len as isize - 1 - off;
        let hi = if hi_num < 0 { -1 } else { hi_num / s };
        let lo = lo.min(out_len as isize) as usize;
        let hi = (hi + 1).clamp(lo as isize, out_len as isize) as usize;
        (lo, hi)
    }
}

fn im2col(x: &[f64], g: &Geom, cols: &mut [f64]) {
    let (k, s, p) = (g.k, g.stride, g.pad);
    let ol = g.out_len();
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..k {
            let (oh_lo, oh_hi) = g.valid_range(ki, g.h, g.ho);
            for kj in 0..k {
                let (ow_lo, ow_hi) = g.valid_range(kj, g.w, g.wo);
                let row = &mut cols[((c * k + ki) * k + kj) * ol..][..ol];
                for oh in 0..g.ho {
                    let dst = &mut row[oh * g.wo..(oh + 1) * g.wo];
                    if oh < oh_lo || oh >= oh_hi {
                        dst.fill(0.0);
                        continue;
                    }
                    let ih = oh * s + ki - p;
                    let src = &plane[ih * g.w..(ih + 1) * g.w];
                    dst[..ow_lo].fill(0.0);
                    dst[ow_hi..].fill(0.0);
                    if s == 1 {
                        let start = ow_lo + kj - p;
                        dst[ow_lo..ow_hi].copy_from_slice(&src[start..start + (ow_hi - ow_lo)]);
                    } else {
                        for ow in ow_lo..ow_hi {
                            dst[ow] = src[ow * s + kj - p];
                        }
                    }
                }
            }
        }
    }
}

fn col2im_add(cols: &[f64], g: &Geom, dx: &mut [f64]) {
    let (k, s, p) = (g.k, g.stride, g.pad);
    let ol = g.out_len();
    for c in 0..g.c {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..k {
            let (oh_lo, oh_hi) = g.valid_range(ki, g.h, g.ho);
            for kj in 0..k {
                let (ow_lo, ow_hi) = g.valid_range(kj, g.w, g.wo);
                let row = &cols[((c * k + ki) * k + kj) * ol..][..ol];
                for oh in oh_lo..oh_hi {
                    let ih = oh * s + ki - p;
                    let src = &row[oh * g.wo..(oh + 1) * g.wo];
                    let dst = &mut plane[ih * g.w..(ih + 1) * g.w];
                    for ow in ow_lo..ow_hi {
                        dst[ow * s + kj - p] += src[ow];
                    }
                }
            }
        }
    }
}

pub(crate) fn forward(
    x: &Tensor,
    w: &Tensor,
    b: Option<&Tensor>,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let g = Geom::new(x, w, stride, pad)?;
    if let Some(b) = b {
        if b.numel() != g.o {
            return shape_err(
                "conv2d",
                format!("bias has {} values for {} filters", b.numel(), g.o),
            );
        }
    }
    let (pl, ol) = (g.patch_len(), g.out_len());
    let in_len = g.c * g.h * g.w;
    let mut out = vec![0.0; g.n * g.o * ol];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0; pl * ol]
    };
    let wm = MatRef::new(w.data(), g.o, pl);
    for n in 0..g.n {
        let xn = &x.data()[n * in_len..(n + 1) * in_len];
        let colm = if g.is_pointwise() {
            MatRef::new(xn, pl, ol)
        } else {
            im2col(xn, &g, &mut cols);
            MatRef::new(&cols, pl, ol)
        };
        let on = &mut out[n * g.o * ol..(n + 1) * g.o * ol];
        gemm(wm, colm, on, 0.0);
        if let Some(b) = b {
            for (o, row) in on.chunks_mut(ol).enumerate() {
                let bo = b.data()[o];
                row.iter_mut().for_each(|v| *v += bo);
            }
        }
    }
    Tensor::from_vec(&[g.n, g.o, g.ho, g.wo], out)
}

pub(crate) struct ConvGrads {
    pub dx: Option<Tensor>,
    pub dw: Option<Tensor>,
    pub db: Option<Tensor>,
}

pub(crate) fn backward(
    x: &Tensor,
    w: &Tensor,
    gout: &Tensor,
    stride: usize,
    pad: usize,
    need: (bool, bool, bool),
) -> Result<ConvGrads> {
    let g = Geom::new(x, w, stride, pad)?;
    let (pl, ol) = (g.patch_len(), g.out_len());
    let in_len = g.c * g.h * g.w;
    let (need_x, need_w, need_b) = need;
    let mut dx = need_x.then(|| vec![0.0; x.numel()]);
    let mut dw = need_w.then(|| vec![0.0; w.numel()]);
    let mut db = need_b.then(|| vec![0.0; g.o]);
    let mut cols = vec![0.0; if g.is_pointwise() { 0 } else { pl * ol }];
    let mut dcols = vec![0.0; if need_x && !g.is_pointwise() { pl * ol } else { 0 }];
    let wm = MatRef::new(w.data(), g.o, pl);
    for n in 0..g.n {
        let gn = MatRef::new(&gout.data()[n * g.o * ol..(n + 1) * g.o * ol], g.o, ol);
        if let Some(db) = db.as_mut() {
            for o in 0..g.o {
                db[o] += gn.data[o * ol..(o + 1) * ol].iter().sum::<f64>();
            }
        }
        let xn = &x.data()[n * in_len..(n + 1) * in_len];
        if let Some(dw) = dw.as_mut() {
            let colm = if g.is_pointwise() {
                MatRef::new(xn, pl, ol)
            } else {
                im2col(xn, &g, &mut cols);
                MatRef::new(&cols, pl, ol)
            };
            gemm(gn, colm.t(), dw, 1.0);
        }
        if let Some(dx) = dx.as_mut() {
            let dxn = &mut dx[n * in_len..(n + 1) * in_len];
            if g.is_pointwise() {
                gemm(wm.t(), gn, dxn, 1.0);
            } else {
                gemm(wm.t(), gn, &mut dcols, 0.0);
                col2im_add(&dcols, &g, dxn);
            }
        }
    }
    Ok(ConvGrads {
        dx: dx.map(|d| Tensor::from_vec(x.shape(), d)).transpose()?,
        dw: dw.map(|d| Tensor::from_vec(w.shape(), d)).transpose()?,
        db: db.map(|d| Tensor::from_vec(&[g.o], d)).transpose()?,
    })
}

impl<'g> Var<'g> {
    /// Cross-correlation with a `(out, in, k, k)` kernel and optional bias.
    pub fn conv2d(
        &self,
        w: &Var<'g>,
        b: Option<&Var<'g>>,
        stride: usize,
        pad: usize,
    ) -> Result<Var<'g>> {
        let bv = b.map(|b| b.value());
        let out = forward(&self.value(), &w.value(), bv.as_deref(), stride, pad)?;
        Ok(self.graph.push(
            out,
            Op::Conv2d {
                x: self.id,
                w: w.id,
                b: b.map(|b| b.id),
                stride,
                pad,
            },
        ))
    }
}
