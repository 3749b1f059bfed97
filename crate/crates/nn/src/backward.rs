//! Per-operation vector-Jacobian products.

use std::sync::Arc;

use crate::error::Result;
use crate::graph::Op;
use crate::ops::activation::{channel_layout, leaky_grad, prelu_slopes, sigmoid};
use crate::ops::{conv, dense, elementwise, norm, resample, shuffle, spectral};
use crate::tensor::Tensor;

type Contribs = Vec<(usize, Tensor)>;

pub(crate) fn backward(
    op: &Op,
    out: &Tensor,
    gout: &Tensor,
    value_of: &dyn Fn(usize) -> Arc<Tensor>,
    needs: &dyn Fn(usize) -> bool,
) -> Result<Contribs> {
    let mut c: Contribs = Vec::new();
    match op {
        Op::Leaf => {}
        Op::Conv2d {
            x,
            w,
            b,
            stride,
            pad,
        } => {
            let need_b = b.is_some_and(&needs);
            let grads = conv::backward(
                &value_of(*x),
                &value_of(*w),
                gout,
                *stride,
                *pad,
                (needs(*x), needs(*w), need_b),
            )?;
            c.extend(grads.dx.map(|d| (*x, d)));
            c.extend(grads.dw.map(|d| (*w, d)));
            if let (Some(b), Some(db)) = (b, grads.db) {
                c.push((*b, db));
            }
        }
        Op::Dense { x, w, b } => {
            let need_b = b.is_some_and(&needs);
            let (dx, dw, db) =
                dense::backward(&value_of(*x), &value_of(*w), gout, (needs(*x), needs(*w), need_b))?;
            c.extend(dx.map(|d| (*x, d)));
            c.extend(dw.map(|d| (*w, d)));
            if let (Some(b), Some(db)) = (b, db) {
                c.push((*b, db));
            }
        }
        Op::LeakyRelu { x, slope } => {
            let xv = value_of(*x);
            c.push((*x, xv.zip_map(gout, |v, g| g * leaky_grad(v, *slope))?));
        }
        Op::Prelu { x, a } => {
            let xv = value_of(*x);
            let av = value_of(*a);
            let (n, ch, inner) = channel_layout(&xv)?;
            let slopes = prelu_slopes(&av, ch)?;
            let mut dx = gout.clone();
            let mut da = vec![0.0; ch];
            for ni in 0..n {
                for ci in 0..ch {
                    let base = (ni * ch + ci) * inner;
                    for i in base..base + inner {
                        let v = xv.data()[i];
                        let g = gout.data()[i];
                        if v < 0.0 {
                            dx.data_mut()[i] = g * slopes[ci];
                            da[ci] += g * v;
                        }
                    }
                }
            }
            if needs(*x) {
                c.push((*x, dx));
            }
            if needs(*a) {
                let da = if av.numel() == 1 {
                    vec![da.iter().sum()]
                } else {
                    da
                };
                c.push((*a, Tensor::from_vec(av.shape(), da)?));
            }
        }
        Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            train,
        } => {
            let (dx, dg, db) =
                norm::backward(&value_of(*x), xhat, &value_of(*gamma), inv_std, gout, *train)?;
            c.push((*x, dx));
            c.push((*gamma, dg));
            c.push((*beta, db));
        }
        Op::PixelShuffle { x, r } => c.push((*x, shuffle::pixel_unshuffle(gout, *r)?)),
        Op::PixelUnshuffle { x, r } => c.push((*x, shuffle::pixel_shuffle(gout, *r)?)),
        Op::SpectralNorm {
            w,
            u,
            v,
            sigma,
            sigma_floored,
        } => {
            let dw = spectral::backward(&value_of(*w), gout, u, v, *sigma, *sigma_floored)?;
            c.push((*w, dw));
        }
        Op::UpsampleNearest { x, scale } => {
            let shape = value_of(*x).shape().to_vec();
            c.push((*x, resample::nearest_backward(&shape, gout, *scale)?));
        }
        Op::UpsampleBilinear { x, scale } => {
            let shape = value_of(*x).shape().to_vec();
            c.push((*x, resample::bilinear_backward(&shape, gout, *scale)?));
        }
        Op::MaxPool2 { x, argmax } => {
            let mut dx = Tensor::zeros(value_of(*x).shape());
            for (o, &src) in argmax.iter().enumerate() {
                dx.data_mut()[src] += gout.data()[o];
            }
            c.push((*x, dx));
        }
        Op::Add { a, b } => {
            c.push((*a, gout.clone()));
            c.push((*b, gout.clone()));
        }
        Op::Sub { a, b } => {
            c.push((*a, gout.clone()));
            c.push((*b, gout.map(|g| -g)));
        }
        Op::Mul { a, b } => {
            let (av, bv) = (value_of(*a), value_of(*b));
            if needs(*a) {
                c.push((*a, gout.zip_map(&bv, |g, y| g * y)?));
            }
            if needs(*b) {
                c.push((*b, gout.zip_map(&av, |g, x| g * x)?));
            }
        }
        Op::Scale { x, k } => c.push((*x, gout.map(|g| g * k))),
        Op::AddScalar { x } | Op::Reshape { x } => {
            let shape = value_of(*x).shape().to_vec();
            c.push((*x, gout.reshape(&shape)?));
        }
        Op::SubScalarVar { x, s } => {
            c.push((*x, gout.clone()));
            let sv = value_of(*s);
            c.push((*s, Tensor::from_vec(sv.shape(), vec![-gout.sum()])?));
        }
        Op::Concat { parts } => {
            let shapes: Vec<Vec<usize>> = parts.iter().map(|p| value_of(*p).shape().to_vec()).collect();
            for (p, g) in parts.iter().zip(elementwise::concat_backward(&shapes, gout)?) {
                c.push((*p, g));
            }
        }
        Op::Abs { x } => {
            let xv = value_of(*x);
            c.push((*x, xv.zip_map(gout, |v, g| g * sign(v))?));
        }
        Op::Softplus { x } => {
            let xv = value_of(*x);
            c.push((*x, xv.zip_map(gout, |v, g| g * sigmoid(v))?));
        }
        Op::Sigmoid { x } => {
            c.push((*x, out.zip_map(gout, |s, g| g * s * (1.0 - s))?));
        }
        Op::Mean { x } => {
            let xv = value_of(*x);
            let g = gout.data()[0] / xv.numel() as f64;
            c.push((*x, Tensor::full(xv.shape(), g)));
        }
        Op::Sum { x } => {
            let xv = value_of(*x);
            c.push((*x, Tensor::full(xv.shape(), gout.data()[0])));
        }
    }
    Ok(c)
}

/// Subgradient 0 at the kink.
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}
