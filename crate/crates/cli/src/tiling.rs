//! Tiled inference: overlapping LR tiles are super-resolved on their own
//! and blended with linear feathering across the overlaps.

use rayon::prelude::*;
use srforge_core::models::Model;
use srforge_core::Raster;

use crate::error::{usage, Result};

pub const DEFAULT_TILE: usize = 96;
pub const DEFAULT_OVERLAP: usize = 8;

/// Tile start offsets along one axis. Tiles step by `tile - overlap`; the
/// last one is pushed back to end flush with the raster.
pub fn tile_starts(len: usize, tile: usize, overlap: usize) -> Vec<usize> {
    if len <= tile {
        return vec![0];
    }
    let step = tile - overlap;
    let mut starts: Vec<usize> = (0..).map(|i| i * step).take_while(|&s| s + tile < len).collect();
    starts.push(len - tile);
    starts.dedup();
    starts
}

/// Blend weight at `i` of `len` output pixels; ramps up over `ramp`
/// pixels on each side that borders a neighboring tile.
pub fn feather(i: usize, len: usize, ramp: usize, before: bool, after: bool) -> f64 {
    if ramp == 0 {
        return 1.0;
    }
    let mut w = 1.0f64;
    if before {
        w = w.min((i as f64 + 0.5) / ramp as f64);
    }
    if after {
        w = w.min(((len - i) as f64 - 0.5) / ramp as f64);
    }
    w
}

pub fn tiled_super_resolve(model: &Model, lr: &Raster, tile: usize, overlap: usize) -> Result<Raster> {
    if tile == 0 || overlap >= tile {
        return usage(format!("tile {tile} must exceed overlap {overlap}"));
    }
    if lr.bands() != model.spec.bands {
        return usage(format!(
            "band mismatch: input has {} bands, model expects {}",
            lr.bands(),
            model.spec.bands
        ));
    }
    let s = model.spec.scale;
    let xs = tile_starts(lr.width(), tile, overlap);
    let ys = tile_starts(lr.height(), tile, overlap);
    let (tw, th) = (tile.min(lr.width()), tile.min(lr.height()));
    let jobs: Vec<(usize, usize)> = ys.iter().flat_map(|&y| xs.iter().map(move |&x| (y, x))).collect();
    let outs = jobs
        .par_iter()
        .map(|&(y, x)| Ok(model.super_resolve(&lr.crop(x, y, tw, th)?)?))
        .collect::<Result<Vec<Raster>>>()?;

    let (ow, oh, bands) = (lr.width() * s, lr.height() * s, lr.bands());
    let mut acc = vec![0.0; ow * oh * bands];
    let mut wsum = vec![0.0; ow * oh];
    let ramp = overlap * s;
    for (&(y, x), out) in jobs.iter().zip(&outs) {
        let (ix, iy) = (xs.iter().position(|&v| v == x).unwrap(), ys.iter().position(|&v| v == y).unwrap());
        let (left, right) = (ix > 0, ix + 1 < xs.len());
        let (top, bottom) = (iy > 0, iy + 1 < ys.len());
        for r in 0..out.height() {
            let wy = feather(r, out.height(), ramp, top, bottom);
            for c in 0..out.width() {
                let w = wy * feather(c, out.width(), ramp, left, right);
                let (gy, gx) = (y * s + r, x * s + c);
                wsum[gy * ow + gx] += w;
                for b in 0..bands {
                    acc[(b * oh + gy) * ow + gx] += w * out.get(b, r, c);
                }
            }
        }
    }
    let mut merged = Raster::from_fn(ow, oh, bands, |b, y, x| acc[(b * oh + y) * ow + x] / wsum[y * ow + x])?
        .with_bit_depth(lr.bit_depth);
    merged.gsd = lr.gsd.map(|g| g / s as f64);
    Ok(merged)
}
