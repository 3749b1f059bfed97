//! Multi-band rasters and the preprocessing primitives used to build
//! training pairs: normalization, mean filtering, bicubic resampling,
//! histogram matching and patch gridding.

use serde::{Deserialize, Serialize};
use srforge_nn::Tensor;

use crate::error::{invalid, shape, Result};

/// Band-sequential, row-major image: `data[(b * height + y) * width + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    bands: usize,
    data: Vec<f64>,
    /// Ground sampling distance in meters per pixel.
    pub gsd: Option<f64>,
    /// Sampling depth of the source in bits (8 or 12).
    pub bit_depth: u8,
}

impl Raster {
    pub fn new(width: usize, height: usize, bands: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || bands == 0 {
            return invalid(format!("empty raster {width}x{height}x{bands}"));
        }
        if data.len() != width * height * bands {
            return shape(format!(
                "{width}x{height}x{bands} raster needs {} values, got {}",
                width * height * bands,
                data.len()
            ));
        }
        Ok(Self {
            width,
            height,
            bands,
            data,
            gsd: None,
            bit_depth: 8,
        })
    }

    pub fn filled(width: usize, height: usize, bands: usize, value: f64) -> Result<Self> {
        Self::new(width, height, bands, vec![value; width * height * bands])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        bands: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * bands);
        for b in 0..bands {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(b, y, x));
                }
            }
        }
        Self::new(width, height, bands, data)
    }

    pub fn with_gsd(mut self, gsd: f64) -> Result<Self> {
        if !(gsd > 0.0) {
            return invalid(format!("gsd must be positive, got {gsd}"));
        }
        self.gsd = Some(gsd);
        Ok(self)
    }

    pub fn with_bit_depth(mut self, depth: u8) -> Self {
        self.bit_depth = depth;
        self
    }

    /// Copies gsd and bit depth from `other`.
    fn with_meta_of(mut self, other: &Raster) -> Self {
        self.gsd = other.gsd;
        self.bit_depth = other.bit_depth;
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn plane_len(&self) -> usize {
        self.width * self.height
    }

    pub fn band(&self, b: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn band_mut(&mut self, b: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[b * n..(b + 1) * n]
    }

    #[inline]
    pub fn get(&self, b: usize, y: usize, x: usize) -> f64 {
        self.data[(b * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, b: usize, y: usize, x: usize, v: f64) {
        self.data[(b * self.height + y) * self.width + x] = v;
    }

    pub fn same_shape(&self, other: &Raster) -> bool {
        self.width == other.width && self.height == other.height && self.bands == other.bands
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Raster {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v = f(*v));
        out
    }

    pub fn max_abs_diff(&self, other: &Raster) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Raster> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            return invalid(format!(
                "crop {w}x{h}+{x0}+{y0} outside {}x{}",
                self.width, self.height
            ));
        }
        let out = Raster::from_fn(w, h, self.bands, |b, y, x| self.get(b, y0 + y, x0 + x))?;
        Ok(out.with_meta_of(self))
    }

    /// `(1, bands, height, width)` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(&[1, self.bands, self.height, self.width], self.data.clone())
            .expect("raster length is consistent")
    }

    /// Item `index` of an NCHW tensor.
    pub fn from_tensor(t: &Tensor, index: usize) -> Result<Raster> {
        let (n, c, h, w) = t.dims4()?;
        if index >= n {
            return invalid(format!("item {index} of a batch of {n}"));
        }
        let len = c * h * w;
        Raster::new(w, h, c, t.data()[index * len..(index + 1) * len].to_vec())
    }

    pub fn clamp01(&self) -> Raster {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

/// Stack rasters of equal shape into an NCHW tensor.
pub fn stack(rasters: &[&Raster]) -> Result<Tensor> {
    let Some(first) = rasters.first() else {
        return invalid("cannot stack an empty list");
    };
    let mut data = Vec::with_capacity(first.data.len() * rasters.len());
    for r in rasters {
        if !r.same_shape(first) {
            return shape("rasters in a batch differ in shape");
        }
        data.extend_from_slice(&r.data);
    }
    Ok(Tensor::from_vec(
        &[rasters.len(), first.bands, first.height, first.width],
        data,
    )?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizeMode {
    /// Divide by `2^depth − 1`.
    FixedRange,
    /// Per band, observed minimum to 0 and maximum to 1.
    PerImageMinMax,
}

#[derive(Debug, Clone)]
pub struct Normalized {
    pub raster: Raster,
    /// Bands that were constant in per-image mode and were set to 0.
    pub constant_bands: Vec<usize>,
}

pub fn normalize(r: &Raster, mode: NormalizeMode) -> Result<Normalized> {
    let mut out = r.clone();
    let mut constant_bands = Vec::new();
    match mode {
        NormalizeMode::FixedRange => {
            if r.bit_depth != 8 && r.bit_depth != 12 {
                return invalid(format!("fixed-range needs 8 or 12 bits, got {}", r.bit_depth));
            }
            let max = ((1u32 << r.bit_depth) - 1) as f64;
            out.data.iter_mut().for_each(|v| *v = (*v / max).clamp(0.0, 1.0));
        }
        NormalizeMode::PerImageMinMax => {
            for b in 0..r.bands {
                let band = out.band_mut(b);
                let lo = band.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = band.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if hi > lo {
                    band.iter_mut().for_each(|v| *v = (*v - lo) / (hi - lo));
                } else {
                    band.fill(0.0);
                    constant_bands.push(b);
                }
            }
        }
    }
    Ok(Normalized {
        raster: out,
        constant_bands,
    })
}

/// Odd side length of the square mean filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxKernelSpec {
    pub n: usize,
}

impl BoxKernelSpec {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || n % 2 == 0 {
            return invalid(format!("box kernel side must be odd and positive, got {n}"));
        }
        Ok(Self { n })
    }
}

/// Sliding mean of length `n` along one line with clamped indices.
fn mean_line(src: &[f64], n: usize, out: &mut [f64]) {
    let len = src.len() as isize;
    let r = (n / 2) as isize;
    let at = |i: isize| src[i.clamp(0, len - 1) as usize];
    // prefix over the replicated line [-r, len + r)
    let mut prefix = Vec::with_capacity(src.len() + 2 * r as usize + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for i in -r..len + r {
        acc += at(i);
        prefix.push(acc);
    }
    let inv = 1.0 / n as f64;
    for (i, o) in out.iter_mut().enumerate() {
        *o = (prefix[i + n] - prefix[i]) * inv;
    }
}

/// Arithmetic mean over the `n×n` neighborhood with edge replication.
pub fn box_filter(r: &Raster, k: BoxKernelSpec) -> Result<Raster> {
    let n = BoxKernelSpec::new(k.n)?.n;
    if n > r.width.min(r.height) {
        return invalid(format!(
            "box kernel {n} larger than {}x{} raster",
            r.width, r.height
        ));
    }
    let (w, h) = (r.width, r.height);
    let mut out = r.clone();
    let mut tmp = vec![0.0; w * h];
    let mut col = vec![0.0; h];
    let mut col_out = vec![0.0; h];
    for b in 0..r.bands {
        let src = r.band(b);
        for y in 0..h {
            mean_line(&src[y * w..(y + 1) * w], n, &mut tmp[y * w..(y + 1) * w]);
        }
        let dst = out.band_mut(b);
        for x in 0..w {
            for y in 0..h {
                col[y] = tmp[y * w + x];
            }
            mean_line(&col, n, &mut col_out);
            for y in 0..h {
                dst[y * w + x] = col_out[y];
            }
        }
    }
    Ok(out)
}

/// Keys cubic convolution parameter.
pub const KEYS_A: f64 = -0.5;

/// Keys cubic convolution kernel.
pub fn keys_kernel(x: f64) -> f64 {
    let a = KEYS_A;
    let t = x.abs();
    if t <= 1.0 {
        ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a
    } else {
        0.0
    }
}

/// Four taps `(index, weight)` for sampling at continuous source position
/// `s` on a line of `len` samples, indices clamped to the edge.
#[inline]
pub(crate) fn cubic_taps(s: f64, len: usize) -> [(usize, f64); 4] {
    let base = s.floor();
    let f = s - base;
    let base = base as isize;
    let hi = len as isize - 1;
    let mut taps = [(0usize, 0.0); 4];
    for (j, tap) in taps.iter_mut().enumerate() {
        let off = j as isize - 1;
        *tap = ((base + off).clamp(0, hi) as usize, keys_kernel(f - off as f64));
    }
    taps
}

/// Pixel-center mapping from an output grid of `out_len` to `in_len`.
#[inline]
pub fn source_coord(o: usize, in_len: usize, out_len: usize) -> f64 {
    (o as f64 + 0.5) * in_len as f64 / out_len as f64 - 0.5
}

/// Separable bicubic resampling to `target_w × target_h`.
pub fn bicubic_resample(r: &Raster, target_w: usize, target_h: usize) -> Result<Raster> {
    if target_w == 0 || target_h == 0 {
        return invalid("target dimensions must be at least 1");
    }
    let (w, h) = (r.width, r.height);
    let xt: Vec<_> = (0..target_w)
        .map(|o| cubic_taps(source_coord(o, w, target_w), w))
        .collect();
    let yt: Vec<_> = (0..target_h)
        .map(|o| cubic_taps(source_coord(o, h, target_h), h))
        .collect();
    let mut data = Vec::with_capacity(target_w * target_h * r.bands);
    let mut rows = vec![0.0; h * target_w];
    for b in 0..r.bands {
        let src = r.band(b);
        for y in 0..h {
            let line = &src[y * w..(y + 1) * w];
            for (ox, taps) in xt.iter().enumerate() {
                rows[y * target_w + ox] = taps.iter().map(|&(i, k)| k * line[i]).sum();
            }
        }
        for taps in &yt {
            for ox in 0..target_w {
                data.push(taps.iter().map(|&(i, k)| k * rows[i * target_w + ox]).sum());
            }
        }
    }
    let mut out = Raster::new(target_w, target_h, r.bands, data)?.with_meta_of(r);
    if let Some(g) = r.gsd {
        out.gsd = Some(g * w as f64 / target_w as f64);
    }
    Ok(out)
}

/// Bicubic sample of band `b` at continuous pixel position `(x, y)` where
/// integer coordinates are pixel centers; edge clamped.
pub fn sample_bicubic(r: &Raster, b: usize, x: f64, y: f64) -> f64 {
    let band = r.band(b);
    let xt = cubic_taps(x, r.width);
    let yt = cubic_taps(y, r.height);
    let mut acc = 0.0;
    for &(yi, ky) in &yt {
        let row = &band[yi * r.width..(yi + 1) * r.width];
        acc += ky * xt.iter().map(|&(xi, kx)| kx * row[xi]).sum::<f64>();
    }
    acc
}

/// Fixed-width histogram on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    /// Normalized cumulative counts; the last entry is 1.
    pub cdf: Vec<f64>,
}

impl Histogram {
    pub fn new(values: &[f64], bins: usize) -> Result<Self> {
        if bins < 2 {
            return invalid(format!("need at least 2 bins, got {bins}"));
        }
        if values.is_empty() {
            return invalid("histogram of no values");
        }
        let mut counts = vec![0u64; bins];
        for &v in values {
            counts[Self::bin_index(v, bins)] += 1;
        }
        let total = values.len() as f64;
        let mut acc = 0u64;
        let cdf = counts
            .iter()
            .map(|&c| {
                acc += c;
                acc as f64 / total
            })
            .collect();
        let bin_edges = (0..=bins).map(|i| i as f64 / bins as f64).collect();
        Ok(Self {
            bin_edges,
            counts,
            cdf,
        })
    }

    pub fn bin_count(&self) -> usize {
        self.counts.len()
    }

    /// Bin of `v`; values at 1.0 fall in the last bin and out-of-range
    /// values are clamped.
    pub fn bin_index(v: f64, bins: usize) -> usize {
        ((v * bins as f64).floor().max(0.0) as usize).min(bins - 1)
    }

    pub fn center(&self, k: usize) -> f64 {
        0.5 * (self.bin_edges[k] + self.bin_edges[k + 1])
    }

    /// Fraction of values `≤` the edge `bin_edges[k]` as represented by
    /// the histogram (that is, the cumulative count of bins below `k`).
    pub fn cdf_at_edge(&self, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.cdf[k - 1]
        }
    }
}

/// Piecewise-linear inverse of a reference histogram.
///
/// Each nonempty bin `k` owns the quantile range `(cdf_prev, cdf_k]`, where
/// `cdf_prev` is the cumulative mass of the bins below it, and maps it
/// linearly onto `(lower_edge_k, center_k]`. Quantiles therefore never
/// leave the bin that holds them, and the top quantile maps to the center
/// of the highest nonempty bin.
struct InverseCdf {
    /// `(cdf_prev, cdf_k, lower_edge_k, center_k)` per nonempty bin.
    segments: Vec<(f64, f64, f64, f64)>,
}

impl InverseCdf {
    fn new(h: &Histogram) -> Self {
        let segments = (0..h.bin_count())
            .filter(|&k| h.counts[k] > 0)
            .map(|k| (h.cdf_at_edge(k), h.cdf[k], h.bin_edges[k], h.center(k)))
            .collect();
        Self { segments }
    }

    fn eval(&self, q: f64) -> f64 {
        let s = &self.segments;
        let i = s.partition_point(|seg| seg.1 < q).min(s.len() - 1);
        let (c0, c1, v0, v1) = s[i];
        let t = ((q - c0) / (c1 - c0)).clamp(0.0, 1.0);
        v0 + t * (v1 - v0)
    }
}

/// Per-band `T(v) = CDF_ref⁻¹(CDF_src(v))`.
///
/// `CDF_src(v)` is the fraction of source pixels `≤ v` in that band; the
/// reference is represented by a `bins`-bin histogram (see [`InverseCdf`]).
/// A constant reference band maps every pixel to that constant.
pub fn histogram_match(source: &Raster, reference: &Raster, bins: usize) -> Result<Raster> {
    if source.bands != reference.bands {
        return shape(format!(
            "histogram match of {} bands against {}",
            source.bands, reference.bands
        ));
    }
    if bins < 2 {
        return invalid(format!("need at least 2 bins, got {bins}"));
    }
    let mut out = source.clone();
    for b in 0..source.bands {
        let rband = reference.band(b);
        let lo = rband.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = rband.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if lo == hi {
            out.band_mut(b).fill(lo.clamp(0.0, 1.0));
            continue;
        }
        let inverse = InverseCdf::new(&Histogram::new(rband, bins)?);
        let mut sorted = source.band(b).to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        for v in out.band_mut(b) {
            let rank = sorted.partition_point(|&s| s <= *v);
            *v = inverse.eval(rank as f64 / n).clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// `(row, col)` offsets of a regular patch grid, row-major, partial patches
/// dropped.
pub fn patch_origins(width: usize, height: usize, patch: usize, stride: usize) -> Vec<(usize, usize)> {
    if patch == 0 || stride == 0 || patch > width || patch > height {
        return Vec::new();
    }
    let rows = (height - patch) / stride + 1;
    let cols = (width - patch) / stride + 1;
    (0..rows)
        .flat_map(|i| (0..cols).map(move |j| (i * stride, j * stride)))
        .collect()
}

pub fn extract_patch_grid(r: &Raster, patch: usize, stride: usize) -> Result<Vec<(usize, usize, Raster)>> {
    if patch == 0 || patch > r.width.min(r.height) {
        return invalid(format!(
            "patch {patch} does not fit a {}x{} raster",
            r.width, r.height
        ));
    }
    if stride == 0 {
        return invalid("stride must be at least 1");
    }
    patch_origins(r.width, r.height, patch, stride)
        .into_iter()
        .map(|(row, col)| Ok((row, col, r.crop(col, row, patch, patch)?)))
        .collect()
}
