//! Image quality metrics: PSNR, Gaussian-windowed SSIM, feature-space LPIPS,
//! and mean/median aggregation.

use std::fmt::Write as _;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use srforge_nn::{Graph, Mode, ParamBuilder, ParamSet, Session, Tensor, Var};

use crate::error::{invalid, shape, Result};
use crate::raster::Raster;

fn check_same(a: &Raster, b: &Raster) -> Result<()> {
    if !a.same_shape(b) {
        return shape(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.width(),
            a.height(),
            a.bands(),
            b.width(),
            b.height(),
            b.bands()
        ));
    }
    Ok(())
}

/// `10·log10(MAX²/MSE)` over all pixels and bands; identical inputs give
/// `f64::INFINITY`.
pub fn psnr(a: &Raster, b: &Raster, max_value: f64) -> Result<f64> {
    check_same(a, b)?;
    if !(max_value > 0.0) {
        return invalid(format!("max value must be positive, got {max_value}"));
    }
    let n = a.data().len() as f64;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (max_value * max_value / mse).log10())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl SsimParams {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.window % 2 == 0 {
            return invalid(format!("SSIM window must be odd, got {}", self.window));
        }
        if !(self.k1 > 0.0 && self.k2 > 0.0 && self.sigma > 0.0 && self.dynamic_range > 0.0) {
            return invalid("SSIM constants must be positive");
        }
        Ok(())
    }

    /// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
    pub fn taps(&self) -> Vec<f64> {
        let half = (self.window / 2) as f64;
        let g: Vec<f64> = (0..self.window)
            .map(|i| {
                let d = i as f64 - half;
                (-d * d / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let s: f64 = g.iter().sum();
        g.into_iter().map(|v| v / s).collect()
    }
}

/// Valid-mode separable filtering of one plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let n = taps.len();
    let (ow, oh) = (w - n + 1, h - n + 1);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        let src = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&src[x..x + n]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut s = 0.0;
            for (k, t) in taps.iter().enumerate() {
                s += t * rows[(y + k) * ow + x];
            }
            out[y * ow + x] = s;
        }
    }
    out
}

/// Mean SSIM over all valid window positions, averaged over bands.
pub fn ssim(a: &Raster, b: &Raster, p: &SsimParams) -> Result<f64> {
    check_same(a, b)?;
    p.validate()?;
    let (w, h) = (a.width(), a.height());
    if w < p.window || h < p.window {
        return invalid(format!(
            "image {w}x{h} is smaller than the {n}x{n} SSIM window",
            n = p.window
        ));
    }
    let taps = p.taps();
    let c1 = (p.k1 * p.dynamic_range).powi(2);
    let c2 = (p.k2 * p.dynamic_range).powi(2);
    let mut total = 0.0;
    for band in 0..a.bands() {
        let (x, y) = (a.band(band), b.band(band));
        let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
            x.iter().zip(y).map(|(&u, &v)| f(u, v)).collect()
        };
        let mu_x = filter_valid(x, w, h, &taps);
        let mu_y = filter_valid(y, w, h, &taps);
        let xx = filter_valid(&prod(&|u, _| u * u), w, h, &taps);
        let yy = filter_valid(&prod(&|_, v| v * v), w, h, &taps);
        let xy = filter_valid(&prod(&|u, v| u * v), w, h, &taps);
        let mut s = 0.0;
        for i in 0..mu_x.len() {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let vx = xx[i] - mx * mx;
            let vy = yy[i] - my * my;
            let cxy = xy[i] - mx * my;
            s += ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
        total += s / mu_x.len() as f64;
    }
    Ok(total / a.bands() as f64)
}

/// A fixed network whose intermediate activations define a perceptual
/// distance. Returned maps are NCHW.
pub trait FeatureExtractor {
    fn tap_names(&self) -> Vec<String>;
    /// One weight per tap.
    fn tap_weights(&self) -> Vec<f64>;
    fn extract<'g>(&self, g: &'g Graph, x: Var<'g>) -> Result<Vec<Var<'g>>>;
}

/// Five stride-2 3×3 conv stages with leaky ReLU, tapped after each stage.
#[derive(Debug, Clone)]
pub struct CompactExtractor {
    params: ParamSet,
    channels: Vec<usize>,
}

impl CompactExtractor {
    pub const CHANNELS: [usize; 5] = [16, 32, 64, 128, 128];
    pub const DEFAULT_SEED: u64 = 0x4c50_4950;

    pub fn seeded(in_channels: usize, seed: u64) -> Result<Self> {
        let mut b = ParamBuilder::new(seed);
        let mut cin = in_channels;
        for (i, &c) in Self::CHANNELS.iter().enumerate() {
            b.conv(&format!("stage{}", i + 1), cin, c, 3, true)?;
            cin = c;
        }
        Ok(Self {
            params: b.finish(),
            channels: Self::CHANNELS.to_vec(),
        })
    }

    /// Weights loaded from SRWT, e.g. an externally trained backbone.
    pub fn from_params(params: ParamSet) -> Result<Self> {
        let mut channels = Vec::new();
        for i in 1.. {
            let name = format!("stage{i}.weight");
            if !params.contains(&name) {
                break;
            }
            channels.push(params.tensor(&name)?.shape()[0]);
        }
        if channels.is_empty() {
            return invalid("extractor weights contain no stage1.weight");
        }
        Ok(Self { params, channels })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }
}

impl FeatureExtractor for CompactExtractor {
    fn tap_names(&self) -> Vec<String> {
        (1..=self.channels.len()).map(|i| format!("stage{i}")).collect()
    }

    fn tap_weights(&self) -> Vec<f64> {
        vec![1.0; self.channels.len()]
    }

    fn extract<'g>(&self, g: &'g Graph, x: Var<'g>) -> Result<Vec<Var<'g>>> {
        let s = Session::frozen(g, &self.params, Mode::Eval);
        // inputs in [0,1] are shifted to [-1,1]
        let mut h = x.scale(2.0).add_scalar(-1.0);
        let mut taps = Vec::with_capacity(self.channels.len());
        for name in self.tap_names() {
            h = s.conv2d(&h, &name, 2, 1)?.leaky_relu(0.2);
            taps.push(h);
        }
        Ok(taps)
    }
}

/// Divides each pixel's feature vector by its channel norm.
fn unit_normalize(t: &Tensor) -> Result<Vec<f64>> {
    let (n, c, h, w) = t.dims4()?;
    let plane = h * w;
    let mut out = t.data().to_vec();
    for item in 0..n {
        let base = item * c * plane;
        for p in 0..plane {
            let norm = (0..c)
                .map(|ch| out[base + ch * plane + p].powi(2))
                .sum::<f64>()
                .sqrt();
            for ch in 0..c {
                out[base + ch * plane + p] /= norm + 1e-10;
            }
        }
    }
    Ok(out)
}

/// Weighted sum over taps of the mean squared difference between
/// channel-normalized feature maps.
pub fn lpips(a: &Raster, b: &Raster, extractor: &dyn FeatureExtractor) -> Result<f64> {
    check_same(a, b)?;
    let weights = extractor.tap_weights();
    if weights.is_empty() {
        return invalid("feature extractor has no taps");
    }
    let g = Graph::new();
    let fa = extractor.extract(&g, g.input(a.to_tensor()))?;
    let fb = extractor.extract(&g, g.input(b.to_tensor()))?;
    if fa.len() != weights.len() || fb.len() != weights.len() {
        return invalid("extractor returned a different number of taps than weights");
    }
    let mut d = 0.0;
    for ((u, v), wl) in fa.iter().zip(&fb).zip(&weights) {
        let (nu, nv) = (unit_normalize(&u.value())?, unit_normalize(&v.value())?);
        let mse = nu.iter().zip(&nv).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / nu.len() as f64;
        d += wl * mse;
    }
    Ok(d)
}

fn ser_db<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() && *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

fn de_db<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Db {
        Num(f64),
        Str(String),
    }
    match Db::deserialize(d)? {
        Db::Num(v) => Ok(v),
        Db::Str(s) if s == "inf" => Ok(f64::INFINITY),
        Db::Str(s) => Err(serde::de::Error::custom(format!("bad dB value `{s}`"))),
    }
}

pub fn format_db(v: f64) -> String {
    if v.is_infinite() && v > 0.0 {
        "inf".to_string()
    } else {
        format!("{v:.4}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemMetrics {
    pub item_id: String,
    #[serde(serialize_with = "ser_db", deserialize_with = "de_db")]
    pub psnr: f64,
    pub ssim: f64,
    pub lpips: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    #[serde(serialize_with = "ser_db", deserialize_with = "de_db")]
    pub mean: f64,
    #[serde(serialize_with = "ser_db", deserialize_with = "de_db")]
    pub median: f64,
    /// Items the statistics were computed over.
    pub count: usize,
    /// Items left out because their value was infinite.
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub psnr: Summary,
    pub ssim: Summary,
    pub lpips: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_item: Vec<ItemMetrics>,
    pub aggregates: Aggregates,
}

/// Mean and median; even counts use the mean of the middle pair.
/// Infinite values are excluded from both and counted.
pub fn summarize(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return invalid("cannot summarize an empty list");
    }
    if values.iter().any(|v| v.is_nan()) {
        return invalid("metric values contain NaN");
    }
    let mut finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let excluded = values.len() - finite.len();
    if finite.is_empty() {
        // every item was a perfect reconstruction
        return Ok(Summary {
            mean: f64::INFINITY,
            median: f64::INFINITY,
            count: 0,
            excluded,
        });
    }
    finite.sort_by(f64::total_cmp);
    let n = finite.len();
    let mean = finite.iter().sum::<f64>() / n as f64;
    let median = if n % 2 == 1 {
        finite[n / 2]
    } else {
        0.5 * (finite[n / 2 - 1] + finite[n / 2])
    };
    Ok(Summary {
        mean,
        median,
        count: n,
        excluded,
    })
}

pub fn aggregate(items: Vec<ItemMetrics>) -> Result<MetricReport> {
    if items.is_empty() {
        return invalid("no items to aggregate");
    }
    let col = |f: fn(&ItemMetrics) -> f64| items.iter().map(f).collect::<Vec<_>>();
    let aggregates = Aggregates {
        psnr: summarize(&col(|m| m.psnr))?,
        ssim: summarize(&col(|m| m.ssim))?,
        lpips: summarize(&col(|m| m.lpips))?,
    };
    Ok(MetricReport {
        per_item: items,
        aggregates,
    })
}

impl MetricReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("item_id,psnr,ssim,lpips\n");
        for m in &self.per_item {
            let _ = writeln!(s, "{},{},{:.6},{:.6}", m.item_id, format_db(m.psnr), m.ssim, m.lpips);
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
