//! Procedural test corpus: textured "aerial" tiles and LR counterparts
//! made by a blur, downscale, radiometric shift, noise and quantization
//! chain.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::TilePairingEntry;
use crate::error::{invalid, IoContext, Result};
use crate::geo::GeoAnchor;
use crate::raster::{bicubic_resample, box_filter, BoxKernelSpec, Raster};
use crate::srras;

pub const CRS: &str = "EPSG:32633";

/// Fields, roads and soft relief in `[0, 1]`, 3 bands.
pub fn texture(width: usize, height: usize, seed: u64) -> Result<Raster> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_fields = rng.random_range(5..10);
    let fields: Vec<(f64, f64, [f64; 3], f64, f64)> = (0..n_fields)
        .map(|_| {
            let c = [
                rng.random_range(0.15..0.85),
                rng.random_range(0.15..0.85),
                rng.random_range(0.1..0.7),
            ];
            (
                rng.random_range(0.0..width as f64),
                rng.random_range(0.0..height as f64),
                c,
                rng.random_range(0.0..std::f64::consts::PI),
                rng.random_range(0.15..0.6),
            )
        })
        .collect();
    let roads: Vec<(f64, f64, f64)> = (0..rng.random_range(1..4))
        .map(|_| {
            (
                rng.random_range(0.0..std::f64::consts::PI),
                rng.random_range(0.0..width.max(height) as f64),
                rng.random_range(1.0..2.5),
            )
        })
        .collect();
    let relief: Vec<(f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.random_range(0.02..0.12),
                rng.random_range(0.02..0.12),
                rng.random_range(0.0..6.3),
            )
        })
        .collect();
    Raster::from_fn(width, height, 3, |b, y, x| {
        let (xf, yf) = (x as f64, y as f64);
        // nearest seed point picks the field (a Voronoi partition)
        let f = fields
            .iter()
            .min_by(|p, q| {
                let dp = (p.0 - xf).powi(2) + (p.1 - yf).powi(2);
                let dq = (q.0 - xf).powi(2) + (q.1 - yf).powi(2);
                dp.total_cmp(&dq)
            })
            .unwrap();
        // crop rows inside each field
        let along = xf * f.3.cos() + yf * f.3.sin();
        let mut v = f.2[b] + 0.08 * (along * f.4 * std::f64::consts::TAU / 2.0).sin();
        for r in &relief {
            v += 0.04 * (xf * r.0 + yf * r.1 + r.2).sin();
        }
        for &(th, off, half) in &roads {
            let d = (xf * th.cos() + yf * th.sin() - off).abs();
            if d < half {
                v = 0.75 + 0.05 * b as f64;
            }
        }
        v.clamp(0.0, 1.0)
    })
}

/// Separable Gaussian blur with edge replication.
pub fn gaussian_blur(r: &Raster, sigma: f64) -> Result<Raster> {
    if sigma == 0.0 {
        return Ok(r.clone());
    }
    if !(sigma > 0.0) {
        return invalid(format!("blur sigma must be non-negative, got {sigma}"));
    }
    let rad = (3.0 * sigma).ceil() as isize;
    let mut taps: Vec<f64> = (-rad..=rad).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);
    let (w, h) = (r.width() as isize, r.height() as isize);
    let pass = |src: &Raster, horizontal: bool| {
        Raster::from_fn(src.width(), src.height(), src.bands(), |b, y, x| {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let o = k as isize - rad;
                let (yy, xx) = if horizontal {
                    (y as isize, (x as isize + o).clamp(0, w - 1))
                } else {
                    ((y as isize + o).clamp(0, h - 1), x as isize)
                };
                acc += t * src.get(b, yy as usize, xx as usize);
            }
            acc
        })
    };
    let mut out = pass(&pass(r, true)?, false)?.with_bit_depth(r.bit_depth);
    out.gsd = r.gsd;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DegradationSpec {
    pub scale: usize,
    /// Gaussian blur in HR pixels before decimation.
    pub blur_sigma: f64,
    /// Per-band gain and offset applied after downscaling.
    pub gain: [f64; 3],
    pub offset: [f64; 3],
    pub noise_sigma: f64,
    pub bit_depth: u8,
}

impl Default for DegradationSpec {
    fn default() -> Self {
        Self {
            scale: 2,
            blur_sigma: 1.0,
            gain: [0.85, 0.9, 0.8],
            offset: [0.04, 0.03, 0.06],
            noise_sigma: 0.005,
            bit_depth: 12,
        }
    }
}

/// LR observation of a `[0, 1]` HR raster as raw `bit_depth` counts.
pub fn degrade(hr: &Raster, spec: &DegradationSpec, seed: u64) -> Result<Raster> {
    if spec.scale == 0 || hr.width() % spec.scale != 0 || hr.height() % spec.scale != 0 {
        return invalid(format!(
            "{}x{} is not divisible by scale {}",
            hr.width(),
            hr.height(),
            spec.scale
        ));
    }
    if hr.bands() > 3 {
        return invalid("degradation supports at most 3 bands");
    }
    let blurred = gaussian_blur(hr, spec.blur_sigma)?;
    let small = bicubic_resample(&blurred, hr.width() / spec.scale, hr.height() / spec.scale)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spec.noise_sigma.max(0.0)).map_err(|e| crate::Error::Invalid(e.to_string()))?;
    let max = ((1u32 << spec.bit_depth) - 1) as f64;
    let mut out = small.clone();
    for b in 0..out.bands() {
        let (g, o) = (spec.gain[b], spec.offset[b]);
        for v in out.band_mut(b) {
            let n = if spec.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            *v = ((g * *v + o + n).clamp(0.0, 1.0) * max).round();
        }
    }
    let mut out = out.with_bit_depth(spec.bit_depth);
    if let Some(g) = hr.gsd {
        out = out.with_gsd(g * spec.scale as f64)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSpec {
    pub tiles: usize,
    /// Tile side in pixels at the HR target resolution
    /// `hr_gsd · hr_oversample`.
    pub hr_side: usize,
    /// Pixel size of the stored HR source tile; the LR is made from the
    /// tile resampled to the target resolution.
    pub hr_gsd: f64,
    pub hr_oversample: usize,
    pub degradation: DegradationSpec,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            tiles: 4,
            hr_side: 64,
            hr_gsd: 5.0,
            hr_oversample: 1,
            degradation: DegradationSpec::default(),
        }
    }
}

/// Writes `tiles` HR/LR SRRAS tile pairs and `pairing.json` into `dir`.
pub fn write_corpus(dir: &Path, spec: &CorpusSpec, seed: u64) -> Result<Vec<TilePairingEntry>> {
    std::fs::create_dir_all(dir).at(dir)?;
    let scale = spec.degradation.scale;
    let os = spec.hr_oversample.max(1);
    let mut entries = Vec::new();
    for t in 0..spec.tiles {
        let aoi = format!("aoi{t:03}");
        let tile_seed = seed.wrapping_mul(1_000_003).wrapping_add(t as u64);
        let side = spec.hr_side * os;
        let truth = texture(side, side, tile_seed)?;
        // the LR sees the scene at the HR target resolution
        let at_target = if os > 1 {
            let k = BoxKernelSpec::new(odd(os))?;
            bicubic_resample(&box_filter(&truth, k)?, spec.hr_side, spec.hr_side)?
        } else {
            truth.clone()
        };
        let target_gsd = spec.hr_gsd * os as f64;
        let lr = degrade(&at_target.with_gsd(target_gsd)?, &spec.degradation, tile_seed ^ 0x5eed)?;
        let hr_counts = truth.map(|v| (v * 255.0).round()).with_bit_depth(8).with_gsd(spec.hr_gsd)?;
        // tiles sit side by side in the projected plane
        let (x0, y0) = (500_000.0 + t as f64 * 10_000.0, 5_200_000.0);
        let hr_anchor = GeoAnchor::new(x0, y0, spec.hr_gsd, -spec.hr_gsd, CRS)?;
        let lr_gsd = target_gsd * scale as f64;
        let lr_anchor = GeoAnchor::new(x0, y0, lr_gsd, -lr_gsd, CRS)?;
        let hr_name = format!("{aoi}_hr.json");
        let lr_name = format!("{aoi}_lr.json");
        srras::save(&dir.join(&hr_name), &hr_counts, Some(&hr_anchor))?;
        srras::save(&dir.join(&lr_name), &lr, Some(&lr_anchor))?;
        entries.push(TilePairingEntry {
            aoi_id: aoi,
            hr_path: hr_name.into(),
            lr_path: lr_name.into(),
            hr_capture_date: "2021-06-14".into(),
            lr_capture_date: format!("2021-06-{:02}", 10 + t % 15),
            notes: "synthetic".into(),
        });
    }
    let p = dir.join("pairing.json");
    std::fs::write(&p, serde_json::to_string_pretty(&entries)?).at(&p)?;
    Ok(entries)
}

fn odd(n: usize) -> usize {
    if n % 2 == 0 {
        n + 1
    } else {
        n
    }
}
