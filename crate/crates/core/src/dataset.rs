//! Paired-dataset factory: tile pairing, HR preprocessing, spectral
//! adjustment, patch pairing, quality filtering, splitting and manifests.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, IoContext, Result, StageContext};
use crate::geo::{intersect_and_crop, GeoAnchor, GeoRaster};
use crate::metrics::{psnr, ssim, SsimParams};
use crate::raster::{
    bicubic_resample, box_filter, histogram_match, normalize, patch_origins, BoxKernelSpec, NormalizeMode, Raster,
};
use crate::srras;
use crate::train::Sample;

const DATE_FORMAT: &str = "%Y-%m-%d";

/// One area of interest with its HR and LR source tiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TilePairingEntry {
    pub aoi_id: String,
    pub hr_path: PathBuf,
    pub lr_path: PathBuf,
    /// `YYYY-MM-DD`
    pub hr_capture_date: String,
    pub lr_capture_date: String,
    /// Manual temporal-alignment remarks.
    #[serde(default)]
    pub notes: String,
}

impl TilePairingEntry {
    pub fn dates(&self) -> Result<(NaiveDate, NaiveDate)> {
        let parse = |s: &str, what: &str| {
            NaiveDate::parse_from_str(s, DATE_FORMAT)
                .map_err(|e| Error::Format(format!("{}: {what} capture date {s:?}: {e}", self.aoi_id)))
        };
        Ok((
            parse(&self.hr_capture_date, "HR")?,
            parse(&self.lr_capture_date, "LR")?,
        ))
    }

    /// `|hr_date − lr_date|` in days.
    pub fn date_difference_days(&self) -> Result<i64> {
        let (h, l) = self.dates()?;
        Ok((h - l).num_days().abs())
    }
}

/// Reads a JSON list of pairing entries; relative tile paths are resolved
/// against the file's directory.
pub fn read_pairing_file(path: &Path) -> Result<Vec<TilePairingEntry>> {
    let text = std::fs::read_to_string(path).at(path)?;
    let mut entries: Vec<TilePairingEntry> =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    for e in &mut entries {
        e.dates()?;
        if e.hr_path.is_relative() {
            e.hr_path = base.join(&e.hr_path);
        }
        if e.lr_path.is_relative() {
            e.lr_path = base.join(&e.lr_path);
        }
    }
    Ok(entries)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// HR pixel size after preprocessing, in metres.
    pub hr_target_gsd: f64,
    pub scale: usize,
    pub lr_patch: usize,
    pub lr_stride: usize,
    pub bins: usize,
    pub ssim_min: f64,
    pub psnr_min: f64,
    /// Train, validation and test fractions.
    pub fractions: [f64; 3],
    pub normalize: NormalizeMode,
    pub ssim: SsimParams,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            hr_target_gsd: 5.0,
            scale: 2,
            lr_patch: 96,
            lr_stride: 96,
            bins: 256,
            ssim_min: 0.45,
            psnr_min: 21.0,
            fractions: [1500.0 / 2082.0, 374.0 / 2082.0, 208.0 / 2082.0],
            normalize: NormalizeMode::FixedRange,
            ssim: SsimParams::default(),
        }
    }
}

impl DatasetConfig {
    pub fn hr_patch(&self) -> usize {
        self.lr_patch * self.scale
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if !(self.hr_target_gsd > 0.0) {
            return err(format!("hr_target_gsd must be positive, got {}", self.hr_target_gsd));
        }
        if self.scale < 1 || self.lr_patch == 0 || self.lr_stride == 0 {
            return err("scale, lr_patch and lr_stride must be positive".into());
        }
        if self.hr_patch() < self.ssim.window {
            return err(format!(
                "HR patch {} is smaller than the SSIM window {}",
                self.hr_patch(),
                self.ssim.window
            ));
        }
        check_fractions(&self.fractions)?;
        self.ssim.validate()
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> Result<String> {
        Ok(srras::sha256_hex(serde_json::to_string(self)?.as_bytes()))
    }
}

fn check_fractions(f: &[f64; 3]) -> Result<()> {
    let tol = 1e-9;
    if f.iter().any(|&v| !(-tol..=1.0 + tol).contains(&v)) || (f.iter().sum::<f64>() - 1.0).abs() > tol {
        return Err(Error::Config(format!("split fractions {f:?} must be in [0, 1] and sum to 1")));
    }
    Ok(())
}

/// A loaded tile: the raster, its anchor if any, and the payload checksum.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub raster: Raster,
    pub anchor: Option<GeoAnchor>,
    pub sha256: String,
}

/// Optional sidecar next to a PNG: `tile.png` → `tile.geo.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PngSidecar {
    pub geo: Option<GeoAnchor>,
    pub gsd_m: Option<f64>,
}

pub fn png_sidecar_path(png: &Path) -> PathBuf {
    png.with_extension("geo.json")
}

/// Loads an SRRAS sidecar (`.json`) or an 8-bit PNG with optional
/// `.geo.json` sidecar.
pub fn ingest(path: &Path) -> Result<Ingested> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    match ext.as_str() {
        "json" => {
            let l = srras::load(path)?;
            Ok(Ingested {
                raster: l.raster,
                anchor: l.geo,
                sha256: l.sha256,
            })
        }
        "png" => {
            let bytes = std::fs::read(path).at(path)?;
            let mut raster = srras::import_png(path)?;
            // PNG values are already in [0, 1]; keep raw 8-bit counts so
            // normalization treats both formats alike
            raster = raster.map(|v| (v * 255.0).round()).with_bit_depth(8);
            let side = png_sidecar_path(path);
            let mut anchor = None;
            if side.exists() {
                let text = std::fs::read_to_string(&side).at(&side)?;
                let meta: PngSidecar =
                    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", side.display())))?;
                if let Some(g) = &meta.geo {
                    g.validate()?;
                }
                if let Some(gsd) = meta.gsd_m.or(meta.geo.as_ref().map(GeoAnchor::gsd)) {
                    raster = raster.with_gsd(gsd)?;
                }
                anchor = meta.geo;
            }
            Ok(Ingested {
                raster,
                anchor,
                sha256: srras::sha256_hex(&bytes),
            })
        }
        _ => Err(Error::Format(format!(
            "{}: expected an SRRAS .json sidecar or a .png",
            path.display()
        ))),
    }
}

/// Box side for a downscale ratio: the nearest odd integer, ties upward.
/// The second value is a warning when the ratio is not already an odd
/// integer.
pub fn box_kernel_for_ratio(ratio: f64) -> Result<(BoxKernelSpec, Option<String>)> {
    if !(ratio >= 1.0) || !ratio.is_finite() {
        return invalid(format!("downscale ratio must be at least 1, got {ratio}"));
    }
    let k = ((ratio - 1.0) / 2.0 + 0.5).floor() as usize;
    let n = 2 * k + 1;
    let warning = ((ratio - n as f64).abs() > 1e-9)
        .then(|| format!("gsd ratio {ratio} is not an odd integer; using a {n}x{n} box kernel"));
    Ok((BoxKernelSpec::new(n)?, warning))
}

/// HR raster resampled to `target_gsd` with its anchor, plus a kernel
/// warning if one was raised.
#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub raster: Raster,
    pub anchor: Option<GeoAnchor>,
    pub kernel: BoxKernelSpec,
    pub warning: Option<String>,
}

/// Mean filter with `n ≈ target/source`, then bicubic downscale onto the
/// target grid.
pub fn preprocess_hr(hr: &Raster, anchor: Option<&GeoAnchor>, target_gsd: f64) -> Result<Preprocessed> {
    let source = hr
        .gsd
        .or(anchor.map(GeoAnchor::gsd))
        .ok_or_else(|| Error::Invalid("HR raster has no gsd".into()))?;
    let ratio = target_gsd / source;
    let (kernel, warning) = box_kernel_for_ratio(ratio)?;
    let filtered = if kernel.n > 1 { box_filter(hr, kernel)? } else { hr.clone() };
    let w = ((hr.width() as f64 / ratio).round() as usize).max(1);
    let h = ((hr.height() as f64 / ratio).round() as usize).max(1);
    let raster = bicubic_resample(&filtered, w, h)?.with_gsd(target_gsd)?;
    let anchor = anchor.map(|a| GeoAnchor {
        pixel_size_x: a.pixel_size_x * hr.width() as f64 / w as f64,
        pixel_size_y: a.pixel_size_y * hr.height() as f64 / h as f64,
        ..a.clone()
    });
    Ok(Preprocessed {
        raster,
        anchor,
        kernel,
        warning,
    })
}

/// Per-band histogram matching of the LR target toward the HR reference.
pub fn spectral_adjust(lr: &Raster, hr_ref: &Raster, bins: usize) -> Result<Raster> {
    histogram_match(lr, hr_ref, bins)
}

/// Co-registered LR/HR patches with their quality scores.
#[derive(Debug, Clone)]
pub struct PatchPair {
    pub pair_id: String,
    pub aoi_id: String,
    pub lr_patch: Raster,
    pub hr_patch: Raster,
    pub lr_anchor: GeoAnchor,
    pub hr_anchor: GeoAnchor,
    /// `(row, col)` in the LR and HR tiles.
    pub lr_origin: (usize, usize),
    pub hr_origin: (usize, usize),
    pub ssim: f64,
    pub psnr: f64,
}

/// Bicubic ×scale upscaling of an LR raster.
pub fn bicubic_upscale(lr: &Raster, scale: usize) -> Result<Raster> {
    bicubic_resample(lr, lr.width() * scale, lr.height() * scale)
}

/// Quality scores of the no-model baseline: bicubic-upscaled LR vs HR.
pub fn score_pair(lr: &Raster, hr: &Raster, scale: usize, p: &SsimParams) -> Result<(f64, f64)> {
    let up = bicubic_upscale(lr, scale)?;
    Ok((ssim(&up, hr, p)?, psnr(&up, hr, 1.0)?))
}

/// Cuts matching patch grids from registered tiles; HR patch origins are
/// derived from each LR patch's world position.
pub fn make_pairs(aoi_id: &str, hr: &GeoRaster, lr: &GeoRaster, cfg: &DatasetConfig) -> Result<Vec<PatchPair>> {
    cfg.validate()?;
    if hr.anchor.crs_id != lr.anchor.crs_id {
        return invalid(format!("CRS differ: {} vs {}", hr.anchor.crs_id, lr.anchor.crs_id));
    }
    if hr.raster.bands() != lr.raster.bands() {
        return invalid("HR and LR band counts differ");
    }
    let s = cfg.scale as f64;
    let rx = lr.anchor.pixel_size_x / hr.anchor.pixel_size_x;
    let ry = lr.anchor.pixel_size_y / hr.anchor.pixel_size_y;
    if (rx - s).abs() > 1e-6 * s || (ry - s).abs() > 1e-6 * s {
        return invalid(format!("grid mismatch: pixel size ratio ({rx}, {ry}) is not {s}"));
    }
    let (lp, hp) = (cfg.lr_patch, cfg.hr_patch());
    let mut out = Vec::new();
    for (row, col) in patch_origins(lr.raster.width(), lr.raster.height(), lp, cfg.lr_stride) {
        let (wx, wy) = lr.anchor.to_world(col as f64, row as f64);
        let (hx, hy) = hr.anchor.to_pixel(wx, wy);
        let (hc, hrow) = (hx.round(), hy.round());
        if (hx - hc).abs() > 1e-6 || (hy - hrow).abs() > 1e-6 {
            return invalid(format!("grid mismatch: LR patch ({row}, {col}) lands at HR ({hy}, {hx})"));
        }
        if hc < 0.0 || hrow < 0.0 {
            continue;
        }
        let (hc, hrow) = (hc as usize, hrow as usize);
        if hc + hp > hr.raster.width() || hrow + hp > hr.raster.height() {
            continue;
        }
        let lr_patch = lr.raster.crop(col, row, lp, lp)?;
        let hr_patch = hr.raster.crop(hc, hrow, hp, hp)?;
        let (q_ssim, q_psnr) = score_pair(&lr_patch, &hr_patch, cfg.scale, &cfg.ssim)?;
        out.push(PatchPair {
            pair_id: format!("{aoi_id}_r{row:05}_c{col:05}"),
            aoi_id: aoi_id.to_string(),
            lr_anchor: lr.anchor.offset(col, row),
            hr_anchor: hr.anchor.offset(hc, hrow),
            lr_patch,
            hr_patch,
            lr_origin: (row, col),
            hr_origin: (hrow, hc),
            ssim: q_ssim,
            psnr: q_psnr,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityThresholds {
    pub ssim_min: f64,
    pub psnr_min: f64,
}

impl Default for QualityThresholds {
    fn default() -> Self {
        Self {
            ssim_min: 0.45,
            psnr_min: 21.0,
        }
    }
}

impl QualityThresholds {
    /// Values at the threshold are kept; only strictly lower ones fail.
    pub fn accepts(&self, ssim: f64, psnr: f64) -> bool {
        ssim >= self.ssim_min && psnr >= self.psnr_min
    }
}

/// `(kept, rejected)`, both in input order.
pub fn quality_filter(pairs: Vec<PatchPair>, t: &QualityThresholds) -> (Vec<PatchPair>, Vec<PatchPair>) {
    pairs.into_iter().partition(|p| t.accepts(p.ssim, p.psnr))
}

/// Largest-remainder apportionment of `n` items; ties favor earlier splits.
pub fn split_counts(n: usize, fractions: &[f64; 3]) -> Result<[usize; 3]> {
    check_fractions(fractions)?;
    let exact: Vec<f64> = fractions.iter().map(|f| f.max(0.0) * n as f64).collect();
    let mut counts = [0usize; 3];
    for (c, e) in counts.iter_mut().zip(&exact) {
        *c = e.floor() as usize;
    }
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut left = n - counts.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if fractions[i] > 0.0 {
            counts[i] += 1;
            left -= 1;
        }
    }
    Ok(counts)
}

pub const SPLIT_NAMES: [&str; 3] = ["train", "val", "test"];

/// Seeded shuffle of item indices, cut into train/val/test.
pub fn split_indices(n: usize, fractions: &[f64; 3], seed: u64) -> Result<[Vec<usize>; 3]> {
    if n == 0 {
        return invalid("nothing to split");
    }
    let counts = split_counts(n, fractions)?;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let train = idx[..counts[0]].to_vec();
    let val = idx[counts[0]..counts[0] + counts[1]].to_vec();
    let test = idx[counts[0] + counts[1]..].to_vec();
    Ok([train, val, test])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub pair_id: String,
    pub aoi_id: String,
    /// Paths relative to the dataset root.
    pub lr_path: String,
    pub hr_path: String,
    pub lr_sha256: String,
    pub hr_sha256: String,
    pub ssim: f64,
    pub psnr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub split: String,
    pub seed: u64,
    pub config_hash: String,
    pub lr_patch: usize,
    pub hr_patch: usize,
    pub pairs: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Loads every pair; `root` is the directory holding the manifest.
    pub fn load_samples(&self, root: &Path) -> Result<Vec<Sample>> {
        self.pairs
            .iter()
            .map(|p| {
                Ok(Sample {
                    id: p.pair_id.clone(),
                    lr: srras::load(&root.join(&p.lr_path))?.raster,
                    hr: srras::load(&root.join(&p.hr_path))?.raster,
                })
            })
            .collect()
    }
}

/// Loads the manifest at `path` and its samples.
pub fn load_split(path: &Path) -> Result<(DatasetManifest, Vec<Sample>)> {
    let m = DatasetManifest::read(path)?;
    let samples = m.load_samples(path.parent().unwrap_or(Path::new(".")))?;
    Ok((m, samples))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileSummary {
    pub aoi_id: String,
    pub date_difference_days: i64,
    pub box_kernel: usize,
    pub pairs: usize,
    pub rejected: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub warning: Option<String>,
    pub hr_sha256: String,
    pub lr_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildSummary {
    pub seed: u64,
    pub config_hash: String,
    pub total_pairs: usize,
    pub rejected: usize,
    pub retained: usize,
    /// Train, validation, test.
    pub split_counts: [usize; 3],
    pub lr_patch: usize,
    pub hr_patch: usize,
    pub tiles: Vec<TileSummary>,
}

impl BuildSummary {
    /// Counts per split in the layout of a dataset statistics table.
    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<12}{:>8}   LR {}x{} px   HR {}x{} px\n",
            "split", "pairs", self.lr_patch, self.lr_patch, self.hr_patch, self.hr_patch
        );
        for (name, n) in ["Train", "Validation", "Test"].iter().zip(self.split_counts) {
            s.push_str(&format!("{name:<12}{n:>8}\n"));
        }
        s.push_str(&format!("{:<12}{:>8}\n", "Total", self.retained));
        s.push_str(&format!(
            "{:<12}{:>8}   (of {} extracted)\n",
            "Rejected", self.rejected, self.total_pairs
        ));
        s
    }
}

/// Ingests, normalizes, resamples, registers and spectrally adjusts one
/// tile pair; returns the HR and LR grids ready for pairing.
pub fn prepare_tile(entry: &TilePairingEntry, cfg: &DatasetConfig) -> Result<(GeoRaster, GeoRaster, TileSummary)> {
    let days = entry.date_difference_days().stage("ingest")?;
    let hr = ingest(&entry.hr_path).stage("ingest")?;
    let lr = ingest(&entry.lr_path).stage("ingest")?;
    let need_anchor = |i: &Ingested, what: &str| {
        i.anchor
            .clone()
            .ok_or_else(|| Error::Invalid(format!("{}: {what} tile has no georeference", entry.aoi_id)))
    };
    let hr_anchor = need_anchor(&hr, "HR").stage("ingest")?;
    let lr_anchor = need_anchor(&lr, "LR").stage("ingest")?;
    if hr.raster.bands() != lr.raster.bands() {
        return Err(Error::Shape(format!(
            "{}: HR has {} bands, LR {}",
            entry.aoi_id,
            hr.raster.bands(),
            lr.raster.bands()
        )))
        .stage("ingest");
    }
    let hr_norm = normalize(&hr.raster, cfg.normalize).stage("normalize")?.raster;
    let lr_norm = normalize(&lr.raster, cfg.normalize).stage("normalize")?.raster;
    let pre = preprocess_hr(&hr_norm, Some(&hr_anchor), cfg.hr_target_gsd).stage("preprocess")?;
    let hr_geo = GeoRaster {
        raster: pre.raster,
        anchor: pre.anchor.expect("anchor was given"),
    };
    let lr_geo = GeoRaster {
        raster: lr_norm,
        anchor: lr_anchor,
    };
    let (hr_c, lr_c) = intersect_and_crop(&hr_geo, &lr_geo).stage("register")?;
    let adjusted = spectral_adjust(&lr_c.raster, &hr_c.raster, cfg.bins).stage("spectral")?;
    let summary = TileSummary {
        aoi_id: entry.aoi_id.clone(),
        date_difference_days: days,
        box_kernel: pre.kernel.n,
        pairs: 0,
        rejected: 0,
        warning: pre.warning,
        hr_sha256: hr.sha256,
        lr_sha256: lr.sha256,
    };
    Ok((
        hr_c,
        GeoRaster {
            raster: adjusted,
            anchor: lr_c.anchor,
        },
        summary,
    ))
}

/// Runs the whole factory and writes patches, per-split manifests,
/// `rejected.json` and `summary.json` under `out_dir`.
pub fn build_dataset(
    entries: &[TilePairingEntry],
    out_dir: &Path,
    cfg: &DatasetConfig,
    seed: u64,
) -> Result<BuildSummary> {
    cfg.validate().stage("config")?;
    if entries.is_empty() {
        return Err(Error::Invalid("pairing file has no entries".into())).stage("ingest");
    }
    let thresholds = QualityThresholds {
        ssim_min: cfg.ssim_min,
        psnr_min: cfg.psnr_min,
    };
    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    let mut tiles = Vec::new();
    for e in entries {
        let (hr, lr, mut summary) = prepare_tile(e, cfg)?;
        let pairs = make_pairs(&e.aoi_id, &hr, &lr, cfg).stage("pair")?;
        let (k, r) = quality_filter(pairs, &thresholds);
        summary.pairs = k.len();
        summary.rejected = r.len();
        kept.extend(k);
        rejected.extend(r);
        tiles.push(summary);
    }
    let config_hash = cfg.hash().stage("config")?;
    let parts = split_indices(kept.len(), &cfg.fractions, seed).stage("split")?;
    std::fs::create_dir_all(out_dir).at(out_dir).stage("write")?;
    let mut split_counts = [0usize; 3];
    for (si, idx) in parts.iter().enumerate() {
        let name = SPLIT_NAMES[si];
        let dir = out_dir.join(name);
        std::fs::create_dir_all(&dir).at(&dir).stage("write")?;
        let mut sorted = idx.clone();
        sorted.sort_unstable();
        let mut entries = Vec::with_capacity(sorted.len());
        for &i in &sorted {
            let p = &kept[i];
            let lr_rel = format!("{name}/{}_lr.json", p.pair_id);
            let hr_rel = format!("{name}/{}_hr.json", p.pair_id);
            let lr_sha = srras::save(&out_dir.join(&lr_rel), &p.lr_patch, Some(&p.lr_anchor)).stage("write")?;
            let hr_sha = srras::save(&out_dir.join(&hr_rel), &p.hr_patch, Some(&p.hr_anchor)).stage("write")?;
            entries.push(ManifestEntry {
                pair_id: p.pair_id.clone(),
                aoi_id: p.aoi_id.clone(),
                lr_path: lr_rel,
                hr_path: hr_rel,
                lr_sha256: lr_sha,
                hr_sha256: hr_sha,
                ssim: p.ssim,
                psnr: p.psnr,
            });
        }
        split_counts[si] = entries.len();
        let m = DatasetManifest {
            split: name.to_string(),
            seed,
            config_hash: config_hash.clone(),
            lr_patch: cfg.lr_patch,
            hr_patch: cfg.hr_patch(),
            pairs: entries,
        };
        let path = out_dir.join(format!("{name}.json"));
        std::fs::write(&path, m.to_json().stage("write")?).at(&path).stage("write")?;
    }
    let rej: Vec<serde_json::Value> = rejected
        .iter()
        .map(|p| serde_json::json!({"pair_id": p.pair_id, "ssim": p.ssim, "psnr": p.psnr}))
        .collect();
    let path = out_dir.join("rejected.json");
    std::fs::write(&path, serde_json::to_string_pretty(&rej).stage("write")?)
        .at(&path)
        .stage("write")?;
    let summary = BuildSummary {
        seed,
        config_hash,
        total_pairs: kept.len() + rejected.len(),
        rejected: rejected.len(),
        retained: kept.len(),
        split_counts,
        lr_patch: cfg.lr_patch,
        hr_patch: cfg.hr_patch(),
        tiles,
    };
    let path = out_dir.join("summary.json");
    std::fs::write(&path, serde_json::to_string_pretty(&summary).stage("write")?)
        .at(&path)
        .stage("write")?;
    Ok(summary)
}
