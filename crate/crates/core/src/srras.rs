//! `SRRAS v1` raster container and 8-bit PNG import/export.
//!
//! A container is a JSON sidecar plus a raw payload of little-endian `f32`
//! values, band-sequential and row-major. Values are held as `f64` in
//! memory, so saving rounds to single precision.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, IoContext, Result};
use crate::geo::GeoAnchor;
use crate::raster::Raster;

pub const DTYPE: &str = "f32";
pub const BYTE_ORDER: &str = "LE";
pub const LAYOUT: &str = "band-sequential row-major";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub format: String,
    pub width: usize,
    pub height: usize,
    pub bands: usize,
    pub gsd_m: Option<f64>,
    pub bit_depth: u8,
    pub dtype: String,
    pub byte_order: String,
    pub layout: String,
    /// Payload file name, relative to the sidecar's directory.
    pub payload: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geo: Option<GeoAnchor>,
}

/// Payload path next to a sidecar: `tile.json` → `tile.f32`.
pub fn payload_path(sidecar: &Path) -> PathBuf {
    sidecar.with_extension("f32")
}

pub fn encode_payload(r: &Raster) -> Vec<u8> {
    let mut buf = Vec::with_capacity(r.data().len() * 4);
    for &v in r.data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    buf
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes sidecar and payload; returns the payload's SHA-256.
pub fn save(sidecar_path: &Path, r: &Raster, geo: Option<&GeoAnchor>) -> Result<String> {
    let payload = payload_path(sidecar_path);
    let name = payload
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::Invalid(format!("bad sidecar path {}", sidecar_path.display())))?
        .to_string();
    let meta = Sidecar {
        format: "SRRAS v1".into(),
        width: r.width(),
        height: r.height(),
        bands: r.bands(),
        gsd_m: r.gsd,
        bit_depth: r.bit_depth,
        dtype: DTYPE.into(),
        byte_order: BYTE_ORDER.into(),
        layout: LAYOUT.into(),
        payload: name,
        geo: geo.cloned(),
    };
    let bytes = encode_payload(r);
    fs::write(&payload, &bytes).at(&payload)?;
    let json = serde_json::to_string_pretty(&meta)?;
    fs::write(sidecar_path, json + "\n").at(sidecar_path)?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Clone)]
pub struct Loaded {
    pub raster: Raster,
    pub geo: Option<GeoAnchor>,
    pub sha256: String,
}

pub fn load(sidecar_path: &Path) -> Result<Loaded> {
    let text = fs::read_to_string(sidecar_path).at(sidecar_path)?;
    let meta: Sidecar = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", sidecar_path.display())))?;
    if meta.format != "SRRAS v1" || meta.dtype != DTYPE || meta.byte_order != BYTE_ORDER || meta.layout != LAYOUT {
        return Err(Error::Format(format!(
            "{}: unsupported container ({}, {}, {}, {})",
            sidecar_path.display(),
            meta.format,
            meta.dtype,
            meta.byte_order,
            meta.layout
        )));
    }
    let dir = sidecar_path.parent().unwrap_or(Path::new("."));
    let payload = dir.join(&meta.payload);
    let bytes = fs::read(&payload).at(&payload)?;
    let expected = meta.width * meta.height * meta.bands * 4;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "{}: payload has {} bytes, sidecar implies {expected}",
            payload.display(),
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let mut raster = Raster::new(meta.width, meta.height, meta.bands, data)?.with_bit_depth(meta.bit_depth);
    if let Some(g) = meta.gsd_m {
        raster = raster.with_gsd(g)?;
    }
    if let Some(geo) = &meta.geo {
        geo.validate()?;
    }
    Ok(Loaded {
        raster,
        geo: meta.geo,
        sha256: sha256_hex(&bytes),
    })
}

/// 8-bit gray or RGB PNG as values `k / 255`.
pub fn import_png(path: &Path) -> Result<Raster> {
    let img = image::open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raster = if img.color().has_color() {
        let rgb = img.to_rgb8();
        Raster::from_fn(w, h, 3, |b, y, x| rgb.get_pixel(x as u32, y as u32)[b] as f64 / 255.0)?
    } else {
        let g = img.to_luma8();
        Raster::from_fn(w, h, 1, |_, y, x| g.get_pixel(x as u32, y as u32)[0] as f64 / 255.0)?
    };
    Ok(raster.with_bit_depth(8))
}

/// Quantizes `[0, 1]` values to 8 bits; 1 band is written as gray, 3 as RGB.
pub fn to_rgb8(r: &Raster) -> Result<image::RgbImage> {
    let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let (w, h) = (r.width() as u32, r.height() as u32);
    match r.bands() {
        1 | 3 => Ok(image::RgbImage::from_fn(w, h, |x, y| {
            let px = |b: usize| q(r.get(b.min(r.bands() - 1), y as usize, x as usize));
            image::Rgb([px(0), px(1), px(2)])
        })),
        n => Err(Error::Invalid(format!("PNG export needs 1 or 3 bands, got {n}"))),
    }
}

pub fn export_png(path: &Path, r: &Raster) -> Result<()> {
    to_rgb8(r)?.save(path)?;
    Ok(())
}
