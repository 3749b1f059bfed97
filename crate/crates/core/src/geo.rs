//! Georeferencing: pixel/world anchors, pluggable coordinate transforms,
//! inverse-mapping reprojection and footprint intersection.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::raster::{sample_bicubic, Raster};

/// Affine pixel→world map: pixel corner `(0, 0)` sits at
/// `(origin_x, origin_y)`, pixel `(col, row)` spans `pixel_size_*` units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoAnchor {
    pub origin_x: f64,
    pub origin_y: f64,
    pub pixel_size_x: f64,
    pub pixel_size_y: f64,
    pub crs_id: String,
}

impl GeoAnchor {
    pub fn new(origin_x: f64, origin_y: f64, pixel_size_x: f64, pixel_size_y: f64, crs_id: &str) -> Result<Self> {
        let a = Self {
            origin_x,
            origin_y,
            pixel_size_x,
            pixel_size_y,
            crs_id: crs_id.to_string(),
        };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v != 0.0;
        if !ok(self.pixel_size_x) || !ok(self.pixel_size_y) {
            return invalid(format!(
                "pixel sizes must be finite and nonzero, got {} x {}",
                self.pixel_size_x, self.pixel_size_y
            ));
        }
        if !self.origin_x.is_finite() || !self.origin_y.is_finite() {
            return invalid("anchor origin must be finite");
        }
        Ok(())
    }

    /// Continuous pixel coordinates (corner convention) to world.
    pub fn to_world(&self, px: f64, py: f64) -> (f64, f64) {
        (
            self.origin_x + px * self.pixel_size_x,
            self.origin_y + py * self.pixel_size_y,
        )
    }

    pub fn to_pixel(&self, wx: f64, wy: f64) -> (f64, f64) {
        (
            (wx - self.origin_x) / self.pixel_size_x,
            (wy - self.origin_y) / self.pixel_size_y,
        )
    }

    /// World bounds `(x_min, x_max, y_min, y_max)` of a `w × h` grid.
    pub fn footprint(&self, w: usize, h: usize) -> (f64, f64, f64, f64) {
        let (x0, y0) = self.to_world(0.0, 0.0);
        let (x1, y1) = self.to_world(w as f64, h as f64);
        (x0.min(x1), x0.max(x1), y0.min(y1), y0.max(y1))
    }

    /// Anchor of the sub-grid starting at pixel `(col, row)`.
    pub fn offset(&self, col: usize, row: usize) -> GeoAnchor {
        let (x, y) = self.to_world(col as f64, row as f64);
        GeoAnchor {
            origin_x: x,
            origin_y: y,
            ..self.clone()
        }
    }

    /// Mean absolute pixel size, used as the ground sampling distance.
    pub fn gsd(&self) -> f64 {
        0.5 * (self.pixel_size_x.abs() + self.pixel_size_y.abs())
    }
}

/// Point mapping between two coordinate reference systems.
pub trait CoordinateTransform: Send + Sync {
    fn forward(&self, p: (f64, f64)) -> (f64, f64);
    fn inverse(&self, p: (f64, f64)) -> (f64, f64);
    /// `None` means the transform applies to any CRS and keeps it.
    fn crs_pair(&self) -> Option<(&str, &str)> {
        None
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

impl CoordinateTransform for Identity {
    fn forward(&self, p: (f64, f64)) -> (f64, f64) {
        p
    }
    fn inverse(&self, p: (f64, f64)) -> (f64, f64) {
        p
    }
}

/// `q = M·p + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub matrix: [[f64; 2]; 2],
    pub offset: [f64; 2],
    pub from_crs: String,
    pub to_crs: String,
    inv: [[f64; 2]; 2],
}

impl Affine {
    pub fn new(matrix: [[f64; 2]; 2], offset: [f64; 2], from_crs: &str, to_crs: &str) -> Result<Self> {
        let [[a, b], [c, d]] = matrix;
        let det = a * d - b * c;
        if !det.is_finite() || det.abs() < 1e-300 {
            return invalid("affine matrix is singular");
        }
        Ok(Self {
            matrix,
            offset,
            from_crs: from_crs.to_string(),
            to_crs: to_crs.to_string(),
            inv: [[d / det, -b / det], [-c / det, a / det]],
        })
    }

    pub fn translation(dx: f64, dy: f64, crs: &str) -> Result<Self> {
        Self::new([[1.0, 0.0], [0.0, 1.0]], [dx, dy], crs, crs)
    }

    /// Counter-clockwise rotation by `degrees` about `center`.
    pub fn rotation(degrees: f64, center: (f64, f64), crs: &str) -> Result<Self> {
        let (s, c) = degrees.to_radians().sin_cos();
        // quarter turns stay exact
        let (s, c) = (snap_unit(s), snap_unit(c));
        let m = [[c, -s], [s, c]];
        let t = [
            center.0 - (c * center.0 - s * center.1),
            center.1 - (s * center.0 + c * center.1),
        ];
        Self::new(m, t, crs, crs)
    }
}

fn snap_unit(v: f64) -> f64 {
    if v.abs() < 1e-15 {
        0.0
    } else if (v.abs() - 1.0).abs() < 1e-15 {
        v.signum()
    } else {
        v
    }
}

impl CoordinateTransform for Affine {
    fn forward(&self, (x, y): (f64, f64)) -> (f64, f64) {
        let m = &self.matrix;
        (
            m[0][0] * x + m[0][1] * y + self.offset[0],
            m[1][0] * x + m[1][1] * y + self.offset[1],
        )
    }

    fn inverse(&self, (x, y): (f64, f64)) -> (f64, f64) {
        let (x, y) = (x - self.offset[0], y - self.offset[1]);
        let m = &self.inv;
        (m[0][0] * x + m[0][1] * y, m[1][0] * x + m[1][1] * y)
    }

    fn crs_pair(&self) -> Option<(&str, &str)> {
        Some((&self.from_crs, &self.to_crs))
    }
}

/// Affine maps applied in order.
#[derive(Debug, Clone)]
pub struct AffineChain {
    steps: Vec<Affine>,
}

impl AffineChain {
    pub fn new(steps: Vec<Affine>) -> Result<Self> {
        if steps.is_empty() {
            return invalid("empty transform chain");
        }
        for w in steps.windows(2) {
            if w[0].to_crs != w[1].from_crs {
                return invalid(format!(
                    "chain step maps to {} but next step expects {}",
                    w[0].to_crs, w[1].from_crs
                ));
            }
        }
        Ok(Self { steps })
    }
}

impl CoordinateTransform for AffineChain {
    fn forward(&self, p: (f64, f64)) -> (f64, f64) {
        self.steps.iter().fold(p, |p, s| s.forward(p))
    }

    fn inverse(&self, p: (f64, f64)) -> (f64, f64) {
        self.steps.iter().rev().fold(p, |p, s| s.inverse(p))
    }

    fn crs_pair(&self) -> Option<(&str, &str)> {
        Some((&self.steps[0].from_crs, &self.steps[self.steps.len() - 1].to_crs))
    }
}

#[derive(Debug, Clone)]
pub struct Reprojected {
    pub raster: Raster,
    pub anchor: GeoAnchor,
    /// Row-major; false where the target pixel center maps outside the
    /// source footprint (those pixels hold 0).
    pub valid: Vec<bool>,
}

impl Reprojected {
    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// Inverse-mapping resampling of `r` onto the target grid.
pub fn reproject(
    r: &Raster,
    anchor: &GeoAnchor,
    t: &dyn CoordinateTransform,
    target_anchor: &GeoAnchor,
    target_w: usize,
    target_h: usize,
) -> Result<Reprojected> {
    anchor.validate()?;
    target_anchor.validate()?;
    if target_w == 0 || target_h == 0 {
        return invalid("target grid is empty");
    }
    let (from, to) = t
        .crs_pair()
        .unwrap_or((&anchor.crs_id, &anchor.crs_id));
    if from != anchor.crs_id || to != target_anchor.crs_id {
        return invalid(format!(
            "transform maps {from}→{to}, rasters are {}→{}",
            anchor.crs_id, target_anchor.crs_id
        ));
    }
    let mut data = vec![0.0; target_w * target_h * r.bands()];
    let mut valid = vec![false; target_w * target_h];
    let plane = target_w * target_h;
    let (w, h) = (r.width() as f64, r.height() as f64);
    for row in 0..target_h {
        for col in 0..target_w {
            let world = target_anchor.to_world(col as f64 + 0.5, row as f64 + 0.5);
            let src = t.inverse(world);
            let (px, py) = anchor.to_pixel(src.0, src.1);
            // tolerate rounding noise on the footprint boundary
            let eps = 1e-9;
            if px < -eps || py < -eps || px > w + eps || py > h + eps {
                continue;
            }
            let i = row * target_w + col;
            valid[i] = true;
            for b in 0..r.bands() {
                data[b * plane + i] = sample_bicubic(r, b, px - 0.5, py - 0.5);
            }
        }
    }
    if !valid.iter().any(|&v| v) {
        return Err(Error::EmptyOverlap(
            "source footprint does not cover any target pixel".into(),
        ));
    }
    let mut raster = Raster::new(target_w, target_h, r.bands(), data)?.with_bit_depth(r.bit_depth);
    raster.gsd = Some(target_anchor.gsd());
    Ok(Reprojected {
        raster,
        anchor: target_anchor.clone(),
        valid,
    })
}

/// A raster with its anchor.
#[derive(Debug, Clone)]
pub struct GeoRaster {
    pub raster: Raster,
    pub anchor: GeoAnchor,
}

/// Crops both inputs to their common footprint, snapped inward to whole LR
/// pixels; the HR crop covers exactly the LR crop's footprint.
pub fn intersect_and_crop(hr: &GeoRaster, lr: &GeoRaster) -> Result<(GeoRaster, GeoRaster)> {
    if hr.anchor.crs_id != lr.anchor.crs_id {
        return invalid(format!(
            "CRS differ: {} vs {}",
            hr.anchor.crs_id, lr.anchor.crs_id
        ));
    }
    let a = hr.anchor.footprint(hr.raster.width(), hr.raster.height());
    let b = lr.anchor.footprint(lr.raster.width(), lr.raster.height());
    let (x0, x1) = (a.0.max(b.0), a.1.min(b.1));
    let (y0, y1) = (a.2.max(b.2), a.3.min(b.3));
    if x0 >= x1 || y0 >= y1 {
        return Err(Error::EmptyOverlap("HR and LR footprints are disjoint".into()));
    }
    let eps = 1e-6;
    // inward snap of a world interval to whole pixels of an anchor
    let snap = |anchor: &GeoAnchor, lo: f64, hi: f64, axis_x: bool| {
        let to_px = |v: f64| {
            if axis_x {
                anchor.to_pixel(v, anchor.origin_y).0
            } else {
                anchor.to_pixel(anchor.origin_x, v).1
            }
        };
        let (p, q) = (to_px(lo), to_px(hi));
        let (p, q) = (p.min(q), p.max(q));
        ((p - eps).ceil().max(0.0) as usize, (q + eps).floor().max(0.0) as usize)
    };
    let (c0, c1) = snap(&lr.anchor, x0, x1, true);
    let (r0, r1) = snap(&lr.anchor, y0, y1, false);
    let c1 = c1.min(lr.raster.width());
    let r1 = r1.min(lr.raster.height());
    if c1 <= c0 || r1 <= r0 {
        return Err(Error::EmptyOverlap("overlap is smaller than one LR pixel".into()));
    }
    let lr_crop = lr.raster.crop(c0, r0, c1 - c0, r1 - r0)?;
    let lr_anchor = lr.anchor.offset(c0, r0);
    // same world rectangle in HR pixels
    let (wx0, wy0) = lr.anchor.to_world(c0 as f64, r0 as f64);
    let (wx1, wy1) = lr.anchor.to_world(c1 as f64, r1 as f64);
    let (hx0, hy0) = hr.anchor.to_pixel(wx0, wy0);
    let (hx1, hy1) = hr.anchor.to_pixel(wx1, wy1);
    let round = |v: f64| v.round().max(0.0) as usize;
    let (hc0, hc1) = (round(hx0.min(hx1)), round(hx0.max(hx1)));
    let (hr0, hr1) = (round(hy0.min(hy1)), round(hy0.max(hy1)));
    if hc1 > hr.raster.width() || hr1 > hr.raster.height() || hc1 <= hc0 || hr1 <= hr0 {
        return Err(Error::EmptyOverlap(
            "snapped LR footprint is not covered by the HR grid".into(),
        ));
    }
    let hr_crop = hr.raster.crop(hc0, hr0, hc1 - hc0, hr1 - hr0)?;
    let hr_anchor = hr.anchor.offset(hc0, hr0);
    Ok((
        GeoRaster {
            raster: hr_crop,
            anchor: hr_anchor,
        },
        GeoRaster {
            raster: lr_crop,
            anchor: lr_anchor,
        },
    ))
}
