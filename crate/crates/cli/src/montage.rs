//! Comparison figure: a header row of method names, then one row per patch
//! with the ground truth and each method's output, captioned underneath.

use image::{Rgb, RgbImage};
use srforge_core::{srras, Raster};

use crate::error::{usage, Result};
use crate::font::{self, GLYPH_H};

const PAD: usize = 4;
const MAX_ZOOM: usize = 8;
const INK: Rgb<u8> = Rgb([0, 0, 0]);
const PAPER: Rgb<u8> = Rgb([255, 255, 255]);

pub struct Cell {
    pub image: Raster,
    pub caption: String,
}

pub struct Montage {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

/// `PSNR / SSIM / LPIPS` caption text.
pub fn caption(psnr: f64, ssim: f64, lpips: f64) -> String {
    let db = if psnr.is_finite() {
        format!("{psnr:.2}")
    } else {
        srforge_core::metrics::format_db(psnr)
    };
    format!("{db} / {ssim:.3} / {lpips:.3}")
}

impl Montage {
    /// Nearest-neighbor zoom that makes patches at least as wide as their
    /// captions.
    fn zoom(&self, img_w: usize) -> usize {
        let text = self.rows.iter().flatten().map(|c| font::text_width(&c.caption)).max().unwrap_or(0);
        text.div_ceil(img_w.max(1)).clamp(1, MAX_ZOOM)
    }

    pub fn render(&self) -> Result<RgbImage> {
        let cols = self.headers.len();
        if self.rows.is_empty() || cols == 0 {
            return usage("montage needs at least one row and one column");
        }
        if self.rows.iter().any(|r| r.len() != cols) {
            return usage(format!("every montage row needs {cols} cells"));
        }
        let img_w = self.rows.iter().flatten().map(|c| c.image.width()).max().unwrap();
        let img_h = self.rows.iter().flatten().map(|c| c.image.height()).max().unwrap();
        let k = self.zoom(img_w);
        let text_w = self
            .rows
            .iter()
            .flatten()
            .map(|c| font::text_width(&c.caption))
            .chain(self.headers.iter().map(|h| font::text_width(h)))
            .max()
            .unwrap_or(0);
        let col_w = (img_w * k).max(text_w) + 2 * PAD;
        let head_h = GLYPH_H + 2 * PAD;
        let row_h = img_h * k + GLYPH_H + 3 * PAD;
        let (w, h) = (cols * col_w, head_h + self.rows.len() * row_h);
        let mut out = RgbImage::from_pixel(w as u32, h as u32, PAPER);
        let text = |s: &str, cx: usize, y: usize, out: &mut RgbImage| {
            let x0 = cx - font::text_width(s) / 2;
            font::draw(s, x0, y, |x, y| out.put_pixel(x as u32, y as u32, INK));
        };
        for (j, hdr) in self.headers.iter().enumerate() {
            text(hdr, j * col_w + col_w / 2, PAD, &mut out);
        }
        for (i, row) in self.rows.iter().enumerate() {
            let y0 = head_h + i * row_h;
            for (j, cell) in row.iter().enumerate() {
                let rgb = srras::to_rgb8(&cell.image)?;
                let (cw, ch) = (cell.image.width() * k, cell.image.height() * k);
                let x0 = j * col_w + (col_w - cw) / 2;
                for y in 0..ch {
                    for x in 0..cw {
                        let p = *rgb.get_pixel((x / k) as u32, (y / k) as u32);
                        out.put_pixel((x0 + x) as u32, (y0 + PAD + y) as u32, p);
                    }
                }
                text(&cell.caption, j * col_w + col_w / 2, y0 + 2 * PAD + img_h * k, &mut out);
            }
        }
        Ok(out)
    }
}
