use std::path::Path;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use srforge_core::dataset::*;
use srforge_core::geo::{GeoAnchor, GeoRaster};
use srforge_core::raster::{bicubic_resample, box_filter, BoxKernelSpec};
use srforge_core::synthetic::{self, CorpusSpec};
use srforge_core::{srras, Raster};

fn random_raster(rng: &mut ChaCha8Rng, w: usize, h: usize, bands: usize) -> Raster {
    Raster::from_fn(w, h, bands, |_, _, _| rng.random::<f64>()).unwrap()
}

#[test]
fn kernel_side_from_gsd_ratio() {
    // 0.2 m to 5 m
    let (k, w) = box_kernel_for_ratio(5.0 / 0.2).unwrap();
    assert_eq!((k.n, w.is_none()), (25, true));
    let (k, w) = box_kernel_for_ratio(5.0 / 1.0).unwrap();
    assert_eq!((k.n, w.is_none()), (5, true));
    for (ratio, n) in [(24.0, 25), (24.3, 25), (23.2, 23), (2.0, 3), (1.0, 1), (1.9, 1)] {
        let (k, w) = box_kernel_for_ratio(ratio).unwrap();
        assert_eq!(k.n, n, "ratio {ratio}");
        assert_eq!(w.is_some(), ratio != n as f64);
    }
    assert!(box_kernel_for_ratio(0.5).is_err());
}

#[test]
fn preprocess_matches_box_then_bicubic() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let hr = random_raster(&mut rng, 250, 200, 3).with_gsd(0.2).unwrap();
    let anchor = GeoAnchor::new(1000.0, 2000.0, 0.2, -0.2, "EPSG:32633").unwrap();
    let p = preprocess_hr(&hr, Some(&anchor), 5.0).unwrap();
    assert_eq!(p.kernel.n, 25);
    assert_eq!((p.raster.width(), p.raster.height()), (10, 8));
    assert_eq!(p.raster.gsd, Some(5.0));
    let a = p.anchor.unwrap();
    assert!((a.pixel_size_x - 5.0).abs() < 1e-12 && (a.pixel_size_y + 5.0).abs() < 1e-12);
    let want = bicubic_resample(&box_filter(&hr, BoxKernelSpec::new(25).unwrap()).unwrap(), 10, 8).unwrap();
    assert_eq!(p.raster.max_abs_diff(&want), 0.0);

    let flat = Raster::filled(60, 60, 3, 0.37).unwrap().with_gsd(1.0).unwrap();
    let p = preprocess_hr(&flat, None, 5.0).unwrap();
    assert_eq!(p.kernel.n, 5);
    assert_eq!((p.raster.width(), p.raster.height()), (12, 12));
    assert!(p.raster.data().iter().all(|v| (v - 0.37).abs() < 1e-12));

    let warn = preprocess_hr(&flat.clone().with_gsd(2.5).unwrap(), None, 5.0).unwrap();
    assert_eq!(warn.kernel.n, 3);
    assert!(warn.warning.is_some());
    assert!(preprocess_hr(&Raster::filled(8, 8, 1, 0.0).unwrap(), None, 5.0).is_err());
}

/// Fraction of values strictly below `x`.
fn below(v: &[f64], x: f64) -> f64 {
    v.iter().filter(|&&u| u < x).count() as f64 / v.len() as f64
}

#[test]
fn spectral_adjust_follows_reference_distribution() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let bins = 256;
    for _ in 0..10 {
        let src = Raster::from_fn(40, 40, 3, |b, _, _| (rng.random::<f64>() * 0.6 + 0.1 * b as f64).min(1.0)).unwrap();
        let refr = Raster::from_fn(48, 48, 3, |_, _, _| rng.random::<f64>().powi(2)).unwrap();
        let out = spectral_adjust(&src, &refr, bins).unwrap();
        for b in 0..3 {
            for k in 0..bins {
                let edge = k as f64 / bins as f64;
                let want = below(refr.band(b), edge);
                let got = below(out.band(b), edge);
                assert!((got - want).abs() <= 2.0 / bins as f64, "band {b} edge {k}: {got} vs {want}");
            }
        }
    }
}

#[test]
fn spectral_adjust_identity_and_band_isolation() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = random_raster(&mut rng, 32, 32, 3);
    let same = spectral_adjust(&a, &a, 256).unwrap();
    assert!(same.max_abs_diff(&a) <= 1.0 / 256.0);

    let refr = random_raster(&mut rng, 32, 32, 3).map(|v| v * v);
    let base = spectral_adjust(&a, &refr, 256).unwrap();
    // permute the pixels of band 1 only
    let mut b = a.clone();
    b.band_mut(1).reverse();
    let out = spectral_adjust(&b, &refr, 256).unwrap();
    assert_eq!(out.band(0), base.band(0));
    assert_eq!(out.band(2), base.band(2));
    assert_ne!(out.band(1), base.band(1));
    assert!(spectral_adjust(&a, &Raster::filled(4, 4, 1, 0.0).unwrap(), 256).is_err());
}

fn smooth(w: usize, h: usize, phase: f64) -> Raster {
    Raster::from_fn(w, h, 3, |b, y, x| {
        0.5 + 0.3 * ((x as f64 * 0.05 + phase + b as f64).sin() * (y as f64 * 0.04).cos())
    })
    .unwrap()
}

fn registered(lr_side: usize, hr_shift_px: (f64, f64)) -> (GeoRaster, GeoRaster) {
    let lr_anchor = GeoAnchor::new(300_000.0, 5_000_000.0, 10.0, -10.0, "EPSG:32633").unwrap();
    let hr_anchor = GeoAnchor::new(
        300_000.0 - 5.0 * hr_shift_px.0,
        5_000_000.0 + 5.0 * hr_shift_px.1,
        5.0,
        -5.0,
        "EPSG:32633",
    )
    .unwrap();
    let hr_side = 2 * lr_side + 8;
    let hr = smooth(hr_side, hr_side, 0.3);
    let lr = bicubic_resample(&hr, hr_side / 2, hr_side / 2).unwrap().crop(0, 0, lr_side, lr_side).unwrap();
    (
        GeoRaster {
            raster: hr,
            anchor: hr_anchor,
        },
        GeoRaster {
            raster: lr,
            anchor: lr_anchor,
        },
    )
}

#[test]
fn full_coverage_tile_yields_one_hundred_pairs() {
    let (hr, lr) = registered(960, (0.0, 0.0));
    let pairs = make_pairs("t", &hr, &lr, &DatasetConfig::default()).unwrap();
    assert_eq!(pairs.len(), 100);
    for p in &pairs {
        assert_eq!(p.hr_patch.width(), 2 * p.lr_patch.width());
        assert_eq!(p.hr_patch.height(), 2 * p.lr_patch.height());
        assert_eq!((p.lr_patch.width(), p.hr_patch.width()), (96, 192));
        let up = bicubic_upscale(&p.lr_patch, 2).unwrap();
        assert!(up.same_shape(&p.hr_patch));
    }
}

#[test]
fn patch_anchors_correspond_in_world_space() {
    let cfg = DatasetConfig {
        lr_patch: 16,
        lr_stride: 12,
        ..Default::default()
    };
    for shift in [(0.0, 0.0), (3.0, 5.0), (7.0, 1.0)] {
        let (hr, lr) = registered(64, shift);
        let pairs = make_pairs("t", &hr, &lr, &cfg).unwrap();
        assert!(!pairs.is_empty());
        for p in &pairs {
            let (row, col) = p.lr_origin;
            // an LR pixel is two HR pixels; the HR grid starts `shift` HR pixels earlier
            assert_eq!(p.hr_origin, (2 * row + shift.1 as usize, 2 * col + shift.0 as usize));
            let (lx, ly) = p.lr_anchor.to_world(0.0, 0.0);
            let (hx, hy) = p.hr_anchor.to_world(0.0, 0.0);
            assert!((lx - hx).abs() < 1e-6 && (ly - hy).abs() < 1e-6);
            assert_eq!(p.hr_patch, hr.raster.crop(p.hr_origin.1, p.hr_origin.0, 32, 32).unwrap());
            let (s, q) = score_pair(&p.lr_patch, &p.hr_patch, 2, &cfg.ssim).unwrap();
            assert_eq!((s, q), (p.ssim, p.psnr));
        }
    }
    // half an HR pixel off the grid
    let (hr, lr) = registered(64, (0.5, 0.0));
    assert!(make_pairs("t", &hr, &lr, &cfg).is_err());
    // wrong resolution ratio
    let (mut hr, lr) = registered(64, (0.0, 0.0));
    hr.anchor.pixel_size_x = 10.0 / 3.0;
    assert!(make_pairs("t", &hr, &lr, &cfg).is_err());
}

fn scored(ssim: f64, psnr: f64) -> PatchPair {
    let r = Raster::filled(2, 2, 1, 0.0).unwrap();
    let a = GeoAnchor::new(0.0, 0.0, 1.0, -1.0, "x").unwrap();
    PatchPair {
        pair_id: format!("{ssim}_{psnr}"),
        aoi_id: "a".into(),
        lr_patch: r.clone(),
        hr_patch: r,
        lr_anchor: a.clone(),
        hr_anchor: a,
        lr_origin: (0, 0),
        hr_origin: (0, 0),
        ssim,
        psnr,
    }
}

#[test]
fn quality_filter_thresholds() {
    let t = QualityThresholds::default();
    let (kept, rejected) = quality_filter(
        vec![scored(0.44, 30.0), scored(0.45, 21.0), scored(0.9, 20.99), scored(0.8, 25.0)],
        &t,
    );
    let ids: Vec<&str> = kept.iter().map(|p| p.pair_id.as_str()).collect();
    assert_eq!(ids, ["0.45_21", "0.8_25"]);
    assert_eq!(rejected.len(), 2);
}

#[test]
fn split_reproduces_reference_counts() {
    let cfg = DatasetConfig::default();
    assert_eq!(split_counts(2082, &cfg.fractions).unwrap(), [1500, 374, 208]);
    let parts = split_indices(2082, &cfg.fractions, 42).unwrap();
    assert_eq!(parts.clone().map(|p| p.len()), [1500, 374, 208]);
    assert_eq!(parts, split_indices(2082, &cfg.fractions, 42).unwrap());
    assert_ne!(parts, split_indices(2082, &cfg.fractions, 43).unwrap());
    let all = split_indices(17, &[1.0, 0.0, 0.0], 1).unwrap();
    assert_eq!(all.clone().map(|p| p.len()), [17, 0, 0]);
    assert!(split_indices(0, &cfg.fractions, 1).is_err());
    assert!(split_indices(5, &[0.5, 0.2, 0.2], 1).is_err());
}

proptest! {
    #[test]
    fn splits_are_disjoint_and_exhaustive(n in 1usize..500, a in 0.0f64..1.0, t in 0.0f64..1.0, seed in 0u64..1000) {
        let b = (1.0 - a) * t;
        let f = [a, b, (1.0 - a - b).max(0.0)];
        let parts = split_indices(n, &f, seed).unwrap();
        let mut all: Vec<usize> = parts.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        for (p, fr) in parts.iter().zip(f) {
            prop_assert!((p.len() as f64 - fr * n as f64).abs() < 1.0 + 1e-9);
        }
    }

    #[test]
    fn filter_keeps_exactly_passing_pairs(scores in prop::collection::vec((0.0f64..1.0, 10.0f64..40.0), 0..60)) {
        let t = QualityThresholds::default();
        let pairs: Vec<PatchPair> = scores.iter().map(|&(s, p)| scored(s, p)).collect();
        let (kept, rejected) = quality_filter(pairs, &t);
        prop_assert_eq!(kept.len() + rejected.len(), scores.len());
        prop_assert!(kept.iter().all(|p| p.ssim >= 0.45 && p.psnr >= 21.0));
        prop_assert!(rejected.iter().all(|p| p.ssim < 0.45 || p.psnr < 21.0));
    }
}

#[test]
fn pairing_entry_dates() {
    let e = TilePairingEntry {
        aoi_id: "a".into(),
        hr_path: "h.json".into(),
        lr_path: "l.json".into(),
        hr_capture_date: "2020-03-01".into(),
        lr_capture_date: "2020-02-20".into(),
        notes: String::new(),
    };
    assert_eq!(e.date_difference_days().unwrap(), 10);
    let bad = TilePairingEntry {
        lr_capture_date: "2020-13-01".into(),
        ..e
    };
    assert!(bad.date_difference_days().is_err());
}

#[test]
fn ingest_formats() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let r = Raster::from_fn(7, 5, 3, |_, _, _| (rng.random::<f64>() * 4095.0).round()).unwrap().with_bit_depth(12);
    let anchor = GeoAnchor::new(1.0, 2.0, 10.0, -10.0, "EPSG:32633").unwrap();
    let p = dir.path().join("t.json");
    let sha = srras::save(&p, &r, Some(&anchor)).unwrap();
    let got = ingest(&p).unwrap();
    assert_eq!(got.raster, r);
    assert_eq!(got.anchor, Some(anchor.clone()));
    assert_eq!(got.sha256, sha);

    // truncated payload
    let payload = srras::payload_path(&p);
    let bytes = std::fs::read(&payload).unwrap();
    std::fs::write(&payload, &bytes[..bytes.len() - 4]).unwrap();
    assert!(ingest(&p).is_err());

    let img = image::RgbImage::from_fn(4, 3, |x, y| image::Rgb([(x * 60) as u8, (y * 100) as u8, 255]));
    let png = dir.path().join("p.png");
    img.save(&png).unwrap();
    let got = ingest(&png).unwrap();
    let norm = srforge_core::raster::normalize(&got.raster, srforge_core::raster::NormalizeMode::FixedRange)
        .unwrap()
        .raster;
    assert_eq!(norm.get(0, 1, 2), 120.0 / 255.0);
    assert_eq!(norm.get(1, 2, 0), 200.0 / 255.0);
    assert!(got.anchor.is_none());
    std::fs::write(png_sidecar_path(&png), r#"{"geo": {"origin_x": 0}}"#).unwrap();
    assert!(ingest(&png).is_err());
    let side = PngSidecar {
        geo: Some(anchor),
        gsd_m: None,
    };
    std::fs::write(png_sidecar_path(&png), serde_json::to_string(&side).unwrap()).unwrap();
    assert_eq!(ingest(&png).unwrap().raster.gsd, Some(10.0));
    assert!(ingest(&dir.path().join("x.tif")).is_err());
}

fn desk_config() -> DatasetConfig {
    DatasetConfig {
        lr_patch: 16,
        lr_stride: 16,
        ..Default::default()
    }
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn factory_is_deterministic_and_consistent() {
    let src = tempfile::tempdir().unwrap();
    let spec = CorpusSpec {
        tiles: 2,
        hr_side: 128,
        hr_gsd: 2.5,
        hr_oversample: 2,
        ..Default::default()
    };
    synthetic::write_corpus(src.path(), &spec, 9).unwrap();
    let entries = read_pairing_file(&src.path().join("pairing.json")).unwrap();
    let cfg = desk_config();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let sa = build_dataset(&entries, a.path(), &cfg, 42).unwrap();
    let sb = build_dataset(&entries, b.path(), &cfg, 42).unwrap();
    assert_eq!(sa, sb);
    assert_eq!(read_all(a.path()), read_all(b.path()));
    assert_eq!(sa.total_pairs, 2 * 16);
    assert_eq!(sa.retained + sa.rejected, sa.total_pairs);
    assert_eq!(sa.split_counts.iter().sum::<usize>(), sa.retained);
    assert!(sa.tiles.iter().all(|t| t.box_kernel == 3 && t.warning.is_some()));

    let mut seen = std::collections::BTreeSet::new();
    for name in SPLIT_NAMES {
        let (m, samples) = load_split(&a.path().join(format!("{name}.json"))).unwrap();
        assert_eq!(m.seed, 42);
        assert_eq!(m.config_hash, cfg.hash().unwrap());
        for (e, s) in m.pairs.iter().zip(&samples) {
            assert!(seen.insert(e.pair_id.clone()));
            assert!(e.ssim >= 0.45 && e.psnr >= 21.0);
            let (q_ssim, q_psnr) = score_pair(&s.lr, &s.hr, 2, &cfg.ssim).unwrap();
            // patches are stored in single precision
            assert!((q_ssim - e.ssim).abs() < 1e-4 && (q_psnr - e.psnr).abs() < 1e-3);
            assert_eq!((s.lr.width(), s.hr.width()), (16, 32));
        }
    }
    assert_eq!(seen.len(), sa.retained);

    let other = tempfile::tempdir().unwrap();
    let sc = build_dataset(&entries, other.path(), &cfg, 43).unwrap();
    assert_eq!(sc.retained, sa.retained);
    assert_ne!(
        std::fs::read(a.path().join("train.json")).unwrap(),
        std::fs::read(other.path().join("train.json")).unwrap()
    );

    let err = build_dataset(&[], other.path(), &cfg, 1).unwrap_err();
    assert_eq!(err.stage(), Some("ingest"));
    let mut broken = entries.clone();
    broken[0].lr_path = src.path().join("missing.json");
    assert_eq!(build_dataset(&broken, other.path(), &cfg, 1).unwrap_err().stage(), Some("ingest"));
}
