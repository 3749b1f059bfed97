//! The five subcommands, callable without the argument parser.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use srforge_core::dataset::{self, BuildSummary, DatasetConfig};
use srforge_core::error::StageContext;
use srforge_core::eval::{self, Method, MethodReport};
use srforge_core::geo::GeoAnchor;
use srforge_core::metrics::{aggregate, CompactExtractor};
use srforge_core::models::{Backbone, Model, ModelKind};
use srforge_core::raster::{normalize, NormalizeMode};
use srforge_core::train::{self, Sample, TrainRunRecord};
use srforge_core::{srras, Raster};

use crate::config::{load_or_default, TrainRunConfig};
use crate::error::{usage, Error, IoContext, Result};
use crate::montage::{caption, Cell, Montage};
use crate::tiling;

pub const DEFAULT_SEED: u64 = 42;

pub struct BuildDatasetArgs {
    pub pairing: PathBuf,
    pub out: PathBuf,
    pub config: Option<PathBuf>,
    pub seed: u64,
}

pub fn build_dataset(a: &BuildDatasetArgs) -> Result<BuildSummary> {
    let cfg: DatasetConfig = load_or_default(a.config.as_deref(), DatasetConfig::validate)?;
    let entries = dataset::read_pairing_file(&a.pairing).stage("ingest")?;
    Ok(dataset::build_dataset(&entries, &a.out, &cfg, a.seed)?)
}

/// Method families of the results table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Architecture {
    Srcnn,
    Srresnet,
    Esrgan,
    RealEsrgan,
}

impl Architecture {
    pub fn generator_kind(self) -> ModelKind {
        match self {
            Self::Srcnn => ModelKind::Srcnn,
            Self::Srresnet => ModelKind::Srresnet,
            Self::Esrgan | Self::RealEsrgan => ModelKind::EsrganGen,
        }
    }

    pub fn discriminator_kind(self) -> Option<ModelKind> {
        match self {
            Self::Esrgan => Some(ModelKind::DiscClassic),
            Self::RealEsrgan => Some(ModelKind::DiscUnet),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Phase {
    Pretrain,
    Gan,
}

pub struct TrainArgs {
    /// Dataset directory holding `train.json` and `val.json`.
    pub data: PathBuf,
    pub model: Architecture,
    pub phase: Phase,
    pub out: PathBuf,
    /// Pretrained generator; required for the adversarial phase.
    pub checkpoint: Option<PathBuf>,
    /// Perceptual backbone weights; a seeded backbone otherwise.
    pub backbone: Option<PathBuf>,
    pub config: Option<PathBuf>,
    pub epochs: Option<usize>,
    pub seed: u64,
}

fn load_generator(dir: &Path, expect: ModelKind) -> Result<Model> {
    let m = Model::load(dir).stage("checkpoint")?;
    if m.spec.kind != expect {
        return usage(format!(
            "{} holds a {} model, expected {}",
            dir.display(),
            m.spec.kind.name(),
            expect.name()
        ));
    }
    Ok(m)
}

pub fn train(a: &TrainArgs) -> Result<TrainRunRecord> {
    let mut cfg: TrainRunConfig = load_or_default(a.config.as_deref(), TrainRunConfig::validate)?;
    let disc_kind = a.model.discriminator_kind();
    if a.phase == Phase::Gan {
        if disc_kind.is_none() {
            return usage("the gan phase needs --model esrgan or real-esrgan");
        }
        if a.checkpoint.is_none() {
            return usage("the gan phase requires --checkpoint with a pretrained generator");
        }
    }
    if let Some(e) = a.epochs {
        match a.phase {
            Phase::Pretrain => cfg.schedule.pretrain_epochs = e,
            Phase::Gan => cfg.schedule.gan_total = e,
        }
    }
    let tc = cfg.train_config();
    tc.validate().stage("config")?;

    let kind = a.model.generator_kind();
    let gen = match &a.checkpoint {
        Some(dir) => load_generator(dir, kind)?,
        None => Model::build(&cfg.generator.apply(kind), a.seed).stage("model")?,
    };
    let (train_m, train_set) = dataset::load_split(&a.data.join("train.json")).stage("load")?;
    let (_, val_set) = dataset::load_split(&a.data.join("val.json")).stage("load")?;
    let ckdir = a.out.join("checkpoints");

    let out = match a.phase {
        Phase::Pretrain => train::pretrain(gen, &train_set, &val_set, &tc, a.seed, Some(&ckdir)).stage("train")?,
        Phase::Gan => {
            let dk = disc_kind.unwrap();
            let mut ds = cfg.discriminator.apply(dk);
            if dk == ModelKind::DiscClassic && cfg.discriminator.input_size.is_none() {
                ds.input_size = train_m.hr_patch;
            }
            let disc = Model::build(&ds, a.seed.wrapping_add(1)).stage("model")?;
            let backbone = if tc.weights.uses_perceptual() {
                let m = match &a.backbone {
                    Some(dir) => load_generator(dir, ModelKind::FeatureBackbone)?,
                    None => {
                        Model::build(&cfg.backbone.apply(ModelKind::FeatureBackbone), a.seed.wrapping_add(2)).stage("model")?
                    }
                };
                Some(Backbone::stages(m).stage("model")?)
            } else {
                None
            };
            let bb = backbone.as_ref().map(|b| b as &dyn srforge_core::metrics::FeatureExtractor);
            train::adversarial_train(gen, disc, bb, &train_set, &val_set, &tc, a.seed, Some(&ckdir)).stage("train")?
        }
    };
    out.record.write(&a.out).stage("write")?;
    out.generator.save(a.out.join("generator")).stage("write")?;
    if let Some(d) = &out.discriminator {
        d.save(a.out.join("discriminator")).stage("write")?;
    }
    Ok(out.record)
}

/// `LABEL=DIR` or a bare model directory.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelArg {
    pub label: Option<String>,
    pub dir: PathBuf,
}

impl std::str::FromStr for ModelArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.split_once('=') {
            Some((l, d)) if !l.is_empty() && !d.is_empty() => Ok(Self {
                label: Some(l.to_string()),
                dir: d.into(),
            }),
            Some(_) => Err(format!("expected LABEL=DIR, got `{s}`")),
            None if s.is_empty() => Err("empty model path".into()),
            None => Ok(Self { label: None, dir: s.into() }),
        }
    }
}

fn default_label(kind: ModelKind) -> &'static str {
    match kind {
        ModelKind::Srcnn => "SRCNN",
        ModelKind::Srresnet => "SRResNet",
        _ => "ESRGAN",
    }
}

pub fn load_methods(models: &[ModelArg]) -> Result<Vec<Method>> {
    let mut out = Vec::new();
    for m in models {
        let model = Model::load(&m.dir).stage("checkpoint")?;
        if !model.spec.kind.is_generator() {
            return usage(format!("{} is not a generator", m.dir.display()));
        }
        let label = m.label.clone().unwrap_or_else(|| default_label(model.spec.kind).into());
        if label.eq_ignore_ascii_case("bicubic") || out.iter().any(|o: &Method| o.label == label) {
            return usage(format!("duplicate method label `{label}`"));
        }
        out.push(Method::model(label, model));
    }
    Ok(out)
}

fn extractor(samples: &[Sample]) -> Result<CompactExtractor> {
    let bands = samples.first().map_or(3, |s| s.hr.bands());
    Ok(CompactExtractor::seeded(bands, CompactExtractor::DEFAULT_SEED)?)
}

/// Reports in table order, Bicubic first; items are scored in parallel.
pub fn evaluate_methods(samples: &[Sample], methods: &[Method], ext: &CompactExtractor) -> Result<Vec<MethodReport>> {
    if samples.is_empty() {
        return usage("test set is empty");
    }
    let mut methods = methods.to_vec();
    if !methods.iter().any(|m| m.model.is_none()) {
        let scale = methods.first().map_or(2, |m| m.scale);
        methods.push(Method::bicubic(scale));
    }
    eval::sort_methods(&mut methods);
    methods
        .iter()
        .map(|m| {
            let items = samples
                .par_iter()
                .map(|s| eval::score(&m.predict(&s.lr)?, &s.hr, ext, &s.id))
                .collect::<srforge_core::Result<Vec<_>>>()?;
            Ok(MethodReport {
                method: m.label.clone(),
                report: aggregate(items)?,
            })
        })
        .collect()
}

pub struct EvaluateArgs {
    pub test: PathBuf,
    pub models: Vec<ModelArg>,
    pub csv: Option<PathBuf>,
    pub json: Option<PathBuf>,
    pub seed: u64,
}

#[derive(Debug, Serialize)]
struct EvaluationFile<'a> {
    seed: u64,
    test: &'a Path,
    methods: &'a [MethodReport],
}

pub fn evaluate(a: &EvaluateArgs) -> Result<Vec<MethodReport>> {
    let (_, samples) = dataset::load_split(&a.test).stage("load")?;
    let methods = load_methods(&a.models)?;
    let ext = extractor(&samples)?;
    let reports = evaluate_methods(&samples, &methods, &ext)?;
    if let Some(p) = &a.csv {
        std::fs::write(p, eval::results_csv(&reports)).at(p)?;
    }
    if let Some(p) = &a.json {
        let f = EvaluationFile {
            seed: a.seed,
            test: &a.test,
            methods: &reports,
        };
        std::fs::write(p, serde_json::to_string_pretty(&f)?).at(p)?;
    }
    Ok(reports)
}

pub struct InferArgs {
    pub checkpoint: PathBuf,
    pub input: PathBuf,
    pub out: PathBuf,
    pub tile: usize,
    pub overlap: usize,
}

/// SRRAS or PNG input in `[0, 1]`; raw counts are scaled by their
/// nominal range.
pub fn read_input(path: &Path) -> Result<(Raster, Option<GeoAnchor>)> {
    let ing = dataset::ingest(path).stage("ingest")?;
    let r = if ing.raster.data().iter().any(|&v| v > 1.0) {
        normalize(&ing.raster, NormalizeMode::FixedRange).stage("normalize")?.raster
    } else {
        ing.raster
    };
    Ok((r, ing.anchor))
}

fn output_kind(path: &Path) -> Result<&'static str> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("json") => Ok("json"),
        Some("png") => Ok("png"),
        _ => usage(format!("{}: output must end in .json (SRRAS) or .png", path.display())),
    }
}

pub fn infer(a: &InferArgs) -> Result<Raster> {
    let kind = output_kind(&a.out)?;
    let model = Model::load(&a.checkpoint).stage("checkpoint")?;
    if !model.spec.kind.is_generator() {
        return usage(format!("{} is not a generator", a.checkpoint.display()));
    }
    let (lr, anchor) = read_input(&a.input)?;
    if lr.bands() != 3 {
        return usage(format!("band mismatch: input has {} bands, expected 3", lr.bands()));
    }
    let sr = tiling::tiled_super_resolve(&model, &lr, a.tile, a.overlap)?;
    let s = model.spec.scale as f64;
    match kind {
        "json" => {
            let geo = anchor.map(|g| GeoAnchor {
                pixel_size_x: g.pixel_size_x / s,
                pixel_size_y: g.pixel_size_y / s,
                ..g
            });
            srras::save(&a.out, &sr, geo.as_ref()).stage("write")?;
        }
        _ => srras::export_png(&a.out, &sr).stage("write")?,
    }
    Ok(sr)
}

pub struct FigureArgs {
    pub test: PathBuf,
    pub models: Vec<ModelArg>,
    pub patches: usize,
    pub out: PathBuf,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FigureSummary {
    pub seed: u64,
    pub items: Vec<String>,
    pub methods: Vec<String>,
    /// One caption per item and method.
    pub captions: Vec<Vec<String>>,
}

/// Seeded choice of `n` of `len` items, in manifest order.
pub fn pick_items(len: usize, n: usize, seed: u64) -> Result<Vec<usize>> {
    if n == 0 || n > len {
        return usage(format!("cannot show {n} patches from a test set of {len}"));
    }
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(n);
    idx.sort_unstable();
    Ok(idx)
}

pub fn compare_figure(a: &FigureArgs) -> Result<FigureSummary> {
    if output_kind(&a.out)? != "png" {
        return usage("the figure is written as PNG");
    }
    let (_, samples) = dataset::load_split(&a.test).stage("load")?;
    let picked = pick_items(samples.len(), a.patches, a.seed)?;
    let mut methods = load_methods(&a.models)?;
    let scale = methods.first().map_or(2, |m| m.scale);
    methods.push(Method::bicubic(scale));
    eval::sort_methods(&mut methods);
    let ext = extractor(&samples)?;

    let mut headers = vec!["GT".to_string()];
    headers.extend(methods.iter().map(|m| m.label.clone()));
    let mut rows = Vec::new();
    let mut captions = Vec::new();
    for &i in &picked {
        let s = &samples[i];
        let mut row = vec![Cell {
            image: s.hr.clone(),
            caption: "PSNR / SSIM / LPIPS".into(),
        }];
        let mut caps = Vec::new();
        for m in &methods {
            let pred = m.predict(&s.lr).stage("infer")?;
            let sc = eval::score(&pred, &s.hr, &ext, &s.id).stage("metrics")?;
            let c = caption(sc.psnr, sc.ssim, sc.lpips);
            caps.push(c.clone());
            row.push(Cell { image: pred, caption: c });
        }
        rows.push(row);
        captions.push(caps);
    }
    let img = Montage { headers, rows }.render()?;
    write_png(&a.out, &img)?;
    let summary = FigureSummary {
        seed: a.seed,
        items: picked.iter().map(|&i| samples[i].id.clone()).collect(),
        methods: methods.iter().map(|m| m.label.clone()).collect(),
        captions,
    };
    let side = a.out.with_extension("json");
    std::fs::write(&side, serde_json::to_string_pretty(&summary)?).at(&side)?;
    Ok(summary)
}

fn write_png(path: &Path, img: &image::RgbImage) -> Result<()> {
    use image::ImageEncoder;
    let file = std::fs::File::create(path).at(path)?;
    image::codecs::png::PngEncoder::new(std::io::BufWriter::new(file))
        .write_image(img.as_raw(), img.width(), img.height(), image::ExtendedColorType::Rgb8)
        .map_err(Error::from)
}
