//! Architecture builders and forward passes for the super-resolution
//! generators, the two discriminators and the perceptual backbone.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use srforge_nn::{srwt, Graph, Mode, ParamBuilder, ParamSet, Session, Tensor, Var};

use crate::error::{invalid, shape, Error, IoContext, Result};
use crate::metrics::FeatureExtractor;
use crate::raster::{bicubic_resample, Raster};

pub const LRELU_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Srcnn,
    Srresnet,
    EsrganGen,
    DiscClassic,
    DiscUnet,
    FeatureBackbone,
}

impl ModelKind {
    pub fn is_generator(self) -> bool {
        matches!(self, Self::Srcnn | Self::Srresnet | Self::EsrganGen)
    }

    pub fn parse(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::Invalid(format!("unknown model kind `{s}`")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Srcnn => "srcnn",
            Self::Srresnet => "srresnet",
            Self::EsrganGen => "esrgan_gen",
            Self::DiscClassic => "disc_classic",
            Self::DiscUnet => "disc_unet",
            Self::FeatureBackbone => "feature_backbone",
        }
    }
}

fn d_growth() -> usize {
    32
}
fn d_res_scale() -> f64 {
    0.2
}
fn d_blocks() -> usize {
    16
}
fn d_input() -> usize {
    192
}
fn d_bands() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub scale: usize,
    pub n_rrdb: usize,
    pub n_ub: usize,
    /// Base feature width.
    pub channels: usize,
    /// Dense-block growth (ESRGAN generator).
    #[serde(default = "d_growth")]
    pub growth: usize,
    /// Residual scaling β inside RRDBs.
    #[serde(default = "d_res_scale")]
    pub res_scale: f64,
    /// SRResNet residual blocks.
    #[serde(default = "d_blocks")]
    pub n_blocks: usize,
    /// Fixed input side of the classic discriminator.
    #[serde(default = "d_input")]
    pub input_size: usize,
    #[serde(default = "d_bands")]
    pub bands: usize,
}

impl ModelSpec {
    pub fn new(kind: ModelKind) -> Self {
        Self {
            kind,
            scale: 2,
            n_rrdb: 4,
            n_ub: 1,
            channels: 64,
            growth: d_growth(),
            res_scale: d_res_scale(),
            n_blocks: d_blocks(),
            input_size: d_input(),
            bands: d_bands(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.bands == 0 {
            return invalid("channels and bands must be positive");
        }
        if self.n_rrdb == 0 {
            return invalid("n_rrdb must be at least 1");
        }
        if matches!(self.kind, ModelKind::Srresnet | ModelKind::EsrganGen) {
            if self.n_ub == 0 || self.scale != 1 << self.n_ub {
                return invalid(format!(
                    "scale {} does not equal 2^n_ub with n_ub = {}",
                    self.scale, self.n_ub
                ));
            }
        }
        if self.kind == ModelKind::Srcnn && self.scale < 1 {
            return invalid("scale must be positive");
        }
        if self.kind == ModelKind::EsrganGen && self.growth == 0 {
            return invalid("growth must be positive");
        }
        if self.kind == ModelKind::DiscClassic && (self.input_size == 0 || self.input_size % 16 != 0) {
            return invalid(format!(
                "classic discriminator input {} must be a positive multiple of 16",
                self.input_size
            ));
        }
        if !self.res_scale.is_finite() {
            return invalid("res_scale must be finite");
        }
        Ok(())
    }

    /// Input channels of the five convolutions in one dense block.
    pub fn dense_block_inputs(&self) -> [usize; 5] {
        std::array::from_fn(|k| self.channels + k * self.growth)
    }

    /// Spatial side of the classic discriminator's last feature map.
    pub fn classic_final_side(&self) -> usize {
        self.input_size / 16
    }
}

/// An architecture plus its named weights and buffers.
#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: ParamSet,
}

const VGG_CONVS: [usize; 5] = [2, 2, 4, 4, 4];
const VGG_MULT: [usize; 5] = [1, 2, 4, 8, 8];

pub fn build(spec: &ModelSpec, seed: u64) -> Result<Model> {
    spec.validate()?;
    let mut b = ParamBuilder::new(seed);
    let (c, bands) = (spec.channels, spec.bands);
    match spec.kind {
        ModelKind::Srcnn => {
            b.conv("conv1", bands, c, 9, true)?;
            b.conv("conv2", c, c / 2, 1, true)?;
            b.conv("conv3", c / 2, bands, 5, true)?;
        }
        ModelKind::Srresnet => {
            b.conv("head", bands, c, 9, true)?;
            b.prelu("head_act", c)?;
            for i in 0..spec.n_blocks {
                let p = format!("body.{i}");
                b.conv(&format!("{p}.conv1"), c, c, 3, false)?;
                b.batch_norm(&format!("{p}.bn1"), c)?;
                b.prelu(&format!("{p}.act"), c)?;
                b.conv(&format!("{p}.conv2"), c, c, 3, false)?;
                b.batch_norm(&format!("{p}.bn2"), c)?;
            }
            for u in 0..spec.n_ub {
                b.conv(&format!("up.{u}.conv"), c, 4 * c, 3, true)?;
                b.prelu(&format!("up.{u}.act"), c)?;
            }
            b.conv("tail", c, bands, 9, true)?;
        }
        ModelKind::EsrganGen => {
            b.conv("head", bands, c, 3, true)?;
            // small initial residual branches keep the deep trunk stable
            b.scale = 0.1;
            for r in 0..spec.n_rrdb {
                for d in 0..3 {
                    for (k, cin) in spec.dense_block_inputs().into_iter().enumerate() {
                        let cout = if k == 4 { c } else { spec.growth };
                        b.conv(&format!("rrdb.{r}.db{d}.conv{}", k + 1), cin, cout, 3, true)?;
                    }
                }
            }
            b.scale = 1.0;
            b.conv("trunk", c, c, 3, true)?;
            for u in 0..spec.n_ub {
                b.conv(&format!("up.{u}"), c, 4 * c, 3, true)?;
            }
            b.conv("hr", c, c, 3, true)?;
            b.conv("tail", c, bands, 3, true)?;
        }
        ModelKind::DiscClassic => {
            let mut cin = bands;
            for (i, &(mult, _)) in CLASSIC_BLOCKS.iter().enumerate() {
                let cout = mult * c;
                b.conv(&format!("block{i}.conv"), cin, cout, 3, i == 0)?;
                if i > 0 {
                    b.batch_norm(&format!("block{i}.bn"), cout)?;
                }
                cin = cout;
            }
            let side = spec.classic_final_side();
            b.dense("fc1", cin * side * side, 16 * c)?;
            b.dense("fc2", 16 * c, 1)?;
        }
        ModelKind::DiscUnet => {
            b.sn_conv("in", bands, c, 3, true)?;
            b.sn_conv("down1", c, 2 * c, 3, false)?;
            b.sn_conv("down2", 2 * c, 4 * c, 3, false)?;
            b.sn_conv("down3", 4 * c, 4 * c, 3, false)?;
            b.sn_conv("up1", 4 * c, 4 * c, 3, false)?;
            b.sn_conv("up2", 4 * c, 2 * c, 3, false)?;
            b.sn_conv("up3", 2 * c, c, 3, false)?;
            b.sn_conv("refine1", c, c, 3, false)?;
            b.sn_conv("refine2", c, c, 3, false)?;
            b.sn_conv("out", c, 1, 3, true)?;
        }
        ModelKind::FeatureBackbone => {
            let mut cin = bands;
            for (s, (&n, &m)) in VGG_CONVS.iter().zip(&VGG_MULT).enumerate() {
                for k in 0..n {
                    b.conv(&format!("conv{}_{}", s + 1, k + 1), cin, m * c, 3, true)?;
                    cin = m * c;
                }
            }
        }
    }
    Ok(Model {
        spec: spec.clone(),
        params: b.finish(),
    })
}

/// (channel multiplier, stride) per classic discriminator block.
const CLASSIC_BLOCKS: [(usize, usize); 8] = [(1, 1), (1, 2), (2, 1), (2, 2), (4, 1), (4, 2), (8, 1), (8, 2)];

fn check_input(spec: &ModelSpec, x: &Var<'_>) -> Result<(usize, usize, usize, usize)> {
    let sh = x.shape();
    if sh.len() != 4 {
        return shape(format!("expected an NCHW input, got {sh:?}"));
    }
    if sh[1] != spec.bands {
        return shape(format!(
            "{} expects {} bands, got {}",
            spec.kind.name(),
            spec.bands,
            sh[1]
        ));
    }
    Ok((sh[0], sh[1], sh[2], sh[3]))
}

/// One dense block: five 3×3 convs over the growing concatenation.
pub fn dense_block<'g>(s: &Session<'g, '_>, x: Var<'g>, prefix: &str, beta: f64) -> Result<Var<'g>> {
    let mut feats = vec![x];
    for k in 1..=4 {
        let inp = Var::concat(&feats)?;
        let y = s.conv2d(&inp, &format!("{prefix}.conv{k}"), 1, 1)?.leaky_relu(LRELU_SLOPE);
        feats.push(y);
    }
    let y = s.conv2d(&Var::concat(&feats)?, &format!("{prefix}.conv5"), 1, 1)?;
    Ok(x.add(&y.scale(beta))?)
}

/// Residual-in-residual dense block: three dense blocks, then a scaled skip.
pub fn rrdb<'g>(s: &Session<'g, '_>, x: Var<'g>, prefix: &str, beta: f64) -> Result<Var<'g>> {
    let mut h = x;
    for d in 0..3 {
        h = dense_block(s, h, &format!("{prefix}.db{d}"), beta)?;
    }
    Ok(x.add(&h.scale(beta))?)
}

fn srcnn<'g>(s: &Session<'g, '_>, x: Var<'g>) -> Result<Var<'g>> {
    let h = s.conv2d(&x, "conv1", 1, 4)?.relu();
    let h = s.conv2d(&h, "conv2", 1, 0)?.relu();
    Ok(s.conv2d(&h, "conv3", 1, 2)?)
}

fn srresnet<'g>(spec: &ModelSpec, s: &Session<'g, '_>, x: Var<'g>) -> Result<Var<'g>> {
    let head = s.prelu(&s.conv2d(&x, "head", 1, 4)?, "head_act")?;
    let mut h = head;
    for i in 0..spec.n_blocks {
        let p = format!("body.{i}");
        let r = s.conv2d(&h, &format!("{p}.conv1"), 1, 1)?;
        let r = s.prelu(&s.batch_norm(&r, &format!("{p}.bn1"))?, &format!("{p}.act"))?;
        let r = s.conv2d(&r, &format!("{p}.conv2"), 1, 1)?;
        let r = s.batch_norm(&r, &format!("{p}.bn2"))?;
        h = h.add(&r)?;
    }
    let mut h = if spec.n_blocks > 0 { h.add(&head)? } else { head };
    for u in 0..spec.n_ub {
        let y = s.conv2d(&h, &format!("up.{u}.conv"), 1, 1)?.pixel_shuffle(2)?;
        h = s.prelu(&y, &format!("up.{u}.act"))?;
    }
    Ok(s.conv2d(&h, "tail", 1, 4)?)
}

fn esrgan<'g>(spec: &ModelSpec, s: &Session<'g, '_>, x: Var<'g>) -> Result<Var<'g>> {
    let head = s.conv2d(&x, "head", 1, 1)?;
    let mut h = head;
    for r in 0..spec.n_rrdb {
        h = rrdb(s, h, &format!("rrdb.{r}"), spec.res_scale)?;
    }
    let mut h = head.add(&s.conv2d(&h, "trunk", 1, 1)?)?;
    for u in 0..spec.n_ub {
        h = s
            .conv2d(&h, &format!("up.{u}"), 1, 1)?
            .pixel_shuffle(2)?
            .leaky_relu(LRELU_SLOPE);
    }
    let h = s.conv2d(&h, "hr", 1, 1)?.leaky_relu(LRELU_SLOPE);
    Ok(s.conv2d(&h, "tail", 1, 1)?)
}

fn disc_classic<'g>(spec: &ModelSpec, s: &Session<'g, '_>, x: Var<'g>) -> Result<Var<'g>> {
    let (n, _, h, w) = check_input(spec, &x)?;
    if h != spec.input_size || w != spec.input_size {
        return shape(format!(
            "classic discriminator expects {0}x{0} inputs, got {w}x{h}",
            spec.input_size
        ));
    }
    let mut y = x;
    for (i, &(_, stride)) in CLASSIC_BLOCKS.iter().enumerate() {
        y = s.conv2d(&y, &format!("block{i}.conv"), stride, 1)?;
        if i > 0 {
            y = s.batch_norm(&y, &format!("block{i}.bn"))?;
        }
        y = y.leaky_relu(LRELU_SLOPE);
    }
    let flat = y.reshape(&[n, y.value().numel() / n])?;
    let h = s.dense(&flat, "fc1")?.leaky_relu(LRELU_SLOPE);
    Ok(s.dense(&h, "fc2")?)
}

fn disc_unet<'g>(spec: &ModelSpec, s: &Session<'g, '_>, x: Var<'g>) -> Result<Var<'g>> {
    let (_, _, h, w) = check_input(spec, &x)?;
    if h % 8 != 0 || w % 8 != 0 {
        return shape(format!("U-Net discriminator needs sides divisible by 8, got {w}x{h}"));
    }
    let act = |v: Var<'g>| v.leaky_relu(LRELU_SLOPE);
    let x0 = act(s.sn_conv2d(&x, "in", 1, 1)?);
    let x1 = act(s.sn_conv2d(&x0, "down1", 2, 1)?);
    let x2 = act(s.sn_conv2d(&x1, "down2", 2, 1)?);
    let x3 = act(s.sn_conv2d(&x2, "down3", 2, 1)?);
    let u = act(s.sn_conv2d(&x3.upsample_bilinear(2)?, "up1", 1, 1)?).add(&x2)?;
    let u = act(s.sn_conv2d(&u.upsample_bilinear(2)?, "up2", 1, 1)?).add(&x1)?;
    let u = act(s.sn_conv2d(&u.upsample_bilinear(2)?, "up3", 1, 1)?).add(&x0)?;
    let u = act(s.sn_conv2d(&u, "refine1", 1, 1)?);
    let u = act(s.sn_conv2d(&u, "refine2", 1, 1)?);
    Ok(s.sn_conv2d(&u, "out", 1, 1)?)
}

/// Every tap name the backbone understands, in network order:
/// `conv{s}_{k}` (pre-activation) and `relu{s}_{k}`.
pub fn backbone_tap_names() -> Vec<String> {
    let mut v = Vec::new();
    for (s, &n) in VGG_CONVS.iter().enumerate() {
        for k in 1..=n {
            v.push(format!("conv{}_{k}", s + 1));
            v.push(format!("relu{}_{k}", s + 1));
        }
    }
    v
}

/// Last activation of each stage.
pub const STAGE_TAPS: [&str; 5] = ["relu1_2", "relu2_2", "relu3_4", "relu4_4", "relu5_4"];
/// Layer weights for [`STAGE_TAPS`] in the perceptual loss.
pub const STAGE_WEIGHTS: [f64; 5] = [0.1, 0.1, 1.0, 1.0, 1.0];

/// Resolves aliases: `stageN` is the last activation of stage N and
/// `percep` is the activation after the 4th conv of stage 5, before the
/// 5th pooling.
pub fn resolve_tap(name: &str) -> Result<String> {
    let resolved = match name {
        "percep" => "relu5_4".to_string(),
        _ => match name.strip_prefix("stage").and_then(|n| n.parse::<usize>().ok()) {
            Some(i @ 1..=5) => STAGE_TAPS[i - 1].to_string(),
            _ => name.to_string(),
        },
    };
    if !backbone_tap_names().contains(&resolved) {
        return invalid(format!("unknown tap `{name}`"));
    }
    Ok(resolved)
}

/// Runs the backbone until the deepest requested tap.
pub fn backbone_taps<'g>(s: &Session<'g, '_>, x: Var<'g>, taps: &[String]) -> Result<Vec<Var<'g>>> {
    let order = backbone_tap_names();
    let idx: Vec<usize> = taps
        .iter()
        .map(|t| {
            let r = resolve_tap(t)?;
            Ok(order.iter().position(|o| *o == r).expect("resolved taps exist"))
        })
        .collect::<Result<_>>()?;
    let Some(&deepest) = idx.iter().max() else {
        return invalid("no taps requested");
    };
    let mut found: Vec<Option<Var<'g>>> = vec![None; order.len()];
    let mut h = x;
    let mut pos = 0;
    'outer: for (st, &n) in VGG_CONVS.iter().enumerate() {
        if st > 0 {
            h = h.max_pool2()?;
        }
        for k in 1..=n {
            h = s.conv2d(&h, &format!("conv{}_{k}", st + 1), 1, 1)?;
            found[pos] = Some(h);
            h = h.relu();
            found[pos + 1] = Some(h);
            pos += 2;
            if pos > deepest {
                break 'outer;
            }
        }
    }
    Ok(idx.iter().map(|&i| found[i].expect("tap computed")).collect())
}

/// Dispatches on the model kind. Generators return unclamped outputs.
pub fn forward<'g>(spec: &ModelSpec, s: &Session<'g, '_>, x: Var<'g>) -> Result<Var<'g>> {
    check_input(spec, &x)?;
    match spec.kind {
        ModelKind::Srcnn => srcnn(s, x),
        ModelKind::Srresnet => srresnet(spec, s, x),
        ModelKind::EsrganGen => esrgan(spec, s, x),
        ModelKind::DiscClassic => disc_classic(spec, s, x),
        ModelKind::DiscUnet => disc_unet(spec, s, x),
        ModelKind::FeatureBackbone => {
            let taps: Vec<String> = STAGE_TAPS.iter().map(|t| t.to_string()).collect();
            Ok(*backbone_taps(s, x, &taps)?.last().expect("five taps"))
        }
    }
}

impl Model {
    pub fn build(spec: &ModelSpec, seed: u64) -> Result<Self> {
        build(spec, seed)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.trainable_count()
    }

    /// Frozen eval-mode forward on a batch.
    pub fn eval(&self, x: &Tensor) -> Result<Tensor> {
        let g = Graph::new();
        let s = Session::frozen(&g, &self.params, Mode::Eval);
        let y = forward(&self.spec, &s, g.input(x.clone()))?;
        Ok(y.value().as_ref().clone())
    }

    /// Generator inference on a batch, clamped to `[0, 1]`. SRCNN inputs
    /// must already be upscaled.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        if !self.spec.kind.is_generator() {
            return invalid(format!("{} is not a generator", self.spec.kind.name()));
        }
        Ok(self.eval(x)?.map(|v| v.clamp(0.0, 1.0)))
    }

    /// Whether inputs are bicubically upscaled before the network.
    pub fn pre_upscales(&self) -> bool {
        self.spec.kind == ModelKind::Srcnn
    }

    /// LR raster in, clamped SR raster out.
    pub fn super_resolve(&self, lr: &Raster) -> Result<Raster> {
        let input = if self.pre_upscales() {
            bicubic_resample(lr, lr.width() * self.spec.scale, lr.height() * self.spec.scale)?
        } else {
            lr.clone()
        };
        let y = self.infer(&input.to_tensor())?;
        let mut out = Raster::from_tensor(&y, 0)?.with_bit_depth(lr.bit_depth);
        out.gsd = lr.gsd.map(|g| g / self.spec.scale as f64);
        Ok(out)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(PathBuf, PathBuf)> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).at(dir)?;
        let (json, weights) = (dir.join("model.json"), dir.join("model.srwt"));
        std::fs::write(&json, serde_json::to_string_pretty(&self.spec)?).at(&json)?;
        srwt::save(&weights, &self.params.to_map())?;
        Ok((json, weights))
    }

    /// Rebuilds the architecture from `model.json`, then loads every
    /// weight from `model.srwt`; names and shapes must match exactly.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let json = dir.join("model.json");
        let text = std::fs::read_to_string(&json).at(&json)?;
        let spec: ModelSpec = serde_json::from_str(&text)?;
        let mut model = build(&spec, 0)?;
        model.params.load_map(srwt::load(dir.join("model.srwt"))?)?;
        Ok(model)
    }
}

/// Backbone used as a frozen feature extractor.
pub struct Backbone {
    pub model: Model,
    taps: Vec<String>,
    weights: Vec<f64>,
}

impl Backbone {
    pub fn new(model: Model, taps: &[&str], weights: &[f64]) -> Result<Self> {
        if model.spec.kind != ModelKind::FeatureBackbone {
            return invalid("backbone requires a feature_backbone model");
        }
        if taps.is_empty() {
            return invalid("backbone needs at least one tap");
        }
        if taps.len() != weights.len() {
            return invalid(format!("{} taps but {} weights", taps.len(), weights.len()));
        }
        let taps = taps.iter().map(|t| resolve_tap(t)).collect::<Result<_>>()?;
        Ok(Self {
            model,
            taps,
            weights: weights.to_vec(),
        })
    }

    /// The five stage taps with the standard perceptual weights.
    pub fn stages(model: Model) -> Result<Self> {
        Self::new(model, &STAGE_TAPS, &STAGE_WEIGHTS)
    }
}

impl FeatureExtractor for Backbone {
    fn tap_names(&self) -> Vec<String> {
        self.taps.clone()
    }

    fn tap_weights(&self) -> Vec<f64> {
        self.weights.clone()
    }

    fn extract<'g>(&self, g: &'g Graph, x: Var<'g>) -> Result<Vec<Var<'g>>> {
        let s = Session::frozen(g, &self.model.params, Mode::Eval);
        backbone_taps(&s, x, &self.taps)
    }
}
