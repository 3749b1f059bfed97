//! Losses, schedules and the two training phases: L1 pretraining and
//! alternating relativistic adversarial training.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use srforge_nn::{Adam, Graph, Mode, NnError, Session, Tensor, Var};

use crate::error::{invalid, shape, Error, IoContext, Result};
use crate::metrics::FeatureExtractor;
use crate::models::{forward, Model};
use crate::raster::{bicubic_resample, stack, Raster};

pub fn l1_loss<'g>(out: &Var<'g>, target: &Var<'g>) -> Result<Var<'g>> {
    if out.shape() != target.shape() {
        return shape(format!("L1 of {:?} vs {:?}", out.shape(), target.shape()));
    }
    Ok(out.sub(target)?.abs().mean())
}

/// `Σ_l w_l · mean|φ_l(out) − φ_l(target)|`; taps with zero weight are not
/// evaluated. The extractor's own parameters are never differentiated.
pub fn perceptual_loss<'g>(
    g: &'g Graph,
    out: &Var<'g>,
    target: &Var<'g>,
    extractor: &dyn FeatureExtractor,
    weights: &[f64],
) -> Result<Var<'g>> {
    let n_taps = extractor.tap_names().len();
    if weights.len() != n_taps {
        return invalid(format!("{} perceptual weights for {n_taps} taps", weights.len()));
    }
    let fo = extractor.extract(g, *out)?;
    let ft = extractor.extract(g, target.detach())?;
    let mut total: Option<Var<'g>> = None;
    for ((a, b), &w) in fo.iter().zip(&ft).zip(weights) {
        if w == 0.0 {
            continue;
        }
        let term = l1_loss(a, &b.detach())?.scale(w);
        total = Some(match total {
            Some(t) => t.add(&term)?,
            None => term,
        });
    }
    Ok(total.unwrap_or_else(|| g.constant(std::sync::Arc::new(Tensor::scalar(0.0)))))
}

/// Relativistic logit differences `C(x_r) − E[C(x_f)]` and
/// `C(x_f) − E[C(x_r)]`; the expectation runs over every element (batch
/// and, for per-pixel discriminators, space).
#[derive(Clone, Copy)]
pub struct RelativisticLogits<'g> {
    pub real_vs_fake: Var<'g>,
    pub fake_vs_real: Var<'g>,
}

impl<'g> RelativisticLogits<'g> {
    /// `(d_rf, d_fr)` as probabilities.
    pub fn probabilities(&self) -> (Tensor, Tensor) {
        (
            self.real_vs_fake.sigmoid().value().as_ref().clone(),
            self.fake_vs_real.sigmoid().value().as_ref().clone(),
        )
    }
}

pub fn relativistic_logits<'g>(c_real: &Var<'g>, c_fake: &Var<'g>) -> Result<RelativisticLogits<'g>> {
    if c_real.shape() != c_fake.shape() {
        return shape(format!(
            "critic outputs {:?} vs {:?}",
            c_real.shape(),
            c_fake.shape()
        ));
    }
    Ok(RelativisticLogits {
        real_vs_fake: c_real.sub_scalar(&c_fake.mean())?,
        fake_vs_real: c_fake.sub_scalar(&c_real.mean())?,
    })
}

/// `−E[log(1 − d_rf)] − E[log d_fr]` in logit space:
/// `E[softplus(rf)] + E[softplus(−fr)]`.
pub fn generator_adv_loss<'g>(l: &RelativisticLogits<'g>) -> Result<Var<'g>> {
    Ok(l.real_vs_fake
        .softplus()
        .mean()
        .add(&l.fake_vs_real.neg().softplus().mean())?)
}

/// `−E[log d_rf] − E[log(1 − d_fr)]` in logit space.
pub fn discriminator_adv_loss<'g>(l: &RelativisticLogits<'g>) -> Result<Var<'g>> {
    Ok(l.real_vs_fake
        .neg()
        .softplus()
        .mean()
        .add(&l.fake_vs_real.softplus().mean())?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    /// Adversarial weight λ.
    pub lambda: f64,
    /// Content (L1) weight η.
    pub eta: f64,
    /// One weight per backbone stage tap.
    pub percep: Vec<f64>,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda: 5e-3,
            eta: 1e-2,
            percep: vec![0.1, 0.1, 1.0, 1.0, 1.0],
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.lambda) || !ok(self.eta) || !self.percep.iter().all(|&w| ok(w)) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn uses_perceptual(&self) -> bool {
        self.percep.iter().any(|&w| w != 0.0)
    }
}

/// Terms of the generator objective; `None` terms are absent, not zero.
pub struct GeneratorLossParts<'g> {
    pub percep: Option<Var<'g>>,
    pub adversarial: Option<Var<'g>>,
    pub l1: Var<'g>,
}

/// `L_percep + λ·L_adv + η·L_1`. Terms whose weight is zero are dropped.
pub fn total_generator_loss<'g>(parts: &GeneratorLossParts<'g>, w: &LossWeights) -> Result<Var<'g>> {
    let named = [
        ("perceptual", parts.percep, 1.0),
        ("adversarial", parts.adversarial, w.lambda),
        ("L1", Some(parts.l1), w.eta),
    ];
    let mut total: Option<Var<'g>> = None;
    for (name, term, weight) in named {
        let Some(t) = term else { continue };
        if !t.item().is_finite() {
            return Err(Error::Divergence(format!("{name} loss is {}", t.item())));
        }
        if weight == 0.0 {
            continue;
        }
        let t = if weight == 1.0 { t } else { t.scale(weight) };
        total = Some(match total {
            Some(acc) => acc.add(&t)?,
            None => t,
        });
    }
    Ok(total.unwrap_or_else(|| parts.l1.scale(0.0)))
}

/// Halves the learning rate after `patience` epochs without improvement
/// (counted since the best epoch or the last halving) and signals a stop
/// after `stop_patience` epochs without improvement.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub patience: usize,
    pub stop_patience: usize,
    best: f64,
    since_best: usize,
    since_change: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlateauEvent {
    Improved,
    Stagnant,
    Halved,
    Stop,
}

impl PlateauScheduler {
    pub fn new(lr: f64, patience: usize, stop_patience: usize) -> Self {
        Self {
            lr,
            patience,
            stop_patience,
            best: f64::NEG_INFINITY,
            since_best: 0,
            since_change: 0,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// Feeds one epoch's validation metric (higher is better).
    pub fn observe(&mut self, metric: f64) -> PlateauEvent {
        if metric > self.best {
            self.best = metric;
            self.since_best = 0;
            self.since_change = 0;
            return PlateauEvent::Improved;
        }
        self.since_best += 1;
        self.since_change += 1;
        if self.since_best >= self.stop_patience {
            return PlateauEvent::Stop;
        }
        if self.since_change >= self.patience {
            self.since_change = 0;
            self.lr *= 0.5;
            return PlateauEvent::Halved;
        }
        PlateauEvent::Stagnant
    }
}

/// Learning rate for a 1-based epoch with halving every `every` epochs.
pub fn step_decay_lr(lr0: f64, every: usize, epoch: usize) -> f64 {
    let halvings = epoch.saturating_sub(1) / every.max(1);
    lr0 * 0.5f64.powi(halvings as i32)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSpec {
    pub pretrain_lr0: f64,
    pub plateau_patience: usize,
    pub stop_patience: usize,
    /// Upper bound on pretraining epochs.
    pub pretrain_epochs: usize,
    pub gan_lr0: f64,
    pub gan_halve_every: usize,
    pub gan_total: usize,
    pub batch_size: usize,
    /// Save a checkpoint every this many epochs; 0 keeps only the best
    /// (pretraining) or the final (adversarial) weights.
    pub checkpoint_every: usize,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            pretrain_lr0: 2e-4,
            plateau_patience: 10,
            stop_patience: 25,
            pretrain_epochs: 1000,
            gan_lr0: 1e-4,
            gan_halve_every: 500,
            gan_total: 2000,
            batch_size: 8,
            checkpoint_every: 0,
        }
    }
}

impl ScheduleSpec {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::Config(m.into()));
        if self.plateau_patience == 0 || self.stop_patience == 0 {
            return err("patience values must be positive");
        }
        if self.stop_patience <= self.plateau_patience {
            return err("stop_patience must exceed plateau_patience");
        }
        if !(self.pretrain_lr0 > 0.0 && self.gan_lr0 > 0.0) {
            return err("learning rates must be positive");
        }
        if self.batch_size == 0 || self.gan_halve_every == 0 {
            return err("batch_size and gan_halve_every must be positive");
        }
        Ok(())
    }
}

/// Everything a training run reads from a config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub schedule: ScheduleSpec,
    pub weights: LossWeights,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.weights.validate()
    }
}

/// One LR/HR training example.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub lr: Raster,
    pub hr: Raster,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValMetrics {
    pub l1: f64,
    /// PSNR of the pooled squared error over the whole validation set.
    pub psnr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: String,
    pub seed: u64,
    pub lr_g: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lr_d: Option<f64>,
    pub train_l1: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub train_g_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub train_d_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub train_adv: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub train_percep: Option<f64>,
    pub val_l1: f64,
    pub val_psnr: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub event: Option<PlateauEvent>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub checkpoint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum RunStatus {
    Completed,
    EarlyStopped { epoch: usize },
    Diverged { epoch: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRunRecord {
    pub phase: String,
    pub model: String,
    pub seed: u64,
    pub config: TrainConfig,
    /// Validation metrics before the first update.
    pub baseline: ValMetrics,
    pub epochs: Vec<EpochRecord>,
    pub checkpoints: Vec<String>,
    pub status: RunStatus,
}

impl TrainRunRecord {
    /// One JSON object per epoch.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut s = String::new();
        for e in &self.epochs {
            s.push_str(&serde_json::to_string(e)?);
            s.push('\n');
        }
        Ok(s)
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).at(dir)?;
        let p = dir.join("run.jsonl");
        let mut f = std::fs::File::create(&p).at(&p)?;
        f.write_all(self.to_jsonl()?.as_bytes()).at(&p)?;
        let p = dir.join("run.json");
        std::fs::write(&p, serde_json::to_string_pretty(self)?).at(&p)
    }
}

/// Network input for an LR raster: bicubically upscaled for models that
/// expect it.
pub fn generator_input(model: &Model, lr: &Raster) -> Result<Raster> {
    if model.pre_upscales() {
        let s = model.spec.scale;
        bicubic_resample(lr, lr.width() * s, lr.height() * s)
    } else {
        Ok(lr.clone())
    }
}

struct Prepared {
    inputs: Vec<Raster>,
    targets: Vec<Raster>,
}

fn prepare(model: &Model, samples: &[Sample]) -> Result<Prepared> {
    if samples.is_empty() {
        return invalid("dataset is empty");
    }
    let inputs = samples
        .iter()
        .map(|s| generator_input(model, &s.lr))
        .collect::<Result<Vec<_>>>()?;
    let targets: Vec<Raster> = samples.iter().map(|s| s.hr.clone()).collect();
    Ok(Prepared { inputs, targets })
}

/// Shuffled index batches; a trailing single-item batch is merged into
/// the previous one so batch statistics are always defined.
fn batches(n: usize, batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut out: Vec<Vec<usize>> = idx.chunks(batch).map(|c| c.to_vec()).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        let last = out.pop().unwrap();
        out.last_mut().unwrap().extend(last);
    }
    out
}

fn gather(rasters: &[Raster], idx: &[usize]) -> Result<Tensor> {
    let refs: Vec<&Raster> = idx.iter().map(|&i| &rasters[i]).collect();
    stack(&refs)
}

/// Validation L1 and pooled PSNR of clamped eval-mode outputs.
pub fn validate(model: &Model, samples: &[Sample]) -> Result<ValMetrics> {
    let p = prepare(model, samples)?;
    let (mut abs, mut sq, mut n) = (0.0, 0.0, 0usize);
    for (x, y) in p.inputs.iter().zip(&p.targets) {
        let out = model.infer(&x.to_tensor())?;
        if out.data().len() != y.data().len() {
            return shape(format!(
                "model output {:?} does not match target {}x{}",
                out.shape(),
                y.width(),
                y.height()
            ));
        }
        for (a, b) in out.data().iter().zip(y.data()) {
            abs += (a - b).abs();
            sq += (a - b) * (a - b);
        }
        n += y.data().len();
    }
    let mse = sq / n as f64;
    Ok(ValMetrics {
        l1: abs / n as f64,
        psnr: if mse == 0.0 {
            f64::INFINITY
        } else {
            10.0 * (1.0 / mse).log10()
        },
    })
}

fn check_finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence(format!("{name} is {v}")))
    }
}

fn checkpoint(model: &Model, dir: Option<&Path>, name: &str) -> Result<Option<String>> {
    let Some(dir) = dir else { return Ok(None) };
    let path = dir.join(name);
    model.save(&path)?;
    Ok(Some(path.display().to_string()))
}

/// Outcome of a training phase: the run record, the weights to keep
/// (best validation for pretraining, last good for adversarial), and the
/// final discriminator for adversarial runs.
pub struct TrainOutput {
    pub record: TrainRunRecord,
    pub generator: Model,
    /// Weights after the last completed epoch.
    pub last_generator: Model,
    pub discriminator: Option<Model>,
}

/// Minimizes L1 with Adam under the plateau schedule.
pub fn pretrain(
    generator: Model,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
    seed: u64,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if val.is_empty() {
        return invalid("validation set is empty");
    }
    let sched = &cfg.schedule;
    let data = prepare(&generator, train)?;
    let mut model = generator;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut opt = Adam::default();
    let mut plateau = PlateauScheduler::new(sched.pretrain_lr0, sched.plateau_patience, sched.stop_patience);
    let baseline = validate(&model, val)?;
    let mut best = model.clone();
    let mut last_good = model.clone();
    let mut record = TrainRunRecord {
        phase: "pretrain".into(),
        model: model.spec.kind.name().into(),
        seed,
        config: cfg.clone(),
        baseline,
        epochs: Vec::new(),
        checkpoints: Vec::new(),
        status: RunStatus::Completed,
    };
    for epoch in 1..=sched.pretrain_epochs {
        let lr = plateau.lr;
        let mut loss_sum = 0.0;
        let mut count = 0usize;
        for b in batches(data.inputs.len(), sched.batch_size, &mut rng) {
            let step = (|| -> Result<f64> {
                let (grads, updates, loss) = {
                    let g = Graph::new();
                    let s = Session::new(&g, &model.params, Mode::Train);
                    let x = g.input(gather(&data.inputs, &b)?);
                    let y = g.input(gather(&data.targets, &b)?);
                    let out = forward(&model.spec, &s, x)?;
                    let loss = l1_loss(&out, &y)?;
                    check_finite("L1 loss", loss.item())?;
                    let grads = g.backward(loss)?.named();
                    (grads, s.into_updates(), loss.item())
                };
                opt.step(&mut model.params, &grads, lr)?;
                model.params.apply(updates)?;
                Ok(loss)
            })();
            match step {
                Ok(l) => {
                    loss_sum += l * b.len() as f64;
                    count += b.len();
                }
                Err(e @ (Error::Divergence(_) | Error::Nn(NnError::Divergence { .. }))) => {
                    record.status = RunStatus::Diverged {
                        epoch,
                        reason: e.to_string(),
                    };
                    return Ok(TrainOutput {
                        record,
                        generator: best,
                        last_generator: last_good,
                        discriminator: None,
                    });
                }
                Err(e) => return Err(e),
            }
        }
        let v = validate(&model, val)?;
        last_good = model.clone();
        let event = plateau.observe(v.psnr);
        let mut ck = None;
        if event == PlateauEvent::Improved {
            best = model.clone();
            ck = checkpoint(&best, checkpoint_dir, "best")?;
        }
        if sched.checkpoint_every > 0 && epoch % sched.checkpoint_every == 0 {
            ck = checkpoint(&model, checkpoint_dir, &format!("epoch_{epoch:04}"))?;
        }
        if let Some(c) = &ck {
            if !record.checkpoints.contains(c) {
                record.checkpoints.push(c.clone());
            }
        }
        record.epochs.push(EpochRecord {
            epoch,
            phase: "pretrain".into(),
            seed,
            lr_g: lr,
            lr_d: None,
            train_l1: loss_sum / count as f64,
            train_g_loss: None,
            train_d_loss: None,
            train_adv: None,
            train_percep: None,
            val_l1: v.l1,
            val_psnr: v.psnr,
            event: Some(event),
            checkpoint: ck,
        });
        if event == PlateauEvent::Stop {
            record.status = RunStatus::EarlyStopped { epoch };
            break;
        }
    }
    Ok(TrainOutput {
        record,
        generator: best,
        last_generator: model,
        discriminator: None,
    })
}

/// Batch-mean losses of one alternating update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GanStep {
    pub g_loss: f64,
    pub d_loss: f64,
    pub l1: f64,
    pub adv: f64,
    pub percep: f64,
}

fn constant<'g>(g: &'g Graph, t: Tensor) -> Var<'g> {
    g.constant(std::sync::Arc::new(t))
}

/// One discriminator update on the detached generator output, then one
/// generator update against the freshly updated, frozen discriminator.
#[allow(clippy::too_many_arguments)]
pub fn gan_step(
    gen: &mut Model,
    disc: &mut Model,
    backbone: Option<&dyn FeatureExtractor>,
    w: &LossWeights,
    x: Tensor,
    y: Tensor,
    opt_g: &mut Adam,
    opt_d: &mut Adam,
    lr: f64,
) -> Result<GanStep> {
    let gg = Graph::new();
    let sg = Session::new(&gg, &gen.params, Mode::Train);
    let sr = forward(&gen.spec, &sg, gg.input(x))?;
    let hr = constant(&gg, y.clone());

    // discriminator step on a detached copy of the generator output
    let d_loss = {
        let (grads, updates, loss) = {
            let gd = Graph::new();
            let sd = Session::new(&gd, &disc.params, Mode::Train);
            let c_real = forward(&disc.spec, &sd, constant(&gd, y))?;
            let c_fake = forward(&disc.spec, &sd, constant(&gd, sr.value().as_ref().clone()))?;
            let loss = discriminator_adv_loss(&relativistic_logits(&c_real, &c_fake)?)?;
            check_finite("discriminator loss", loss.item())?;
            (gd.backward(loss)?.named(), sd.into_updates(), loss.item())
        };
        opt_d.step(&mut disc.params, &grads, lr)?;
        disc.params.apply(updates)?;
        loss
    };

    // generator step against the updated, frozen discriminator
    let (grads, updates, step) = {
        let l1 = l1_loss(&sr, &hr)?;
        let adv = if w.lambda != 0.0 {
            let sd = Session::frozen(&gg, &disc.params, Mode::Train);
            let c_real = forward(&disc.spec, &sd, hr)?;
            let c_fake = forward(&disc.spec, &sd, sr)?;
            Some(generator_adv_loss(&relativistic_logits(&c_real, &c_fake)?)?)
        } else {
            None
        };
        let percep = match backbone {
            Some(b) if w.uses_perceptual() => Some(perceptual_loss(&gg, &sr, &hr, b, &w.percep)?),
            _ => None,
        };
        let parts = GeneratorLossParts {
            percep,
            adversarial: adv,
            l1,
        };
        let total = total_generator_loss(&parts, w)?;
        check_finite("generator loss", total.item())?;
        let grads = gg.backward(total)?.named();
        let step = GanStep {
            g_loss: total.item(),
            d_loss,
            l1: l1.item(),
            adv: adv.map_or(0.0, |a| a.item()),
            percep: percep.map_or(0.0, |p| p.item()),
        };
        (grads, sg.into_updates(), step)
    };
    opt_g.step(&mut gen.params, &grads, lr)?;
    gen.params.apply(updates)?;
    Ok(step)
}

/// Alternating discriminator / generator updates with step-decay learning
/// rates shared by both networks.
pub fn adversarial_train(
    generator: Model,
    discriminator: Model,
    backbone: Option<&dyn FeatureExtractor>,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
    seed: u64,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if val.is_empty() {
        return invalid("validation set is empty");
    }
    if !generator.spec.kind.is_generator() {
        return invalid("adversarial training needs a generator");
    }
    if !matches!(
        discriminator.spec.kind,
        crate::models::ModelKind::DiscClassic | crate::models::ModelKind::DiscUnet
    ) {
        return invalid("adversarial training needs a discriminator");
    }
    if cfg.weights.uses_perceptual() && backbone.is_none() {
        return invalid("perceptual weights are set but no backbone was given");
    }
    let (sched, w) = (&cfg.schedule, &cfg.weights);
    let data = prepare(&generator, train)?;
    let (mut gen, mut disc) = (generator, discriminator);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut opt_g, mut opt_d) = (Adam::default(), Adam::default());
    let baseline = validate(&gen, val)?;
    let mut last_good = (gen.clone(), disc.clone());
    let mut record = TrainRunRecord {
        phase: "gan".into(),
        model: format!("{}+{}", gen.spec.kind.name(), disc.spec.kind.name()),
        seed,
        config: cfg.clone(),
        baseline,
        epochs: Vec::new(),
        checkpoints: Vec::new(),
        status: RunStatus::Completed,
    };
    for epoch in 1..=sched.gan_total {
        let lr = step_decay_lr(sched.gan_lr0, sched.gan_halve_every, epoch);
        let mut sums = [0.0f64; 5];
        let mut count = 0usize;
        for b in batches(data.inputs.len(), sched.batch_size, &mut rng) {
            let x = gather(&data.inputs, &b)?;
            let y = gather(&data.targets, &b)?;
            match gan_step(&mut gen, &mut disc, backbone, w, x, y, &mut opt_g, &mut opt_d, lr) {
                Ok(s) => {
                    let k = b.len() as f64;
                    for (acc, v) in sums.iter_mut().zip([s.g_loss, s.d_loss, s.l1, s.adv, s.percep]) {
                        *acc += v * k;
                    }
                    count += b.len();
                }
                Err(e @ (Error::Divergence(_) | Error::Nn(NnError::Divergence { .. }))) => {
                    record.status = RunStatus::Diverged {
                        epoch,
                        reason: e.to_string(),
                    };
                    let ck = checkpoint(&last_good.0, checkpoint_dir, "last_good")?;
                    record.checkpoints.extend(ck);
                    return Ok(TrainOutput {
                        record,
                        generator: last_good.0.clone(),
                        last_generator: last_good.0,
                        discriminator: Some(last_good.1),
                    });
                }
                Err(e) => return Err(e),
            }
        }
        let m = sums.map(|s| s / count as f64);
        let v = validate(&gen, val)?;
        last_good = (gen.clone(), disc.clone());
        let mut ck = None;
        let due = sched.checkpoint_every > 0 && epoch % sched.checkpoint_every == 0;
        if due || epoch == sched.gan_total {
            let name = format!("epoch_{epoch:04}");
            ck = checkpoint(&gen, checkpoint_dir, &format!("{name}/generator"))?;
            if let Some(dir) = checkpoint_dir {
                disc.save(dir.join(&name).join("discriminator"))?;
            }
            record.checkpoints.extend(ck.clone());
        }
        record.epochs.push(EpochRecord {
            epoch,
            phase: "gan".into(),
            seed,
            lr_g: lr,
            lr_d: Some(lr),
            train_l1: m[2],
            train_g_loss: Some(m[0]),
            train_d_loss: Some(m[1]),
            train_adv: Some(m[3]),
            train_percep: Some(m[4]),
            val_l1: v.l1,
            val_psnr: v.psnr,
            event: None,
            checkpoint: ck,
        });
    }
    Ok(TrainOutput {
        record,
        generator: gen.clone(),
        last_generator: gen,
        discriminator: Some(disc),
    })
}

/// Finite-difference check of every loss term on random inputs.
pub fn loss_gradient_suite(cases: usize, seed: u64) -> Result<Vec<srforge_nn::gradcheck::SuiteEntry>> {
    use rand::Rng;
    use srforge_nn::gradcheck::{check, SuiteEntry};

    let wrap = |e: Error| NnError::InvalidArgument {
        op: "loss",
        detail: e.to_string(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rand_t = |rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64| {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect())
    };
    let spec = crate::models::ModelSpec {
        channels: 2,
        ..crate::models::ModelSpec::new(crate::models::ModelKind::FeatureBackbone)
    };
    let backbone = crate::models::Backbone::stages(Model::build(&spec, seed)?)?;
    let weights = LossWeights::default();
    let mut entries: BTreeMap<&'static str, f64> = BTreeMap::new();
    for case in 0..cases {
        let n = rng.random_range(1..=3);
        let c = rng.random_range(1..=3);
        let (h, wd) = (rng.random_range(2..=6), rng.random_range(2..=6));
        let a = rand_t(&mut rng, &[n, c, h, wd], 0.0, 1.0)?;
        // offsets bounded away from zero keep |a − b| off its kink
        let off = rand_t(&mut rng, &[n, c, h, wd], 0.05, 0.5)?;
        let signs: Vec<f64> = (0..off.numel()).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
        let b = Tensor::from_vec(
            a.shape(),
            a.data().iter().zip(off.data()).zip(&signs).map(|((x, o), s)| x + s * o).collect(),
        )?;
        let cs = seed ^ case as u64;
        let r = check(&[a.clone(), b.clone()], cs, |_, v| l1_loss(&v[0], &v[1]).map_err(wrap))?;
        let e = entries.entry("l1_loss").or_default();
        *e = e.max(r.max_rel_err);

        let critic_shape = if rng.random::<bool>() { vec![n.max(2), 1] } else { vec![n, 1, h, wd] };
        let cr = rand_t(&mut rng, &critic_shape, -3.0, 3.0)?;
        let cf = rand_t(&mut rng, &critic_shape, -3.0, 3.0)?;
        let r = check(&[cr.clone(), cf.clone()], cs, |_, v| {
            generator_adv_loss(&relativistic_logits(&v[0], &v[1]).map_err(wrap)?).map_err(wrap)
        })?;
        let e = entries.entry("generator_adv_loss").or_default();
        *e = e.max(r.max_rel_err);
        let r = check(&[cr.clone(), cf.clone()], cs, |_, v| {
            discriminator_adv_loss(&relativistic_logits(&v[0], &v[1]).map_err(wrap)?).map_err(wrap)
        })?;
        let e = entries.entry("discriminator_adv_loss").or_default();
        *e = e.max(r.max_rel_err);
        let r = check(&[cr.clone(), cf.clone()], cs, |_, v| {
            let l = relativistic_logits(&v[0], &v[1]).map_err(wrap)?;
            Ok(l.real_vs_fake.sigmoid().add(&l.fake_vs_real.sigmoid())?)
        })?;
        let e = entries.entry("relativistic_logits").or_default();
        *e = e.max(r.max_rel_err);

        // perceptual loss through a narrow backbone on RGB inputs
        let pshape = [1, 3, rng.random_range(16..=18), rng.random_range(16..=18)];
        let pa = rand_t(&mut rng, &pshape, 0.0, 1.0)?;
        let pb = rand_t(&mut rng, &pshape, 0.0, 1.0)?;
        let r = check(&[pa.clone()], cs, |g, v| {
            let t = g.input(pb.clone());
            perceptual_loss(g, &v[0], &t, &backbone, &weights.percep).map_err(wrap)
        })?;
        let e = entries.entry("perceptual_loss").or_default();
        *e = e.max(r.max_rel_err);

        // total objective: differentiate through all three weighted parts
        let r = check(&[a.clone(), cr.clone(), cf.clone()], cs, |_, v| {
            let l1 = l1_loss(&v[0], &v[0].graph().input(b.clone())).map_err(wrap)?;
            let adv = generator_adv_loss(&relativistic_logits(&v[1], &v[2]).map_err(wrap)?).map_err(wrap)?;
            let percep = v[0].mul(&v[0])?.mean();
            let parts = GeneratorLossParts {
                percep: Some(percep),
                adversarial: Some(adv),
                l1,
            };
            total_generator_loss(&parts, &weights).map_err(wrap)
        })?;
        let e = entries.entry("total_generator_loss").or_default();
        *e = e.max(r.max_rel_err);
    }
    Ok(entries
        .into_iter()
        .map(|(op, worst)| SuiteEntry { op, cases, worst })
        .collect())
}
