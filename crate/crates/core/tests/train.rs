use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use srforge_core::models::{forward, Model, ModelKind, ModelSpec};
use srforge_core::raster::bicubic_resample;
use srforge_core::train::*;
use srforge_core::Raster;
use srforge_nn::{Adam, Graph, Mode, Session, Tensor};

fn logits_pair(real: Tensor, fake: Tensor) -> (f64, f64) {
    let g = Graph::new();
    let r = g.constant(Arc::new(real));
    let f = g.constant(Arc::new(fake));
    let l = relativistic_logits(&r, &f).unwrap();
    (
        generator_adv_loss(&l).unwrap().item(),
        discriminator_adv_loss(&l).unwrap().item(),
    )
}

#[test]
fn equal_critics_give_two_ln_two() {
    // d_rf = d_fr = 0.5 whenever every critic output is the same
    for v in [-3.0, 0.0, 0.7] {
        let (lg, ld) = logits_pair(Tensor::full(&[4, 1], v), Tensor::full(&[4, 1], v));
        let want = 2.0 * std::f64::consts::LN_2;
        assert!((lg - want).abs() < 1e-12 && (ld - want).abs() < 1e-12);
    }
}

#[test]
fn confident_discriminator_has_vanishing_loss() {
    let (lg, ld) = logits_pair(Tensor::full(&[2, 1], 40.0), Tensor::full(&[2, 1], -40.0));
    assert!(ld < 1e-30);
    assert!((lg - 160.0).abs() < 1e-9);
}

#[test]
fn adversarial_losses_match_probability_form() {
    let sigma = |x: f64| 1.0 / (1.0 + (-x).exp());
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let n = rng.random_range(2..9);
        let real: Vec<f64> = (0..n).map(|_| rng.random_range(-4.0..4.0)).collect();
        let fake: Vec<f64> = (0..n).map(|_| rng.random_range(-4.0..4.0)).collect();
        let mr = real.iter().sum::<f64>() / n as f64;
        let mf = fake.iter().sum::<f64>() / n as f64;
        let (mut lg, mut ld) = (0.0, 0.0);
        for i in 0..n {
            let d_rf = sigma(real[i] - mf);
            let d_fr = sigma(fake[i] - mr);
            lg += -(1.0 - d_rf).ln() - d_fr.ln();
            ld += -d_rf.ln() - (1.0 - d_fr).ln();
        }
        let (g, d) = logits_pair(
            Tensor::from_vec(&[n, 1], real.clone()).unwrap(),
            Tensor::from_vec(&[n, 1], fake.clone()).unwrap(),
        );
        assert!((g - lg / n as f64).abs() < 1e-10);
        assert!((d - ld / n as f64).abs() < 1e-10);
        // swapping the roles of real and fake exchanges the two objectives
        let (g2, d2) = logits_pair(
            Tensor::from_vec(&[n, 1], fake).unwrap(),
            Tensor::from_vec(&[n, 1], real).unwrap(),
        );
        assert_eq!(g.to_bits(), d2.to_bits());
        assert_eq!(d.to_bits(), g2.to_bits());
    }
}

#[test]
fn probabilities_of_balanced_critic_are_one_half() {
    let g = Graph::new();
    let r = g.constant(Arc::new(Tensor::full(&[3, 1, 2, 2], 1.5)));
    let l = relativistic_logits(&r, &r).unwrap();
    let (a, b) = l.probabilities();
    assert!(a.data().iter().chain(b.data()).all(|&p| p == 0.5));
    let f = g.constant(Arc::new(Tensor::full(&[2, 1], 0.0)));
    assert!(relativistic_logits(&r, &f).is_err());
}

#[test]
fn total_loss_composition_is_exact() {
    let g = Graph::new();
    let c = |v: f64| g.constant(Arc::new(Tensor::scalar(v)));
    let parts = GeneratorLossParts {
        percep: Some(c(1.0)),
        adversarial: Some(c(2.0)),
        l1: c(3.0),
    };
    let w = LossWeights::default();
    assert_eq!(total_generator_loss(&parts, &w).unwrap().item(), 1.04);

    let bad = GeneratorLossParts {
        percep: None,
        adversarial: Some(c(f64::NAN)),
        l1: c(1.0),
    };
    assert!(matches!(
        total_generator_loss(&bad, &w),
        Err(srforge_core::Error::Divergence(_))
    ));
}

#[test]
fn l1_loss_is_mean_absolute_error() {
    let g = Graph::new();
    let a = g.input(Tensor::from_vec(&[1, 1, 1, 4], vec![0.0, 1.0, 2.0, 3.0]).unwrap());
    let b = g.input(Tensor::from_vec(&[1, 1, 1, 4], vec![1.0, 1.0, 0.0, 3.5]).unwrap());
    assert!((l1_loss(&a, &b).unwrap().item() - 3.5 / 4.0).abs() < 1e-15);
    let c = g.input(Tensor::zeros(&[1, 1, 2, 2]));
    assert!(l1_loss(&a, &c).is_err());
}

#[test]
fn plateau_halves_at_ten_and_stops_at_twenty_five() {
    let mut s = PlateauScheduler::new(2e-4, 10, 25);
    assert_eq!(s.observe(20.0), PlateauEvent::Improved);
    let mut halved = Vec::new();
    let mut stop = None;
    for k in 1..=40 {
        match s.observe(19.0) {
            PlateauEvent::Halved => halved.push(k),
            PlateauEvent::Stop => {
                stop = Some(k);
                break;
            }
            _ => {}
        }
    }
    assert_eq!(halved, vec![10, 20]);
    assert_eq!(stop, Some(25));
    assert_eq!(s.lr, 5e-5);

    // an improvement resets both counters
    let mut s = PlateauScheduler::new(1.0, 10, 25);
    s.observe(1.0);
    for _ in 0..9 {
        assert_eq!(s.observe(0.5), PlateauEvent::Stagnant);
    }
    assert_eq!(s.observe(1.5), PlateauEvent::Improved);
    for _ in 0..9 {
        assert_eq!(s.observe(1.5), PlateauEvent::Stagnant);
    }
    assert_eq!(s.observe(1.0), PlateauEvent::Halved);
}

#[test]
fn gan_lr_halves_at_interval_multiples() {
    for every in [1, 3, 500] {
        for epoch in 1..=4 * every {
            let lr = step_decay_lr(1e-4, every, epoch);
            let prev = step_decay_lr(1e-4, every, epoch.saturating_sub(1).max(1));
            if epoch > 1 && (epoch - 1) % every == 0 {
                assert_eq!(lr, prev / 2.0, "every {every} epoch {epoch}");
            } else {
                assert_eq!(lr, prev);
            }
        }
    }
    assert_eq!(step_decay_lr(1e-4, 500, 500), 1e-4);
    assert_eq!(step_decay_lr(1e-4, 500, 501), 5e-5);
    assert_eq!(step_decay_lr(1e-4, 500, 2000), 1.25e-5);
}

#[test]
fn schedule_validation() {
    assert!(ScheduleSpec::default().validate().is_ok());
    let bad = ScheduleSpec {
        stop_patience: 5,
        ..Default::default()
    };
    assert!(bad.validate().is_err());
    let w = LossWeights {
        lambda: -1.0,
        ..Default::default()
    };
    assert!(w.validate().is_err());
    let cfg: TrainConfig = serde_json::from_str(r#"{"schedule": {"batch_size": 4}}"#).unwrap();
    assert_eq!(cfg.schedule.batch_size, 4);
    assert_eq!(cfg.schedule.plateau_patience, 10);
    assert!(serde_json::from_str::<TrainConfig>(r#"{"bogus": 1}"#).is_err());
}

fn texture(rng: &mut ChaCha8Rng, side: usize) -> Raster {
    let f: Vec<f64> = (0..6).map(|_| rng.random_range(0.2..0.9)).collect();
    Raster::from_fn(side, side, 3, |b, y, x| {
        let (x, y) = (x as f64, y as f64);
        0.5 + 0.25 * (x * f[0] + y * f[1] + b as f64).sin() + 0.15 * (x * f[2] - y * f[3 + b % 3]).cos()
    })
    .unwrap()
}

fn samples(n: usize, seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let hr = texture(&mut rng, 16);
            let lr = bicubic_resample(&hr, 8, 8).unwrap();
            Sample {
                id: format!("s{i}"),
                lr,
                hr,
            }
        })
        .collect()
}

fn small(kind: ModelKind) -> ModelSpec {
    let mut s = ModelSpec::new(kind);
    s.channels = 8;
    s.growth = 4;
    s.n_rrdb = 1;
    s.n_blocks = 2;
    s.input_size = 16;
    s
}

fn quick_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        schedule: ScheduleSpec {
            pretrain_lr0: 1e-3,
            pretrain_epochs: epochs,
            plateau_patience: 1000,
            stop_patience: 1001,
            gan_lr0: 1e-3,
            gan_halve_every: 1000,
            gan_total: epochs,
            batch_size: 3,
            checkpoint_every: 0,
        },
        weights: LossWeights::default(),
    }
}

fn bits(m: &Model) -> Vec<(String, Vec<u64>)> {
    m.params
        .iter()
        .map(|(k, t)| (k.to_string(), t.tensor.data().iter().map(|v| v.to_bits()).collect()))
        .collect()
}

#[test]
fn degenerate_adversarial_run_equals_pretraining() {
    let train = samples(7, 1);
    let val = samples(2, 2);
    let mut cfg = quick_config(3);
    cfg.weights = LossWeights {
        lambda: 0.0,
        eta: 1.0,
        percep: vec![0.0; 5],
    };
    for kind in [ModelKind::Srresnet, ModelKind::EsrganGen] {
        let g0 = Model::build(&small(kind), 11).unwrap();
        let d0 = Model::build(&small(ModelKind::DiscUnet), 12).unwrap();
        let pre = pretrain(g0.clone(), &train, &val, &cfg, 5, None).unwrap();
        let gan = adversarial_train(g0, d0, None, &train, &val, &cfg, 5, None).unwrap();
        assert_eq!(bits(&pre.last_generator), bits(&gan.last_generator), "{kind:?}");
        for (a, b) in pre.record.epochs.iter().zip(&gan.record.epochs) {
            assert_eq!(a.train_l1.to_bits(), b.train_l1.to_bits());
            assert_eq!(b.train_g_loss.unwrap().to_bits(), a.train_l1.to_bits());
            assert_eq!(a.val_l1.to_bits(), b.val_l1.to_bits());
        }
        assert_eq!(gan.record.epochs.len(), 3);
    }
}

#[test]
fn alternation_updates_each_network_against_the_other() {
    let train = samples(4, 3);
    let gen = Model::build(&small(ModelKind::EsrganGen), 1).unwrap();
    let disc = Model::build(&small(ModelKind::DiscClassic), 2).unwrap();
    let x = srforge_core::raster::stack(&train.iter().map(|s| &s.lr).collect::<Vec<_>>()).unwrap();
    let y = srforge_core::raster::stack(&train.iter().map(|s| &s.hr).collect::<Vec<_>>()).unwrap();
    let w = LossWeights {
        percep: vec![0.0; 5],
        ..Default::default()
    };
    let lr = 1e-3;

    let (mut g1, mut d1) = (gen.clone(), disc.clone());
    let (mut og, mut od) = (Adam::default(), Adam::default());
    let step = gan_step(&mut g1, &mut d1, None, &w, x.clone(), y.clone(), &mut og, &mut od, lr).unwrap();

    // discriminator oracle: the generator output is a fixed input
    let sr = {
        let g = Graph::new();
        let s = Session::frozen(&g, &gen.params, Mode::Train);
        forward(&gen.spec, &s, g.input(x.clone())).unwrap().value().as_ref().clone()
    };
    let mut d2 = disc.clone();
    let (grads, upd, ld) = {
        let g = Graph::new();
        let s = Session::new(&g, &disc.params, Mode::Train);
        let cr = forward(&disc.spec, &s, g.input(y.clone())).unwrap();
        let cf = forward(&disc.spec, &s, g.input(sr)).unwrap();
        let l = discriminator_adv_loss(&relativistic_logits(&cr, &cf).unwrap()).unwrap();
        (g.backward(l).unwrap().named(), s.into_updates(), l.item())
    };
    assert!(grads.keys().all(|k| disc.params.contains(k)));
    Adam::default().step(&mut d2.params, &grads, lr).unwrap();
    d2.params.apply(upd).unwrap();
    assert_eq!(step.d_loss.to_bits(), ld.to_bits());
    assert_eq!(bits(&d1), bits(&d2));

    // generator oracle: train against the already updated discriminator
    let mut g2 = gen.clone();
    let (grads, upd) = {
        let g = Graph::new();
        let s = Session::new(&g, &gen.params, Mode::Train);
        let sr = forward(&gen.spec, &s, g.input(x)).unwrap();
        let hr = g.input(y);
        let sd = Session::frozen(&g, &d2.params, Mode::Train);
        let cr = forward(&d2.spec, &sd, hr).unwrap();
        let cf = forward(&d2.spec, &sd, sr).unwrap();
        let adv = generator_adv_loss(&relativistic_logits(&cr, &cf).unwrap()).unwrap();
        let l1 = l1_loss(&sr, &hr).unwrap();
        let total = adv.scale(w.lambda).add(&l1.scale(w.eta)).unwrap();
        assert_eq!(total.item().to_bits(), step.g_loss.to_bits());
        let grads = g.backward(total).unwrap().named();
        assert!(grads.keys().all(|k| gen.params.contains(k)));
        (grads, s.into_updates())
    };
    Adam::default().step(&mut g2.params, &grads, lr).unwrap();
    g2.params.apply(upd).unwrap();
    assert_eq!(bits(&g1), bits(&g2));
    assert_ne!(bits(&g1), bits(&gen));
}

#[test]
fn runs_are_reproducible_under_a_seed() {
    let train = samples(6, 4);
    let val = samples(2, 5);
    let cfg = quick_config(2);
    let run = |seed| {
        let g = Model::build(&small(ModelKind::Srresnet), 3).unwrap();
        let d = Model::build(&small(ModelKind::DiscClassic), 4).unwrap();
        let mut cfg = cfg.clone();
        cfg.weights.percep = vec![0.0; 5];
        let out = pretrain(g, &train, &val, &cfg, seed, None).unwrap();
        let gan = adversarial_train(out.generator.clone(), d, None, &train, &val, &cfg, seed, None).unwrap();
        (out.record, gan.record, bits(&gan.last_generator))
    };
    let a = run(9);
    let b = run(9);
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    assert_eq!(a.0.to_jsonl().unwrap(), b.0.to_jsonl().unwrap());
    assert_eq!(a.2, b.2);
    let c = run(10);
    assert_ne!(a.2, c.2);
}

#[test]
fn record_has_one_line_per_epoch() {
    let train = samples(5, 6);
    let val = samples(2, 7);
    let g = Model::build(&small(ModelKind::Srcnn), 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick_config(4);
    cfg.schedule.checkpoint_every = 2;
    let out = pretrain(g, &train, &val, &cfg, 42, Some(dir.path())).unwrap();
    out.record.write(dir.path().join("log")).unwrap();
    let text = std::fs::read_to_string(dir.path().join("log/run.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 4);
    for (i, line) in text.lines().enumerate() {
        let e: EpochRecord = serde_json::from_str(line).unwrap();
        assert_eq!(e.epoch, i + 1);
        assert_eq!(e.seed, 42);
        assert!(e.train_l1.is_finite() && e.val_l1.is_finite());
    }
    assert!(dir.path().join("epoch_0002/model.json").exists());
    assert!(dir.path().join("epoch_0004/model.srwt").exists());
    assert!(dir.path().join("best/model.srwt").exists());
}

#[test]
fn pretraining_halves_validation_l1() {
    let train = samples(12, 8);
    let val = samples(3, 9);
    let g = Model::build(&small(ModelKind::Srresnet), 2).unwrap();
    let out = pretrain(g, &train, &val, &quick_config(30), 1, None).unwrap();
    let best = out
        .record
        .epochs
        .iter()
        .map(|e| e.val_l1)
        .fold(f64::INFINITY, f64::min);
    assert!(
        best < 0.5 * out.record.baseline.l1,
        "baseline {} best {}",
        out.record.baseline.l1,
        best
    );
}

#[test]
fn gan_rejects_bad_combinations() {
    let train = samples(3, 1);
    let g = Model::build(&small(ModelKind::Srresnet), 1).unwrap();
    let d = Model::build(&small(ModelKind::DiscClassic), 1).unwrap();
    let cfg = quick_config(1);
    // perceptual weights without a backbone
    assert!(adversarial_train(g.clone(), d.clone(), None, &train, &train, &cfg, 1, None).is_err());
    assert!(adversarial_train(d.clone(), g.clone(), None, &train, &train, &cfg, 1, None).is_err());
    assert!(pretrain(g, &[], &train, &cfg, 1, None).is_err());
}

#[test]
fn loss_gradients_pass_finite_differences() {
    let suite = loss_gradient_suite(20, 77).unwrap();
    assert_eq!(suite.len(), 6);
    for e in suite {
        assert!(e.cases >= 20);
        eprintln!("{}: {:e}", e.op, e.worst);
        assert!(e.worst < 1e-4, "{}: {:e}", e.op, e.worst);
    }
}

#[test]
fn perceptual_loss_is_zero_on_identical_inputs_and_skips_zero_weights() {
    let spec = ModelSpec {
        channels: 2,
        ..ModelSpec::new(ModelKind::FeatureBackbone)
    };
    let bb = srforge_core::models::Backbone::stages(Model::build(&spec, 3).unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = texture(&mut rng, 16).to_tensor();
    let b = texture(&mut rng, 16).to_tensor();
    let g = Graph::new();
    let (va, vb) = (g.input(a.clone()), g.input(b));
    let w = LossWeights::default().percep;
    assert_eq!(perceptual_loss(&g, &va, &g.input(a), &bb, &w).unwrap().item(), 0.0);
    assert!(perceptual_loss(&g, &va, &vb, &bb, &w).unwrap().item() > 0.0);
    assert_eq!(perceptual_loss(&g, &va, &vb, &bb, &[0.0; 5]).unwrap().item(), 0.0);
    assert!(perceptual_loss(&g, &va, &vb, &bb, &[1.0; 3]).is_err());
}
