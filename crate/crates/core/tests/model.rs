mod common;

use cauzen_core::causality::{Direction, Estimator, Mode};
use cauzen_core::config::ExperimentConfig;
use cauzen_core::data::{generate_synthetic, Dataset, SyntheticSpec};
use cauzen_core::heads::{HeadConfig, HeadKind};
use cauzen_core::model::*;
use cauzen_core::tensor::Tensor;
use cauzen_core::Error;
use common::*;
use rand::Rng;
use tempfile::TempDir;

fn small_data(train: usize, seed: u64) -> (Dataset, Dataset) {
    let d = generate_synthetic(&SyntheticSpec {
        train,
        val: 40,
        test: 2,
        side: 16,
        seed,
        ..Default::default()
    })
    .unwrap();
    (d.train, d.val)
}

fn config(head: HeadConfig, epochs: usize) -> ExperimentConfig {
    ExperimentConfig {
        head,
        epochs,
        batch_size: 8,
        ..Default::default()
    }
}

#[test]
fn training_is_deterministic() {
    let (train_set, val_set) = small_data(64, 0);
    let cfg = config(HeadConfig::new(HeadKind::DamagedMulcat), 2);
    let a = train(&cfg, 8, &train_set, &val_set).unwrap();
    let b = train(&cfg, 8, &train_set, &val_set).unwrap();
    assert_eq!(log_to_csv(&a.log), log_to_csv(&b.log));
    assert_eq!(a.model.params(), b.model.params());
    let c = train(&ExperimentConfig { seed: 1, ..cfg }, 8, &train_set, &val_set).unwrap();
    assert_ne!(a.model.params(), c.model.params());
}

#[test]
fn two_sample_smoke_run() {
    let (train_set, val_set) = small_data(2, 1);
    for head in HeadKind::ALL {
        let out = train(&config(HeadConfig::new(head), 1), 4, &train_set, &val_set).unwrap();
        assert_eq!(out.log.len(), 1);
        assert_eq!(out.best_epoch, 1);
        let e = &out.log[0];
        assert!(e.train_loss.is_finite() && e.val_loss.is_finite(), "{head}");
        assert_eq!(e.lr_factor, 1.0);
    }
}

#[test]
fn log_csv_has_header_and_one_row_per_epoch() {
    let (train_set, val_set) = small_data(16, 2);
    let out = train(&config(HeadConfig::default(), 3), 4, &train_set, &val_set).unwrap();
    let csv = log_to_csv(&out.log);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], LOG_HEADER);
    assert_eq!(lines.len(), 4);
    assert!(lines[3].starts_with("3,0.100000000,"));
    let best = out
        .log
        .iter()
        .fold(&out.log[0], |b, e| if e.val_accuracy > b.val_accuracy { e } else { b });
    assert_eq!(out.best_epoch, best.epoch);
}

#[test]
fn learning_drives_training_loss_below_chance() {
    let (train_set, val_set) = small_data(200, 3);
    let cfg = ExperimentConfig {
        augment: false,
        ..config(HeadConfig::mulcat(Direction::Causes, Mode::Full), 30)
    };
    let out = train(&cfg, 8, &train_set, &val_set).unwrap();
    let last = out.log.last().unwrap();
    assert!(last.train_loss < std::f64::consts::LN_2, "{last:?}");
    assert!(last.train_loss < out.log[0].train_loss);
}

#[test]
fn invalid_configs_are_rejected() {
    let (train_set, val_set) = small_data(4, 4);
    for cfg in [
        ExperimentConfig { epochs: 0, ..Default::default() },
        ExperimentConfig { lr: -1.0, ..Default::default() },
        ExperimentConfig { batch_size: 0, ..Default::default() },
    ] {
        assert!(train(&cfg, 4, &train_set, &val_set).unwrap_err().is_validation());
    }
}

#[test]
fn diverging_training_reports_non_finite_loss() {
    let (train_set, val_set) = small_data(32, 5);
    let cfg = ExperimentConfig {
        lr: 1e30,
        ..config(HeadConfig::default(), 3)
    };
    match train(&cfg, 4, &train_set, &val_set) {
        Err(Error::NonFiniteLoss { epoch }) => assert!(epoch >= 1),
        other => panic!("expected divergence, got {:?}", other.map(|o| o.log)),
    }
}

#[test]
fn lr_factor_is_linear_between_endpoints() {
    assert_eq!(lr_factor(1, 200).unwrap(), 1.0);
    assert_eq!(lr_factor(200, 200).unwrap(), LR_FINAL_FACTOR);
    assert_eq!(lr_factor(1, 1).unwrap(), 1.0);
    let step = (1.0 - LR_FINAL_FACTOR) / 199.0;
    for e in 1..=200 {
        let want = 1.0 - step * (e - 1) as f64;
        assert!((lr_factor(e, 200).unwrap() - want).abs() < 1e-15);
    }
    assert!(lr_factor(0, 10).is_err());
    assert!(lr_factor(11, 10).is_err());
}

#[test]
fn auroc_matches_pairwise_count() {
    let mut r = rng(50);
    for _ in 0..20 {
        // coarse scores force ties
        let scores: Vec<f64> = (0..50).map(|_| r.random_range(0..10) as f64 / 10.0).collect();
        let labels: Vec<usize> = (0..50).map(|i| (i % 2 == 0 || r.random_bool(0.3)) as usize).collect();
        let (mut wins, mut pairs) = (0.0, 0.0);
        for i in 0..50 {
            for j in 0..50 {
                if labels[i] == 1 && labels[j] == 0 {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        let got = auroc(&scores, &labels).unwrap();
        assert!((got - wins / pairs).abs() < 1e-12);
    }
}

#[test]
fn auroc_edge_cases() {
    assert_eq!(auroc(&[0.9, 0.1], &[1, 0]), Some(1.0));
    assert_eq!(accuracy(&[1, 0], &[1, 0]), 1.0);
    assert_eq!(auroc(&[0.4; 6], &[1, 0, 1, 0, 1, 0]), Some(0.5));
    assert_eq!(auroc(&[0.3, 0.7], &[1, 1]), None);
    assert_eq!(auroc(&[0.1, 0.9], &[1, 0]), Some(0.0));
}

#[test]
fn evaluate_is_repeatable_for_damaged_heads() {
    let (_, val_set) = small_data(2, 6);
    let model = TinyConvNet::new(NetShape { side: 16, k: 4, ..Default::default() }, HeadConfig::new(HeadKind::DamagedCat), 3).unwrap();
    let a = evaluate(&model, &val_set).unwrap();
    let b = evaluate(&model, &val_set).unwrap();
    assert_eq!(a, b);
    assert!(a.scores.iter().all(|s| (0.0..=1.0).contains(s)));
    let single = val_set.select(&[0]);
    assert_eq!(evaluate(&model, &single).unwrap().auroc, None);
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let tmp = TempDir::new().unwrap();
    let head = HeadConfig {
        estimator: Estimator::Lehmer { p: -1.0 },
        ..HeadConfig::new(HeadKind::Cat)
    };
    let model = TinyConvNet::new(NetShape { side: 16, k: 6, ..Default::default() }, head, 9).unwrap();
    let cfg = ExperimentConfig { head, epochs: 4, seed: 9, ..Default::default() };
    save_checkpoint(tmp.path(), &model, &cfg, 2).unwrap();
    let loaded = load_checkpoint(tmp.path()).unwrap();
    assert_eq!(loaded.config, cfg);
    assert_eq!(loaded.best_epoch, 2);
    assert_eq!(loaded.model.params(), model.params());
    let img = uniform_tensor(&mut rng(1), &[1, 16, 16], 0.0, 1.0);
    assert_eq!(loaded.model.logits(&img, 0).unwrap(), model.logits(&img, 0).unwrap());
}

#[test]
fn checkpoint_rejects_tampered_shapes() {
    let tmp = TempDir::new().unwrap();
    let model = TinyConvNet::new(NetShape { side: 16, k: 4, ..Default::default() }, HeadConfig::default(), 0).unwrap();
    save_checkpoint(tmp.path(), &model, &ExperimentConfig::default(), 1).unwrap();
    let manifest = tmp.path().join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&manifest).unwrap().replace("k=4", "k=5");
    std::fs::write(&manifest, text).unwrap();
    assert!(load_checkpoint(tmp.path()).is_err());
}

fn random_model(head: HeadConfig, seed: u64) -> TinyConvNet {
    let mut model = TinyConvNet::new(miniature_shape(), head, seed).unwrap();
    let mut r = rng(seed);
    for p in model.params_mut() {
        if p.name.ends_with("bias") {
            p.tensor.data_mut().iter_mut().for_each(|v| *v = r.random_range(0.0..0.2));
        }
    }
    model
}

#[test]
fn grad_cam_weights_match_finite_differences() {
    for (seed, head) in [(1, HeadConfig::new(HeadKind::Baseline)), (2, HeadConfig::new(HeadKind::Cat))] {
        // a positive last bias keeps the stack off the relu kink, where the
        // causality map is not differentiable
        let mut model = random_model(head, seed);
        model.params_mut()[5].tensor.data_mut().fill(10.0);
        let image = uniform_tensor(&mut rng(seed + 10), &[1, 16, 16], 0.0, 1.0);
        for target in 0..2 {
            let detail = grad_cam_detail(&model, &image, target).unwrap();
            let stack = detail.stack.clone();
            assert!(stack.data().iter().all(|&v| v > 10.0 * FD_STEP));
            let area = stack.shape()[1] * stack.shape()[2];
            let mut score = |x: &[f32]| {
                let s = Tensor::new(stack.shape(), x.to_vec()).unwrap();
                let (tape, _, score) = class_score_from_stack(&model, &s, target).unwrap();
                tape.value(score).data()[0] as f64
            };
            for (c, &alpha) in detail.weights.iter().enumerate() {
                let numeric: f64 = (c * area..(c + 1) * area)
                    .map(|i| central_diff(&mut score, stack.data(), i, FD_STEP))
                    .sum::<f64>()
                    / area as f64;
                assert!(rel_err(alpha, numeric) <= GRAD_TOL, "{head:?} class {target} map {c}: {alpha} vs {numeric}");
            }
        }
    }
}

#[test]
fn grad_cam_zero_for_constant_model() {
    let mut model = TinyConvNet::new(miniature_shape(), HeadConfig::new(HeadKind::Mulcat), 0).unwrap();
    for p in model.params_mut() {
        p.tensor.data_mut().fill(0.0);
    }
    let image = uniform_tensor(&mut rng(0), &[1, 16, 16], 0.0, 1.0);
    let cam = grad_cam(&model, &image, 1).unwrap();
    assert_eq!(cam.shape(), &[16, 16]);
    assert!(cam.data().iter().all(|&v| v == 0.0));
}

#[test]
fn grad_cam_range_for_random_models() {
    for (seed, head) in HeadKind::ALL.into_iter().enumerate() {
        let model = random_model(HeadConfig::new(head), seed as u64);
        let image = uniform_tensor(&mut rng(seed as u64), &[1, 16, 16], 0.0, 1.0);
        for target in 0..2 {
            let cam = grad_cam(&model, &image, target).unwrap();
            assert!(cam.data().iter().all(|v| (0.0..=1.0).contains(v)), "{head}");
            assert_eq!(cam, grad_cam(&model, &image, target).unwrap());
        }
        assert!(grad_cam(&model, &image, 2).is_err());
    }
}

#[test]
fn bilinear_upsample_preserves_constants_and_corners() {
    let up = bilinear_upsample(&[0.25; 4], 2, 2, 8, 8);
    assert!(up.iter().all(|&v| (v - 0.25).abs() < 1e-7));
    let ramp = bilinear_upsample(&[0.0, 1.0, 0.0, 1.0], 2, 2, 4, 4);
    // half-pixel centers: outer columns clamp to the source values
    assert_eq!(&ramp[..4], &[0.0, 0.25, 0.75, 1.0]);
}

#[test]
fn parameter_counts_follow_head_geometry() {
    let shape = NetShape::default();
    let n = shape.stack_side();
    let k = shape.k;
    let count = |h| TinyConvNet::new(shape, HeadConfig::new(h), 0).unwrap().num_params();
    let base = count(HeadKind::Baseline);
    assert_eq!(count(HeadKind::Mulcat) - base, NUM_CLASSES * n * n * k);
    assert_eq!(count(HeadKind::Cat) - base, NUM_CLASSES * k * k);
    assert_eq!(count(HeadKind::DamagedMulcat), count(HeadKind::Mulcat));
    assert_eq!(count(HeadKind::DamagedCat), count(HeadKind::Cat));
}
