mod common;

use cauzen_core::causality::{causality_map_on_tape, Direction, Estimator, Mode};
use cauzen_core::heads::{HeadConfig, HeadKind};
use cauzen_core::tensor::{Tape, Tensor};
use common::*;
use rand::Rng;

/// Values bounded away from zero so relu kinks stay outside the stencil.
fn away_from_zero(seed: u64, shape: &[usize]) -> Tensor {
    let mut r = rng(seed);
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let mag: f32 = r.random_range(0.1..1.0);
            if r.random::<bool>() { mag } else { -mag }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

#[test]
fn conv_single_channel() {
    let mut r = rng(1);
    let input = uniform_tensor(&mut r, &[1, 4, 4], -1.0, 1.0);
    let kernel = uniform_tensor(&mut r, &[1, 1, 3, 3], -1.0, 1.0);
    let bias = uniform_tensor(&mut r, &[1], -1.0, 1.0);
    let err = check_op(&[input, kernel, bias], 2, |t, v| t.conv2d(v[0], v[1], v[2]));
    assert!(err <= GRAD_TOL, "{err}");
}

#[test]
fn conv_multi_channel() {
    let mut r = rng(3);
    let input = uniform_tensor(&mut r, &[2, 5, 6], -1.0, 1.0);
    let kernel = uniform_tensor(&mut r, &[3, 2, 3, 3], -1.0, 1.0);
    let bias = uniform_tensor(&mut r, &[3], -1.0, 1.0);
    let err = check_op(&[input, kernel, bias], 4, |t, v| t.conv2d(v[0], v[1], v[2]));
    assert!(err <= GRAD_TOL, "{err}");
}

#[test]
fn relu_away_from_kink() {
    let x = away_from_zero(5, &[2, 3, 3]);
    let err = check_op(&[x], 6, |t, v| Ok(t.relu(v[0])));
    assert!(err <= GRAD_TOL, "{err}");
}

#[test]
fn maxpool_distinct_values() {
    // a permutation keeps every window's winner separated by >= 1/64
    let data: Vec<f32> = (0..32).map(|i| ((i * 13) % 32) as f32 / 32.0).collect();
    let x = Tensor::new(&[2, 4, 4], data).unwrap();
    let err = check_op(&[x], 7, |t, v| t.maxpool2d(v[0]));
    assert!(err <= GRAD_TOL, "{err}");
}

#[test]
fn linear_eight_to_three() {
    let mut r = rng(8);
    let x = uniform_tensor(&mut r, &[8], -1.0, 1.0);
    let w = uniform_tensor(&mut r, &[3, 8], -1.0, 1.0);
    let b = uniform_tensor(&mut r, &[3], -1.0, 1.0);
    let err = check_op(&[x, w, b], 9, |t, v| t.linear(v[0], v[1], v[2]));
    assert!(err <= GRAD_TOL, "{err}");
}

#[test]
fn softmax_cross_entropy_logits() {
    let mut r = rng(10);
    for label in 0..4 {
        let logits = uniform_tensor(&mut r, &[4], -3.0, 3.0);
        let err = check_op(&[logits], 11, |t, v| t.softmax_cross_entropy(v[0], label));
        assert!(err <= GRAD_TOL, "label {label}: {err}");
    }
}

#[test]
fn composite_graph() {
    let mut r = rng(12);
    let image = uniform_tensor(&mut r, &[1, 4, 4], 0.0, 1.0);
    let kernel = uniform_tensor(&mut r, &[2, 1, 3, 3], -1.0, 1.0);
    let bias = uniform_tensor(&mut r, &[2], 0.2, 0.5);
    let fc = uniform_tensor(&mut r, &[2, 16], -1.0, 1.0);
    let fc_b = uniform_tensor(&mut r, &[2], -1.0, 1.0);
    let err = check_op(&[image, kernel, bias, fc, fc_b], 13, |t, v| {
        let conv = t.conv2d(v[0], v[1], v[2])?;
        let act = t.relu(conv);
        let pooled = t.maxpool2d(act)?;
        let scaled = t.scale_channels(pooled, &[2.0, 0.5])?;
        let flat = t.flatten(pooled);
        let flat_scaled = t.flatten(scaled);
        let cat = t.concat(&[flat, flat_scaled]);
        let logits = t.linear(cat, v[3], v[4])?;
        t.softmax_cross_entropy(logits, 1)
    });
    assert!(err <= GRAD_TOL, "{err}");
}

/// Stacks with a unique maximum per map and in total, all entries well
/// above the Lehmer clamp.
fn smooth_stack(seed: u64, k: usize, n: usize) -> Tensor {
    let area = n * n;
    let mut values: Vec<f32> = (0..k * area)
        .map(|i| 0.05 + ((i * 37 + seed as usize * 11) % 101) as f32 / 200.0)
        .collect();
    for m in 0..k {
        values[m * area + (m + seed as usize) % area] = 0.7 + 0.05 * m as f32;
    }
    Tensor::new(&[k, n, n], values).unwrap()
}

#[test]
fn cat_map_vjp_max() {
    for seed in 0..5 {
        let stack = smooth_stack(seed, 4, 3);
        let err = check_op(&[stack], seed, |t, v| causality_map_on_tape(t, v[0], Estimator::Max));
        assert!(err <= GRAD_TOL, "seed {seed}: {err}");
    }
}

#[test]
fn cat_map_vjp_lehmer() {
    for p in [-2.0, -1.0, 0.0, 1.0, 2.5] {
        let stack = smooth_stack(3, 3, 2);
        let err = check_op(&[stack], 21, |t, v| causality_map_on_tape(t, v[0], Estimator::Lehmer { p }));
        assert!(err <= GRAD_TOL, "p {p}: {err}");
    }
}

#[test]
fn backward_accumulates_across_calls() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![1.0, -2.0]).with_requires_grad());
    let y = tape.relu(x);
    let s = tape.sum(y);
    tape.backward(s).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[2.0, 0.0]);
}

#[test]
fn miniature_mulcat_matches_finite_differences() {
    let head = HeadConfig::mulcat(Direction::Causes, Mode::Full);
    let report = miniature_gradcheck(head, 10, 4, 100);
    assert!(report.max_err <= GRAD_TOL, "{report:?}");
    // a broken gradient cannot hide behind redraws
    assert!(report.redrawn < report.conv_checked, "{report:?}");
}

#[test]
fn miniature_cat_matches_finite_differences() {
    for estimator in [Estimator::Max, Estimator::Lehmer { p: 1.0 }] {
        let head = HeadConfig {
            estimator,
            ..HeadConfig::new(HeadKind::Cat)
        };
        let report = miniature_gradcheck(head, 5, 4, 200);
        assert!(report.max_err <= GRAD_TOL, "{estimator:?}: {report:?}");
    }
}

#[test]
fn miniature_other_heads_match_finite_differences() {
    for kind in [HeadKind::Baseline, HeadKind::DamagedCat, HeadKind::DamagedMulcat] {
        let report = miniature_gradcheck(HeadConfig::new(kind), 3, 4, 300);
        assert!(report.max_err <= GRAD_TOL, "{kind}: {report:?}");
    }
}
