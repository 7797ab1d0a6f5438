//! Helpers shared by the integration and acceptance tests.
#![allow(dead_code)]

use cauzen_core::causality::{
    causality_map, extract_factors, normalize_stack, Direction, FeatureStack, Mode, LEHMER_EPS,
};
use cauzen_core::heads::{HeadConfig, HeadKind};
use cauzen_core::model::{NetShape, TinyConvNet};
use cauzen_core::tensor::{Tape, Tensor, Var};
use cauzen_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f32 = 1e-3;
pub const GRAD_TOL: f64 = 1e-3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Gradient-check error: `|a - n| / max(|a|, |n|, 1)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

/// Central difference of `f` along coordinate `i`, divided by the step that
/// was actually representable in f32.
pub fn central_diff(f: &mut dyn FnMut(&[f32]) -> f64, x: &[f32], i: usize, h: f32) -> f64 {
    let mut plus = x.to_vec();
    let mut minus = x.to_vec();
    plus[i] += h;
    minus[i] -= h;
    let step = plus[i] as f64 - minus[i] as f64;
    (f(&plus) - f(&minus)) / step
}

/// Checks the tape gradient of `Σ r ⊙ build(inputs)` for a fixed random
/// projection `r` against central differences at every input coordinate.
/// Returns the largest error.
pub fn check_op(inputs: &[Tensor], seed: u64, build: impl Fn(&mut Tape, &[Var]) -> Result<Var>) -> f64 {
    let out_len = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = build(&mut tape, &vars).unwrap();
        tape.value(out).numel()
    };
    let mut r = rng(seed);
    let proj: Vec<f32> = (0..out_len).map(|_| r.random_range(-1.0..1.0)).collect();

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.leaf(t.clone().with_requires_grad()))
        .collect();
    let out = build(&mut tape, &vars).unwrap();
    let flat = tape.flatten(out);
    let w = tape.constant(Tensor::new(&[1, out_len], proj.clone()).unwrap());
    let b = tape.constant(Tensor::zeros(&[1]).unwrap());
    let dot = tape.linear(flat, w, b).unwrap();
    let loss = tape.sum(dot);
    tape.backward(loss).unwrap();

    let mut worst = 0.0f64;
    for (t, var) in vars.iter().enumerate() {
        let analytic = tape.grad_or_zeros(*var);
        let mut f = |x: &[f32]| {
            let mut tape = Tape::new();
            let vars: Vec<Var> = inputs
                .iter()
                .enumerate()
                .map(|(s, orig)| {
                    let v = if s == t {
                        Tensor::new(orig.shape(), x.to_vec()).unwrap()
                    } else {
                        orig.clone()
                    };
                    tape.constant(v)
                })
                .collect();
            let out = build(&mut tape, &vars).unwrap();
            tape.value(out)
                .data()
                .iter()
                .zip(&proj)
                .map(|(&o, &p)| o as f64 * p as f64)
                .sum()
        };
        for i in 0..inputs[t].numel() {
            let numeric = central_diff(&mut f, inputs[t].data(), i, FD_STEP);
            worst = worst.max(rel_err(analytic[i] as f64, numeric));
        }
    }
    worst
}

pub fn miniature_shape() -> NetShape {
    NetShape {
        in_channels: 1,
        side: 16,
        k: 4,
    }
}

/// Everything piecewise-constant in the forward pass: conv pre-activation
/// signs, pooling winners, the per-map argmax of the final stack and, for
/// the intact Mulcat head, the causality factors. Finite differences are
/// only meaningful where this is constant across the stencil.
pub fn branch_signature(model: &TinyConvNet, image: &Tensor) -> Vec<u32> {
    let mut tape = Tape::new();
    let params = model.push_params(&mut tape, false);
    let mut x = tape.constant(image.clone());
    let mut sig = Vec::new();
    for b in 0..3 {
        let conv = tape.conv2d(x, params[2 * b], params[2 * b + 1]).unwrap();
        sig.extend(tape.value(conv).data().iter().map(|&v| (v > 0.0) as u32));
        let act = tape.relu(conv);
        let a = tape.value(act);
        let (c, h, w) = (a.shape()[0], a.shape()[1], a.shape()[2]);
        for ch in 0..c {
            for y in (0..h).step_by(2) {
                for xx in (0..w).step_by(2) {
                    let at = |dy: usize, dx: usize| a.data()[ch * h * w + (y + dy) * w + xx + dx];
                    let window = [at(0, 0), at(0, 1), at(1, 0), at(1, 1)];
                    let mut best = 0;
                    for q in 1..4 {
                        if window[q] > window[best] {
                            best = q;
                        }
                    }
                    sig.push(best as u32);
                }
            }
        }
        x = tape.maxpool2d(act).unwrap();
    }
    let stack = tape.value(x);
    let area = stack.shape()[1] * stack.shape()[2];
    for map in stack.data().chunks(area) {
        let (arg, _) = map
            .iter()
            .enumerate()
            .fold((0, f32::MIN), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
        sig.push(arg as u32);
    }
    let head = model.head();
    if head.head == HeadKind::Mulcat {
        let f = FeatureStack::from_tensor(stack).unwrap();
        let c = causality_map(&f, head.estimator).unwrap();
        let w = extract_factors(&c, head.direction, head.mode);
        sig.extend(w.weights().iter().map(|&v| v as u32));
    }
    sig
}

#[derive(Debug, Default)]
pub struct GradCheckReport {
    pub points: usize,
    /// Parameter points discarded because every tried coordinate of some
    /// tensor crossed a branch, i.e. the point sits on a discontinuity.
    pub points_redrawn: usize,
    pub checked: usize,
    /// Of `checked`, coordinates inside conv tensors.
    pub conv_checked: usize,
    /// Coordinates redrawn because the stencil crossed a branch.
    pub redrawn: usize,
    pub max_err: f64,
}

const COORD_TRIES: usize = 20;

/// Full-model gradient check: at `points` random parameter settings,
/// compares the backward pass against central differences of the loss on
/// every classifier parameter and `conv_coords` random entries of each conv
/// tensor.
pub fn miniature_gradcheck(head: HeadConfig, points: usize, conv_coords: usize, seed: u64) -> GradCheckReport {
    let mut report = GradCheckReport::default();
    let mut r = rng(seed);
    let mut attempt = 0u64;
    while report.points < points {
        let mut model = TinyConvNet::new(miniature_shape(), head, seed + attempt).unwrap();
        for param in model.params_mut() {
            if param.name.ends_with("bias") {
                let n = param.tensor.numel();
                param.tensor.data_mut().copy_from_slice(
                    &(0..n).map(|_| r.random_range(-0.1..0.1)).collect::<Vec<f32>>(),
                );
            }
        }
        let image = uniform_tensor(&mut r, &[1, 16, 16], 0.0, 1.0);
        let label = (attempt % 2) as usize;
        match check_point(&model, &image, label, attempt, conv_coords, &mut r) {
            Some(p) => {
                report.points += 1;
                report.checked += p.checked;
                report.conv_checked += p.conv_checked;
                report.redrawn += p.redrawn;
                report.max_err = report.max_err.max(p.max_err);
            }
            None => report.points_redrawn += 1,
        }
        attempt += 1;
        assert!(report.points_redrawn <= points, "most parameter points are non-smooth: {report:?}");
    }
    report
}

fn check_point(
    model: &TinyConvNet,
    image: &Tensor,
    label: usize,
    draw: u64,
    conv_coords: usize,
    r: &mut ChaCha8Rng,
) -> Option<GradCheckReport> {
    let mut report = GradCheckReport::default();
    let mut tape = Tape::new();
    let fwd = model.forward(&mut tape, image, draw, true).unwrap();
    let loss = tape.softmax_cross_entropy(fwd.logits, label).unwrap();
    tape.backward(loss).unwrap();
    let grads: Vec<Vec<f32>> = fwd.params.iter().map(|&p| tape.grad_or_zeros(p)).collect();

    let base_sig = branch_signature(model, image);
    for t in 0..model.params().len() {
        let numel = model.params()[t].tensor.numel();
        let is_conv = model.params()[t].name.starts_with("conv");
        let coords: Vec<usize> = if is_conv {
            (0..conv_coords).map(|_| r.random_range(0..numel)).collect()
        } else {
            (0..numel).collect()
        };
        let x = model.params()[t].tensor.data().to_vec();
        let with = |v: &[f32]| {
            let mut m = model.clone();
            m.params_mut()[t].tensor.data_mut().copy_from_slice(v);
            m
        };
        for mut i in coords {
            // redraw coordinates whose stencil crosses a kink
            let mut tries = 0;
            loop {
                let mut plus = x.clone();
                let mut minus = x.clone();
                plus[i] += FD_STEP;
                minus[i] -= FD_STEP;
                if branch_signature(&with(&plus), image) == base_sig
                    && branch_signature(&with(&minus), image) == base_sig
                {
                    break;
                }
                report.redrawn += 1;
                tries += 1;
                if tries == COORD_TRIES {
                    return None;
                }
                i = r.random_range(0..numel);
            }
            let mut f = |v: &[f32]| {
                let m = with(v);
                let mut tape = Tape::new();
                let fwd = m.forward(&mut tape, image, draw, false).unwrap();
                let loss = tape.softmax_cross_entropy(fwd.logits, label).unwrap();
                tape.value(loss).data()[0] as f64
            };
            let numeric = central_diff(&mut f, &x, i, FD_STEP);
            report.max_err = report.max_err.max(rel_err(grads[t][i] as f64, numeric));
            report.checked += 1;
            report.conv_checked += is_conv as usize;
        }
    }
    Some(report)
}

/// Random stack. The quantized variant uses eighths with a forced 1.0, so
/// sum ties occur and normalization is exact.
pub fn random_stack(r: &mut ChaCha8Rng, quantized: bool) -> FeatureStack {
    let k = r.random_range(1..=16);
    let n = r.random_range(1..=8);
    let mut v: Vec<f32> = (0..k * n * n)
        .map(|_| {
            if quantized {
                r.random_range(0..=8) as f32 / 8.0
            } else if r.random_bool(0.3) {
                0.0
            } else {
                r.random_range(0.0..3.0)
            }
        })
        .collect();
    // some all-zero maps exercise the zero-column convention
    if k > 1 && r.random_bool(0.2) {
        let m = r.random_range(0..k);
        v[m * n * n..(m + 1) * n * n].fill(0.0);
    }
    if quantized {
        let at = r.random_range(0..v.len());
        v[at] = 1.0;
    }
    FeatureStack::new(k, n, v).unwrap()
}

/// Map `i` causes `j` under the Max estimator exactly when both maps are
/// active and `i` has the larger total activation.
pub fn sum_ranking_factors(f: &FeatureStack, direction: Direction, mode: Mode) -> Vec<f32> {
    let k = f.k();
    let stats: Vec<(f64, f64)> = (0..k)
        .map(|i| {
            let m = f.map(i);
            let max = m.iter().fold(0.0f64, |a, &v| a.max(v as f64));
            (max, m.iter().map(|&v| v as f64).sum())
        })
        .collect();
    (0..k)
        .map(|i| {
            let mut causes = 0i64;
            let mut effects = 0i64;
            for j in 0..k {
                if j == i || stats[i].0 == 0.0 || stats[j].0 == 0.0 {
                    continue;
                }
                if stats[i].1 > stats[j].1 {
                    causes += 1;
                } else if stats[j].1 > stats[i].1 {
                    effects += 1;
                }
            }
            let diff = match direction {
                Direction::Causes => causes - effects,
                Direction::Effects => effects - causes,
            };
            match mode {
                Mode::Full => diff.max(0) as f32,
                Mode::Bool => (diff > 0) as u8 as f32,
            }
        })
        .collect()
}

/// Direct evaluation over all `n⁴` pairwise products, no rescaling.
pub fn naive_lehmer_entry(a: &[f64], b: &[f64], p: f64) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for &x in a {
        for &y in b {
            let v = x * y;
            num += v.powf(p + 1.0);
            den += v.powf(p);
        }
    }
    let cond_num: f64 = b.iter().map(|v| v.powf(p + 1.0)).sum();
    let cond_den: f64 = b.iter().map(|v| v.powf(p)).sum();
    (num / den) / (cond_num / cond_den)
}

pub fn clamped_normalized_maps(f: &FeatureStack) -> Vec<Vec<f64>> {
    let g = normalize_stack(f);
    (0..g.k())
        .map(|i| g.map(i).iter().map(|&v| (v as f64).max(LEHMER_EPS)).collect())
        .collect()
}
