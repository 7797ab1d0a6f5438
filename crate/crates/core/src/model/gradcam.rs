//! Grad-CAM on the final feature stack.
//!
//! `α_c` is the spatial mean of `∂ score / ∂ A_c` where `A` is the
//! `[k, n, n]` stack feeding the head and `score` the target class logit.
//! The map `relu(Σ_c α_c A_c)` is min-max normalized and bilinearly
//! upsampled (half-pixel centers) to the input size.

use super::net::{TinyConvNet, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Draw index used by damaged heads during CAM computation.
pub const CAM_DRAW: u64 = u64::MAX;

#[derive(Clone, Debug)]
pub struct CamDetail {
    /// `[h, w]` heat map in `[0, 1]`.
    pub heatmap: Tensor,
    /// Per-map weights `α_c`.
    pub weights: Vec<f64>,
    /// The `[k, n, n]` activation stack.
    pub stack: Tensor,
    /// Target logit.
    pub score: f32,
}

/// Target-class logit as a function of the feature stack, on its own tape.
pub fn class_score_from_stack(model: &TinyConvNet, stack: &Tensor, target: usize) -> Result<(Tape, Var, Var)> {
    let mut tape = Tape::new();
    let params = model.push_params(&mut tape, false);
    let stack_var = tape.leaf(stack.detached().with_requires_grad());
    let logits = model.classify(&mut tape, stack_var, &params, CAM_DRAW)?;
    let value = Tensor::scalar(tape.value(logits).data()[target]);
    let classes = tape.value(logits).numel();
    let score = tape.custom(
        &[logits],
        value,
        Box::new(move |g| {
            let mut out = vec![0.0; classes];
            out[target] = g[0];
            vec![out]
        }),
    );
    Ok((tape, stack_var, score))
}

pub fn grad_cam_detail(model: &TinyConvNet, image: &Tensor, target: usize) -> Result<CamDetail> {
    if target >= NUM_CLASSES {
        return Err(Error::invalid(format!(
            "class index {target} out of range for {NUM_CLASSES} classes"
        )));
    }
    let mut tape = Tape::new();
    let params = model.push_params(&mut tape, false);
    let img = tape.constant(image.clone());
    let stack_var = model.features(&mut tape, img, &params)?;
    let stack = tape.value(stack_var).clone();

    let (mut score_tape, leaf, score) = class_score_from_stack(model, &stack, target)?;
    score_tape.backward(score)?;
    let grad = score_tape.grad_or_zeros(leaf);

    let (k, n) = (stack.shape()[0], stack.shape()[1]);
    let area = n * n;
    let weights: Vec<f64> = grad
        .chunks(area)
        .map(|g| g.iter().map(|&v| v as f64).sum::<f64>() / area as f64)
        .collect();
    let mut cam = vec![0.0f64; area];
    for c in 0..k {
        let a = &stack.data()[c * area..(c + 1) * area];
        cam.iter_mut().zip(a).for_each(|(m, &v)| *m += weights[c] * v as f64);
    }
    cam.iter_mut().for_each(|v| *v = v.max(0.0));
    let (lo, hi) = cam
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if hi > lo {
        cam.iter_mut().for_each(|v| *v = (*v - lo) / (hi - lo));
    } else {
        cam.iter_mut().for_each(|v| *v = 0.0);
    }
    let (h, w) = (image.shape()[1], image.shape()[2]);
    let heatmap = Tensor::new(&[h, w], bilinear_upsample(&cam, n, n, h, w))?;
    Ok(CamDetail {
        heatmap,
        weights,
        stack,
        score: score_tape.value(score).data()[0],
    })
}

/// Grad-CAM heat map `[h, w]` for `target` on `image`.
pub fn grad_cam(model: &TinyConvNet, image: &Tensor, target: usize) -> Result<Tensor> {
    Ok(grad_cam_detail(model, image, target)?.heatmap)
}

/// Bilinear resize with half-pixel centers and edge clamping.
pub fn bilinear_upsample(src: &[f64], sh: usize, sw: usize, dh: usize, dw: usize) -> Vec<f32> {
    let coord = |d: usize, s: usize, dlen: usize| -> (usize, usize, f64) {
        let x = ((d as f64 + 0.5) * s as f64 / dlen as f64 - 0.5).clamp(0.0, (s - 1) as f64);
        let x0 = x.floor() as usize;
        let x1 = (x0 + 1).min(s - 1);
        (x0, x1, x - x0 as f64)
    };
    let mut out = Vec::with_capacity(dh * dw);
    for y in 0..dh {
        let (y0, y1, fy) = coord(y, sh, dh);
        for x in 0..dw {
            let (x0, x1, fx) = coord(x, sw, dw);
            let top = src[y0 * sw + x0] * (1.0 - fx) + src[y0 * sw + x1] * fx;
            let bottom = src[y1 * sw + x0] * (1.0 - fx) + src[y1 * sw + x1] * fx;
            out.push((top * (1.0 - fy) + bottom * fy) as f32);
        }
    }
    out
}
