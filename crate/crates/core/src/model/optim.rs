use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// Learning-rate multiplier reached at the last epoch.
pub const LR_FINAL_FACTOR: f64 = 0.1;

/// First/second moment buffers and the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
    pub step: u64,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let sizes: Vec<usize> = params.into_iter().map(Tensor::numel).collect();
        AdamState {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }
}

/// One Adam update with bias correction. Weight decay is coupled: `wd * θ`
/// is added to the gradient before the moments are updated.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Vec<f32>],
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape(
            "adam_step",
            format!(
                "{} params, {} grads, {} moment buffers",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.numel() != g.len() || state.m[i].len() != g.len() {
            return Err(Error::shape(
                "adam_step",
                format!("param {i}: {} values, gradient {}", p.numel(), g.len()),
            ));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - BETA1.powi(t);
    let bc2 = 1.0 - BETA2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, theta) in p.data_mut().iter_mut().enumerate() {
            let g = grads[i][j] as f64 + weight_decay * *theta as f64;
            let mj = BETA1 * m[j] as f64 + (1.0 - BETA1) * g;
            let vj = BETA2 * v[j] as f64 + (1.0 - BETA2) * g * g;
            m[j] = mj as f32;
            v[j] = vj as f32;
            let update = lr * (mj / bc1) / ((vj / bc2).sqrt() + EPS);
            *theta = (*theta as f64 - update) as f32;
        }
    }
    Ok(())
}

/// Learning-rate multiplier for 1-based `epoch`: 1.0 at the first epoch,
/// falling linearly to 0.1 at the last. A one-epoch run stays at 1.0.
pub fn lr_factor(epoch: usize, total_epochs: usize) -> Result<f64> {
    if epoch == 0 || epoch > total_epochs {
        return Err(Error::invalid(format!(
            "epoch {epoch} outside 1..={total_epochs}"
        )));
    }
    if total_epochs == 1 {
        return Ok(1.0);
    }
    // interpolation form keeps both endpoints exact in floating point
    let frac = (epoch - 1) as f64 / (total_epochs - 1) as f64;
    Ok((1.0 - frac) * 1.0 + frac * LR_FINAL_FACTOR)
}
