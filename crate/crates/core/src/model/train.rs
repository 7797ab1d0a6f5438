use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::metrics::evaluate;
use super::net::{NetShape, TinyConvNet};
use super::optim::{adam_step, lr_factor, AdamState};
use crate::config::ExperimentConfig;
use crate::data::{hflip, Dataset};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor};
use crate::textfmt::format_sig9;

pub const LOG_HEADER: &str = "epoch,lr_factor,train_loss,val_loss,val_accuracy";

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr_factor: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

pub fn log_to_csv(log: &[EpochLog]) -> String {
    let mut s = format!("{LOG_HEADER}\n");
    for row in log {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            row.epoch,
            format_sig9(row.lr_factor),
            format_sig9(row.train_loss),
            format_sig9(row.val_loss),
            format_sig9(row.val_accuracy)
        ));
    }
    s
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation accuracy.
    pub model: TinyConvNet,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
}

/// Loss and parameter gradients of one sample.
fn sample_grad(model: &TinyConvNet, image: &Tensor, label: usize, draw: u64) -> Result<(f64, Vec<Vec<f32>>)> {
    let mut tape = Tape::new();
    let fwd = model.forward(&mut tape, image, draw, true)?;
    let loss = tape.softmax_cross_entropy(fwd.logits, label)?;
    tape.backward(loss)?;
    let grads = fwd.params.iter().map(|&p| tape.grad_or_zeros(p)).collect();
    Ok((tape.value(loss).data()[0] as f64, grads))
}

/// Trains a [`TinyConvNet`] with `k` final feature maps.
///
/// Each epoch shuffles the training set (and flips images when
/// `config.augment` is set) from a generator seeded by `config.seed`.
/// Per-sample gradients inside a mini-batch may be computed in parallel but
/// are summed in sample order, so results do not depend on thread count.
/// The parameters with the highest validation accuracy are returned; ties go
/// to the earliest epoch.
pub fn train(config: &ExperimentConfig, k: usize, train_set: &Dataset, val_set: &Dataset) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::invalid("training and validation splits must be non-empty"));
    }
    let [c, h, w] = train_set.image_shape();
    if h != w || val_set.image_shape() != [c, h, w] {
        return Err(Error::shape(
            "train",
            format!("train images {:?}, val images {:?}", train_set.image_shape(), val_set.image_shape()),
        ));
    }
    let shape = NetShape {
        in_channels: c,
        side: h,
        k,
    };
    let mut model = TinyConvNet::new(shape, config.head, config.seed)?;
    let mut adam = AdamState::new(model.params().iter().map(|p| &p.tensor));
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);

    let n = train_set.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut best: Option<(f64, usize, TinyConvNet)> = None;
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let factor = lr_factor(epoch, config.epochs)?;
        order.shuffle(&mut rng);
        let flips: Vec<bool> = (0..n).map(|_| config.augment && rng.random_bool(0.5)).collect();

        let mut loss_sum = 0.0f64;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let offset = b * config.batch_size;
            let results: Vec<(f64, Vec<Vec<f32>>)> = batch
                .par_iter()
                .enumerate()
                .map(|(j, &idx)| {
                    let pos = offset + j;
                    let img = train_set.image(idx);
                    let img = if flips[pos] { hflip(&img)? } else { img };
                    let draw = ((epoch - 1) * n + pos) as u64;
                    sample_grad(&model, &img, train_set.labels()[idx], draw)
                })
                .collect::<Result<_>>()?;

            let mut grads = results[0].1.clone();
            for (loss, _) in &results {
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch });
                }
                loss_sum += loss;
            }
            for (_, g) in &results[1..] {
                for (acc, gi) in grads.iter_mut().zip(g) {
                    acc.iter_mut().zip(gi).for_each(|(a, b)| *a += b);
                }
            }
            let scale = 1.0 / batch.len() as f32;
            grads.iter_mut().flatten().for_each(|v| *v *= scale);
            let mut params: Vec<&mut Tensor> = model.params_mut().iter_mut().map(|p| &mut p.tensor).collect();
            adam_step(&mut params, &grads, &mut adam, config.lr * factor, config.weight_decay)?;
        }

        let report = evaluate(&model, val_set)?;
        if !report.mean_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        log.push(EpochLog {
            epoch,
            lr_factor: factor,
            train_loss: loss_sum / n as f64,
            val_loss: report.mean_loss,
            val_accuracy: report.accuracy,
        });
        if best.as_ref().is_none_or(|(acc, _, _)| report.accuracy > *acc) {
            best = Some((report.accuracy, epoch, model.clone()));
        }
    }
    let (_, best_epoch, model) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        model,
        best_epoch,
        log,
    })
}
