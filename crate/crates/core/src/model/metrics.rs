use rayon::prelude::*;

use super::net::TinyConvNet;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tape;

/// Draw indices used for evaluation passes, disjoint from training draws.
pub const EVAL_DRAW_BASE: u64 = 1 << 62;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    /// `None` when the set holds a single class.
    pub auroc: Option<f64>,
    pub mean_loss: f64,
    /// Predicted probability of class 1 per sample.
    pub scores: Vec<f64>,
}

/// Binary AUROC from the Mann-Whitney U statistic, with midranks for ties.
/// Returns `None` unless both classes are present.
pub fn auroc(scores: &[f64], labels: &[usize]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "scores and labels must align");
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0f64; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share their mean
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = mid;
        }
        i = j + 1;
    }
    let pos_rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l == 1).map(|(r, _)| r).sum();
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> f64 {
    let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    correct as f64 / labels.len().max(1) as f64
}

/// Accuracy, AUROC and mean cross-entropy of `model` on `data`. Damaged
/// heads draw from [`EVAL_DRAW_BASE`] plus the sample index, so repeated
/// evaluations agree.
pub fn evaluate(model: &TinyConvNet, data: &Dataset) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty dataset"));
    }
    let per_sample: Vec<(f64, f64, usize)> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let mut tape = Tape::new();
            let fwd = model.forward(&mut tape, &data.image(i), EVAL_DRAW_BASE + i as u64, false)?;
            let loss = tape.softmax_cross_entropy(fwd.logits, data.labels()[i])?;
            let logits = tape.value(fwd.logits).data();
            let probs = crate::tensor::softmax(logits);
            let pred = usize::from(logits[1] > logits[0]);
            Ok((tape.value(loss).data()[0] as f64, probs[1], pred))
        })
        .collect::<Result<_>>()?;
    let preds: Vec<usize> = per_sample.iter().map(|s| s.2).collect();
    let scores: Vec<f64> = per_sample.iter().map(|s| s.1).collect();
    let mean_loss = per_sample.iter().map(|s| s.0).sum::<f64>() / data.len() as f64;
    Ok(EvalReport {
        accuracy: accuracy(&preds, data.labels()),
        auroc: auroc(&scores, data.labels()),
        mean_loss,
        scores,
    })
}
