//! Classifier-input construction from the final feature stack.
//!
//! | head             | classifier input                                   | length        |
//! |------------------|----------------------------------------------------|---------------|
//! | `baseline`       | `flatten(F)`                                       | `n²k`         |
//! | `cat`            | `flatten(F) ⊕ flatten(C)`                          | `n²k + k²`    |
//! | `mulcat`         | `flatten(F) ⊕ flatten(F ⊙ w)`                      | `2n²k`        |
//! | `damaged_cat`    | as `cat` with a random map                         | `n²k + k²`    |
//! | `damaged_mulcat` | as `mulcat` with random factors                    | `2n²k`        |
//!
//! `C` is the causality map of `F`, `w` its causality factors broadcast over
//! each map. The original features always come first.

use std::fmt;
use std::str::FromStr;

use crate::causality::{
    self, causality_map_on_tape, damaged_factors, damaged_map, extract_factors, Direction,
    Estimator, FeatureStack, Mode,
};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadKind {
    Baseline,
    Cat,
    Mulcat,
    DamagedCat,
    DamagedMulcat,
}

impl HeadKind {
    pub const ALL: [HeadKind; 5] = [
        HeadKind::Baseline,
        HeadKind::Cat,
        HeadKind::Mulcat,
        HeadKind::DamagedCat,
        HeadKind::DamagedMulcat,
    ];
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HeadKind::Baseline => "baseline",
            HeadKind::Cat => "cat",
            HeadKind::Mulcat => "mulcat",
            HeadKind::DamagedCat => "damaged_cat",
            HeadKind::DamagedMulcat => "damaged_mulcat",
        })
    }
}

impl FromStr for HeadKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        HeadKind::ALL
            .into_iter()
            .find(|h| h.to_string() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "head must be baseline|cat|mulcat|damaged_cat|damaged_mulcat, got {s:?}"
                ))
            })
    }
}

/// Head variant plus the knobs of the causality engine. `direction` and
/// `mode` only matter for the Mulcat heads, the estimator only for the
/// intact Cat/Mulcat heads, and `detach_cmap` only for Cat.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeadConfig {
    pub head: HeadKind,
    pub estimator: Estimator,
    pub direction: Direction,
    pub mode: Mode,
    /// Keep the Cat causality map out of backpropagation.
    pub detach_cmap: bool,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            head: HeadKind::Baseline,
            estimator: Estimator::Max,
            direction: Direction::Causes,
            mode: Mode::Full,
            detach_cmap: false,
        }
    }
}

impl HeadConfig {
    pub fn new(head: HeadKind) -> Self {
        HeadConfig {
            head,
            ..Default::default()
        }
    }

    pub fn mulcat(direction: Direction, mode: Mode) -> Self {
        HeadConfig {
            head: HeadKind::Mulcat,
            direction,
            mode,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.estimator.validate()
    }

    /// Length of the flattened classifier input for a `[k, n, n]` stack.
    pub fn flat_len(&self, k: usize, n: usize) -> usize {
        let features = n * n * k;
        match self.head {
            HeadKind::Baseline => features,
            HeadKind::Cat | HeadKind::DamagedCat => features + k * k,
            HeadKind::Mulcat | HeadKind::DamagedMulcat => 2 * features,
        }
    }
}

/// Builds the classifier input for `stack` (`[k, n, n]`, non-negative) on
/// `tape`. `seed` and `draw` drive the damaged variants; intact heads
/// ignore them.
pub fn head_forward(tape: &mut Tape, stack: Var, cfg: &HeadConfig, seed: u64, draw: u64) -> Result<Var> {
    cfg.validate()?;
    let (k, n) = match tape.value(stack).shape() {
        &[k, h, w] if h == w && k > 0 && h > 0 => (k, h),
        s => {
            return Err(Error::shape(
                "head_features",
                format!("feature stack must be [k,n,n], got {s:?}"),
            ))
        }
    };
    let flat = tape.flatten(stack);
    let out = match cfg.head {
        HeadKind::Baseline => flat,
        HeadKind::Cat => {
            let cmap = if cfg.detach_cmap {
                let f = FeatureStack::from_tensor(tape.value(stack))?;
                let c = causality::causality_map(&f, cfg.estimator)?;
                tape.constant(c.to_tensor())
            } else {
                causality_map_on_tape(tape, stack, cfg.estimator)?
            };
            let cmap = tape.flatten(cmap);
            tape.concat(&[flat, cmap])
        }
        HeadKind::DamagedCat => {
            let c = damaged_map(k, seed, draw)?;
            let cmap = tape.constant(c.to_tensor().reshape(&[k * k])?);
            tape.concat(&[flat, cmap])
        }
        HeadKind::Mulcat => {
            let f = FeatureStack::from_tensor(tape.value(stack))?;
            let c = causality::causality_map(&f, cfg.estimator)?;
            let w = extract_factors(&c, cfg.direction, cfg.mode);
            weighted_concat(tape, stack, flat, w.weights())?
        }
        HeadKind::DamagedMulcat => {
            let w = damaged_factors(k, cfg.mode, seed, draw)?;
            weighted_concat(tape, stack, flat, w.weights())?
        }
    };
    debug_assert_eq!(tape.value(out).numel(), cfg.flat_len(k, n));
    Ok(out)
}

/// `flat ⊕ flatten(stack ⊙ weights)`; the weights are gradient constants.
fn weighted_concat(tape: &mut Tape, stack: Var, flat: Var, weights: &[f32]) -> Result<Var> {
    let weighted = tape.scale_channels(stack, weights)?;
    let weighted = tape.flatten(weighted);
    Ok(tape.concat(&[flat, weighted]))
}

/// Non-differentiable convenience wrapper around [`head_forward`].
pub fn head_features(f: &FeatureStack, cfg: &HeadConfig, seed: u64, draw: u64) -> Result<Tensor> {
    let mut tape = Tape::new();
    let stack = tape.constant(f.to_tensor());
    let out = head_forward(&mut tape, stack, cfg, seed, draw)?;
    Ok(tape.value(out).clone())
}
