//! Synthetic images with a planted asymmetric co-occurrence.
//!
//! Two motifs: A, a filled 6x6 square in the left half, and B, a hollow 8x8
//! ring in the right half, each jittered by up to 3 px in both axes.
//!
//! * class 1: A appears with probability 0.8; whenever A appears, B appears
//!   with probability `cooccurrence`; B never appears without A.
//! * class 0: A and B appear independently with probability 0.5 each.
//!
//! Gaussian pixel noise is added and pixels are clipped to `[0, 1]`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MOTIF_A: usize = 6;
const MOTIF_B: usize = 8;
const JITTER: i64 = 3;
const P_A_CLASS1: f64 = 0.8;
const P_INDEPENDENT: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub side: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub intensity: f32,
    pub noise_std: f32,
    /// Probability of B given A in class 1.
    pub cooccurrence: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            side: 32,
            train: 2000,
            val: 400,
            test: 600,
            intensity: 1.0,
            noise_std: 0.15,
            cooccurrence: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, n) in [("train", self.train), ("val", self.val), ("test", self.test)] {
            if n % 2 != 0 {
                return Err(Error::invalid(format!(
                    "{name} count {n} must be even so both classes get exactly half"
                )));
            }
        }
        if self.side < 16 || !self.side.is_multiple_of(8) {
            return Err(Error::invalid(format!(
                "image side {} must be a multiple of 8 and at least 16",
                self.side
            )));
        }
        if !(0.0..=1.0).contains(&self.cooccurrence) {
            return Err(Error::invalid(format!(
                "co-occurrence probability {} outside [0,1]",
                self.cooccurrence
            )));
        }
        if !(self.noise_std >= 0.0) || !self.intensity.is_finite() {
            return Err(Error::invalid("noise std must be >= 0 and intensity finite"));
        }
        Ok(())
    }
}

/// Motif presence for one generated image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Motifs {
    pub a: bool,
    pub b: bool,
}

#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    /// Ground-truth motif presence, parallel to each split's images.
    pub motifs: [Vec<Motifs>; 3],
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let (train, m0) = generate_split(spec, spec.train, 0)?;
    let (val, m1) = generate_split(spec, spec.val, 1)?;
    let (test, m2) = generate_split(spec, spec.test, 2)?;
    Ok(SyntheticData {
        train,
        val,
        test,
        motifs: [m0, m1, m2],
    })
}

fn generate_split(spec: &SyntheticSpec, count: usize, stream: u64) -> Result<(Dataset, Vec<Motifs>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(stream);
    let mut labels: Vec<usize> = (0..count).map(|i| usize::from(i >= count / 2)).collect();
    labels.shuffle(&mut rng);

    let noise = Normal::new(0.0f32, spec.noise_std).map_err(|e| Error::invalid(e.to_string()))?;
    let side = spec.side;
    let mut pixels = Vec::with_capacity(count * side * side);
    let mut motifs = Vec::with_capacity(count);
    for &label in &labels {
        let m = if label == 1 {
            let a = rng.random_bool(P_A_CLASS1);
            Motifs {
                a,
                b: a && rng.random_bool(spec.cooccurrence),
            }
        } else {
            Motifs {
                a: rng.random_bool(P_INDEPENDENT),
                b: rng.random_bool(P_INDEPENDENT),
            }
        };
        let mut img = vec![0.0f32; side * side];
        if m.a {
            let (r, c) = place(&mut rng, side, MOTIF_A, false);
            for y in r..r + MOTIF_A {
                img[y * side + c..y * side + c + MOTIF_A].fill(spec.intensity);
            }
        }
        if m.b {
            let (r, c) = place(&mut rng, side, MOTIF_B, true);
            for y in r..r + MOTIF_B {
                for x in c..c + MOTIF_B {
                    if y == r || y == r + MOTIF_B - 1 || x == c || x == c + MOTIF_B - 1 {
                        img[y * side + x] = spec.intensity;
                    }
                }
            }
        }
        if spec.noise_std > 0.0 {
            for v in &mut img {
                *v += noise.sample(&mut rng);
            }
        }
        pixels.extend(img.into_iter().map(|v| v.clamp(0.0, 1.0)));
        motifs.push(m);
    }
    let images = Tensor::new(&[count, 1, side, side], pixels)?;
    Ok((Dataset::new(images, labels)?, motifs))
}

/// Top-left corner of a `size`-pixel motif centered in the chosen half,
/// jittered and clamped to stay inside that half.
fn place(rng: &mut ChaCha8Rng, side: usize, size: usize, right_half: bool) -> (usize, usize) {
    let half = side / 2;
    let col_lo = if right_half { half } else { 0 } as i64;
    let col_hi = col_lo + half as i64 - size as i64;
    let row_hi = side as i64 - size as i64;
    let base_col = col_lo + (half as i64 - size as i64) / 2;
    let base_row = row_hi / 2;
    let r = (base_row + rng.random_range(-JITTER..=JITTER)).clamp(0, row_hi);
    let c = (base_col + rng.random_range(-JITTER..=JITTER)).clamp(col_lo, col_hi.max(col_lo));
    (r as usize, c as usize)
}
