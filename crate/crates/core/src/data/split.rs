use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Disjoint train/val/test index sets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Class-balanced split: indices of each class are shuffled with `seed` and
/// allocated in proportion to `ratios` (train, val, test). Train and val
/// counts are rounded; test takes the remainder.
pub fn split_balanced(labels: &[usize], ratios: [f64; 3], seed: u64) -> Result<SplitIndices> {
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(format!(
            "split ratios must be in [0,1] and sum to 1, got {ratios:?}"
        )));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = SplitIndices {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (class, mut idx) in by_class {
        idx.shuffle(&mut rng);
        let n = idx.len();
        let n_train = (n as f64 * ratios[0]).round() as usize;
        let n_val = (n as f64 * ratios[1]).round() as usize;
        let counts = [n_train, n_val, n.checked_sub(n_train + n_val).unwrap_or(usize::MAX)];
        if counts[2] == usize::MAX || counts.iter().zip(&ratios).any(|(&c, &r)| r > 0.0 && c == 0) {
            return Err(Error::invalid(format!(
                "class {class} has {n} items, too few for ratios {ratios:?}"
            )));
        }
        out.train.extend_from_slice(&idx[..n_train]);
        out.val.extend_from_slice(&idx[n_train..n_train + n_val]);
        out.test.extend_from_slice(&idx[n_train + n_val..]);
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}
