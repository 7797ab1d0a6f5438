//! Tensor files, datasets, and augmentation.

pub mod augment;
pub mod cten;
mod dataset;
pub mod split;
pub mod synth;

pub use augment::hflip;
pub use cten::{read_cten, write_cten};
pub use dataset::{Dataset, IMAGES_FILE, LABELS_FILE};
pub use split::{split_balanced, SplitIndices};
pub use synth::{generate_synthetic, SyntheticData, SyntheticSpec};
