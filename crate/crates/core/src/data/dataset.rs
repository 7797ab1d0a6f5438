use std::fs;
use std::path::Path;

use super::cten::{read_cten, write_cten};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGES_FILE: &str = "images.cten";
pub const LABELS_FILE: &str = "labels.csv";

/// Labeled binary-classification images, `[N, c, h, w]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    images: Tensor,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>) -> Result<Self> {
        if images.rank() != 4 || images.shape()[0] != labels.len() {
            return Err(Error::shape(
                "dataset",
                format!("images {:?} vs {} labels", images.shape(), labels.len()),
            ));
        }
        if let Some(bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::invalid(format!("labels must be 0 or 1, found {bad}")));
        }
        Ok(Dataset { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    /// `[c, h, w]`
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn image(&self, i: usize) -> Tensor {
        let [c, h, w] = self.image_shape();
        let size = c * h * w;
        Tensor::from_parts(vec![c, h, w], self.images.data()[i * size..(i + 1) * size].to_vec())
    }

    /// Subset in the given index order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let [c, h, w] = self.image_shape();
        let size = c * h * w;
        let mut data = Vec::with_capacity(indices.len() * size);
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * size..(i + 1) * size]);
        }
        Dataset {
            images: Tensor::from_parts(vec![indices.len(), c, h, w], data),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Writes `images.cten` and `labels.csv` into `dir`, creating it if needed.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_cten(&self.images, dir.join(IMAGES_FILE))?;
        let mut csv = String::from("index,label\n");
        for (i, l) in self.labels.iter().enumerate() {
            csv.push_str(&format!("{i},{l}\n"));
        }
        let path = dir.join(LABELS_FILE);
        fs::write(&path, csv).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let images = read_cten(dir.join(IMAGES_FILE))?;
        let path = dir.join(LABELS_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let labels = parse_labels(&text)?;
        Dataset::new(images, labels)
    }
}

fn parse_labels(text: &str) -> Result<Vec<usize>> {
    let bad = |detail: String| Error::Format {
        format: "labels CSV",
        field: "row",
        detail,
    };
    let mut labels = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (n == 0 && line.starts_with("index")) {
            continue;
        }
        let (idx, label) = line
            .split_once(',')
            .ok_or_else(|| bad(format!("line {}: expected index,label", n + 1)))?;
        let idx: usize = idx.trim().parse().map_err(|e| bad(format!("line {}: {e}", n + 1)))?;
        if idx != labels.len() {
            return Err(bad(format!("line {}: index {idx} out of sequence", n + 1)));
        }
        labels.push(label.trim().parse().map_err(|e| bad(format!("line {}: {e}", n + 1)))?);
    }
    Ok(labels)
}
