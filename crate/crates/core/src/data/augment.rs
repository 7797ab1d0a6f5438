use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Reverses the width axis of a `[c, h, w]` image.
pub fn hflip(image: &Tensor) -> Result<Tensor> {
    let &[c, h, w] = image.shape() else {
        return Err(Error::shape("hflip", format!("expected [c,h,w], got {:?}", image.shape())));
    };
    let mut data = Vec::with_capacity(image.numel());
    for row in image.data().chunks(w.max(1)).take(c * h) {
        data.extend(row.iter().rev());
    }
    Tensor::new(&[c, h, w], data)
}
