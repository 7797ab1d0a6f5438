//! Inner loops for the 3x3 same-padding convolution and 2x2 pooling.
//!
//! Loops are arranged so the innermost iteration runs over a contiguous
//! image row, which the compiler vectorizes.

/// Row-range of output pixels whose tap at offset `d` stays inside `0..len`.
#[inline]
fn valid_range(len: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (len as isize - d).min(len as isize).max(0) as usize;
    (lo, hi.max(lo))
}

/// `a · b` with eight independent partial sums so the reduction vectorizes.
#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (x, y) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0f32;
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    acc.iter().sum::<f32>() + tail
}

pub(crate) struct ConvDims {
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
}

/// Unfolds a zero-padded `[c_in, h, w]` input into `[c_in * 9, h * w]`:
/// row `ci * 9 + t` holds the input shifted by tap `t`.
fn im2col(d: &ConvDims, input: &[f32]) -> Vec<f32> {
    let plane = d.h * d.w;
    let mut col = vec![0.0f32; d.c_in * 9 * plane];
    for ci in 0..d.c_in {
        let in_plane = &input[ci * plane..(ci + 1) * plane];
        for t in 0..9 {
            let dy = t as isize / 3 - 1;
            let dx = t as isize % 3 - 1;
            let (y0, y1) = valid_range(d.h, dy);
            let (x0, x1) = valid_range(d.w, dx);
            let row = &mut col[(ci * 9 + t) * plane..(ci * 9 + t + 1) * plane];
            for y in y0..y1 {
                let src = ((y as isize + dy) as usize * d.w) as isize + dx;
                row[y * d.w + x0..y * d.w + x1]
                    .copy_from_slice(&in_plane[(src + x0 as isize) as usize..(src + x1 as isize) as usize]);
            }
        }
    }
    col
}

/// Inverse scatter of [`im2col`]: accumulates column gradients into the input.
fn col2im(d: &ConvDims, col: &[f32]) -> Vec<f32> {
    let plane = d.h * d.w;
    let mut out = vec![0.0f32; d.c_in * plane];
    for ci in 0..d.c_in {
        let out_plane = &mut out[ci * plane..(ci + 1) * plane];
        for t in 0..9 {
            let dy = t as isize / 3 - 1;
            let dx = t as isize % 3 - 1;
            let (y0, y1) = valid_range(d.h, dy);
            let (x0, x1) = valid_range(d.w, dx);
            let row = &col[(ci * 9 + t) * plane..(ci * 9 + t + 1) * plane];
            for y in y0..y1 {
                let dst = ((y as isize + dy) as usize * d.w) as isize + dx;
                let dst = &mut out_plane[(dst + x0 as isize) as usize..(dst + x1 as isize) as usize];
                for (o, &g) in dst.iter_mut().zip(&row[y * d.w + x0..y * d.w + x1]) {
                    *o += g;
                }
            }
        }
    }
    out
}

#[inline]
fn axpy(out: &mut [f32], a: f32, x: &[f32]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o += a * v;
    }
}

pub(crate) fn conv3x3_forward(d: &ConvDims, input: &[f32], kernel: &[f32], bias: &[f32]) -> Vec<f32> {
    let plane = d.h * d.w;
    let taps = d.c_in * 9;
    let col = im2col(d, input);
    let mut out = vec![0.0f32; d.c_out * plane];
    for (co, out_plane) in out.chunks_mut(plane).enumerate() {
        out_plane.fill(bias[co]);
        let weights = &kernel[co * taps..(co + 1) * taps];
        for (r, &wv) in weights.iter().enumerate() {
            if wv != 0.0 {
                axpy(out_plane, wv, &col[r * plane..(r + 1) * plane]);
            }
        }
    }
    out
}

/// Gradient w.r.t. the input given the output gradient.
pub(crate) fn conv3x3_grad_input(d: &ConvDims, kernel: &[f32], grad_out: &[f32]) -> Vec<f32> {
    let plane = d.h * d.w;
    let taps = d.c_in * 9;
    let mut gcol = vec![0.0f32; taps * plane];
    for (co, g_plane) in grad_out.chunks(plane).enumerate() {
        let weights = &kernel[co * taps..(co + 1) * taps];
        for (r, &wv) in weights.iter().enumerate() {
            if wv != 0.0 {
                axpy(&mut gcol[r * plane..(r + 1) * plane], wv, g_plane);
            }
        }
    }
    col2im(d, &gcol)
}

/// Gradients w.r.t. kernel and bias given the output gradient.
pub(crate) fn conv3x3_grad_params(d: &ConvDims, input: &[f32], grad_out: &[f32]) -> (Vec<f32>, Vec<f32>) {
    let plane = d.h * d.w;
    let taps = d.c_in * 9;
    let col = im2col(d, input);
    let mut gk = vec![0.0f32; d.c_out * taps];
    let mut gb = vec![0.0f32; d.c_out];
    for (co, g_plane) in grad_out.chunks(plane).enumerate() {
        gb[co] = g_plane.iter().map(|&v| v as f64).sum::<f64>() as f32;
        for r in 0..taps {
            gk[co * taps + r] = dot(g_plane, &col[r * plane..(r + 1) * plane]);
        }
    }
    (gk, gb)
}

/// 2x2 max pooling. Returns the pooled values and, for each output, the
/// flat input index of the first maximum in row-major window order.
pub(crate) fn maxpool2x2(c: usize, h: usize, w: usize, input: &[f32]) -> (Vec<f32>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..oh {
            for x in 0..ow {
                let mut best_idx = base + 2 * y * w + 2 * x;
                let mut best = input[best_idx];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * y + dy) * w + 2 * x + dx;
                    // strict comparison keeps the first maximum on ties
                    if input[idx] > best {
                        best = input[idx];
                        best_idx = idx;
                    }
                }
                out.push(best);
                arg.push(best_idx as u32);
            }
        }
    }
    (out, arg)
}
