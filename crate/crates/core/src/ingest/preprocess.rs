use crate::error::{Error, Result};
use crate::nn::ops::resize_bilinear;
use crate::tensor::Tensor;

/// Brings a raw `[1, H, W]` image to `[1, size, size]`.
///
/// Intensities are min-max scaled to `[0, 1]` first, then the longer side is resampled
/// to `size` (bilinear) and the shorter side is zero-padded symmetrically, with the odd
/// pixel going to the bottom/right. Constant images map to all zeros.
pub fn preprocess(raw: &Tensor, size: usize) -> Result<Tensor> {
    let [1, h, w] = *raw.shape() else {
        return Err(Error::shape("preprocess", "[1, H, W]", raw.shape()));
    };
    if size == 0 {
        return Err(Error::Config("target size must be positive".into()));
    }
    let (lo, hi) = raw
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Image("non-finite pixel values".into()));
    }
    if hi <= lo {
        return Ok(Tensor::zeros(&[1, size, size]));
    }
    let scaled = raw.map(|v| (v - lo) / (hi - lo));
    let (nh, nw) = content_extent(h, w, size);
    let resized = resize_bilinear(&scaled, nh, nw)?;
    let (top, left) = ((size - nh) / 2, (size - nw) / 2);
    let mut out = Tensor::zeros(&[1, size, size]);
    let dst = out.data_mut();
    for (y, row) in resized.data().chunks_exact(nw).enumerate() {
        for (x, &v) in row.iter().enumerate() {
            dst[(top + y) * size + left + x] = v.clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// Resampled content size for an `h × w` image fitted into `size × size`.
pub fn content_extent(h: usize, w: usize, size: usize) -> (usize, usize) {
    let short = |a: usize, b: usize| (((a * size) as f64 / b as f64).round() as usize).clamp(1, size);
    if h >= w {
        (size, short(w, h))
    } else {
        (short(h, w), size)
    }
}
