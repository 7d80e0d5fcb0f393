//! Forward and backward kernels for the closed layer set.
//!
//! Feature maps are `[C, H, W]` tensors for a single instance. Batching happens one
//! level up, in the trainers, which sum per-instance gradients in index order.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn chw(layer: &str, t: &Tensor) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(Error::shape(layer, "[C, H, W]", s)),
    }
}

/// Same-padded, stride-1 3×3 convolution (cross-correlation).
pub fn conv3x3_forward(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (cin, h, w) = chw("conv3x3", input)?;
    let cout = check_conv_params(cin, weight, bias)?;
    let hw = h * w;
    let x = input.data();
    let k = weight.data();
    let mut out = vec![0.0; cout * hw];
    for co in 0..cout {
        let plane = &mut out[co * hw..(co + 1) * hw];
        plane.fill(bias.data()[co]);
        for ci in 0..cin {
            let src = &x[ci * hw..(ci + 1) * hw];
            for ky in 0..3 {
                for kx in 0..3 {
                    let wv = k[((co * cin + ci) * 3 + ky) * 3 + kx];
                    let Some(t) = Tap::new(ky, kx, h, w) else { continue };
                    for y in t.y0..t.y1 {
                        let sy = (y as isize + t.dy) as usize;
                        let o = &mut plane[y * w + t.x0..y * w + t.x1];
                        let s = &src[sy * w + (t.x0 as isize + t.dx) as usize..sy * w + (t.x1 as isize + t.dx) as usize];
                        for (ov, sv) in o.iter_mut().zip(s) {
                            *ov += wv * sv;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![cout, h, w], out)
}

/// Gradients of [`conv3x3_forward`] with respect to input, weight and bias.
pub fn conv3x3_backward(input: &Tensor, weight: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (cin, h, w) = chw("conv3x3", input)?;
    let cout = weight.shape()[0];
    if grad_out.shape() != [cout, h, w] {
        return Err(Error::shape("conv3x3 backward", [cout, h, w], grad_out.shape()));
    }
    let hw = h * w;
    let x = input.data();
    let k = weight.data();
    let g = grad_out.data();
    let mut gx = vec![0.0; cin * hw];
    let mut gw = vec![0.0; cout * cin * 9];
    let mut gb = vec![0.0; cout];
    for co in 0..cout {
        let gplane = &g[co * hw..(co + 1) * hw];
        gb[co] = gplane.iter().sum();
        for ci in 0..cin {
            let src = &x[ci * hw..(ci + 1) * hw];
            let dst = &mut gx[ci * hw..(ci + 1) * hw];
            for ky in 0..3 {
                for kx in 0..3 {
                    let widx = ((co * cin + ci) * 3 + ky) * 3 + kx;
                    let wv = k[widx];
                    let Some(t) = Tap::new(ky, kx, h, w) else { continue };
                    let mut acc = 0.0;
                    for y in t.y0..t.y1 {
                        let sy = (y as isize + t.dy) as usize;
                        let lo = sy * w + (t.x0 as isize + t.dx) as usize;
                        let hi = sy * w + (t.x1 as isize + t.dx) as usize;
                        let gr = &gplane[y * w + t.x0..y * w + t.x1];
                        for (sv, gv) in src[lo..hi].iter().zip(gr) {
                            acc += sv * gv;
                        }
                        for (dv, gv) in dst[lo..hi].iter_mut().zip(gr) {
                            *dv += wv * gv;
                        }
                    }
                    gw[widx] += acc;
                }
            }
        }
    }
    Ok((
        Tensor::new(vec![cin, h, w], gx)?,
        Tensor::new(weight.shape().to_vec(), gw)?,
        Tensor::new(vec![cout], gb)?,
    ))
}

fn check_conv_params(cin: usize, weight: &Tensor, bias: &Tensor) -> Result<usize> {
    match *weight.shape() {
        [cout, wc, 3, 3] if wc == cin => {
            if bias.shape() != [cout] {
                return Err(Error::shape("conv3x3 bias", [cout], bias.shape()));
            }
            Ok(cout)
        }
        ref s => Err(Error::shape("conv3x3 weight", format!("[C_out, {cin}, 3, 3]"), s)),
    }
}

/// Valid output range for one kernel offset under zero padding.
struct Tap {
    dy: isize,
    dx: isize,
    y0: usize,
    y1: usize,
    x0: usize,
    x1: usize,
}

impl Tap {
    fn new(ky: usize, kx: usize, h: usize, w: usize) -> Option<Self> {
        let dy = ky as isize - 1;
        let dx = kx as isize - 1;
        let y0 = (-dy).max(0) as usize;
        let y1 = (h as isize - dy).min(h as isize).max(0) as usize;
        let x0 = (-dx).max(0) as usize;
        let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
        (y0 < y1 && x0 < x1).then_some(Tap { dy, dx, y0, y1, x0, x1 })
    }
}

/// 2×2 max pooling with stride 2. Returns the pooled map and, for every output
/// element, the flat input index of the selected maximum (first in scan order on ties).
pub fn maxpool2x2_forward(input: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let (c, h, w) = chw("maxpool2x2", input)?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape("maxpool2x2", "even H and W", input.shape()));
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut idx = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                out.push(x[best]);
                idx.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![c, oh, ow], out)?, idx))
}

pub fn maxpool2x2_backward(grad_out: &Tensor, argmax: &[usize], input_shape: &[usize]) -> Result<Tensor> {
    if grad_out.numel() != argmax.len() {
        return Err(Error::shape("maxpool2x2 backward", argmax.len(), grad_out.shape()));
    }
    let mut gx = Tensor::zeros(input_shape);
    let d = gx.data_mut();
    for (&i, &g) in argmax.iter().zip(grad_out.data()) {
        d[i] += g;
    }
    Ok(gx)
}

/// Interpolation taps `(i0, i1, w0, w1)` for resampling `n_in` samples to `n_out`
/// with half-pixel centres (align-corners = false) and edge clamping.
pub fn linear_taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64, f64)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            let frac = if i0 == n_in - 1 { 0.0 } else { src - i0 as f64 };
            (i0, i1, 1.0 - frac, frac)
        })
        .collect()
}

/// Bilinear resampling of every channel of `[C, H, W]` to `[C, out_h, out_w]`.
pub fn resize_bilinear(input: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (c, h, w) = chw("resize", input)?;
    let ty = linear_taps(h, out_h);
    let tx = linear_taps(w, out_w);
    let x = input.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let p = &x[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, wy0, wy1) in &ty {
            for &(x0, x1, wx0, wx1) in &tx {
                let top = wx0 * p[y0 * w + x0] + wx1 * p[y0 * w + x1];
                let bot = wx0 * p[y1 * w + x0] + wx1 * p[y1 * w + x1];
                out.push(wy0 * top + wy1 * bot);
            }
        }
    }
    Tensor::new(vec![c, out_h, out_w], out)
}

pub fn upsample2x_bilinear(input: &Tensor) -> Result<Tensor> {
    let (_, h, w) = chw("upsample2x_bilinear", input)?;
    resize_bilinear(input, 2 * h, 2 * w)
}

/// Adjoint of [`upsample2x_bilinear`].
pub fn upsample2x_bilinear_backward(grad_out: &Tensor, input_shape: &[usize]) -> Result<Tensor> {
    let [c, h, w] = *input_shape else {
        return Err(Error::shape("upsample2x_bilinear backward", "[C, H, W]", input_shape));
    };
    if grad_out.shape() != [c, 2 * h, 2 * w] {
        return Err(Error::shape("upsample2x_bilinear backward", [c, 2 * h, 2 * w], grad_out.shape()));
    }
    let ty = linear_taps(h, 2 * h);
    let tx = linear_taps(w, 2 * w);
    let g = grad_out.data();
    let mut gx = vec![0.0; c * h * w];
    let ow = 2 * w;
    for ch in 0..c {
        let gp = &g[ch * 4 * h * w..(ch + 1) * 4 * h * w];
        let dp = &mut gx[ch * h * w..(ch + 1) * h * w];
        for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                let gv = gp[oy * ow + ox];
                dp[y0 * w + x0] += wy0 * wx0 * gv;
                dp[y0 * w + x1] += wy0 * wx1 * gv;
                dp[y1 * w + x0] += wy1 * wx0 * gv;
                dp[y1 * w + x1] += wy1 * wx1 * gv;
            }
        }
    }
    Tensor::new(input_shape.to_vec(), gx)
}

/// Affine map `W x + b` of a flat input.
pub fn dense_forward(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let n = input.numel();
    let [m, wn] = *weight.shape() else {
        return Err(Error::shape("dense weight", "[m, n]", weight.shape()));
    };
    if wn != n || input.rank() != 1 {
        return Err(Error::shape("dense", [wn], input.shape()));
    }
    if bias.shape() != [m] {
        return Err(Error::shape("dense bias", [m], bias.shape()));
    }
    let x = input.data();
    let out = weight
        .data()
        .chunks_exact(n)
        .zip(bias.data())
        .map(|(row, b)| b + row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>())
        .collect();
    Tensor::new(vec![m], out)
}

pub fn dense_backward(input: &Tensor, weight: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let n = input.numel();
    let m = weight.shape()[0];
    if grad_out.shape() != [m] {
        return Err(Error::shape("dense backward", [m], grad_out.shape()));
    }
    let x = input.data();
    let g = grad_out.data();
    let mut gx = vec![0.0; n];
    let mut gw = vec![0.0; m * n];
    for (j, (row, grow)) in weight.data().chunks_exact(n).zip(gw.chunks_exact_mut(n)).enumerate() {
        let gj = g[j];
        for ((gxi, wi), (gwi, xi)) in gx.iter_mut().zip(row).zip(grow.iter_mut().zip(x)) {
            *gxi += wi * gj;
            *gwi = gj * xi;
        }
    }
    Ok((
        Tensor::new(vec![n], gx)?,
        Tensor::new(vec![m, n], gw)?,
        grad_out.clone(),
    ))
}

pub fn relu_forward(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

/// ReLU gate: gradient passes where the pre-activation is strictly positive.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Tensor {
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.shape().to_vec(), data).expect("shape preserved")
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid_forward(input: &Tensor) -> Tensor {
    input.map(sigmoid)
}

/// Sigmoid backward expressed through the forward output `s`: `g · s · (1 − s)`.
pub fn sigmoid_backward(output: &Tensor, grad_out: &Tensor) -> Tensor {
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&s, &g)| g * s * (1.0 - s))
        .collect();
    Tensor::new(output.shape().to_vec(), data).expect("shape preserved")
}

/// Mean squared error over all elements, and its gradient with respect to `reconstruction`.
pub fn mse_loss(target: &Tensor, reconstruction: &Tensor) -> Result<(f64, Tensor)> {
    if target.shape() != reconstruction.shape() {
        return Err(Error::shape("mse_loss", target.shape(), reconstruction.shape()));
    }
    let n = target.numel() as f64;
    let mut loss = 0.0;
    let grad = target
        .data()
        .iter()
        .zip(reconstruction.data())
        .map(|(&x, &r)| {
            let d = r - x;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    Ok((loss / n, Tensor::new(target.shape().to_vec(), grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn conv_zero_input_gives_bias_planes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = random(&[3, 2, 3, 3], &mut rng);
        let b = Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap();
        let y = conv3x3_forward(&Tensor::zeros(&[2, 5, 4]), &w, &b).unwrap();
        assert_eq!(y.shape(), &[3, 5, 4]);
        for (c, plane) in y.data().chunks(20).enumerate() {
            assert!(plane.iter().all(|&v| v == b.data()[c]));
        }
    }

    #[test]
    fn conv_delta_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(&[1, 6, 7], &mut rng);
        let mut w = Tensor::zeros(&[1, 1, 3, 3]);
        w.data_mut()[4] = 1.0;
        let y = conv3x3_forward(&x, &w, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv_ones_counts_neighbours() {
        let y = conv3x3_forward(&Tensor::full(&[1, 3, 3], 1.0), &Tensor::full(&[1, 1, 3, 3], 1.0), &Tensor::zeros(&[1])).unwrap();
        assert_eq!(y.data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let err = conv3x3_forward(&Tensor::zeros(&[2, 3, 3]), &Tensor::zeros(&[1, 3, 3, 3]), &Tensor::zeros(&[1])).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
        assert!(err.to_string().contains("conv3x3"));
    }

    #[test]
    fn maxpool_examples() {
        let (y, idx) = maxpool2x2_forward(&Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(idx, vec![3]);
        let (y, _) = maxpool2x2_forward(&Tensor::full(&[2, 4, 4], 7.0)).unwrap();
        assert!(y.data().iter().all(|&v| v == 7.0));
        assert!(maxpool2x2_forward(&Tensor::zeros(&[1, 3, 4])).is_err());
    }

    #[test]
    fn maxpool_matches_blockwise_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&[2, 4, 4], &mut rng);
        let (y, _) = maxpool2x2_forward(&x).unwrap();
        let d = x.data();
        for c in 0..2 {
            for oy in 0..2 {
                for ox in 0..2 {
                    let mut m = f64::NEG_INFINITY;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            m = m.max(d[c * 16 + (2 * oy + dy) * 4 + 2 * ox + dx]);
                        }
                    }
                    assert_eq!(y.data()[c * 4 + oy * 2 + ox], m);
                }
            }
        }
    }

    #[test]
    fn maxpool_backward_routes_to_argmax_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(&[3, 6, 4], &mut rng);
        let (y, idx) = maxpool2x2_forward(&x).unwrap();
        let g = random(y.shape(), &mut rng);
        let gx = maxpool2x2_backward(&g, &idx, x.shape()).unwrap();
        let total: f64 = gx.data().iter().sum();
        let upstream: f64 = g.data().iter().sum();
        assert!((total - upstream).abs() < 1e-12);
        let nonzero = gx.data().iter().filter(|v| **v != 0.0).count();
        assert_eq!(nonzero, idx.len());
        for (i, v) in gx.data().iter().enumerate() {
            if *v != 0.0 {
                assert!(idx.contains(&i));
            }
        }
    }

    #[test]
    fn upsample_examples() {
        let y = upsample2x_bilinear(&Tensor::new(vec![1, 1, 2], vec![0.0, 1.0]).unwrap()).unwrap();
        assert_eq!(y.shape(), &[1, 2, 4]);
        assert_eq!(y.data(), &[0.0, 0.25, 0.75, 1.0, 0.0, 0.25, 0.75, 1.0]);
        let y = upsample2x_bilinear(&Tensor::full(&[2, 3, 5], 0.3)).unwrap();
        assert!(y.data().iter().all(|&v| (v - 0.3).abs() < 1e-15));
    }

    #[test]
    fn upsample_adjoint_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for shape in [[1, 1, 1], [2, 3, 4], [3, 5, 2]] {
            let x = random(&shape, &mut rng);
            let y = random(&[shape[0], 2 * shape[1], 2 * shape[2]], &mut rng);
            let lhs = upsample2x_bilinear(&x).unwrap().dot(&y);
            let rhs = x.dot(&upsample2x_bilinear_backward(&y, &shape).unwrap());
            assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn conv_adjoint_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random(&[2, 5, 6], &mut rng);
        let w = random(&[3, 2, 3, 3], &mut rng);
        let y = random(&[3, 5, 6], &mut rng);
        let lhs = conv3x3_forward(&x, &w, &Tensor::zeros(&[3])).unwrap().dot(&y);
        let (gx, _, _) = conv3x3_backward(&x, &w, &y).unwrap();
        assert!((lhs - x.dot(&gx)).abs() < 1e-10);
    }

    #[test]
    fn dense_examples() {
        let x = Tensor::new(vec![3], vec![1.0, -2.0, 3.5]).unwrap();
        let mut eye = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 4] = 1.0;
        }
        assert_eq!(dense_forward(&x, &eye, &Tensor::zeros(&[3])).unwrap(), x);
        let b = Tensor::new(vec![2], vec![0.25, -4.0]).unwrap();
        assert_eq!(dense_forward(&x, &Tensor::zeros(&[2, 3]), &b).unwrap(), b);
    }

    #[test]
    fn dense_matches_naive_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random(&[7], &mut rng);
        let w = random(&[4, 7], &mut rng);
        let b = random(&[4], &mut rng);
        let y = dense_forward(&x, &w, &b).unwrap();
        for i in 0..4 {
            let mut acc = b.data()[i];
            for j in 0..7 {
                acc += w.data()[i * 7 + j] * x.data()[j];
            }
            assert!((y.data()[i] - acc).abs() < 1e-12);
        }
    }

    #[test]
    fn mse_examples() {
        let x = Tensor::full(&[2, 3], 0.4);
        assert_eq!(mse_loss(&x, &x).unwrap().0, 0.0);
        let (l, g) = mse_loss(&Tensor::zeros(&[1]), &Tensor::full(&[1], 1.0)).unwrap();
        assert_eq!(l, 1.0);
        assert_eq!(g.data(), &[2.0]);
        assert!(mse_loss(&Tensor::zeros(&[2]), &Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn taps_are_convex_weights() {
        for (n_in, n_out) in [(1, 4), (3, 7), (200, 256), (256, 100)] {
            for (i0, i1, w0, w1) in linear_taps(n_in, n_out) {
                assert!(i0 < n_in && i1 < n_in);
                assert!((0.0..=1.0).contains(&w0) && (0.0..=1.0).contains(&w1));
                assert!((w0 + w1 - 1.0).abs() < 1e-15);
            }
        }
    }
}
