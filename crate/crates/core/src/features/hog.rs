use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HogConfig {
    pub cell: usize,
    /// Block side in cells; blocks advance one cell at a time.
    pub block: usize,
    /// Unsigned orientation bins over `[0°, 180°)`.
    pub bins: usize,
    pub clip: f64,
}

impl Default for HogConfig {
    fn default() -> Self {
        Self {
            cell: 8,
            block: 2,
            bins: 9,
            clip: 0.2,
        }
    }
}

impl HogConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cell == 0 || self.block == 0 || self.bins == 0 {
            return Err(Error::Config("HOG cell, block and bins must be positive".into()));
        }
        if !(self.clip > 0.0) {
            return Err(Error::Config(format!("HOG clip must be positive, got {}", self.clip)));
        }
        Ok(())
    }

    pub fn descriptor_len(&self, size: usize) -> usize {
        let cells = size / self.cell;
        let blocks = (cells + 1).saturating_sub(self.block);
        blocks * blocks * self.block * self.block * self.bins
    }
}

/// Returns `(height, width, plane)` for a `[1, H, W]` image whose extents are multiples of `cell`.
pub(crate) fn plane<'a>(image: &'a Tensor, cell: usize, op: &str) -> Result<(usize, usize, &'a [f64])> {
    let s = image.shape();
    if s.len() != 3 || s[0] != 1 || !s[1].is_multiple_of(cell) || !s[2].is_multiple_of(cell) {
        return Err(Error::shape(op, format!("[1, H, W] with H, W divisible by {cell}"), s));
    }
    Ok((s[1], s[2], image.data()))
}

/// Per-cell orientation histograms, `[cells_y][cells_x][bins]` flattened.
pub fn hog_cell_histograms(image: &Tensor, config: &HogConfig) -> Result<(usize, usize, Vec<f64>)> {
    config.validate()?;
    let (h, w, px) = plane(image, config.cell, "hog")?;
    let (cy, cx) = (h / config.cell, w / config.cell);
    let bins = config.bins;
    let width = 180.0 / bins as f64;
    let mut hist = vec![0.0; cy * cx * bins];
    let at = |y: usize, x: usize| px[y * w + x];
    for y in 0..h {
        let (up, down) = (y.saturating_sub(1), (y + 1).min(h - 1));
        for x in 0..w {
            let (left, right) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let gx = at(y, right) - at(y, left);
            let gy = at(down, x) - at(up, x);
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let mut angle = gy.atan2(gx).to_degrees().rem_euclid(180.0);
            if angle >= 180.0 {
                angle = 0.0;
            }
            // bin b is centred at b·width; split the vote between the two nearest centres
            let pos = angle / width;
            let b0 = pos.floor() as usize % bins;
            let frac = pos - pos.floor();
            let b1 = (b0 + 1) % bins;
            let cell = ((y / config.cell) * cx + x / config.cell) * bins;
            hist[cell + b0] += mag * (1.0 - frac);
            hist[cell + b1] += mag * frac;
        }
    }
    Ok((cy, cx, hist))
}

/// L2-Hys: L2 normalise, clip, renormalise.
fn l2_hys(v: &mut [f64], clip: f64) {
    let norm = (v.iter().map(|x| x * x).sum::<f64>() + EPS * EPS).sqrt();
    v.iter_mut().for_each(|x| *x = (*x / norm).min(clip));
    let norm = (v.iter().map(|x| x * x).sum::<f64>() + EPS * EPS).sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
}

/// Histogram-of-oriented-gradients descriptor: concatenated L2-Hys normalised blocks.
pub fn hog(image: &Tensor, config: &HogConfig) -> Result<Vec<f64>> {
    let (cy, cx, hist) = hog_cell_histograms(image, config)?;
    let (b, bins) = (config.block, config.bins);
    let mut out = Vec::new();
    if cy < b || cx < b {
        return Ok(out);
    }
    let mut block = Vec::with_capacity(b * b * bins);
    for by in 0..=cy - b {
        for bx in 0..=cx - b {
            block.clear();
            for dy in 0..b {
                for dx in 0..b {
                    let start = ((by + dy) * cx + bx + dx) * bins;
                    block.extend_from_slice(&hist[start..start + bins]);
                }
            }
            l2_hys(&mut block, config.clip);
            out.extend_from_slice(&block);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn image(s: usize, f: impl Fn(usize, usize) -> f64) -> Tensor {
        Tensor::new(vec![1, s, s], (0..s * s).map(|i| f(i / s, i % s)).collect()).unwrap()
    }

    #[test]
    fn descriptor_length() {
        let c = HogConfig::default();
        assert_eq!(c.descriptor_len(64), 1764);
        let v = hog(&image(64, |y, x| ((x * 3 + y * 5) % 7) as f64), &c).unwrap();
        assert_eq!(v.len(), 1764);
    }

    #[test]
    fn constant_image_is_all_zero() {
        let v = hog(&image(32, |_, _| 0.7), &HogConfig::default()).unwrap();
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn rejects_indivisible_extent() {
        assert!(hog(&image(20, |_, _| 0.0), &HogConfig::default()).is_err());
    }

    /// Independent reference: explicit loops, bin chosen by nearest centres computed from angles directly.
    fn reference_cells(img: &[Vec<f64>], cell: usize) -> Vec<[f64; 9]> {
        let n = img.len();
        let g = |y: isize, x: isize| img[y.clamp(0, n as isize - 1) as usize][x.clamp(0, n as isize - 1) as usize];
        let mut cells = vec![[0.0; 9]; (n / cell) * (n / cell)];
        for y in 0..n as isize {
            for x in 0..n as isize {
                let dx = g(y, x + 1) - g(y, x - 1);
                let dy = g(y + 1, x) - g(y - 1, x);
                let m = (dx * dx + dy * dy).sqrt();
                if m == 0.0 {
                    continue;
                }
                let mut a = dy.atan2(dx).to_degrees();
                while a < 0.0 {
                    a += 180.0;
                }
                while a >= 180.0 {
                    a -= 180.0;
                }
                let c = &mut cells[(y as usize / cell) * (n / cell) + x as usize / cell];
                for b in 0..9 {
                    let centre = b as f64 * 20.0;
                    let mut d = (a - centre).abs();
                    d = d.min(180.0 - d);
                    if d < 20.0 {
                        c[b] += m * (1.0 - d / 20.0);
                    }
                }
            }
        }
        cells
    }

    #[test]
    fn vertical_edge_votes_horizontal_bin() {
        let s = 32;
        let img = image(s, |_, x| if x < 13 { 0.0 } else { 1.0 });
        let (_, _, hist) = hog_cell_histograms(&img, &HogConfig::default()).unwrap();
        let total: f64 = hist.iter().sum();
        let bin0: f64 = hist.chunks(9).map(|c| c[0]).sum();
        assert!(total > 0.0);
        assert!((bin0 / total - 1.0).abs() < 1e-12);

        let rows: Vec<Vec<f64>> = (0..s).map(|y| img.data()[y * s..(y + 1) * s].to_vec()).collect();
        let reference = reference_cells(&rows, 8);
        for (a, b) in hist.chunks(9).zip(&reference) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matches_reference_on_textured_image() {
        let s = 16;
        let img = image(s, |y, x| ((x as f64 * 0.7).sin() + (y as f64 * 0.3 + x as f64 * 0.2).cos()).abs());
        let (_, _, hist) = hog_cell_histograms(&img, &HogConfig::default()).unwrap();
        let rows: Vec<Vec<f64>> = (0..s).map(|y| img.data()[y * s..(y + 1) * s].to_vec()).collect();
        for (a, b) in hist.chunks(9).zip(&reference_cells(&rows, 8)) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-9, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn blocks_are_unit_norm_and_clipped() {
        let img = image(32, |y, x| ((x * 7 + y * 13) % 11) as f64 / 10.0);
        let v = hog(&img, &HogConfig::default()).unwrap();
        for block in v.chunks(36) {
            let n: f64 = block.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
            assert!(block.iter().all(|&x| x >= 0.0));
        }
    }

    proptest! {
        #[test]
        fn affine_intensity_invariance(
            pixels in proptest::collection::vec(0.0f64..1.0, 16 * 16),
            a in 0.1f64..10.0,
            b in -5.0f64..5.0,
        ) {
            let img = Tensor::new(vec![1, 16, 16], pixels).unwrap();
            let c = HogConfig::default();
            let v = hog(&img, &c).unwrap();
            let w = hog(&img.map(|x| a * x + b), &c).unwrap();
            for (x, y) in v.iter().zip(&w) {
                prop_assert!((x - y).abs() < 1e-6);
            }
        }
    }
}
