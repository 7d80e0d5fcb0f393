use serde::{Deserialize, Serialize};

use super::hog::plane;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Number of histogram bins: 58 uniform codes plus one shared non-uniform bin.
pub const UNIFORM_BINS: usize = 59;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LbpConfig {
    pub cell: usize,
    pub radius: usize,
}

impl Default for LbpConfig {
    fn default() -> Self {
        Self { cell: 16, radius: 1 }
    }
}

impl LbpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cell == 0 || self.radius == 0 {
            return Err(Error::Config("LBP cell and radius must be positive".into()));
        }
        Ok(())
    }

    pub fn descriptor_len(&self, size: usize) -> usize {
        (size / self.cell).pow(2) * UNIFORM_BINS
    }
}

/// Neighbour offsets `(dy, dx)`: p = 0 points right, then counter-clockwise (rows grow downwards).
const DIRECTIONS: [(isize, isize); 8] = [(0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1)];

/// 8-bit codes; bit p is set when neighbour p ≥ centre. Out-of-range neighbours clamp to the border.
pub fn lbp_codes(image: &Tensor, config: &LbpConfig) -> Result<Vec<u8>> {
    config.validate()?;
    let (h, w, px) = plane(image, 1, "lbp")?;
    let r = config.radius as isize;
    let mut codes = Vec::with_capacity(h * w);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let centre = px[y as usize * w + x as usize];
            let mut code = 0u8;
            for (p, (dy, dx)) in DIRECTIONS.iter().enumerate() {
                let ny = (y + dy * r).clamp(0, h as isize - 1) as usize;
                let nx = (x + dx * r).clamp(0, w as isize - 1) as usize;
                if px[ny * w + nx] >= centre {
                    code |= 1 << p;
                }
            }
            codes.push(code);
        }
    }
    Ok(codes)
}

fn transitions(code: u8) -> u32 {
    (code ^ code.rotate_right(1)).count_ones()
}

/// Histogram bin of a code: uniform codes (≤ 2 circular transitions) take bins 0..58 in ascending
/// code order; all others share bin 58.
pub fn uniform_bin(code: u8) -> usize {
    static TABLE: std::sync::OnceLock<[u8; 256]> = std::sync::OnceLock::new();
    let table = TABLE.get_or_init(|| {
        let mut t = [(UNIFORM_BINS - 1) as u8; 256];
        let mut next = 0u8;
        for c in 0..=255u8 {
            if transitions(c) <= 2 {
                t[c as usize] = next;
                next += 1;
            }
        }
        t
    });
    table[code as usize] as usize
}

/// Concatenated per-cell uniform-pattern histograms, each L1 normalised.
pub fn lbp(image: &Tensor, config: &LbpConfig) -> Result<Vec<f64>> {
    let codes = lbp_codes(image, config)?;
    let (h, w, _) = plane(image, config.cell, "lbp")?;
    let (cy, cx) = (h / config.cell, w / config.cell);
    let mut out = vec![0.0; cy * cx * UNIFORM_BINS];
    for y in 0..h {
        for x in 0..w {
            let cell = (y / config.cell) * cx + x / config.cell;
            out[cell * UNIFORM_BINS + uniform_bin(codes[y * w + x])] += 1.0;
        }
    }
    let per_cell = (config.cell * config.cell) as f64;
    out.iter_mut().for_each(|v| *v /= per_cell);
    Ok(out)
}
