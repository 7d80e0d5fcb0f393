//! Binary PGM (`P5`) with 8- or 16-bit samples.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Decodes a `P5` file into raw intensities `[1, H, W]`.
pub fn parse_pgm(bytes: &[u8]) -> Result<Tensor> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Image("PGM header ended early".into()));
        }
        fields.push(&bytes[start..pos]);
    }
    if fields[0] != b"P5" {
        return Err(Error::Image("not a binary PGM (P5)".into()));
    }
    let num = |f: &[u8]| -> Result<usize> {
        std::str::from_utf8(f)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Image(format!("bad PGM header field {:?}", String::from_utf8_lossy(f))))
    };
    let (w, h, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if w == 0 || h == 0 || maxval == 0 || maxval > 65535 {
        return Err(Error::Image(format!("unsupported PGM geometry {w}×{h}, maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let bpp = if maxval < 256 { 1 } else { 2 };
    let raster = bytes
        .get(pos..pos + w * h * bpp)
        .ok_or_else(|| Error::Image("PGM raster truncated".into()))?;
    let data = if bpp == 1 {
        raster.iter().map(|&b| b as f64).collect()
    } else {
        raster.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as f64).collect()
    };
    Tensor::new(vec![1, h, w], data)
}

/// Encodes integral intensities in `[0, maxval]` as `P5`.
pub fn write_pgm(image: &Tensor, maxval: u16) -> Result<Vec<u8>> {
    let [1, h, w] = *image.shape() else {
        return Err(Error::shape("write_pgm", "[1, H, W]", image.shape()));
    };
    let mut out = format!("P5\n{w} {h}\n{maxval}\n").into_bytes();
    for &v in image.data() {
        if !(0.0..=maxval as f64).contains(&v) || v.fract() != 0.0 {
            return Err(Error::InvalidInput(format!("PGM sample {v} outside 0..={maxval}")));
        }
        if maxval < 256 {
            out.push(v as u8);
        } else {
            out.extend_from_slice(&(v as u16).to_be_bytes());
        }
    }
    Ok(out)
}
