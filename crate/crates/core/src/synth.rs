//! Synthetic labelled corpus: simple shapes rendered under two contrast conventions.
//!
//! Class `c` (disk, square, cross) plays the role of the anatomical region and the contrast
//! convention plays the role of the modality: modality 0 draws a bright shape on a dark
//! background, modality 1 the inverse, so the distinction survives per-image min-max scaling.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::dicom::{self, new_image, Photometric};
use crate::ingest::write_pgm;
use crate::tensor::Tensor;

pub const SHAPES: [&str; 3] = ["disk", "square", "cross"];
pub const MODALITIES: [&str; 2] = ["BRIGHT", "DARK"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShapesConfig {
    pub count: usize,
    pub size: usize,
    /// 1 renders every image with the bright-on-dark convention.
    pub modalities: usize,
    /// Standard deviation of the additive pixel noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for ShapesConfig {
    fn default() -> Self {
        Self {
            count: 600,
            size: 64,
            modalities: 2,
            noise: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticImage {
    pub id: String,
    /// `[1, S, S]` in `[0, 1]`.
    pub pixels: Tensor,
    pub shape: usize,
    pub modality: usize,
}

impl SyntheticImage {
    pub fn shape_name(&self) -> &'static str {
        SHAPES[self.shape]
    }

    pub fn modality_name(&self) -> &'static str {
        MODALITIES[self.modality]
    }
}

fn inside(shape: usize, dy: f64, dx: f64, r: f64) -> bool {
    match shape {
        0 => dy * dy + dx * dx <= r * r,
        1 => dy.abs() <= r * 0.85 && dx.abs() <= r * 0.85,
        _ => (dy.abs() <= r && dx.abs() <= r * 0.3) || (dx.abs() <= r && dy.abs() <= r * 0.3),
    }
}

/// Balanced corpus: image `i` has shape `i mod 3` and modality `(i / 3) mod modalities`.
pub fn shapes_fixture(config: &ShapesConfig) -> Result<Vec<SyntheticImage>> {
    let s = config.size;
    if s < 16 || !(1..=2).contains(&config.modalities) || !(config.noise >= 0.0) {
        return Err(Error::Config("shapes fixture needs size ≥ 16, 1 or 2 modalities, noise ≥ 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = Normal::new(0.0, config.noise).map_err(|e| Error::Config(e.to_string()))?;
    let sf = s as f64;
    let width = config.count.to_string().len();
    let mut out = Vec::with_capacity(config.count);
    for i in 0..config.count {
        let shape = i % SHAPES.len();
        let modality = (i / SHAPES.len()) % config.modalities;
        let r = rng.random_range(sf * 0.22..sf * 0.3);
        let cy = sf / 2.0 + rng.random_range(-sf * 0.06..sf * 0.06);
        let cx = sf / 2.0 + rng.random_range(-sf * 0.06..sf * 0.06);
        let fg = rng.random_range(0.75..0.95);
        let bg = rng.random_range(0.05..0.25);
        let (fg, bg) = if modality == 0 { (fg, bg) } else { (1.0 - fg, 1.0 - bg) };
        let mut data = Vec::with_capacity(s * s);
        for y in 0..s {
            for x in 0..s {
                let base = if inside(shape, y as f64 + 0.5 - cy, x as f64 + 0.5 - cx, r) { fg } else { bg };
                let v: f64 = base + noise.sample(&mut rng);
                data.push(v.clamp(0.0, 1.0));
            }
        }
        out.push(SyntheticImage {
            id: format!("img{i:0width$}"),
            pixels: Tensor::new(vec![1, s, s], data)?,
            shape,
            modality,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FixtureFormat {
    /// 8-bit PGM files plus `labels.csv`.
    Pgm,
    /// 16-bit MONOCHROME2 DICOM with Modality and BodyPartExamined tags.
    Dicom,
}

/// Writes the corpus into `dir` (created if needed).
pub fn write_fixture(dir: &Path, images: &[SyntheticImage], format: FixtureFormat) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut labels = csv::Writer::from_path(dir.join("labels.csv"))?;
    labels.write_record(["id", "modality", "anatomical_region"])?;
    for im in images {
        match format {
            FixtureFormat::Pgm => {
                let q = im.pixels.map(|v| (v * 255.0).round());
                std::fs::write(dir.join(format!("{}.pgm", im.id)), write_pgm(&q, 255)?)?;
            }
            FixtureFormat::Dicom => {
                let q = im.pixels.map(|v| (v * 4095.0).round());
                let body = im.shape_name().to_ascii_uppercase();
                let img = new_image(
                    q,
                    16,
                    Photometric::Monochrome2,
                    &[(dicom::MODALITY, im.modality_name()), (dicom::BODY_PART_EXAMINED, &body)],
                );
                std::fs::write(dir.join(format!("{}.dcm", im.id)), dicom::write_dicom(&img)?)?;
            }
        }
        labels.write_record([im.id.as_str(), im.modality_name(), im.shape_name()])?;
    }
    labels.flush()?;
    Ok(())
}
