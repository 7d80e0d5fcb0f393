//! Fixed image descriptors used by the k-means baselines.

mod hog;
mod lbp;
mod pca;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use hog::{hog, hog_cell_histograms, HogConfig};
pub use lbp::{lbp, lbp_codes, uniform_bin, LbpConfig, UNIFORM_BINS};
pub use pca::{pca_fit, PcaModel, PcaReport};

use crate::error::{Error, Result};
use crate::matrix::EmbeddingMatrix;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DescriptorConfig {
    pub pca_components: usize,
    pub hog: HogConfig,
    pub lbp: LbpConfig,
}

impl Default for DescriptorConfig {
    fn default() -> Self {
        Self {
            pca_components: 20,
            hog: HogConfig::default(),
            lbp: LbpConfig::default(),
        }
    }
}

/// Source of the embedding handed to a clustering head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Cae,
    Pca,
    Hog,
    Lbp,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 4] = [FeatureKind::Cae, FeatureKind::Pca, FeatureKind::Hog, FeatureKind::Lbp];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::Cae => "cae",
            FeatureKind::Pca => "pca",
            FeatureKind::Hog => "hog",
            FeatureKind::Lbp => "lbp",
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown feature kind {s:?} (expected cae, pca, hog or lbp)")))
    }
}

fn stack(images: &[Tensor], f: impl Fn(&Tensor) -> Result<Vec<f64>>) -> Result<EmbeddingMatrix> {
    let rows = images.iter().map(f).collect::<Result<Vec<_>>>()?;
    EmbeddingMatrix::from_rows(&rows)
}

pub fn hog_matrix(images: &[Tensor], config: &HogConfig) -> Result<EmbeddingMatrix> {
    stack(images, |im| hog(im, config))
}

pub fn lbp_matrix(images: &[Tensor], config: &LbpConfig) -> Result<EmbeddingMatrix> {
    stack(images, |im| lbp(im, config))
}

/// Flattened pixels, one image per row.
pub fn pixel_matrix(images: &[Tensor]) -> Result<EmbeddingMatrix> {
    stack(images, |im| Ok(im.data().to_vec()))
}
