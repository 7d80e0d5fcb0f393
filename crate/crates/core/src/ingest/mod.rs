//! Image ingestion: file decoding, preprocessing and dataset manifests.

pub mod dicom;
mod manifest;
pub mod pgm;
mod preprocess;

pub use dicom::{parse_dicom, write_dicom, DicomImage, Photometric};
pub use manifest::{
    build_manifest, DatasetManifest, Excluded, ImageRecord, IngestConfig, Ingested, LabelTable, ManifestEntry,
    PreprocessConfig, Split, SplitSpec,
};
pub use pgm::{parse_pgm, write_pgm};
pub use preprocess::{content_extent, preprocess};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A decoded image before preprocessing.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedImage {
    /// Raw intensities, `[1, H, W]`, with MONOCHROME1 already negated so that brighter
    /// means more signal after min-max scaling.
    pub raw: Tensor,
    pub modality: Option<String>,
    pub anatomical_region: Option<String>,
}

/// Sniffs the format (DICOM magic at offset 128, else `P5`) and decodes.
pub fn load_image(bytes: &[u8]) -> Result<LoadedImage> {
    if bytes.len() >= 132 && &bytes[128..132] == b"DICM" {
        let img = parse_dicom(bytes)?;
        let raw = match img.photometric {
            // min-max scaling of -x equals 1 - scaled(x)
            Photometric::Monochrome1 => img.pixels.map(|v| -v),
            Photometric::Monochrome2 => img.pixels.clone(),
        };
        Ok(LoadedImage {
            raw,
            modality: img.modality().map(str::to_string),
            anatomical_region: img.body_part().map(str::to_string),
        })
    } else if bytes.starts_with(b"P5") {
        Ok(LoadedImage {
            raw: parse_pgm(bytes)?,
            modality: None,
            anatomical_region: None,
        })
    } else {
        Err(Error::DicomFormat("neither DICOM (no \"DICM\" at offset 128) nor binary PGM".into()))
    }
}
