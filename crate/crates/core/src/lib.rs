//! Unsupervised clustering of monochrome image corpora.
//!
//! The crate covers the whole path from raw files to evaluation:
//!
//! * [`ingest`]: DICOM (explicit-VR little-endian subset) and PGM loading, aspect-preserving
//!   resize with zero padding, per-image `[0, 1]` scaling and seeded dataset splits.
//! * [`features`]: fixed descriptors (PCA, HOG, LBP).
//! * [`nn`] and [`cae`]: a small convolutional autoencoder trained with manual backprop and Adam.
//! * [`cluster`]: k-means and the DEC / IDEC self-training heads.
//! * [`metrics`]: silhouette, NMI and homogeneity, plus multi-run aggregation.
//! * [`project`]: exact t-SNE for 2-D visualisation.
//! * [`pipeline`]: file-based stage drivers used by the command line tool.

pub mod cae;
pub mod cluster;
mod error;
pub mod features;
pub mod ingest;
mod matrix;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod project;
pub mod synth;
mod tensor;

pub use error::{Error, Result};
pub use matrix::{dist, sq_dist, EmbeddingMatrix};
pub use tensor::{Checkpoint, Tensor};
