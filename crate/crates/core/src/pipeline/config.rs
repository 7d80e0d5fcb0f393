use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cae::CaeConfig;
use crate::cluster::DecConfig;
use crate::error::{Error, Result};
use crate::features::DescriptorConfig;
use crate::ingest::{IngestConfig, Split, SplitSpec};
use crate::project::TsneConfig;

/// Workspace-relative directories used by the stage drivers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    pub manifests: PathBuf,
    pub cache: PathBuf,
    pub outputs: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            manifests: "manifests".into(),
            cache: "cache".into(),
            outputs: "outputs".into(),
        }
    }
}

/// Single configuration shared by every command.
///
/// `size`, `k` and `seed` override the matching fields of the nested stage configs, so one
/// value drives every stochastic stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub size: usize,
    pub split: String,
    pub k: usize,
    pub runs: usize,
    pub seed: u64,
    /// Split the cluster models are fitted on.
    pub fit_split: Split,
    /// Split the scores, assignments and projections are reported on.
    pub eval_split: Split,
    pub cae: CaeConfig,
    pub dec: DecConfig,
    pub kmeans_restarts: usize,
    pub descriptors: DescriptorConfig,
    pub tsne: TsneConfig,
    pub paths: PathsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            size: 256,
            split: "70/10/20".into(),
            k: 25,
            runs: 10,
            seed: 0,
            fit_split: Split::Train,
            eval_split: Split::Test,
            cae: CaeConfig::default(),
            dec: DecConfig::default(),
            kmeans_restarts: 20,
            descriptors: DescriptorConfig::default(),
            tsne: TsneConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        serde_json::from_str(&std::fs::read_to_string(path)?).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Writes every field, defaults included.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }

    /// Loads `path`, or writes the defaults there first when it does not exist.
    pub fn load_or_init(path: &Path) -> Result<Self> {
        if path.exists() {
            Self::load(path)
        } else {
            let cfg = Self::default();
            cfg.save(path)?;
            log::info!("wrote default configuration to {}", path.display());
            Ok(cfg)
        }
    }

    pub fn split_spec(&self) -> Result<SplitSpec> {
        self.split.parse()
    }

    pub fn ingest(&self) -> Result<IngestConfig> {
        Ok(IngestConfig {
            size: self.size,
            split: self.split_spec()?,
            seed: self.seed,
        })
    }

    pub fn cae(&self) -> CaeConfig {
        CaeConfig {
            size: self.size,
            seed: self.seed,
            ..self.cae.clone()
        }
    }

    /// DEC settings for one run; `beta` selects DEC (0) or IDEC (1).
    pub fn dec(&self, beta: f64, seed: u64) -> DecConfig {
        DecConfig {
            k: self.k,
            beta,
            restarts: self.kmeans_restarts,
            seed,
            ..self.dec.clone()
        }
    }

    pub fn tsne(&self) -> TsneConfig {
        TsneConfig {
            seed: self.seed,
            ..self.tsne.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.split_spec()?;
        if self.k < 2 {
            return Err(Error::Config(format!("K must be at least 2, got {}", self.k)));
        }
        if self.runs == 0 || self.kmeans_restarts == 0 {
            return Err(Error::Config("runs and kmeans_restarts must be positive".into()));
        }
        if self.fit_split == self.eval_split && self.fit_split != Split::Train {
            log::warn!("models are fitted and scored on the {} split", self.fit_split);
        }
        self.cae().validate()?;
        self.dec(1.0, self.seed).validate()?;
        self.descriptors.hog.validate()?;
        self.descriptors.lbp.validate()?;
        Ok(())
    }

    /// Hex SHA-256 of the compact JSON serialisation.
    pub fn hash(&self) -> Result<String> {
        let bytes = serde_json::to_vec(self)?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }
}
