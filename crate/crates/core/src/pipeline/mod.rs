//! File-based stage drivers behind the command line tool.
//!
//! Every stage reads its inputs from a workspace directory and writes its outputs back into
//! it, so stages can run as separate processes. Each output records the hash of the
//! configuration that produced it; a stage that reads an input with a different hash warns.

mod artifacts;
mod config;

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{info, warn};
use serde::{Deserialize, Serialize};

pub use artifacts::{
    csv_hash, csv_reader, read_assignments, read_json, write_assignments, write_csv, write_json, AssignmentRow,
    EmbeddingArtifact, EmbeddingMeta, HASH_PREFIX,
};
pub use config::{PathsConfig, PipelineConfig};

use crate::cae::{Cae, EpochLog};
use crate::cluster::{kmeans, soft_assign, train_dec, DecOutcome, KMeansConfig};
use crate::error::{Error, Result};
use crate::features::{hog_matrix, lbp_matrix, pca_fit, pixel_matrix, FeatureKind, PcaReport};
use crate::ingest::{build_manifest, DatasetManifest, LabelTable, Split};
use crate::matrix::EmbeddingMatrix;
use crate::metrics::{encode_labels, evaluate_runs, write_table, EvaluationReport, Scores};
use crate::project::{tsne, write_projection_csv, ProjectionRow, TsneResult};
use crate::tensor::{Checkpoint, Tensor};

pub const CONFIG_FILE: &str = "config.json";

/// Clustering head applied to an embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterMethod {
    KMeans,
    Cdec,
    Cidec,
}

impl ClusterMethod {
    pub const ALL: [ClusterMethod; 3] = [ClusterMethod::KMeans, ClusterMethod::Cdec, ClusterMethod::Cidec];

    pub fn as_str(self) -> &'static str {
        match self {
            ClusterMethod::KMeans => "kmeans",
            ClusterMethod::Cdec => "cdec",
            ClusterMethod::Cidec => "cidec",
        }
    }

    /// Reconstruction weight of the self-training heads.
    pub fn beta(self) -> Option<f64> {
        match self {
            ClusterMethod::KMeans => None,
            ClusterMethod::Cdec => Some(0.0),
            ClusterMethod::Cidec => Some(1.0),
        }
    }

    fn check(self, features: FeatureKind) -> Result<()> {
        if self.beta().is_some() && features != FeatureKind::Cae {
            return Err(Error::Config(format!("{self} fine-tunes the autoencoder and needs --features cae")));
        }
        Ok(())
    }
}

impl fmt::Display for ClusterMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClusterMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?} (expected kmeans, cdec or cidec)")))
    }
}

/// The six evaluated pipelines with their table labels, in table order.
pub const TABLE_PIPELINES: [(&str, ClusterMethod, FeatureKind); 6] = [
    ("PCA+k-means", ClusterMethod::KMeans, FeatureKind::Pca),
    ("HOG+k-means", ClusterMethod::KMeans, FeatureKind::Hog),
    ("LBP+k-means", ClusterMethod::KMeans, FeatureKind::Lbp),
    ("CAE+k-means", ClusterMethod::KMeans, FeatureKind::Cae),
    ("CDEC", ClusterMethod::Cdec, FeatureKind::Cae),
    ("CIDEC", ClusterMethod::Cidec, FeatureKind::Cae),
];

/// Preprocessed images of one split with their labels, in manifest order.
#[derive(Debug, Clone)]
pub struct SplitData {
    pub split: Split,
    pub ids: Vec<String>,
    pub pixels: Vec<Tensor>,
    pub modality: Vec<Option<String>>,
    pub anatomical_region: Vec<Option<String>>,
}

impl SplitData {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn scores(&self, x: &EmbeddingMatrix, clusters: &[usize]) -> Result<Scores> {
        Scores::compute(
            x,
            clusters,
            &encode_labels(&self.anatomical_region),
            &encode_labels(&self.modality),
        )
    }
}

/// A configured working directory.
#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
    config: PipelineConfig,
    hash: String,
}

impl Workspace {
    /// Opens `root` with `root/config.json`, writing the defaults there on first use.
    pub fn open(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root)?;
        let config = PipelineConfig::load_or_init(&root.join(CONFIG_FILE))?;
        Self::new(root, config)
    }

    /// Uses `config` for `root` and records it as `root/config.json`.
    pub fn create(root: &Path, config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        std::fs::create_dir_all(root)?;
        config.save(&root.join(CONFIG_FILE))?;
        Self::new(root, config)
    }

    fn new(root: &Path, config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let hash = config.hash()?;
        Ok(Self {
            root: root.to_path_buf(),
            config,
            hash,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn manifest_path(&self, split: Split) -> PathBuf {
        self.root.join(&self.config.paths.manifests).join(format!("{split}.json"))
    }

    pub fn cache_path(&self, id: &str) -> PathBuf {
        self.root.join(&self.config.paths.cache).join(format!("{id}.tnsr"))
    }

    pub fn output(&self, relative: impl AsRef<Path>) -> PathBuf {
        self.root.join(&self.config.paths.outputs).join(relative)
    }

    pub fn cae_path(&self) -> PathBuf {
        self.output("cae/model.ckpt")
    }

    pub fn cae_loss_path(&self) -> PathBuf {
        self.output("cae/loss.csv")
    }

    /// Stem of the embedding artifact (`.tnsr` plus `.json`) of `kind` on `split`.
    pub fn features_stem(&self, kind: FeatureKind, split: Split) -> PathBuf {
        self.output(format!("features/{kind}_{split}"))
    }

    pub fn pca_report_path(&self) -> PathBuf {
        self.output("features/pca_report.json")
    }

    pub fn cluster_dir(&self, method: ClusterMethod, kind: FeatureKind) -> PathBuf {
        self.output(format!("cluster/{method}_{kind}"))
    }

    pub fn evaluation_dir(&self) -> PathBuf {
        self.output("evaluation")
    }

    pub fn projection_path(&self, method: ClusterMethod, kind: FeatureKind) -> PathBuf {
        self.output(format!("projection/{method}_{kind}.csv"))
    }

    fn check_hash(&self, source: &Path, hash: Option<&str>) {
        match hash {
            Some(h) if h == self.hash => {}
            Some(h) => warn!(
                "{} was produced under config hash {h}, current is {}",
                source.display(),
                self.hash
            ),
            None => warn!("{} carries no config hash", source.display()),
        }
    }

    pub fn manifest(&self, split: Split) -> Result<DatasetManifest> {
        let path = self.manifest_path(split);
        let m = DatasetManifest::load(&path)?;
        self.check_hash(&path, Some(&m.config_hash));
        Ok(m)
    }

    /// Cached pixels and labels of `split`.
    pub fn split_data(&self, split: Split) -> Result<SplitData> {
        let m = self.manifest(split)?;
        let mut data = SplitData {
            split,
            ids: Vec::with_capacity(m.len()),
            pixels: Vec::with_capacity(m.len()),
            modality: Vec::with_capacity(m.len()),
            anatomical_region: Vec::with_capacity(m.len()),
        };
        for r in &m.records {
            let path = self.cache_path(&r.id);
            if !path.exists() {
                return Err(Error::MissingArtifact(path));
            }
            data.pixels.push(Tensor::load(&path)?);
            data.ids.push(r.id.clone());
            data.modality.push(r.modality.clone());
            data.anatomical_region.push(r.anatomical_region.clone());
        }
        Ok(data)
    }

    fn nonempty_split(&self, split: Split) -> Result<SplitData> {
        let data = self.split_data(split)?;
        if data.is_empty() {
            return Err(Error::InvalidInput(format!("the {split} split is empty")));
        }
        Ok(data)
    }

    pub fn load_cae(&self) -> Result<Cae> {
        let path = self.cae_path();
        let ck = Checkpoint::load(&path)?;
        self.check_hash(&path, ck.header.get("config_hash").and_then(|v| v.as_str()));
        Cae::from_checkpoint(&ck)
    }

    pub fn load_features(&self, kind: FeatureKind, split: Split) -> Result<EmbeddingArtifact> {
        let stem = self.features_stem(kind, split);
        let art = EmbeddingArtifact::load(&stem)?;
        self.check_hash(&EmbeddingArtifact::sidecar_path(&stem), Some(&art.meta.config_hash));
        Ok(art)
    }

    fn embedding(&self, method: &str, split: Split, ids: &[String], matrix: EmbeddingMatrix) -> Result<EmbeddingArtifact> {
        let config = match method {
            "cae" => serde_json::to_value(self.config.cae())?,
            "pca" => serde_json::json!({ "components": self.config.descriptors.pca_components }),
            "hog" => serde_json::to_value(self.config.descriptors.hog)?,
            "lbp" => serde_json::to_value(self.config.descriptors.lbp)?,
            _ => serde_json::to_value(self.config.dec(0.0, self.config.seed))?,
        };
        Ok(EmbeddingArtifact {
            meta: EmbeddingMeta {
                method: method.to_string(),
                split,
                config_hash: self.hash.clone(),
                config,
                dimension: matrix.cols(),
                ids: ids.to_vec(),
            },
            matrix,
        })
    }
}

/// Per-split record counts of an ingestion pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub excluded: usize,
}

/// Builds the split manifests and writes one cached pixel tensor per record.
pub fn ingest(ws: &Workspace, input_dir: &Path, labels: Option<&Path>) -> Result<IngestSummary> {
    let table = labels.map(LabelTable::load).transpose()?;
    let ing = build_manifest(input_dir, table.as_ref(), &ws.config.ingest()?)?;
    std::fs::create_dir_all(ws.root.join(&ws.config.paths.manifests))?;
    std::fs::create_dir_all(ws.root.join(&ws.config.paths.cache))?;
    for m in &ing.manifests {
        let mut m = m.clone();
        m.config_hash = ws.hash.clone();
        m.save(&ws.manifest_path(m.split))?;
    }
    for r in &ing.records {
        r.pixels.save(&ws.cache_path(&r.id))?;
    }
    let count = |s| ing.manifest(s).len();
    let summary = IngestSummary {
        train: count(Split::Train),
        validation: count(Split::Validation),
        test: count(Split::Test),
        excluded: ing.excluded.len(),
    };
    info!("ingested {summary:?}");
    Ok(summary)
}

/// Trains the autoencoder on the training split, selecting the snapshot by validation loss
/// when a validation split exists.
pub fn train_cae(ws: &Workspace) -> Result<Vec<EpochLog>> {
    let train = ws.nonempty_split(Split::Train)?;
    let validation = ws.split_data(Split::Validation)?;
    let mut cae = Cae::build(ws.config.cae())?;
    info!(
        "training autoencoder with {} parameters on {} images",
        cae.param_count(),
        train.len()
    );
    let log = cae.train(&train.pixels, &validation.pixels)?;
    let mut ck = cae.to_checkpoint()?;
    ck.header["config_hash"] = ws.hash.clone().into();
    std::fs::create_dir_all(ws.output("cae"))?;
    ck.save(&ws.cae_path())?;
    write_csv(&ws.cae_loss_path(), &ws.hash, |buf| cae.write_loss_csv(buf))?;
    Ok(log)
}

/// Writes the autoencoder embedding of every non-empty split.
pub fn embed(ws: &Workspace) -> Result<Vec<EmbeddingArtifact>> {
    let cae = ws.load_cae()?;
    let mut out = Vec::new();
    for split in Split::ALL {
        let data = ws.split_data(split)?;
        if data.is_empty() {
            continue;
        }
        let art = ws.embedding("cae", split, &data.ids, cae.encode(&data.pixels)?)?;
        art.save(&ws.features_stem(FeatureKind::Cae, split))?;
        out.push(art);
    }
    Ok(out)
}

/// PCA variance report with the hash of the run that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaReportFile {
    pub config_hash: String,
    pub fit_split: Split,
    #[serde(flatten)]
    pub report: PcaReport,
}

/// Computes the fixed descriptors for every non-empty split. PCA is fitted on the fit split.
pub fn features(ws: &Workspace, kinds: &[FeatureKind]) -> Result<()> {
    if kinds.contains(&FeatureKind::Cae) {
        return Err(Error::Config("autoencoder embeddings come from the embed command".into()));
    }
    let splits: Vec<SplitData> = Split::ALL
        .into_iter()
        .map(|s| ws.split_data(s))
        .filter(|d| d.as_ref().map_or(true, |d| !d.is_empty()))
        .collect::<Result<_>>()?;
    let d = &ws.config.descriptors;
    for &kind in kinds {
        let pca = if kind == FeatureKind::Pca {
            let fit = splits
                .iter()
                .find(|s| s.split == ws.config.fit_split)
                .ok_or_else(|| Error::InvalidInput(format!("the {} split is empty", ws.config.fit_split)))?;
            let model = pca_fit(&pixel_matrix(&fit.pixels)?, d.pca_components)?;
            let report = PcaReportFile {
                config_hash: ws.hash.clone(),
                fit_split: fit.split,
                report: model.report(),
            };
            info!(
                "PCA: {} components explain {:.1}% of the variance",
                model.k(),
                100.0 * model.cumulative_ratio()
            );
            write_json(&ws.pca_report_path(), &report)?;
            Some(model)
        } else {
            None
        };
        for data in &splits {
            let m = match kind {
                FeatureKind::Pca => pca.as_ref().expect("fitted above").transform(&pixel_matrix(&data.pixels)?)?,
                FeatureKind::Hog => hog_matrix(&data.pixels, &d.hog)?,
                FeatureKind::Lbp => lbp_matrix(&data.pixels, &d.lbp)?,
                FeatureKind::Cae => unreachable!("rejected above"),
            };
            ws.embedding(kind.as_str(), data.split, &data.ids, m)?
                .save(&ws.features_stem(kind, data.split))?;
        }
    }
    Ok(())
}

/// Inputs of one clustering pipeline, loaded once and reused across runs.
pub struct ClusterInputs {
    pub method: ClusterMethod,
    pub features: FeatureKind,
    pub eval: SplitData,
    source: Source,
}

enum Source {
    Fixed { fit: EmbeddingMatrix, eval: EmbeddingMatrix },
    Cae { cae: Box<Cae>, fit: Vec<Tensor> },
}

/// Result of one clustering run on the evaluation split.
#[derive(Debug, Clone)]
pub struct ClusterRun {
    /// Embedding the clusters live in, one row per evaluation image.
    pub embedding: EmbeddingMatrix,
    pub q: EmbeddingMatrix,
    pub assignments: Vec<usize>,
    pub scores: Scores,
    pub dec: Option<DecOutcome>,
}

impl ClusterInputs {
    pub fn load(ws: &Workspace, method: ClusterMethod, features: FeatureKind) -> Result<Self> {
        method.check(features)?;
        let cfg = &ws.config;
        let eval = ws.nonempty_split(cfg.eval_split)?;
        let source = match method {
            ClusterMethod::KMeans => {
                let fit = ws.load_features(features, cfg.fit_split)?;
                let ev = ws.load_features(features, cfg.eval_split)?;
                if ev.meta.ids != eval.ids {
                    return Err(Error::InvalidInput(format!(
                        "{} rows do not match the {} manifest",
                        features, cfg.eval_split
                    )));
                }
                Source::Fixed {
                    fit: fit.matrix,
                    eval: ev.matrix,
                }
            }
            _ => Source::Cae {
                cae: Box::new(ws.load_cae()?),
                fit: ws.nonempty_split(cfg.fit_split)?.pixels,
            },
        };
        Ok(Self {
            method,
            features,
            eval,
            source,
        })
    }

    /// Fits the head with `seed` and scores it on the evaluation split.
    pub fn run(&self, ws: &Workspace, seed: u64) -> Result<ClusterRun> {
        let cfg = &ws.config;
        let (embedding, q, assignments, dec) = match &self.source {
            Source::Fixed { fit, eval } => {
                let model = kmeans(
                    fit,
                    &KMeansConfig {
                        k: cfg.k,
                        restarts: cfg.kmeans_restarts,
                        seed,
                    },
                )?;
                let assignments = model.predict(eval)?;
                let q = soft_assign(eval, &model.centroids)?;
                (eval.clone(), q, assignments, None)
            }
            Source::Cae { cae, fit } => {
                let beta = self.method.beta().expect("self-training method");
                let out = train_dec(cae, fit, &cfg.dec(beta, seed))?;
                let z = out.cae.encode(&self.eval.pixels)?;
                let q = out.head.soft_assign(&z)?;
                let assignments = crate::cluster::infer(&q);
                (z, q, assignments, Some(out))
            }
        };
        let scores = self.eval.scores(&embedding, &assignments)?;
        Ok(ClusterRun {
            embedding,
            q,
            assignments,
            scores,
            dec,
        })
    }
}

/// Scores file written next to the assignments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterScores {
    pub config_hash: String,
    pub method: ClusterMethod,
    pub features: FeatureKind,
    pub split: Split,
    pub seed: u64,
    pub clusters_used: usize,
    pub scores: Scores,
}

/// Runs one pipeline with the configured seed and writes its assignments and scores.
pub fn cluster(ws: &Workspace, method: ClusterMethod, features: FeatureKind) -> Result<ClusterScores> {
    let inputs = ClusterInputs::load(ws, method, features)?;
    let seed = ws.config.seed;
    let run = inputs.run(ws, seed)?;
    let dir = ws.cluster_dir(method, features);
    std::fs::create_dir_all(&dir)?;
    let rows: Vec<AssignmentRow> = inputs
        .eval
        .ids
        .iter()
        .zip(&run.assignments)
        .zip(run.q.iter_rows())
        .map(|((id, &cluster), q)| AssignmentRow {
            id: id.clone(),
            cluster,
            q_max: q[cluster],
        })
        .collect();
    write_assignments(&dir.join("assignments.csv"), &ws.hash, &rows)?;
    if let Some(out) = &run.dec {
        let mut ck = out.cae.to_checkpoint()?;
        out.head.append_to(&mut ck)?;
        ck.header["config_hash"] = ws.hash.clone().into();
        ck.save(&dir.join("model.ckpt"))?;
        write_csv(&dir.join("training.csv"), &ws.hash, |buf| {
            writeln!(buf, "epoch,loss,kl,reconstruction,changed,clusters_used")?;
            for e in &out.log {
                writeln!(
                    buf,
                    "{},{:e},{:e},{:e},{:.6},{}",
                    e.epoch, e.loss, e.kl, e.reconstruction, e.changed, e.clusters_used
                )?;
            }
            Ok(())
        })?;
        ws.embedding(method.as_str(), inputs.eval.split, &inputs.eval.ids, run.embedding.clone())?
            .save(&dir.join("embedding"))?;
    }
    let mut used = run.assignments.clone();
    used.sort_unstable();
    used.dedup();
    let scores = ClusterScores {
        config_hash: ws.hash.clone(),
        method,
        features,
        split: inputs.eval.split,
        seed,
        clusters_used: used.len(),
        scores: run.scores,
    };
    write_json(&dir.join("scores.json"), &scores)?;
    Ok(scores)
}

/// All evaluation reports with the hash of the run that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationFile {
    pub config_hash: String,
    pub split: Split,
    pub runs: usize,
    pub reports: Vec<EvaluationReport>,
}

/// Runs every table pipeline `runs` times with seeds `seed, seed + 1, ...` and writes the mean
/// table, the variance table, the per-run rows and the full JSON report.
pub fn evaluate(ws: &Workspace, runs: usize) -> Result<Vec<EvaluationReport>> {
    if runs == 0 {
        return Err(Error::Config("evaluation needs at least one run".into()));
    }
    let seeds: Vec<u64> = (0..runs as u64).map(|r| ws.config.seed.wrapping_add(r)).collect();
    let mut reports = Vec::with_capacity(TABLE_PIPELINES.len());
    for (label, method, kind) in TABLE_PIPELINES {
        let inputs = ClusterInputs::load(ws, method, kind)?;
        info!("evaluating {label} over {runs} runs");
        reports.push(evaluate_runs(label, &seeds, |seed| inputs.run(ws, seed).map(|r| r.scores))?);
    }
    let dir = ws.evaluation_dir();
    write_csv(&dir.join("table.csv"), &ws.hash, |buf| write_table(buf, &reports, false))?;
    write_csv(&dir.join("table_var.csv"), &ws.hash, |buf| write_table(buf, &reports, true))?;
    write_csv(&dir.join("runs.csv"), &ws.hash, |buf| {
        reports
            .iter()
            .enumerate()
            .try_for_each(|(i, r)| r.write_runs_csv(buf, i == 0))
    })?;
    write_json(
        &dir.join("report.json"),
        &EvaluationFile {
            config_hash: ws.hash.clone(),
            split: ws.config.eval_split,
            runs,
            reports: reports.clone(),
        },
    )?;
    Ok(reports)
}

/// Projects the embedding behind a clustered pipeline to 2-D and writes one row per image.
pub fn project(ws: &Workspace, method: ClusterMethod, features: FeatureKind) -> Result<TsneResult> {
    method.check(features)?;
    let dir = ws.cluster_dir(method, features);
    let assignments_path = dir.join("assignments.csv");
    ws.check_hash(&assignments_path, csv_hash(&assignments_path)?.as_deref());
    let assignments = read_assignments(&assignments_path)?;
    let art = match method {
        ClusterMethod::KMeans => ws.load_features(features, ws.config.eval_split)?,
        _ => {
            let stem = dir.join("embedding");
            let art = EmbeddingArtifact::load(&stem)?;
            ws.check_hash(&EmbeddingArtifact::sidecar_path(&stem), Some(&art.meta.config_hash));
            art
        }
    };
    let ids: Vec<&str> = assignments.iter().map(|a| a.id.as_str()).collect();
    if ids != art.meta.ids.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(Error::InvalidInput(format!(
            "{} does not list the same images as the embedding",
            assignments_path.display()
        )));
    }
    let labels = ws.manifest(art.meta.split)?;
    let result = tsne(&art.matrix, &ws.config.tsne())?;
    let rows: Vec<ProjectionRow> = assignments
        .iter()
        .zip(result.coordinates.iter_rows())
        .zip(&labels.records)
        .map(|((a, xy), r)| ProjectionRow {
            id: a.id.clone(),
            x: xy[0],
            y: xy[1],
            cluster: a.cluster,
            modality: r.modality.clone().unwrap_or_default(),
            anatomical_region: r.anatomical_region.clone().unwrap_or_default(),
        })
        .collect();
    let path = ws.projection_path(method, features);
    write_csv(&path, &ws.hash, |buf| write_projection_csv(buf, &rows))?;
    let trace = path.with_file_name(format!("{method}_{features}_kl.csv"));
    write_csv(&trace, &ws.hash, |buf| {
        writeln!(buf, "iteration,kl")?;
        for (it, kl) in &result.kl_trace {
            writeln!(buf, "{it},{kl:e}")?;
        }
        Ok(())
    })?;
    Ok(result)
}
