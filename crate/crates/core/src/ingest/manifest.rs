use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{load_image, preprocess};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split {s:?}"))),
        }
    }
}

/// Split proportions, written `train/test` or `train/validation/test` (e.g. `80/20`, `70/10/20`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.7,
            validation: 0.1,
            test: 0.2,
        }
    }
}

impl FromStr for SplitSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split('/')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Config(format!("bad split spec {s:?}")))?;
        let (train, validation, test) = match parts[..] {
            [a, b] => (a, 0.0, b),
            [a, b, c] => (a, b, c),
            _ => return Err(Error::Config(format!("split spec {s:?} needs 2 or 3 parts"))),
        };
        let total = train + validation + test;
        if [train, validation, test].iter().any(|v| *v < 0.0) || total <= 0.0 {
            return Err(Error::Config(format!("bad split spec {s:?}")));
        }
        Ok(Self {
            train: train / total,
            validation: validation / total,
            test: test / total,
        })
    }
}

impl SplitSpec {
    /// Number of records assigned to (train, validation, test) out of `n`.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        let train = ((n as f64) * self.train).round() as usize;
        let train = train.min(n);
        let val = (((n as f64) * self.validation).round() as usize).min(n - train);
        (train, val, n - train - val)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub path: String,
    pub modality: Option<String>,
    pub anatomical_region: Option<String>,
}

/// A preprocessed image with its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub id: String,
    pub path: String,
    pub pixels: Tensor,
    pub modality: Option<String>,
    pub anatomical_region: Option<String>,
}

impl ImageRecord {
    pub fn entry(&self) -> ManifestEntry {
        ManifestEntry {
            id: self.id.clone(),
            path: self.path.clone(),
            modality: self.modality.clone(),
            anatomical_region: self.anatomical_region.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Excluded {
    pub path: String,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub split: Split,
    pub preprocessing: PreprocessConfig,
    #[serde(default)]
    pub config_hash: String,
    pub records: Vec<ManifestEntry>,
    #[serde(default)]
    pub excluded: Vec<Excluded>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.records.iter().map(|r| r.id.clone()).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// `id → (modality, anatomical_region)` read from a CSV with header
/// `id,modality,anatomical_region`. Empty cells are absent labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelTable {
    rows: HashMap<String, (Option<String>, Option<String>)>,
}

impl LabelTable {
    pub fn from_reader<R: std::io::Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::InvalidInput(format!("label table lacks column {name:?}")))
        };
        let (ci, cm, ca) = (col("id")?, col("modality")?, col("anatomical_region")?);
        let mut rows = HashMap::new();
        for rec in rdr.records() {
            let rec = rec?;
            let opt = |i: usize| rec.get(i).filter(|s| !s.is_empty()).map(str::to_string);
            let id = opt(ci).ok_or_else(|| Error::InvalidInput("label row without id".into()))?;
            rows.insert(id, (opt(cm), opt(ca)));
        }
        Ok(Self { rows })
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Self::from_reader(std::fs::File::open(path)?)
    }

    pub fn get(&self, id: &str) -> Option<&(Option<String>, Option<String>)> {
        self.rows.get(id)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IngestConfig {
    pub size: usize,
    pub split: SplitSpec,
    pub seed: u64,
}

/// Everything produced by one ingestion pass over a directory.
#[derive(Debug, Clone)]
pub struct Ingested {
    /// All successfully loaded records, sorted by id.
    pub records: Vec<ImageRecord>,
    /// One manifest per split, in [`Split::ALL`] order.
    pub manifests: Vec<DatasetManifest>,
    pub excluded: Vec<Excluded>,
}

impl Ingested {
    pub fn manifest(&self, split: Split) -> &DatasetManifest {
        self.manifests.iter().find(|m| m.split == split).expect("every split present")
    }

    pub fn records_for(&self, split: Split) -> Vec<&ImageRecord> {
        let by_id: BTreeMap<&str, &ImageRecord> = self.records.iter().map(|r| (r.id.as_str(), r)).collect();
        self.manifest(split).records.iter().map(|e| by_id[e.id.as_str()]).collect()
    }
}

fn is_candidate(path: &Path) -> bool {
    let hidden = path.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with('.'));
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    path.is_file() && !hidden && !matches!(ext.as_deref(), Some("csv" | "json" | "txt" | "md"))
}

/// Loads every image file directly inside `dir`, preprocesses it and splits the
/// corpus with a seeded shuffle. Unreadable files are excluded with a warning.
///
/// Labels come from `labels` when it has a row for the id; otherwise DICOM files fall
/// back to their Modality and BodyPartExamined tags.
pub fn build_manifest(dir: &Path, labels: Option<&LabelTable>, config: &IngestConfig) -> Result<Ingested> {
    if !dir.is_dir() {
        return Err(Error::MissingArtifact(dir.to_path_buf()));
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| is_candidate(p))
        .collect();
    paths.sort();

    let mut records: BTreeMap<String, ImageRecord> = BTreeMap::new();
    let mut excluded = Vec::new();
    for path in &paths {
        let display = path.display().to_string();
        let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        if records.contains_key(&id) {
            warn!("{display}: duplicate id {id:?}, skipped");
            excluded.push(Excluded {
                path: display,
                reason: format!("duplicate id {id:?}"),
            });
            continue;
        }
        let loaded = std::fs::read(path)
            .map_err(Error::from)
            .and_then(|b| load_image(&b))
            .and_then(|img| Ok((preprocess(&img.raw, config.size)?, img)));
        match loaded {
            Ok((pixels, img)) => {
                let (modality, region) = match labels.and_then(|t| t.get(&id)) {
                    Some((m, a)) => (m.clone(), a.clone()),
                    None => (img.modality, img.anatomical_region),
                };
                records.insert(
                    id.clone(),
                    ImageRecord {
                        id,
                        path: display,
                        pixels,
                        modality,
                        anatomical_region: region,
                    },
                );
            }
            Err(e) => {
                warn!("{display}: {e}; excluded");
                excluded.push(Excluded {
                    path: display,
                    reason: e.to_string(),
                });
            }
        }
    }
    if records.is_empty() {
        warn!("no images ingested from {}", dir.display());
    }

    let mut ids: Vec<String> = records.keys().cloned().collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
    let (n_train, n_val, _) = config.split.counts(ids.len());
    let mut groups = [
        ids[..n_train].to_vec(),
        ids[n_train..n_train + n_val].to_vec(),
        ids[n_train + n_val..].to_vec(),
    ];
    let manifests = Split::ALL
        .iter()
        .zip(groups.iter_mut())
        .map(|(&split, group)| {
            group.sort();
            DatasetManifest {
                split,
                preprocessing: PreprocessConfig { size: config.size },
                config_hash: String::new(),
                records: group.iter().map(|id| records[id].entry()).collect(),
                excluded: excluded.clone(),
            }
        })
        .collect();
    Ok(Ingested {
        records: records.into_values().collect(),
        manifests,
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::pgm::write_pgm;

    fn write_fixture(dir: &Path, n: usize) {
        for i in 0..n {
            let img = Tensor::new(vec![1, 4, 6], (0..24).map(|v| ((v * (i + 1)) % 256) as f64).collect()).unwrap();
            std::fs::write(dir.join(format!("img{i:02}.pgm")), write_pgm(&img, 255).unwrap()).unwrap();
        }
    }

    fn config(seed: u64) -> IngestConfig {
        IngestConfig {
            size: 8,
            split: "80/20".parse().unwrap(),
            seed,
        }
    }

    #[test]
    fn split_spec_parsing() {
        let s: SplitSpec = "70/10/20".parse().unwrap();
        assert!((s.validation - 0.1).abs() < 1e-12);
        assert_eq!(s.counts(10), (7, 1, 2));
        assert!("abc".parse::<SplitSpec>().is_err());
        assert!("1/2/3/4".parse::<SplitSpec>().is_err());
    }

    #[test]
    fn seeded_split_is_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path(), 10);
        let a = build_manifest(dir.path(), None, &config(7)).unwrap();
        let b = build_manifest(dir.path(), None, &config(7)).unwrap();
        assert_eq!(a.manifest(Split::Train).len(), 8);
        assert_eq!(a.manifest(Split::Test).len(), 2);
        assert_eq!(a.manifests, b.manifests);
        let mut all: Vec<String> = a.manifests.iter().flat_map(|m| m.ids()).collect();
        all.sort();
        assert_eq!(all, a.records.iter().map(|r| r.id.clone()).collect::<Vec<_>>());
    }

    #[test]
    fn empty_directory_gives_empty_manifests() {
        let dir = tempfile::tempdir().unwrap();
        let out = build_manifest(dir.path(), None, &config(1)).unwrap();
        assert!(out.manifests.iter().all(DatasetManifest::is_empty));
    }

    #[test]
    fn unreadable_file_is_excluded() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path(), 3);
        std::fs::write(dir.path().join("broken.dcm"), b"garbage").unwrap();
        let out = build_manifest(dir.path(), None, &config(1)).unwrap();
        assert_eq!(out.records.len(), 3);
        assert_eq!(out.excluded.len(), 1);
        assert!(out.excluded[0].path.ends_with("broken.dcm"));
    }

    #[test]
    fn partial_label_table() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path(), 5);
        let csv = "id,modality,anatomical_region\nimg00,CT,HEAD\nimg01,MR,\nimg03,CR,CHEST\n";
        let labels = LabelTable::from_reader(csv.as_bytes()).unwrap();
        let out = build_manifest(dir.path(), Some(&labels), &config(3)).unwrap();
        let unlabeled = out.records.iter().filter(|r| r.modality.is_none() && r.anatomical_region.is_none()).count();
        assert_eq!(unlabeled, 2);
        let r1 = out.records.iter().find(|r| r.id == "img01").unwrap();
        assert_eq!((r1.modality.as_deref(), r1.anatomical_region.as_deref()), (Some("MR"), None));
    }
}
