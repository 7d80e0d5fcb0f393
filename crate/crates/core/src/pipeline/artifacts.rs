use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Split;
use crate::matrix::EmbeddingMatrix;
use crate::tensor::Tensor;

/// Prefix of the first line of every CSV artifact.
pub const HASH_PREFIX: &str = "# config_hash=";

/// JSON sidecar describing a serialised embedding matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMeta {
    pub method: String,
    pub split: Split,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub dimension: usize,
    pub ids: Vec<String>,
}

/// Row `i` of `matrix` belongs to `meta.ids[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingArtifact {
    pub meta: EmbeddingMeta,
    pub matrix: EmbeddingMatrix,
}

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_os_string();
    s.push(ext);
    PathBuf::from(s)
}

impl EmbeddingArtifact {
    pub fn tensor_path(stem: &Path) -> PathBuf {
        with_ext(stem, ".tnsr")
    }

    pub fn sidecar_path(stem: &Path) -> PathBuf {
        with_ext(stem, ".json")
    }

    /// Writes `<stem>.tnsr` and `<stem>.json`.
    pub fn save(&self, stem: &Path) -> Result<()> {
        if let Some(dir) = stem.parent() {
            std::fs::create_dir_all(dir)?;
        }
        self.matrix.to_tensor()?.save(&Self::tensor_path(stem))?;
        write_json(&Self::sidecar_path(stem), &self.meta)
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let meta: EmbeddingMeta = read_json(&Self::sidecar_path(stem))?;
        let matrix = EmbeddingMatrix::from_tensor(&Tensor::load(&Self::tensor_path(stem))?)?;
        if matrix.rows() != meta.ids.len() || matrix.cols() != meta.dimension {
            return Err(Error::Format(format!(
                "{}: {}×{} matrix for {} ids of dimension {}",
                stem.display(),
                matrix.rows(),
                matrix.cols(),
                meta.ids.len(),
                meta.dimension
            )));
        }
        Ok(Self { meta, matrix })
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// Creates `path` with the hash line already written; the body follows.
pub fn write_csv(path: &Path, hash: &str, body: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut buf = Vec::new();
    writeln!(buf, "{HASH_PREFIX}{hash}")?;
    body(&mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

/// Hash recorded on the first line of a CSV artifact, if any.
pub fn csv_hash(path: &Path) -> Result<Option<String>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let mut line = String::new();
    BufReader::new(std::fs::File::open(path)?).read_line(&mut line)?;
    Ok(line.trim_end().strip_prefix(HASH_PREFIX).map(str::to_string))
}

/// CSV reader that skips the hash line.
pub fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    Ok(csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentRow {
    pub id: String,
    pub cluster: usize,
    pub q_max: f64,
}

pub fn write_assignments(path: &Path, hash: &str, rows: &[AssignmentRow]) -> Result<()> {
    write_csv(path, hash, |buf| {
        writeln!(buf, "id,cluster,q_max")?;
        for r in rows {
            writeln!(buf, "{},{},{:.6}", r.id, r.cluster, r.q_max)?;
        }
        Ok(())
    })
}

pub fn read_assignments(path: &Path) -> Result<Vec<AssignmentRow>> {
    let mut rdr = csv_reader(path)?;
    let rows = rdr.deserialize().collect::<std::result::Result<Vec<AssignmentRow>, _>>()?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedding_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("sub/cae_test");
        let art = EmbeddingArtifact {
            meta: EmbeddingMeta {
                method: "cae".into(),
                split: Split::Test,
                config_hash: "abc".into(),
                config: serde_json::json!({"k": 2}),
                dimension: 2,
                ids: vec!["a".into(), "b".into(), "c".into()],
            },
            matrix: EmbeddingMatrix::new(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap(),
        };
        art.save(&stem).unwrap();
        assert_eq!(EmbeddingArtifact::load(&stem).unwrap(), art);
        assert!(matches!(
            EmbeddingArtifact::load(&dir.path().join("absent")),
            Err(Error::MissingArtifact(p)) if p.ends_with("absent.json")
        ));
    }

    #[test]
    fn assignments_round_trip_with_hash_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        let rows = vec![
            AssignmentRow {
                id: "x".into(),
                cluster: 1,
                q_max: 0.5,
            },
            AssignmentRow {
                id: "y".into(),
                cluster: 0,
                q_max: 0.25,
            },
        ];
        write_assignments(&path, "h1", &rows).unwrap();
        assert_eq!(csv_hash(&path).unwrap().as_deref(), Some("h1"));
        assert_eq!(read_assignments(&path).unwrap(), rows);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "# config_hash=h1\nid,cluster,q_max\nx,1,0.500000\ny,0,0.250000\n");
    }
}
