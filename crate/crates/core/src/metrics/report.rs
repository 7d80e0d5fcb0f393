use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{homogeneity, nmi, silhouette};
use crate::error::{Error, Result};
use crate::matrix::EmbeddingMatrix;

/// Column header shared by the result tables.
pub const TABLE_HEADER: &str = "Algorithm,SS,NMI-AR,HS-AR,NMI-MOD,HS-MOD";

/// One row of scores: silhouette in the embedding space plus NMI and homogeneity against the
/// anatomical-region (AR) and modality (MOD) labels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub ss: f64,
    pub nmi_ar: f64,
    pub hs_ar: f64,
    pub nmi_mod: f64,
    pub hs_mod: f64,
}

impl Scores {
    pub fn compute(x: &EmbeddingMatrix, clusters: &[usize], ar: &[usize], modality: &[usize]) -> Result<Self> {
        Ok(Self {
            ss: silhouette(x, clusters)?.mean,
            nmi_ar: nmi(ar, clusters)?,
            hs_ar: homogeneity(ar, clusters)?,
            nmi_mod: nmi(modality, clusters)?,
            hs_mod: homogeneity(modality, clusters)?,
        })
    }

    pub fn values(&self) -> [f64; 5] {
        [self.ss, self.nmi_ar, self.hs_ar, self.nmi_mod, self.hs_mod]
    }

    fn from_values(v: [f64; 5]) -> Self {
        Self {
            ss: v[0],
            nmi_ar: v[1],
            hs_ar: v[2],
            nmi_mod: v[3],
            hs_mod: v[4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    pub scores: Option<Scores>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub algorithm: String,
    pub runs: Vec<RunRecord>,
    pub completed: usize,
    /// Arithmetic mean over completed runs.
    pub mean: Scores,
    /// Population variance over completed runs.
    pub variance: Scores,
}

/// Runs `run` once per seed. Failed runs are recorded and excluded from the aggregates;
/// the call fails only when no run completes.
pub fn evaluate_runs(
    algorithm: &str,
    seeds: &[u64],
    mut run: impl FnMut(u64) -> Result<Scores>,
) -> Result<EvaluationReport> {
    if seeds.is_empty() {
        return Err(Error::Config("evaluation needs at least one run".into()));
    }
    let mut runs = Vec::with_capacity(seeds.len());
    for (i, &seed) in seeds.iter().enumerate() {
        let record = match run(seed) {
            Ok(scores) => RunRecord {
                run: i,
                seed,
                scores: Some(scores),
                error: None,
            },
            Err(e) => {
                log::warn!("{algorithm} run {i} (seed {seed}) failed: {e}");
                RunRecord {
                    run: i,
                    seed,
                    scores: None,
                    error: Some(e.to_string()),
                }
            }
        };
        runs.push(record);
    }
    let done: Vec<[f64; 5]> = runs.iter().filter_map(|r| r.scores.map(|s| s.values())).collect();
    if done.is_empty() {
        return Err(Error::InvalidInput(format!("every {algorithm} run failed")));
    }
    if done.len() < runs.len() {
        log::warn!("{algorithm}: averaging over {} of {} runs", done.len(), runs.len());
    }
    let n = done.len() as f64;
    let mut mean = [0.0; 5];
    for v in &done {
        mean.iter_mut().zip(v).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut variance = [0.0; 5];
    for v in &done {
        variance.iter_mut().zip(v.iter().zip(&mean)).for_each(|(s, (x, m))| *s += (x - m).powi(2));
    }
    variance.iter_mut().for_each(|s| *s /= n);
    Ok(EvaluationReport {
        algorithm: algorithm.to_string(),
        completed: done.len(),
        runs,
        mean: Scores::from_values(mean),
        variance: Scores::from_values(variance),
    })
}

fn row(name: &str, s: &Scores) -> String {
    let cells: Vec<String> = s.values().iter().map(|v| format!("{v:.6}")).collect();
    format!("{name},{}", cells.join(","))
}

impl EvaluationReport {
    pub fn mean_row(&self) -> String {
        row(&self.algorithm, &self.mean)
    }

    pub fn variance_row(&self) -> String {
        row(&self.algorithm, &self.variance)
    }

    /// `algorithm,run,seed,status,SS,NMI-AR,HS-AR,NMI-MOD,HS-MOD`, one line per run.
    pub fn write_runs_csv(&self, w: &mut impl Write, header: bool) -> Result<()> {
        if header {
            writeln!(w, "algorithm,run,seed,status,SS,NMI-AR,HS-AR,NMI-MOD,HS-MOD")?;
        }
        for r in &self.runs {
            match (&r.scores, &r.error) {
                (Some(s), _) => {
                    let cells: Vec<String> = s.values().iter().map(|v| format!("{v:.6}")).collect();
                    writeln!(w, "{},{},{},ok,{}", self.algorithm, r.run, r.seed, cells.join(","))?;
                }
                (None, _) => writeln!(w, "{},{},{},failed,,,,,", self.algorithm, r.run, r.seed)?,
            }
        }
        Ok(())
    }
}

/// Table of per-algorithm means (or variances) under [`TABLE_HEADER`].
pub fn write_table(w: &mut impl Write, reports: &[EvaluationReport], variance: bool) -> Result<()> {
    writeln!(w, "{TABLE_HEADER}")?;
    for r in reports {
        writeln!(w, "{}", if variance { r.variance_row() } else { r.mean_row() })?;
    }
    Ok(())
}
