use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{sq_dist, EmbeddingMatrix};

pub const MAX_ITER: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansModel {
    /// `K × d`.
    pub centroids: EmbeddingMatrix,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    /// Inertia after every assignment step of the winning restart.
    pub history: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansConfig {
    pub k: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            k: 25,
            restarts: 20,
            seed: 0,
        }
    }
}

impl KMeansModel {
    pub fn predict(&self, x: &EmbeddingMatrix) -> Result<Vec<usize>> {
        nearest_centroid(x, &self.centroids)
    }
}

/// Index of the closest centroid per row; ties go to the lowest index.
pub fn nearest_centroid(x: &EmbeddingMatrix, centroids: &EmbeddingMatrix) -> Result<Vec<usize>> {
    if x.cols() != centroids.cols() {
        return Err(Error::shape("nearest_centroid", centroids.cols(), x.cols()));
    }
    Ok(x.iter_rows().map(|r| closest(r, centroids).0).collect())
}

fn closest(row: &[f64], centroids: &EmbeddingMatrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter_rows().enumerate() {
        let d = sq_dist(row, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Reassigns every row; returns the inertia and whether any assignment changed.
fn assign(x: &EmbeddingMatrix, centroids: &EmbeddingMatrix, labels: &mut [usize]) -> (f64, bool) {
    let mut inertia = 0.0;
    let mut changed = false;
    for (row, label) in x.iter_rows().zip(labels.iter_mut()) {
        let (j, d) = closest(row, centroids);
        changed |= *label != j;
        *label = j;
        inertia += d;
    }
    (inertia, changed)
}

fn plus_plus(x: &EmbeddingMatrix, k: usize, rng: &mut impl Rng) -> EmbeddingMatrix {
    let n = x.rows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = x.iter_rows().map(|r| sq_dist(r, x.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        chosen.push(next);
        for (i, r) in x.iter_rows().enumerate() {
            d2[i] = d2[i].min(sq_dist(r, x.row(next)));
        }
    }
    x.select_rows(&chosen)
}

fn update_centroids(x: &EmbeddingMatrix, labels: &[usize], centroids: &mut EmbeddingMatrix) {
    let k = centroids.rows();
    let mut counts = vec![0usize; k];
    centroids.data_mut().iter_mut().for_each(|v| *v = 0.0);
    for (row, &l) in x.iter_rows().zip(labels) {
        counts[l] += 1;
        centroids.row_mut(l).iter_mut().zip(row).for_each(|(c, v)| *c += v);
    }
    for (j, &c) in counts.iter().enumerate() {
        if c > 0 {
            centroids.row_mut(j).iter_mut().for_each(|v| *v /= c as f64);
        }
    }
    // Empty clusters take the point farthest from its own centroid, drawn from clusters
    // that keep at least one other member.
    let mut taken = vec![false; x.rows()];
    for j in 0..k {
        if counts[j] > 0 {
            continue;
        }
        let mut far: Option<(usize, f64)> = None;
        for (i, row) in x.iter_rows().enumerate() {
            let l = labels[i];
            if taken[i] || counts[l] < 2 {
                continue;
            }
            let d = sq_dist(row, centroids.row(l));
            if far.is_none_or(|(_, best)| d > best) {
                far = Some((i, d));
            }
        }
        if let Some((i, _)) = far {
            taken[i] = true;
            counts[labels[i]] -= 1;
            counts[j] = 1;
            let point = x.row(i).to_vec();
            centroids.row_mut(j).copy_from_slice(&point);
        }
    }
}

fn lloyd(x: &EmbeddingMatrix, mut centroids: EmbeddingMatrix) -> KMeansModel {
    let mut labels = vec![usize::MAX; x.rows()];
    let (mut inertia, _) = assign(x, &centroids, &mut labels);
    let mut history = vec![inertia];
    for _ in 0..MAX_ITER {
        update_centroids(x, &labels, &mut centroids);
        let (next, changed) = assign(x, &centroids, &mut labels);
        inertia = next;
        history.push(inertia);
        if !changed {
            break;
        }
    }
    KMeansModel {
        centroids,
        assignments: labels,
        inertia,
        history,
    }
}

/// Lloyd's algorithm with k-means++ seeding; the lowest-inertia restart wins.
pub fn kmeans(x: &EmbeddingMatrix, config: &KMeansConfig) -> Result<KMeansModel> {
    let KMeansConfig { k, restarts, seed } = *config;
    if k == 0 || x.rows() < k {
        return Err(Error::InvalidInput(format!("k-means needs 1 ≤ K ≤ N, got K = {k}, N = {}", x.rows())));
    }
    if x.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("k-means input contains non-finite values".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansModel> = None;
    for _ in 0..restarts.max(1) {
        let model = lloyd(x, plus_plus(x, k, &mut rng));
        if best.as_ref().is_none_or(|b| model.inertia < b.inertia) {
            best = Some(model);
        }
    }
    Ok(best.expect("at least one restart"))
}
