use super::{encode_labels, ordered_sum};
use crate::error::{Error, Result};
use crate::matrix::{dist, EmbeddingMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct Silhouette {
    pub mean: f64,
    pub per_instance: Vec<f64>,
}

/// Exact silhouette with Euclidean distances. Members of singleton clusters score 0.
pub fn silhouette(x: &EmbeddingMatrix, assignments: &[usize]) -> Result<Silhouette> {
    let n = x.rows();
    if assignments.len() != n {
        return Err(Error::InvalidInput(format!("{} assignments for {n} rows", assignments.len())));
    }
    let labels = encode_labels(assignments);
    let k = labels.iter().max().map_or(0, |m| m + 1);
    if k < 2 {
        return Err(Error::InvalidInput("silhouette needs at least two non-empty clusters".into()));
    }
    let mut sizes = vec![0usize; k];
    labels.iter().for_each(|&l| sizes[l] += 1);

    // sums[i * k + j] = Σ_{m in cluster j} d(i, m), accumulated in index order of m
    let mut sums = vec![0.0; n * k];
    for i in 0..n {
        for m in i + 1..n {
            let d = dist(x.row(i), x.row(m));
            sums[i * k + labels[m]] += d;
            sums[m * k + labels[i]] += d;
        }
    }
    let per_instance: Vec<f64> = (0..n)
        .map(|i| {
            let own = labels[i];
            if sizes[own] == 1 {
                return 0.0;
            }
            let a = sums[i * k + own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&j| j != own)
                .map(|j| sums[i * k + j] / sizes[j] as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m > 0.0 {
                (b - a) / m
            } else {
                0.0
            }
        })
        .collect();
    Ok(Silhouette {
        mean: ordered_sum(per_instance.clone()) / n as f64,
        per_instance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn duplicated_clusters_score_one() {
        let x = EmbeddingMatrix::from_rows(&[[0.0, 0.0], [0.0, 0.0], [6.0, 8.0], [6.0, 8.0], [6.0, 8.0]]).unwrap();
        let s = silhouette(&x, &[4, 4, 1, 1, 1]).unwrap();
        assert_eq!(s.mean, 1.0);
        assert!(s.per_instance.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn singleton_scores_zero() {
        let x = EmbeddingMatrix::from_rows(&[[0.0], [1.0], [5.0]]).unwrap();
        let s = silhouette(&x, &[0, 0, 1]).unwrap();
        assert_eq!(s.per_instance[2], 0.0);
        assert!(silhouette(&x, &[2, 2, 2]).is_err());
    }

    #[test]
    fn matches_naive_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rows: Vec<Vec<f64>> = (0..20).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let labels: Vec<usize> = (0..20).map(|i| i % 3).collect();
        let x = EmbeddingMatrix::from_rows(&rows).unwrap();
        let got = silhouette(&x, &labels).unwrap();
        let mut total = 0.0;
        for i in 0..20 {
            let mut mean_to = [0.0; 3];
            let mut count = [0.0; 3];
            for j in 0..20 {
                if j != i {
                    mean_to[labels[j]] += dist(&rows[i], &rows[j]);
                    count[labels[j]] += 1.0;
                }
            }
            let a = mean_to[labels[i]] / count[labels[i]];
            let b = (0..3).filter(|&c| c != labels[i]).map(|c| mean_to[c] / count[c]).fold(f64::MAX, f64::min);
            let s = (b - a) / a.max(b);
            assert!((got.per_instance[i] - s).abs() < 1e-10);
            total += s;
        }
        assert!((got.mean - total / 20.0).abs() < 1e-10);
    }
}
