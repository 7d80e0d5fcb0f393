//! Principal component analysis with a truncated iterative eigensolver.
//!
//! When there are fewer samples than dimensions the eigenproblem is solved on the
//! `N × N` Gram matrix and mapped back; otherwise on the `d × d` covariance. Both
//! routes use power iteration with projection deflation followed by a Rayleigh–Ritz
//! rotation inside the recovered subspace.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::EmbeddingMatrix;

const TOL: f64 = 1e-10;
const MAX_ITER: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `k × d_in`, orthonormal rows, ordered by decreasing variance.
    pub components: EmbeddingMatrix,
    pub explained_variance: Vec<f64>,
    /// Trace of the sample covariance of the fit data.
    pub total_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaReport {
    pub components: usize,
    pub explained_variance: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
    pub cumulative_ratio: f64,
}

impl PcaModel {
    pub fn k(&self) -> usize {
        self.components.rows()
    }

    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        self.explained_variance
            .iter()
            .map(|v| if self.total_variance > 0.0 { v / self.total_variance } else { 0.0 })
            .collect()
    }

    pub fn cumulative_ratio(&self) -> f64 {
        self.explained_variance_ratio().iter().sum()
    }

    pub fn report(&self) -> PcaReport {
        PcaReport {
            components: self.k(),
            explained_variance: self.explained_variance.clone(),
            explained_variance_ratio: self.explained_variance_ratio(),
            cumulative_ratio: self.cumulative_ratio(),
        }
    }

    /// `(X − mean) · componentsᵀ`.
    pub fn transform(&self, x: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
        let d = self.mean.len();
        if x.cols() != d {
            return Err(Error::shape("pca_transform", d, x.cols()));
        }
        let k = self.k();
        let mut out = EmbeddingMatrix::zeros(x.rows(), k);
        let mut centered = vec![0.0; d];
        for i in 0..x.rows() {
            for ((c, v), m) in centered.iter_mut().zip(x.row(i)).zip(&self.mean) {
                *c = v - m;
            }
            for (j, o) in out.row_mut(i).iter_mut().enumerate() {
                *o = dot(self.components.row(j), &centered);
            }
        }
        Ok(out)
    }

    pub fn inverse_transform(&self, y: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
        if y.cols() != self.k() {
            return Err(Error::shape("pca_inverse_transform", self.k(), y.cols()));
        }
        let d = self.mean.len();
        let mut out = EmbeddingMatrix::zeros(y.rows(), d);
        for i in 0..y.rows() {
            let row = out.row_mut(i);
            row.copy_from_slice(&self.mean);
            for (j, &c) in y.row(i).iter().enumerate() {
                for (o, p) in row.iter_mut().zip(self.components.row(j)) {
                    *o += c * p;
                }
            }
        }
        Ok(out)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Removes the components of `v` along each (orthonormal) vector in `basis`.
fn project_out(v: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let c = dot(v, b);
        v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
    }
}

/// Dense symmetric `n × n` matrix-vector product.
fn symv(m: &[f64], n: usize, v: &[f64], out: &mut [f64]) {
    for (o, row) in out.iter_mut().zip(m.chunks_exact(n)) {
        *o = dot(row, v);
    }
}

/// Deterministic start vector that is not orthogonal to typical leading eigenvectors.
fn start_vector(n: usize, j: usize) -> Vec<f64> {
    (0..n).map(|i| 1.0 + ((i * 7919 + j * 104729) % 997) as f64 / 997.0).collect()
}

/// Top-`k` eigenvectors of a symmetric positive semi-definite `n × n` matrix.
fn top_eigenvectors(m: &[f64], n: usize, k: usize) -> Vec<Vec<f64>> {
    let mut found: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut w = vec![0.0; n];
    for j in 0..k {
        let mut v = start_vector(n, j);
        project_out(&mut v, &found);
        project_out(&mut v, &found);
        if normalize(&mut v) == 0.0 {
            v = complete_basis(&found, n);
        }
        for _ in 0..MAX_ITER {
            symv(m, n, &v, &mut w);
            project_out(&mut w, &found);
            project_out(&mut w, &found);
            if normalize(&mut w) <= f64::EPSILON {
                // the deflated operator vanishes: remaining eigenvalues are zero
                break;
            }
            let diff = w.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            std::mem::swap(&mut v, &mut w);
            if diff < TOL {
                break;
            }
        }
        found.push(v);
    }
    found
}

/// A unit vector orthogonal to `basis`, from the first standard basis vector that survives projection.
fn complete_basis(basis: &[Vec<f64>], n: usize) -> Vec<f64> {
    for i in 0..n {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        project_out(&mut e, basis);
        project_out(&mut e, basis);
        if normalize(&mut e) > 1e-6 {
            return e;
        }
    }
    unreachable!("basis already spans the space")
}

/// Cyclic Jacobi eigendecomposition of a small symmetric matrix. Returns eigenvalues
/// and the row-major eigenvector matrix (eigenvectors as columns).
fn jacobi_eigen(a: &mut [f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i * n + j].powi(2)).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i * n + i]).collect(), v)
}

/// Modified Gram–Schmidt, applied twice.
fn orthonormalize(rows: &mut [Vec<f64>]) {
    for _ in 0..2 {
        for i in 0..rows.len() {
            let (done, rest) = rows.split_at_mut(i);
            project_out(&mut rest[0], done);
            normalize(&mut rest[0]);
        }
    }
}

/// Fits the top-`k` principal components of the rows of `x`.
pub fn pca_fit(x: &EmbeddingMatrix, k: usize) -> Result<PcaModel> {
    let (n, d) = (x.rows(), x.cols());
    if n < 2 {
        return Err(Error::InvalidInput(format!("PCA needs at least 2 samples, got {n}")));
    }
    if k == 0 || k > n.min(d) {
        return Err(Error::InvalidInput(format!("k = {k} must be in 1..={}", n.min(d))));
    }
    let mut mean = vec![0.0; d];
    for row in x.iter_rows() {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered: Vec<Vec<f64>> = x
        .iter_rows()
        .map(|r| r.iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();
    let denom = (n - 1) as f64;
    let total_variance = centered.iter().map(|r| dot(r, r)).sum::<f64>() / denom;

    let mut components: Vec<Vec<f64>> = if n < d {
        let mut gram = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let g = dot(&centered[i], &centered[j]) / denom;
                gram[i * n + j] = g;
                gram[j * n + i] = g;
            }
        }
        let us = top_eigenvectors(&gram, n, k);
        let mut comps: Vec<Vec<f64>> = Vec::with_capacity(k);
        for u in &us {
            let mut v = vec![0.0; d];
            for (ui, row) in u.iter().zip(&centered) {
                v.iter_mut().zip(row).for_each(|(a, b)| *a += ui * b);
            }
            project_out(&mut v, &comps);
            if normalize(&mut v) < 1e-12 {
                v = complete_basis(&comps, d);
            }
            comps.push(v);
        }
        comps
    } else {
        let mut cov = vec![0.0; d * d];
        for row in &centered {
            for i in 0..d {
                let ri = row[i] / denom;
                for j in i..d {
                    cov[i * d + j] += ri * row[j];
                }
            }
        }
        for i in 0..d {
            for j in 0..i {
                cov[i * d + j] = cov[j * d + i];
            }
        }
        top_eigenvectors(&cov, d, k)
    };
    orthonormalize(&mut components);

    // Rayleigh–Ritz: diagonalise the covariance restricted to the recovered subspace.
    let projected: Vec<Vec<f64>> = centered
        .iter()
        .map(|r| components.iter().map(|c| dot(r, c)).collect())
        .collect();
    let mut small = vec![0.0; k * k];
    for p in &projected {
        for i in 0..k {
            for j in 0..k {
                small[i * k + j] += p[i] * p[j] / denom;
            }
        }
    }
    let (values, vecs) = jacobi_eigen(&mut small, k);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let mut rotated: Vec<Vec<f64>> = order
        .iter()
        .map(|&col| {
            let mut v = vec![0.0; d];
            for (r, comp) in components.iter().enumerate() {
                let w = vecs[r * k + col];
                v.iter_mut().zip(comp).for_each(|(a, b)| *a += w * b);
            }
            v
        })
        .collect();
    orthonormalize(&mut rotated);
    for v in &mut rotated {
        // sign convention: largest-magnitude entry positive
        let big = v.iter().cloned().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if big < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
    let explained_variance = rotated
        .iter()
        .map(|c| centered.iter().map(|r| dot(r, c).powi(2)).sum::<f64>() / denom)
        .collect();
    Ok(PcaModel {
        mean,
        components: EmbeddingMatrix::from_rows(&rotated)?,
        explained_variance,
        total_variance,
    })
}
