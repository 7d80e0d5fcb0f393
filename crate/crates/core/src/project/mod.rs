//! Exact t-SNE for 2-D views of an embedding.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{sq_dist, EmbeddingMatrix};

const BISECTION_STEPS: usize = 50;
const PERPLEXITY_TOL: f64 = 1e-5;
const LN_BETA_RANGE: (f64, f64) = (-50.0, 50.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub exaggeration: f64,
    /// Iterations with exaggerated affinities and the initial momentum.
    pub exaggeration_iterations: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub init_std: f64,
    /// KL is recorded every this many iterations, plus at the first and last.
    pub trace_every: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            exaggeration: 12.0,
            exaggeration_iterations: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            init_std: 1e-4,
            trace_every: 50,
            seed: 0,
        }
    }
}

/// Joint affinities and the per-row bandwidth search results.
#[derive(Debug, Clone, PartialEq)]
pub struct Affinities {
    /// `N × N`, symmetric, zero diagonal, summing to one.
    pub p: Vec<f64>,
    pub n: usize,
    /// Row-stochastic conditional distributions `P(j | i)`, row `i` at `i * N`.
    pub conditional: Vec<f64>,
    /// Perplexity reached by the bandwidth search on each row.
    pub perplexities: Vec<f64>,
}

/// Conditional distribution of row `i` at precision `beta` over non-negative scaled distances;
/// returns the entropy (nats).
fn conditional(d: &[f64], i: usize, beta: f64, out: &mut [f64]) -> f64 {
    let mut z = 0.0;
    for (j, (o, &dj)) in out.iter_mut().zip(d).enumerate() {
        *o = if j == i { 0.0 } else { (-beta * dj).exp() };
        z += *o;
    }
    let mut mean_d = 0.0;
    for (o, &dj) in out.iter_mut().zip(d) {
        *o /= z;
        mean_d += *o * dj;
    }
    z.ln() + beta * mean_d
}

/// Gaussian conditional affinities with bandwidths chosen by bisection on `ln β` so each row's
/// perplexity matches the target, then symmetrised as `(P + Pᵀ) / 2N`.
pub fn affinities(x: &EmbeddingMatrix, perplexity: f64) -> Result<Affinities> {
    let n = x.rows();
    if n < 3 {
        return Err(Error::InvalidInput(format!("t-SNE needs at least 3 points, got {n}")));
    }
    if !(perplexity > 1.0) || perplexity >= n as f64 {
        return Err(Error::Config(format!("perplexity {perplexity} must lie in (1, {n})")));
    }
    let target = perplexity.ln();
    let mut cond = vec![0.0; n * n];
    let mut perplexities = vec![0.0; n];
    let mut d = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            d[j] = if j == i { 0.0 } else { sq_dist(x.row(i), x.row(j)) };
        }
        // Shift by the nearest-neighbour distance (the conditional is unchanged) and scale by the
        // mean distance so one search range fits every row.
        let min = (0..n).filter(|&j| j != i).map(|j| d[j]).fold(f64::INFINITY, f64::min);
        let mean = d.iter().sum::<f64>() / (n - 1) as f64;
        let scale = if mean > 0.0 { 1.0 / mean } else { 1.0 };
        (0..n).filter(|&j| j != i).for_each(|j| d[j] = (d[j] - min) * scale);
        let row = &mut cond[i * n..(i + 1) * n];
        let (mut lo, mut hi) = LN_BETA_RANGE;
        let mut ln_beta = 0.0;
        let mut h = conditional(&d, i, 1.0, row);
        for _ in 0..BISECTION_STEPS {
            if (h.exp() - perplexity).abs() < PERPLEXITY_TOL {
                break;
            }
            // entropy falls as beta grows
            if h > target {
                lo = ln_beta;
            } else {
                hi = ln_beta;
            }
            ln_beta = 0.5 * (lo + hi);
            h = conditional(&d, i, ln_beta.exp(), row);
        }
        perplexities[i] = h.exp();
    }
    let mut p = vec![0.0; n * n];
    let scale = 1.0 / (2.0 * n as f64);
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (cond[i * n + j] + cond[j * n + i]) * scale;
        }
    }
    Ok(Affinities {
        p,
        n,
        conditional: cond,
        perplexities,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsneResult {
    /// `N × 2`.
    pub coordinates: EmbeddingMatrix,
    /// `(iteration, KL(P ‖ Q))` against the unexaggerated affinities.
    pub kl_trace: Vec<(usize, f64)>,
    pub perplexities: Vec<f64>,
}

/// Student-t low-dimensional affinities: unnormalised kernel `w` and its sum.
fn kernel(y: &[[f64; 2]], w: &mut [f64]) -> f64 {
    let n = y.len();
    let mut total = 0.0;
    for i in 0..n {
        w[i * n + i] = 0.0;
        for j in i + 1..n {
            let dx = y[i][0] - y[j][0];
            let dy = y[i][1] - y[j][1];
            let v = 1.0 / (1.0 + dx * dx + dy * dy);
            w[i * n + j] = v;
            w[j * n + i] = v;
            total += 2.0 * v;
        }
    }
    total
}

fn kl(p: &[f64], w: &[f64], total: f64) -> f64 {
    p.iter()
        .zip(w)
        .filter(|(pv, _)| **pv > 0.0)
        .map(|(pv, wv)| pv * (pv / (wv / total)).ln())
        .sum()
}

/// Gradient descent with momentum and per-coordinate adaptive gains on KL(P ‖ Q).
pub fn tsne(x: &EmbeddingMatrix, config: &TsneConfig) -> Result<TsneResult> {
    if config.iterations == 0 {
        return Err(Error::Config("t-SNE needs at least one iteration".into()));
    }
    let aff = affinities(x, config.perplexity)?;
    let n = aff.n;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normal = Normal::new(0.0, config.init_std).map_err(|e| Error::Config(e.to_string()))?;
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)]).collect();
    let mut update = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut w = vec![0.0; n * n];
    let mut grad = vec![[0.0; 2]; n];
    let mut trace = Vec::new();

    for it in 0..config.iterations {
        let total = kernel(&y, &mut w);
        if it % config.trace_every.max(1) == 0 {
            trace.push((it, kl(&aff.p, &w, total)));
        }
        let early = it < config.exaggeration_iterations;
        let exaggeration = if early { config.exaggeration } else { 1.0 };
        let momentum = if early { config.initial_momentum } else { config.final_momentum };
        for i in 0..n {
            let mut g = [0.0; 2];
            for j in 0..n {
                let wij = w[i * n + j];
                let coeff = (exaggeration * aff.p[i * n + j] - wij / total) * wij;
                g[0] += coeff * (y[i][0] - y[j][0]);
                g[1] += coeff * (y[i][1] - y[j][1]);
            }
            grad[i] = [4.0 * g[0], 4.0 * g[1]];
        }
        for i in 0..n {
            for c in 0..2 {
                let gain = &mut gains[i][c];
                *gain = if (grad[i][c] > 0.0) != (update[i][c] > 0.0) {
                    *gain + 0.2
                } else {
                    (*gain * 0.8).max(0.01)
                };
                update[i][c] = momentum * update[i][c] - config.learning_rate * *gain * grad[i][c];
                y[i][c] += update[i][c];
            }
        }
        let mean = [0, 1].map(|c| y.iter().map(|p| p[c]).sum::<f64>() / n as f64);
        y.iter_mut().for_each(|p| {
            p[0] -= mean[0];
            p[1] -= mean[1];
        });
        if y.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(Error::NonFinite {
                layer: format!("t-SNE iteration {it}"),
            });
        }
    }
    let total = kernel(&y, &mut w);
    trace.push((config.iterations, kl(&aff.p, &w, total)));
    Ok(TsneResult {
        coordinates: EmbeddingMatrix::new(n, 2, y.iter().flatten().copied().collect())?,
        kl_trace: trace,
        perplexities: aff.perplexities,
    })
}

/// One projected point with the labels carried into the plot table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionRow {
    pub id: String,
    pub x: f64,
    pub y: f64,
    pub cluster: usize,
    pub modality: String,
    pub anatomical_region: String,
}

/// Writes `id,x,y,cluster,modality,anatomical_region`.
pub fn write_projection_csv(w: impl Write, rows: &[ProjectionRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}
