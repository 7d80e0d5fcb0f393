use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::kmeans::{kmeans, KMeansConfig, KMeansModel};
use crate::cae::Cae;
use crate::error::{Error, Result};
use crate::matrix::{sq_dist, EmbeddingMatrix};
use crate::nn::{accumulate, mse_loss, AdamConfig, AdamState};
use crate::tensor::{Checkpoint, Tensor};

/// Student-t similarities `q_ij ∝ (1 + ‖z_i − μ_j‖²)⁻¹`, each row normalised.
pub fn soft_assign(z: &EmbeddingMatrix, centroids: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    if z.cols() != centroids.cols() {
        return Err(Error::shape("soft_assign", centroids.cols(), z.cols()));
    }
    let k = centroids.rows();
    let mut q = EmbeddingMatrix::zeros(z.rows(), k);
    for (i, zi) in z.iter_rows().enumerate() {
        soft_assign_row(zi, centroids, q.row_mut(i));
    }
    Ok(q)
}

fn soft_assign_row(z: &[f64], centroids: &EmbeddingMatrix, out: &mut [f64]) {
    for (o, mu) in out.iter_mut().zip(centroids.iter_rows()) {
        *o = 1.0 / (1.0 + sq_dist(z, mu));
    }
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= total);
}

/// Sharpened self-training target: `p_ij ∝ q_ij² / f_j` with soft frequencies `f_j = Σ_i q_ij`.
pub fn target_distribution(q: &EmbeddingMatrix) -> EmbeddingMatrix {
    let k = q.cols();
    let mut f = vec![0.0; k];
    for row in q.iter_rows() {
        f.iter_mut().zip(row).for_each(|(a, b)| *a += b);
    }
    let mut p = q.clone();
    for i in 0..p.rows() {
        let row = p.row_mut(i);
        row.iter_mut().zip(&f).for_each(|(v, fj)| *v = *v * *v / fj);
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= total);
    }
    p
}

/// `Σ_ij p_ij ln(p_ij / q_ij)` for row-stochastic `P` and `Q`.
pub fn kl_divergence(p: &EmbeddingMatrix, q: &EmbeddingMatrix) -> f64 {
    kl_terms(p.data(), q.data())
}

/// Summed as `p ln(p/q) − p + q`, which equals KL when both sides sum to one and makes every
/// term non-negative, so rounding cannot push the total below zero.
fn kl_terms(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&pv, &qv)| {
            let t = if pv > 0.0 { pv * (pv / qv).ln() } else { 0.0 };
            (t - pv + qv).max(0.0)
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KlGradients {
    pub loss: f64,
    /// `N × d`.
    pub grad_z: EmbeddingMatrix,
    /// `K × d`.
    pub grad_centroids: EmbeddingMatrix,
}

/// KL(P ‖ Q(Z, μ)) with `P` held constant, and its gradients with respect to `Z` and `μ`.
pub fn kl_loss(p: &EmbeddingMatrix, z: &EmbeddingMatrix, centroids: &EmbeddingMatrix) -> Result<KlGradients> {
    let q = soft_assign(z, centroids)?;
    if p.rows() != q.rows() || p.cols() != q.cols() {
        return Err(Error::shape("kl_loss", [q.rows(), q.cols()], [p.rows(), p.cols()]));
    }
    let mut grad_z = EmbeddingMatrix::zeros(z.rows(), z.cols());
    let mut grad_centroids = EmbeddingMatrix::zeros(centroids.rows(), centroids.cols());
    for i in 0..z.rows() {
        kl_row_gradient(z.row(i), centroids, p.row(i), q.row(i), 1.0, grad_z.row_mut(i), &mut grad_centroids);
    }
    Ok(KlGradients {
        loss: kl_divergence(p, &q),
        grad_z,
        grad_centroids,
    })
}

/// Adds `scale ·` the gradient of row `i`'s KL term: `∂/∂z_i = 2 Σ_j w_ij (p_ij − q_ij)(z_i − μ_j)`
/// with `w_ij = (1 + ‖z_i − μ_j‖²)⁻¹`, and the negated per-centroid terms for `∂/∂μ_j`.
fn kl_row_gradient(
    z: &[f64],
    centroids: &EmbeddingMatrix,
    p: &[f64],
    q: &[f64],
    scale: f64,
    grad_z: &mut [f64],
    grad_centroids: &mut EmbeddingMatrix,
) {
    for (j, mu) in centroids.iter_rows().enumerate() {
        let w = 1.0 / (1.0 + sq_dist(z, mu));
        let c = 2.0 * scale * w * (p[j] - q[j]);
        let gmu = grad_centroids.row_mut(j);
        for ((gz, gm), (zv, mv)) in grad_z.iter_mut().zip(gmu).zip(z.iter().zip(mu)) {
            let t = c * (zv - mv);
            *gz += t;
            *gm -= t;
        }
    }
}

/// Argmax per row, lowest index on ties.
pub fn infer(q: &EmbeddingMatrix) -> Vec<usize> {
    q.iter_rows()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecConfig {
    pub k: usize,
    pub alpha: f64,
    /// 0 gives DEC (clustering loss only), 1 gives IDEC.
    pub beta: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub stop_tol: f64,
    /// Epochs between target-distribution refreshes.
    pub update_interval: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for DecConfig {
    fn default() -> Self {
        Self {
            k: 25,
            alpha: 0.1,
            beta: 1.0,
            lr: 1e-3,
            batch_size: 50,
            max_epochs: 50,
            stop_tol: 1e-3,
            update_interval: 1,
            restarts: 20,
            seed: 0,
        }
    }
}

impl DecConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::Config(format!("K must be at least 2, got {}", self.k)));
        }
        if !(self.alpha >= 0.0) || !(self.beta >= 0.0) {
            return Err(Error::Config("alpha and beta must be non-negative".into()));
        }
        if !(self.lr > 0.0) || self.batch_size == 0 || self.update_interval == 0 {
            return Err(Error::Config("lr, batch size and update interval must be positive".into()));
        }
        Ok(())
    }

    pub fn kmeans(&self) -> KMeansConfig {
        KMeansConfig {
            k: self.k,
            restarts: self.restarts,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecHead {
    pub centroids: EmbeddingMatrix,
    pub alpha: f64,
    pub beta: f64,
}

impl DecHead {
    pub fn soft_assign(&self, z: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
        soft_assign(z, &self.centroids)
    }

    pub fn infer(&self, z: &EmbeddingMatrix) -> Result<Vec<usize>> {
        Ok(infer(&self.soft_assign(z)?))
    }

    /// Appends the centroids and head weights to a model checkpoint.
    pub fn append_to(&self, ck: &mut Checkpoint) -> Result<()> {
        ck.push("centroids", self.centroids.to_tensor()?);
        if let Some(obj) = ck.header.as_object_mut() {
            obj.insert("head".into(), serde_json::json!({ "alpha": self.alpha, "beta": self.beta }));
        }
        Ok(())
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let centroids = ck
            .get("centroids")
            .ok_or_else(|| Error::Format("checkpoint has no centroids".into()))?;
        let head = ck.header.get("head");
        let weight = |name: &str| head.and_then(|h| h.get(name)).and_then(|v| v.as_f64());
        Ok(Self {
            centroids: EmbeddingMatrix::from_tensor(centroids)?,
            alpha: weight("alpha").ok_or_else(|| Error::Format("checkpoint has no head weights".into()))?,
            beta: weight("beta").ok_or_else(|| Error::Format("checkpoint has no head weights".into()))?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecEpoch {
    pub epoch: usize,
    /// `α·L_n + β·L_r`, averaged over minibatches.
    pub loss: f64,
    pub kl: f64,
    pub reconstruction: f64,
    /// Fraction of points whose hard assignment changed since the previous target refresh.
    pub changed: f64,
    pub clusters_used: usize,
}

#[derive(Debug, Clone)]
pub struct DecOutcome {
    /// Fine-tuned autoencoder (decoder untouched when β = 0).
    pub cae: Cae,
    pub head: DecHead,
    /// Soft assignments of the training images under the final parameters.
    pub q: EmbeddingMatrix,
    pub assignments: Vec<usize>,
    /// Embeddings of the training images under the final encoder.
    pub embeddings: EmbeddingMatrix,
    pub log: Vec<DecEpoch>,
}

/// Initialises centroids with seeded k-means on the CAE embeddings, then trains.
pub fn train_dec(cae: &Cae, images: &[Tensor], config: &DecConfig) -> Result<DecOutcome> {
    config.validate()?;
    let init = kmeans(&cae.encode(images)?, &config.kmeans())?;
    train_dec_from(cae, images, &init, config)
}

/// Self-training from given initial centroids. Minibatch Adam jointly updates the encoder,
/// the decoder (only when β > 0) and the centroids; the target P is recomputed over the full
/// set every `update_interval` epochs.
pub fn train_dec_from(cae: &Cae, images: &[Tensor], init: &KMeansModel, config: &DecConfig) -> Result<DecOutcome> {
    config.validate()?;
    if images.len() < config.k {
        return Err(Error::InvalidInput(format!("{} images for K = {}", images.len(), config.k)));
    }
    if init.centroids.rows() != config.k || init.centroids.cols() != cae.config.bottleneck {
        return Err(Error::shape(
            "dec initial centroids",
            [config.k, cae.config.bottleneck],
            [init.centroids.rows(), init.centroids.cols()],
        ));
    }
    let mut cae = cae.clone();
    let mut mu = init.centroids.to_tensor()?;
    let with_recon = config.beta > 0.0;
    let mut adam = {
        let dec_params: Vec<&Tensor> = if with_recon {
            cae.decoder.params().iter().flatten().collect()
        } else {
            Vec::new()
        };
        AdamState::new(
            AdamConfig::with_lr(config.lr),
            cae.encoder.params().iter().flatten().chain(dec_params).chain([&mu]),
        )
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(2);
    let (k, d) = (config.k, cae.config.bottleneck);
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut log = Vec::new();
    let mut previous_loss: Option<f64> = None;
    let mut previous_labels: Option<Vec<usize>> = None;
    let mut p = EmbeddingMatrix::zeros(images.len(), k);

    for epoch in 0..config.max_epochs {
        let mut changed = 0.0;
        let mut clusters_used = 0;
        if epoch % config.update_interval == 0 {
            let q = soft_assign(&cae.encode(images)?, &EmbeddingMatrix::from_tensor(&mu)?)?;
            p = target_distribution(&q);
            let labels = infer(&q);
            let mut used = vec![false; k];
            labels.iter().for_each(|&l| used[l] = true);
            clusters_used = used.iter().filter(|&&u| u).count();
            if clusters_used == 1 {
                log::warn!("dec epoch {epoch}: every point is assigned to a single cluster");
            }
            if let Some(prev) = &previous_labels {
                changed = prev.iter().zip(&labels).filter(|(a, b)| a != b).count() as f64 / labels.len() as f64;
            }
            previous_labels = Some(labels);
        }

        order.shuffle(&mut rng);
        let (mut sum_loss, mut sum_kl, mut sum_rec) = (0.0, 0.0, 0.0);
        for batch in order.chunks(config.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            let centroids = EmbeddingMatrix::from_tensor(&mu)?;
            let mut g_enc = cae.encoder.zero_grads();
            let mut g_dec = cae.decoder.zero_grads();
            let mut g_mu = EmbeddingMatrix::zeros(k, d);
            let (mut kl, mut rec) = (0.0, 0.0);
            for &i in batch {
                let pass = if with_recon {
                    cae.pass(&images[i])?
                } else {
                    cae.encoder_pass(&images[i])?
                };
                let mut q = vec![0.0; k];
                soft_assign_row(pass.z.data(), &centroids, &mut q);
                let p_row = p.row(i);
                kl += scale * kl_terms(p_row, &q);
                let mut gz = vec![0.0; d];
                kl_row_gradient(pass.z.data(), &centroids, p_row, &q, config.alpha * scale, &mut gz, &mut g_mu);
                let grad_rec = if let Some(recon) = &pass.reconstruction {
                    let (l, g) = mse_loss(&images[i], recon)?;
                    rec += scale * l;
                    Some(g.map(|v| v * config.beta * scale))
                } else {
                    None
                };
                let (ge, gd) = cae.backward(&pass, grad_rec.as_ref(), Some(&Tensor::new(vec![d], gz)?))?;
                accumulate(&mut g_enc, &ge, 1.0);
                if let Some(gd) = gd {
                    accumulate(&mut g_dec, &gd, 1.0);
                }
            }
            let g_mu = g_mu.to_tensor()?;
            if with_recon {
                let grads: Vec<&Tensor> = g_enc.iter().chain(&g_dec).flatten().chain([&g_mu]).collect();
                adam.step(cae.encoder.params_mut().chain(cae.decoder.params_mut()).chain([&mut mu]), grads);
            } else {
                let grads: Vec<&Tensor> = g_enc.iter().flatten().chain([&g_mu]).collect();
                adam.step(cae.encoder.params_mut().chain([&mut mu]), grads);
            }
            cae.check_params()?;
            if !mu.is_finite() {
                return Err(Error::NonFinite { layer: "dec centroids".into() });
            }
            let w = batch.len() as f64;
            let loss = config.alpha * kl + config.beta * rec;
            sum_loss += loss * w;
            sum_kl += kl * w;
            sum_rec += rec * w;
        }
        let n = images.len() as f64;
        let entry = DecEpoch {
            epoch,
            loss: sum_loss / n,
            kl: sum_kl / n,
            reconstruction: sum_rec / n,
            changed,
            clusters_used,
        };
        log::info!(
            "dec epoch {epoch}: loss {:.6} (kl {:.6}, reconstruction {:.6}), {:.2}% changed",
            entry.loss,
            entry.kl,
            entry.reconstruction,
            100.0 * changed
        );
        log.push(entry);
        if let Some(prev) = previous_loss {
            if prev > 0.0 && ((prev - entry.loss) / prev).abs() < config.stop_tol {
                break;
            }
        }
        previous_loss = Some(entry.loss);
    }

    let centroids = EmbeddingMatrix::from_tensor(&mu)?;
    let embeddings = cae.encode(images)?;
    let q = soft_assign(&embeddings, &centroids)?;
    let assignments = infer(&q);
    if assignments.iter().all(|&a| a == assignments[0]) {
        log::warn!("dec training collapsed: every point is assigned to cluster {}", assignments[0]);
    }
    Ok(DecOutcome {
        cae,
        head: DecHead {
            centroids,
            alpha: config.alpha,
            beta: config.beta,
        },
        q,
        assignments,
        embeddings,
        log,
    })
}
