//! Convolutional autoencoder: architecture assembly, reconstruction training and embedding.
//!
//! The encoder is a stack of `conv3x3 → ReLU → maxpool2x2` stages followed by a linear
//! dense bottleneck. The decoder expands the code with `dense → ReLU → reshape`, mirrors the
//! stages with `upsample2x_bilinear → conv3x3 → ReLU` and ends in a one-channel
//! `conv3x3 → sigmoid`, so reconstructions lie in `(0, 1)`.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::EmbeddingMatrix;
use crate::nn::{accumulate, mse_loss, AdamConfig, AdamState, ForwardCache, Grads, LayerSpec, Network};
use crate::tensor::{Checkpoint, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CaeConfig {
    pub size: usize,
    /// Output channels of each encoder stage.
    pub filters: Vec<usize>,
    pub bottleneck: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Training stops once the relative change of the epoch loss falls below this value.
    pub stop_tol: f64,
}

impl Default for CaeConfig {
    fn default() -> Self {
        Self {
            size: 256,
            filters: vec![32, 32, 64, 64, 64, 64],
            bottleneck: 100,
            lr: 1e-3,
            batch_size: 50,
            max_epochs: 100,
            seed: 0,
            stop_tol: 1e-3,
        }
    }
}

impl CaeConfig {
    pub fn validate(&self) -> Result<()> {
        let stages = self.filters.len();
        if stages == 0 || self.filters.contains(&0) {
            return Err(Error::Config("CAE needs at least one stage and positive filter counts".into()));
        }
        if self.size == 0 || stages >= usize::BITS as usize || !self.size.is_multiple_of(1 << stages) {
            return Err(Error::Config(format!(
                "input size {} is not divisible by 2^{stages}",
                self.size
            )));
        }
        if self.bottleneck == 0 {
            return Err(Error::Config("bottleneck width must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.lr > 0.0) || !(self.stop_tol >= 0.0) {
            return Err(Error::Config("lr must be positive and stop_tol non-negative".into()));
        }
        Ok(())
    }

    /// Shape `[C, s, s]` entering the bottleneck dense layer.
    pub fn code_shape(&self) -> Vec<usize> {
        let s = self.size >> self.filters.len();
        vec![*self.filters.last().expect("validated"), s, s]
    }

    pub fn encoder_layers(&self) -> Vec<LayerSpec> {
        let mut layers = Vec::new();
        let mut c = 1;
        for &f in &self.filters {
            layers.push(LayerSpec::Conv3x3 { in_channels: c, out_channels: f });
            layers.push(LayerSpec::Relu);
            layers.push(LayerSpec::Maxpool2x2);
            c = f;
        }
        layers.push(LayerSpec::Flatten);
        layers.push(LayerSpec::Dense {
            inputs: self.code_shape().iter().product(),
            outputs: self.bottleneck,
        });
        layers
    }

    pub fn decoder_layers(&self) -> Vec<LayerSpec> {
        let code = self.code_shape();
        let mut layers = vec![
            LayerSpec::Dense {
                inputs: self.bottleneck,
                outputs: code.iter().product(),
            },
            LayerSpec::Relu,
            LayerSpec::Reshape { shape: code },
        ];
        for i in (0..self.filters.len()).rev() {
            let out = self.filters[i.saturating_sub(1)];
            layers.push(LayerSpec::Upsample2xBilinear);
            layers.push(LayerSpec::Conv3x3 {
                in_channels: self.filters[i],
                out_channels: out,
            });
            layers.push(LayerSpec::Relu);
        }
        layers.push(LayerSpec::Conv3x3 {
            in_channels: self.filters[0],
            out_channels: 1,
        });
        layers.push(LayerSpec::Sigmoid);
        layers
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

/// Cached forward pass of one image through encoder and decoder.
#[derive(Debug)]
pub struct SamplePass {
    pub z: Tensor,
    /// Absent for encoder-only passes.
    pub reconstruction: Option<Tensor>,
    encoder: ForwardCache,
    decoder: Option<ForwardCache>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cae {
    pub config: CaeConfig,
    pub encoder: Network,
    pub decoder: Network,
    pub log: Vec<EpochLog>,
}

impl Cae {
    pub fn build(config: CaeConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let s = config.size;
        let encoder = Network::new("encoder", &[1, s, s], config.encoder_layers(), &mut rng)?;
        let decoder = Network::new("decoder", &[config.bottleneck], config.decoder_layers(), &mut rng)?;
        debug_assert_eq!(decoder.output_shape(), vec![1, s, s]);
        Ok(Self {
            config,
            encoder,
            decoder,
            log: Vec::new(),
        })
    }

    pub fn param_count(&self) -> usize {
        self.encoder.param_count() + self.decoder.param_count()
    }

    fn check_image(&self, image: &Tensor) -> Result<()> {
        let s = self.config.size;
        if image.shape() != [1, s, s] {
            return Err(Error::shape("cae input", [1, s, s], image.shape()));
        }
        Ok(())
    }

    pub fn embed(&self, image: &Tensor) -> Result<Tensor> {
        self.check_image(image)?;
        self.encoder.predict(image)
    }

    pub fn reconstruct(&self, image: &Tensor) -> Result<Tensor> {
        self.decoder.predict(&self.embed(image)?)
    }

    /// Row `i` is the bottleneck code of `images[i]`.
    pub fn encode(&self, images: &[Tensor]) -> Result<EmbeddingMatrix> {
        let mut out = EmbeddingMatrix::zeros(images.len(), self.config.bottleneck);
        for (i, im) in images.iter().enumerate() {
            out.row_mut(i).copy_from_slice(self.embed(im)?.data());
        }
        Ok(out)
    }

    pub fn pass(&self, image: &Tensor) -> Result<SamplePass> {
        self.pass_with(image, true)
    }

    pub fn encoder_pass(&self, image: &Tensor) -> Result<SamplePass> {
        self.pass_with(image, false)
    }

    fn pass_with(&self, image: &Tensor, decode: bool) -> Result<SamplePass> {
        self.check_image(image)?;
        let (z, encoder) = self.encoder.forward(image)?;
        let (reconstruction, decoder) = if decode {
            let (r, c) = self.decoder.forward(&z)?;
            (Some(r), Some(c))
        } else {
            (None, None)
        };
        Ok(SamplePass {
            z,
            reconstruction,
            encoder,
            decoder,
        })
    }

    /// Backpropagates a reconstruction gradient (optional) and an extra gradient on `z`
    /// (optional) through the cached pass. Decoder gradients are `None` without a
    /// reconstruction gradient.
    pub fn backward(
        &self,
        pass: &SamplePass,
        grad_reconstruction: Option<&Tensor>,
        grad_z: Option<&Tensor>,
    ) -> Result<(Grads, Option<Grads>)> {
        let mut gz = Tensor::zeros(pass.z.shape());
        let mut dec = None;
        if let Some(g) = grad_reconstruction {
            let cache = pass.decoder.as_ref().ok_or_else(|| Error::MissingCache {
                layer: self.decoder.label().to_string(),
            })?;
            let (g_in, grads) = self.decoder.backward(cache, g)?;
            gz.add_scaled(&g_in, 1.0);
            dec = Some(grads);
        }
        if let Some(g) = grad_z {
            gz.add_scaled(g, 1.0);
        }
        let (_, enc) = self.encoder.backward(&pass.encoder, &gz)?;
        Ok((enc, dec))
    }

    /// Mean MSE of the batch and its gradients (averaged over batch elements).
    pub fn batch_gradients(&self, images: &[&Tensor]) -> Result<(f64, Grads, Grads)> {
        let mut enc = self.encoder.zero_grads();
        let mut dec = self.decoder.zero_grads();
        let scale = 1.0 / images.len() as f64;
        let mut loss = 0.0;
        for im in images {
            let pass = self.pass(im)?;
            let (l, g) = mse_loss(im, pass.reconstruction.as_ref().expect("decoded pass"))?;
            let (ge, gd) = self.backward(&pass, Some(&g), None)?;
            accumulate(&mut enc, &ge, scale);
            accumulate(&mut dec, &gd.expect("reconstruction gradient given"), scale);
            loss += l * scale;
        }
        Ok((loss, enc, dec))
    }

    pub fn mean_loss(&self, images: &[Tensor]) -> Result<f64> {
        let mut total = 0.0;
        for im in images {
            total += mse_loss(im, &self.reconstruct(im)?)?.0;
        }
        Ok(total / images.len() as f64)
    }

    fn snapshot(&self) -> (Network, Network) {
        (self.encoder.clone(), self.decoder.clone())
    }

    /// Minibatch Adam on the mean reconstruction MSE. Returns the per-epoch log, which is
    /// also appended to `self.log`. With a non-empty validation set, the parameters with the
    /// lowest validation loss are restored at the end.
    pub fn train(&mut self, train: &[Tensor], validation: &[Tensor]) -> Result<Vec<EpochLog>> {
        if train.is_empty() {
            return Err(Error::InvalidInput("no training images".into()));
        }
        for im in train.iter().chain(validation) {
            self.check_image(im)?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(1);
        let adam_cfg = AdamConfig::with_lr(self.config.lr);
        let mut adam = AdamState::new(adam_cfg, self.encoder.params().iter().chain(self.decoder.params()).flatten());
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut best: Option<(f64, (Network, Network))> = None;
        let mut previous: Option<f64> = None;
        let mut epochs = Vec::new();
        for epoch in 0..self.config.max_epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for batch in order.chunks(self.config.batch_size) {
                let images: Vec<&Tensor> = batch.iter().map(|&i| &train[i]).collect();
                let (loss, ge, gd) = self.batch_gradients(&images)?;
                epoch_loss += loss * batch.len() as f64;
                let grads: Vec<&Tensor> = ge.iter().chain(&gd).flatten().collect();
                adam.step(self.encoder.params_mut().chain(self.decoder.params_mut()), grads);
                self.check_params()?;
            }
            epoch_loss /= train.len() as f64;
            if !epoch_loss.is_finite() {
                return Err(Error::NonFinite { layer: "cae loss".into() });
            }
            let val_loss = if validation.is_empty() {
                None
            } else {
                Some(self.mean_loss(validation)?)
            };
            if let Some(v) = val_loss {
                if best.as_ref().is_none_or(|(b, _)| v < *b) {
                    best = Some((v, self.snapshot()));
                }
            }
            log::info!(
                "cae epoch {epoch}: train {epoch_loss:.6}{}",
                val_loss.map_or(String::new(), |v| format!(", validation {v:.6}"))
            );
            let entry = EpochLog {
                epoch,
                train_loss: epoch_loss,
                val_loss,
            };
            epochs.push(entry);
            self.log.push(entry);
            if let Some(p) = previous {
                if p > 0.0 && ((p - epoch_loss) / p).abs() < self.config.stop_tol {
                    break;
                }
            }
            previous = Some(epoch_loss);
        }
        if let Some((_, (enc, dec))) = best {
            self.encoder = enc;
            self.decoder = dec;
        }
        Ok(epochs)
    }

    /// Names the first layer whose parameters became non-finite.
    pub(crate) fn check_params(&self) -> Result<()> {
        for net in [&self.encoder, &self.decoder] {
            for (i, p) in net.params().iter().enumerate() {
                if p.iter().any(|t| !t.is_finite()) {
                    return Err(Error::NonFinite {
                        layer: format!("{}[{i}] {} parameters", net.label(), net.layers()[i].name()),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let header = serde_json::json!({
            "model": "cae",
            "config": self.config,
            "encoder": self.encoder.layers(),
            "decoder": self.decoder.layers(),
            "log": self.log,
        });
        let mut ck = Checkpoint::new(header);
        for net in [&self.encoder, &self.decoder] {
            for (name, t) in net.param_names().into_iter().zip(net.params().iter().flatten()) {
                ck.push(name, t.clone());
            }
        }
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config: CaeConfig = serde_json::from_value(
            ck.header
                .get("config")
                .cloned()
                .ok_or_else(|| Error::Format("checkpoint header has no CAE config".into()))?,
        )?;
        let log = match ck.header.get("log") {
            Some(v) => serde_json::from_value(v.clone())?,
            None => Vec::new(),
        };
        let mut cae = Self::build(config)?;
        cae.log = log;
        for net in [&mut cae.encoder, &mut cae.decoder] {
            let tensors = net
                .param_names()
                .iter()
                .map(|n| {
                    ck.get(n)
                        .cloned()
                        .ok_or_else(|| Error::Format(format!("checkpoint is missing tensor {n}")))
                })
                .collect::<Result<Vec<_>>>()?;
            net.set_params(tensors)?;
        }
        Ok(cae)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    /// `epoch,train_loss,val_loss` with an empty field when no validation set was used.
    pub fn write_loss_csv(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "epoch,train_loss,val_loss")?;
        for e in &self.log {
            let val = e.val_loss.map_or(String::new(), |v| format!("{v:e}"));
            writeln!(w, "{},{:e},{val}", e.epoch, e.train_loss)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny(size: usize, filters: Vec<usize>, bottleneck: usize) -> CaeConfig {
        CaeConfig {
            size,
            filters,
            bottleneck,
            batch_size: 4,
            max_epochs: 5,
            seed: 3,
            ..CaeConfig::default()
        }
    }

    fn random_images(n: usize, s: usize, seed: u64) -> Vec<Tensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Tensor::new(vec![1, s, s], (0..s * s).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap())
            .collect()
    }

    #[test]
    fn paper_default_shapes() {
        let cfg = CaeConfig::default();
        assert_eq!(cfg.code_shape(), vec![64, 4, 4]);
        let cae = Cae::build(cfg.clone()).unwrap();
        let convs: usize = {
            let mut c_in = 1;
            let mut total = 0;
            for &f in &cfg.filters {
                total += f * c_in * 9 + f;
                c_in = f;
            }
            total
        };
        let dense = 1024 * 100 + 100;
        assert_eq!(cae.encoder.param_count(), convs + dense);
        let dec_convs = 64 * 64 * 9 + 64 // stage 5
            + 64 * 64 * 9 + 64 // 4
            + 64 * 64 * 9 + 64 // 3
            + 64 * 32 * 9 + 32 // 2
            + 32 * 32 * 9 + 32 // 1
            + 32 * 32 * 9 + 32 // 0
            + 32 * 9 + 1; // output
        assert_eq!(cae.decoder.param_count(), dec_convs + 100 * 1024 + 1024);
    }

    #[test]
    fn small_config_shapes() {
        let cfg = tiny(64, vec![8, 16, 32], 10);
        assert_eq!(cfg.code_shape(), vec![32, 8, 8]);
        let cae = Cae::build(cfg).unwrap();
        let im = &random_images(1, 64, 1)[0];
        let r = cae.reconstruct(im).unwrap();
        assert_eq!(r.shape(), &[1, 64, 64]);
        assert!(r.data().iter().all(|&v| v > 0.0 && v < 1.0));
        assert_eq!(cae.embed(im).unwrap().shape(), &[10]);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(matches!(Cae::build(tiny(20, vec![4, 4, 4], 3)), Err(Error::Config(_))));
        assert!(Cae::build(tiny(16, vec![4], 0)).is_err());
        let cae = Cae::build(tiny(16, vec![4], 3)).unwrap();
        assert!(cae.encode(&random_images(1, 8, 0)).is_err());
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let images = random_images(8, 16, 5);
        let cfg = CaeConfig {
            stop_tol: 0.0,
            ..tiny(16, vec![4, 4], 6)
        };
        let mut a = Cae::build(cfg.clone()).unwrap();
        let mut b = Cae::build(cfg).unwrap();
        let la = a.train(&images, &[]).unwrap();
        b.train(&images, &[]).unwrap();
        assert_eq!(a, b);
        assert!(la.last().unwrap().train_loss < la[0].train_loss);
    }

    #[test]
    fn encoder_ignores_decoder_parameters() {
        let images = random_images(3, 16, 6);
        let mut cae = Cae::build(tiny(16, vec![4, 4], 5)).unwrap();
        let before = cae.encode(&images).unwrap();
        cae.decoder.params_mut().for_each(|t| t.data_mut().iter_mut().for_each(|v| *v += 0.5));
        assert_eq!(before, cae.encode(&images).unwrap());
        let dup = cae.encode(&[images[0].clone(), images[0].clone()]).unwrap();
        assert_eq!(dup.row(0), dup.row(1));
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut cae = Cae::build(tiny(16, vec![4, 4], 5)).unwrap();
        cae.train(&random_images(4, 16, 7), &random_images(2, 16, 8)).unwrap();
        let mut bytes = Vec::new();
        cae.to_checkpoint().unwrap().write_to(&mut bytes).unwrap();
        let back = Cae::from_checkpoint(&Checkpoint::read_from(&mut bytes.as_slice()).unwrap()).unwrap();
        assert_eq!(cae, back);
        let mut csv = Vec::new();
        back.write_loss_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("epoch,train_loss,val_loss\n0,"));
        assert_eq!(text.lines().count(), cae.log.len() + 1);
    }

    #[test]
    fn keeps_best_validation_snapshot() {
        let train = random_images(6, 16, 9);
        let val = random_images(3, 16, 10);
        let mut cae = Cae::build(CaeConfig {
            stop_tol: 0.0,
            max_epochs: 6,
            ..tiny(16, vec![4], 4)
        })
        .unwrap();
        let log = cae.train(&train, &val).unwrap();
        let best = log.iter().filter_map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(cae.mean_loss(&val).unwrap(), best);
    }
}
