//! Analytic gradients against central finite differences.

use deepclust::cae::{Cae, CaeConfig};
use deepclust::cluster::{kl_divergence, kl_loss, soft_assign, target_distribution};
use deepclust::nn::{mse_loss, LayerSpec, Network};
use deepclust::{EmbeddingMatrix, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;

/// ‖a − n‖ / max(‖a‖, ‖n‖), zero when both vanish.
fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

fn central(mut f: impl FnMut(f64) -> f64, x: f64) -> f64 {
    (f(x + H) - f(x - H)) / (2.0 * H)
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Checks input and parameter gradients of `L = Σ c ⊙ net(x)` for a one-layer network.
fn check_layer(spec: LayerSpec, input_shape: &[usize], seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Network::new("probe", input_shape, vec![spec.clone()], &mut rng).unwrap();
    for p in net.params_mut() {
        let fresh = random_tensor(&mut rng, p.shape());
        *p = fresh;
    }
    let x = random_tensor(&mut rng, input_shape);
    let out_shape = net.output_shape();
    let c = random_tensor(&mut rng, &out_shape);
    let loss = |net: &Network, x: &Tensor| net.predict(x).unwrap().dot(&c);

    let (_, cache) = net.forward(&x).unwrap();
    let (gx, grads) = net.backward(&cache, &c).unwrap();

    let mut worst: f64 = 0.0;
    let numeric: Vec<f64> = (0..x.numel())
        .map(|i| {
            central(
                |v| {
                    let mut xp = x.clone();
                    xp.data_mut()[i] = v;
                    loss(&net, &xp)
                },
                x.data()[i],
            )
        })
        .collect();
    worst = worst.max(rel_error(gx.data(), &numeric));

    let analytic: Vec<f64> = grads.iter().flatten().flat_map(|t| t.data().to_vec()).collect();
    let total: usize = net.params().iter().flatten().map(Tensor::numel).sum();
    let mut numeric = Vec::with_capacity(total);
    for k in 0..total {
        let original = param_at(&net, k);
        numeric.push(central(
            |v| {
                let mut probe = net.clone();
                set_param_at(&mut probe, k, v);
                loss(&probe, &x)
            },
            original,
        ));
    }
    assert_eq!(analytic.len(), numeric.len(), "{spec:?}");
    worst.max(rel_error(&analytic, &numeric))
}

fn param_at(net: &Network, mut k: usize) -> f64 {
    for t in net.params().iter().flatten() {
        if k < t.numel() {
            return t.data()[k];
        }
        k -= t.numel();
    }
    panic!("parameter index out of range")
}

fn set_param_at(net: &mut Network, mut k: usize, v: f64) {
    for t in net.params_mut() {
        if k < t.numel() {
            t.data_mut()[k] = v;
            return;
        }
        k -= t.numel();
    }
    panic!("parameter index out of range")
}

/// Worst relative error per layer kind.
pub fn layer_errors() -> Vec<(String, f64)> {
    let cases = [
        (
            LayerSpec::Conv3x3 {
                in_channels: 2,
                out_channels: 3,
            },
            vec![2, 5, 4],
        ),
        (LayerSpec::Maxpool2x2, vec![2, 4, 6]),
        (LayerSpec::Upsample2xBilinear, vec![2, 3, 4]),
        (LayerSpec::Dense { inputs: 7, outputs: 5 }, vec![7]),
        (LayerSpec::Relu, vec![3, 4, 4]),
        (LayerSpec::Sigmoid, vec![3, 4, 4]),
        (LayerSpec::Flatten, vec![2, 3, 2]),
        (LayerSpec::Reshape { shape: vec![2, 2, 3] }, vec![12]),
    ];
    cases
        .into_iter()
        .enumerate()
        .map(|(seed, (spec, shape))| (spec.name().to_string(), check_layer(spec, &shape, seed as u64)))
        .collect()
}

pub fn mse_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let target = random_tensor(&mut rng, &[1, 4, 4]);
    let recon = random_tensor(&mut rng, &[1, 4, 4]);
    let (_, g) = mse_loss(&target, &recon).unwrap();
    let numeric: Vec<f64> = (0..recon.numel())
        .map(|i| {
            central(
                |v| {
                    let mut r = recon.clone();
                    r.data_mut()[i] = v;
                    mse_loss(&target, &r).unwrap().0
                },
                recon.data()[i],
            )
        })
        .collect();
    rel_error(g.data(), &numeric)
}

fn tiny_cae() -> (Cae, Tensor) {
    let cae = Cae::build(CaeConfig {
        size: 8,
        filters: vec![2],
        bottleneck: 4,
        seed: 5,
        ..CaeConfig::default()
    })
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let image = Tensor::new(vec![1, 8, 8], (0..64).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    (cae, image)
}

fn flat_params(cae: &Cae) -> Vec<f64> {
    [&cae.encoder, &cae.decoder]
        .iter()
        .flat_map(|n| n.params().iter().flatten().flat_map(|t| t.data().to_vec()))
        .collect()
}

fn perturbed(cae: &Cae, k: usize, v: f64) -> Cae {
    let mut probe = cae.clone();
    let n_enc: usize = probe.encoder.params().iter().flatten().map(Tensor::numel).sum();
    if k < n_enc {
        set_param_at(&mut probe.encoder, k, v);
    } else {
        set_param_at(&mut probe.decoder, k - n_enc, v);
    }
    probe
}

/// End-to-end reconstruction loss of an 8×8, one-stage autoencoder.
pub fn autoencoder_error() -> f64 {
    let (cae, image) = tiny_cae();
    let (_, ge, gd) = cae.batch_gradients(&[&image]).unwrap();
    let analytic: Vec<f64> = ge.iter().chain(&gd).flatten().flat_map(|t| t.data().to_vec()).collect();
    let params = flat_params(&cae);
    let numeric: Vec<f64> = (0..params.len())
        .map(|k| {
            central(
                |v| {
                    let probe = perturbed(&cae, k, v);
                    mse_loss(&image, &probe.reconstruct(&image).unwrap()).unwrap().0
                },
                params[k],
            )
        })
        .collect();
    rel_error(&analytic, &numeric)
}

fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> EmbeddingMatrix {
    EmbeddingMatrix::new(n, d, (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}

/// `(loss mismatch, z error, centroid error)` of the clustering loss.
pub fn kl_errors() -> (f64, f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let z = random_rows(&mut rng, 7, 3);
    let mu = random_rows(&mut rng, 4, 3);
    let p = target_distribution(&soft_assign(&z, &mu).unwrap());
    let g = kl_loss(&p, &z, &mu).unwrap();
    let kl = |z: &EmbeddingMatrix, mu: &EmbeddingMatrix| kl_divergence(&p, &soft_assign(z, mu).unwrap());

    let nz: Vec<f64> = (0..z.data().len())
        .map(|i| {
            central(
                |v| {
                    let mut zp = z.clone();
                    zp.data_mut()[i] = v;
                    kl(&zp, &mu)
                },
                z.data()[i],
            )
        })
        .collect();
    let nmu: Vec<f64> = (0..mu.data().len())
        .map(|i| {
            central(
                |v| {
                    let mut mp = mu.clone();
                    mp.data_mut()[i] = v;
                    kl(&z, &mp)
                },
                mu.data()[i],
            )
        })
        .collect();
    (
        (g.loss - kl(&z, &mu)).abs(),
        rel_error(g.grad_z.data(), &nz),
        rel_error(g.grad_centroids.data(), &nmu),
    )
}

/// Clustering loss backpropagated into the encoder parameters.
pub fn kl_encoder_error() -> f64 {
    let (cae, image) = tiny_cae();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut images = vec![image];
    for _ in 0..4 {
        images.push(Tensor::new(vec![1, 8, 8], (0..64).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap());
    }
    let z = cae.encode(&images).unwrap();
    let mu = random_rows(&mut rng, 3, 4);
    let p = target_distribution(&soft_assign(&z, &mu).unwrap());
    let g = kl_loss(&p, &z, &mu).unwrap();

    let mut analytic = cae.encoder.zero_grads();
    for (i, im) in images.iter().enumerate() {
        let pass = cae.encoder_pass(im).unwrap();
        let gz = Tensor::new(vec![4], g.grad_z.row(i).to_vec()).unwrap();
        let (ge, _) = cae.backward(&pass, None, Some(&gz)).unwrap();
        deepclust::nn::accumulate(&mut analytic, &ge, 1.0);
    }
    let analytic: Vec<f64> = analytic.iter().flatten().flat_map(|t| t.data().to_vec()).collect();
    let n_enc = analytic.len();
    let params = flat_params(&cae);
    let numeric: Vec<f64> = (0..n_enc)
        .map(|k| {
            central(
                |v| {
                    let probe = perturbed(&cae, k, v);
                    kl_divergence(&p, &soft_assign(&probe.encode(&images).unwrap(), &mu).unwrap())
                },
                params[k],
            )
        })
        .collect();
    rel_error(&analytic, &numeric)
}
