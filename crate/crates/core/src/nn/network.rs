use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ops;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One element of a sequential layer chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv3x3 { in_channels: usize, out_channels: usize },
    Maxpool2x2,
    Upsample2xBilinear,
    Dense { inputs: usize, outputs: usize },
    Relu,
    Sigmoid,
    Flatten,
    Reshape { shape: Vec<usize> },
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv3x3 { .. } => "conv3x3",
            LayerSpec::Maxpool2x2 => "maxpool2x2",
            LayerSpec::Upsample2xBilinear => "upsample2x_bilinear",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Relu => "relu",
            LayerSpec::Sigmoid => "sigmoid",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Reshape { .. } => "reshape",
        }
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::Conv3x3 { in_channels, out_channels } => {
                vec![vec![out_channels, in_channels, 3, 3], vec![out_channels]]
            }
            LayerSpec::Dense { inputs, outputs } => vec![vec![outputs, inputs], vec![outputs]],
            _ => Vec::new(),
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = |expected: &dyn std::fmt::Debug| Err(Error::shape(self.name(), expected, input));
        match (self, input) {
            (LayerSpec::Conv3x3 { in_channels, out_channels }, &[c, h, w]) if c == *in_channels => {
                Ok(vec![*out_channels, h, w])
            }
            (LayerSpec::Conv3x3 { in_channels, .. }, _) => bad(&format!("[{in_channels}, H, W]")),
            (LayerSpec::Maxpool2x2, &[c, h, w]) if h % 2 == 0 && w % 2 == 0 => Ok(vec![c, h / 2, w / 2]),
            (LayerSpec::Maxpool2x2, _) => bad(&"[C, even H, even W]"),
            (LayerSpec::Upsample2xBilinear, &[c, h, w]) => Ok(vec![c, 2 * h, 2 * w]),
            (LayerSpec::Upsample2xBilinear, _) => bad(&"[C, H, W]"),
            (LayerSpec::Dense { inputs, outputs }, &[n]) if n == *inputs => Ok(vec![*outputs]),
            (LayerSpec::Dense { inputs, .. }, _) => bad(&[*inputs]),
            (LayerSpec::Relu | LayerSpec::Sigmoid, s) => Ok(s.to_vec()),
            (LayerSpec::Flatten, s) => Ok(vec![s.iter().product()]),
            (LayerSpec::Reshape { shape }, s) if shape.iter().product::<usize>() == s.iter().product::<usize>() => {
                Ok(shape.clone())
            }
            (LayerSpec::Reshape { shape }, _) => bad(shape),
        }
    }

    fn fan_in_out(&self) -> (usize, usize) {
        match *self {
            LayerSpec::Conv3x3 { in_channels, out_channels } => (in_channels * 9, out_channels * 9),
            LayerSpec::Dense { inputs, outputs } => (inputs, outputs),
            _ => (0, 0),
        }
    }
}

/// Activations recorded by [`Network::forward`] for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    /// Input to each layer.
    inputs: Vec<Tensor>,
    /// Output of the final layer (needed by a trailing sigmoid).
    output: Option<Tensor>,
    argmax: Vec<Option<Vec<usize>>>,
}

impl ForwardCache {
    pub fn output(&self) -> Option<&Tensor> {
        self.output.as_ref()
    }

    /// Input fed to layer `i`, or the final output when `i == layers`.
    pub fn activation(&self, i: usize) -> Option<&Tensor> {
        self.inputs.get(i).or(if i == self.inputs.len() { self.output.as_ref() } else { None })
    }
}

/// Per-layer parameter gradients, aligned with [`Network::params`].
pub type Grads = Vec<Vec<Tensor>>;

/// A shape-checked sequential chain of layers with owned parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    label: String,
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    params: Vec<Vec<Tensor>>,
}

impl Network {
    /// Builds the chain and initialises weights: He-uniform for layers feeding a ReLU,
    /// Xavier-uniform otherwise. Biases start at zero.
    pub fn new(label: impl Into<String>, input_shape: &[usize], layers: Vec<LayerSpec>, rng: &mut impl Rng) -> Result<Self> {
        let label = label.into();
        let mut shape = input_shape.to_vec();
        for (i, l) in layers.iter().enumerate() {
            shape = l.output_shape(&shape).map_err(|e| match e {
                Error::Shape { expected, got, .. } => Error::Shape {
                    layer: format!("{label}[{i}] {}", l.name()),
                    expected,
                    got,
                },
                e => e,
            })?;
        }
        let mut params = Vec::with_capacity(layers.len());
        for (i, l) in layers.iter().enumerate() {
            let shapes = l.param_shapes();
            if shapes.is_empty() {
                params.push(Vec::new());
                continue;
            }
            let (fan_in, fan_out) = l.fan_in_out();
            let feeds_relu = matches!(layers.get(i + 1), Some(LayerSpec::Relu));
            let limit = if feeds_relu {
                (6.0 / fan_in as f64).sqrt()
            } else {
                (6.0 / (fan_in + fan_out) as f64).sqrt()
            };
            let mut w = Tensor::zeros(&shapes[0]);
            w.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-limit..limit));
            params.push(vec![w, Tensor::zeros(&shapes[1])]);
        }
        Ok(Self {
            label,
            input_shape: input_shape.to_vec(),
            layers,
            params,
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> Vec<usize> {
        self.layers
            .iter()
            .try_fold(self.input_shape.clone(), |s, l| l.output_shape(&s))
            .expect("validated at construction")
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[Vec<Tensor>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.params.iter_mut().flatten()
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().flatten().map(Tensor::numel).sum()
    }

    pub fn zero_grads(&self) -> Grads {
        self.params
            .iter()
            .map(|p| p.iter().map(|t| Tensor::zeros(t.shape())).collect())
            .collect()
    }

    /// Replaces every parameter, in [`Network::param_names`] order.
    pub fn set_params(&mut self, flat: Vec<Tensor>) -> Result<()> {
        let expected: usize = self.params.iter().map(Vec::len).sum();
        if flat.len() != expected {
            return Err(Error::Format(format!("{}: expected {expected} parameter tensors, got {}", self.label, flat.len())));
        }
        for (slot, t) in self.params.iter_mut().flatten().zip(flat) {
            if slot.shape() != t.shape() {
                return Err(Error::shape(format!("{} parameters", self.label), slot.shape(), t.shape()));
            }
            *slot = t;
        }
        Ok(())
    }

    /// Stable names for every parameter tensor, e.g. `encoder.0.weight`.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (i, p) in self.params.iter().enumerate() {
            for (j, _) in p.iter().enumerate() {
                let suffix = if j == 0 { "weight" } else { "bias" };
                names.push(format!("{}.{i}.{suffix}", self.label));
            }
        }
        names
    }

    fn layer_name(&self, i: usize) -> String {
        format!("{}[{i}] {}", self.label, self.layers[i].name())
    }

    /// Output only; no cache is kept.
    pub fn predict(&self, input: &Tensor) -> Result<Tensor> {
        let mut x = input.clone();
        for i in 0..self.layers.len() {
            x = self.apply(i, &x)?.0;
        }
        Ok(x)
    }

    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, ForwardCache)> {
        if input.shape() != self.input_shape.as_slice() {
            return Err(Error::shape(format!("{} input", self.label), &self.input_shape, input.shape()));
        }
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(self.layers.len()),
            output: None,
            argmax: Vec::with_capacity(self.layers.len()),
        };
        let mut x = input.clone();
        for i in 0..self.layers.len() {
            let (y, argmax) = self.apply(i, &x)?;
            cache.inputs.push(std::mem::replace(&mut x, y));
            cache.argmax.push(argmax);
        }
        cache.output = Some(x.clone());
        Ok((x, cache))
    }

    fn apply(&self, i: usize, x: &Tensor) -> Result<(Tensor, Option<Vec<usize>>)> {
        let p = &self.params[i];
        let out = match &self.layers[i] {
            LayerSpec::Conv3x3 { .. } => (ops::conv3x3_forward(x, &p[0], &p[1])?, None),
            LayerSpec::Maxpool2x2 => {
                let (y, idx) = ops::maxpool2x2_forward(x)?;
                (y, Some(idx))
            }
            LayerSpec::Upsample2xBilinear => (ops::upsample2x_bilinear(x)?, None),
            LayerSpec::Dense { .. } => (ops::dense_forward(x, &p[0], &p[1])?, None),
            LayerSpec::Relu => (ops::relu_forward(x), None),
            LayerSpec::Sigmoid => (ops::sigmoid_forward(x), None),
            LayerSpec::Flatten => (x.clone().reshape(&[x.numel()])?, None),
            LayerSpec::Reshape { shape } => (x.clone().reshape(shape)?, None),
        };
        if !out.0.is_finite() {
            return Err(Error::NonFinite { layer: self.layer_name(i) });
        }
        Ok(out)
    }

    /// Backpropagates `grad_out` through the cached forward pass, returning the
    /// gradient with respect to the network input and every parameter.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &Tensor) -> Result<(Tensor, Grads)> {
        if cache.inputs.len() != self.layers.len() || cache.output.is_none() {
            return Err(Error::MissingCache { layer: self.label.clone() });
        }
        let mut grads: Grads = vec![Vec::new(); self.layers.len()];
        let mut g = grad_out.clone();
        for i in (0..self.layers.len()).rev() {
            let x = &cache.inputs[i];
            let p = &self.params[i];
            g = match &self.layers[i] {
                LayerSpec::Conv3x3 { .. } => {
                    let (gx, gw, gb) = ops::conv3x3_backward(x, &p[0], &g)?;
                    grads[i] = vec![gw, gb];
                    gx
                }
                LayerSpec::Maxpool2x2 => {
                    let idx = cache.argmax[i]
                        .as_ref()
                        .ok_or_else(|| Error::MissingCache { layer: self.layer_name(i) })?;
                    ops::maxpool2x2_backward(&g, idx, x.shape())?
                }
                LayerSpec::Upsample2xBilinear => ops::upsample2x_bilinear_backward(&g, x.shape())?,
                LayerSpec::Dense { .. } => {
                    let (gx, gw, gb) = ops::dense_backward(x, &p[0], &g)?;
                    grads[i] = vec![gw, gb];
                    gx
                }
                LayerSpec::Relu => ops::relu_backward(x, &g),
                LayerSpec::Sigmoid => {
                    let y = cache.activation(i + 1).expect("checked above");
                    ops::sigmoid_backward(y, &g)
                }
                LayerSpec::Flatten | LayerSpec::Reshape { .. } => g.reshape(x.shape())?,
            };
        }
        Ok((g, grads))
    }
}

/// `acc += g * scale` for aligned gradient sets.
pub fn accumulate(acc: &mut Grads, g: &Grads, scale: f64) {
    for (a, b) in acc.iter_mut().flatten().zip(g.iter().flatten()) {
        a.add_scaled(b, scale);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    #[test]
    fn rejects_inconsistent_chain() {
        let err = Network::new(
            "enc",
            &[1, 8, 8],
            vec![
                LayerSpec::Conv3x3 { in_channels: 1, out_channels: 4 },
                LayerSpec::Flatten,
                LayerSpec::Dense { inputs: 100, outputs: 3 },
            ],
            &mut rng(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("enc[2] dense"), "{err}");
    }

    #[test]
    fn backward_without_cache_fails() {
        let net = Network::new("n", &[3], vec![LayerSpec::Dense { inputs: 3, outputs: 2 }], &mut rng()).unwrap();
        let err = net.backward(&ForwardCache::default(), &Tensor::zeros(&[2])).unwrap_err();
        assert!(matches!(err, Error::MissingCache { .. }));
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_param_grads() {
        let net = Network::new(
            "n",
            &[1, 4, 4],
            vec![
                LayerSpec::Conv3x3 { in_channels: 1, out_channels: 2 },
                LayerSpec::Relu,
                LayerSpec::Maxpool2x2,
                LayerSpec::Flatten,
                LayerSpec::Dense { inputs: 8, outputs: 3 },
                LayerSpec::Sigmoid,
            ],
            &mut rng(),
        )
        .unwrap();
        let x = Tensor::full(&[1, 4, 4], 0.3);
        let (_, cache) = net.forward(&x).unwrap();
        let (gx, grads) = net.backward(&cache, &Tensor::zeros(&[3])).unwrap();
        assert!(gx.data().iter().all(|&v| v == 0.0));
        assert!(grads.iter().flatten().all(|t| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn forward_is_deterministic() {
        let net = Network::new(
            "n",
            &[2, 4, 4],
            vec![LayerSpec::Conv3x3 { in_channels: 2, out_channels: 3 }, LayerSpec::Upsample2xBilinear],
            &mut rng(),
        )
        .unwrap();
        let x = Tensor::full(&[2, 4, 4], 0.7);
        let a = net.predict(&x).unwrap();
        let b = net.forward(&x).unwrap().0;
        assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn non_finite_activation_names_the_layer() {
        let mut net = Network::new(
            "enc",
            &[2],
            vec![LayerSpec::Dense { inputs: 2, outputs: 2 }, LayerSpec::Relu],
            &mut rng(),
        )
        .unwrap();
        net.params_mut().next().unwrap().data_mut()[0] = f64::NAN;
        let err = net.forward(&Tensor::full(&[2], 1.0)).unwrap_err();
        assert_eq!(err.to_string(), "non-finite value produced by enc[0] dense");
    }
}
