//! Dense feature extractor `f(x; W)` shared by every classifier head.
//!
//! Layers are affine maps `a·W + b` (weights stored `d_in × d_out`) with ReLU
//! between them and no activation after the last one. Backprop is written by
//! hand against a [`ForwardCache`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::optim::ParamSlot;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
}

/// Weight initialization scheme for [`init_params`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightInit {
    /// Weights and biases `U(-1/sqrt(d_in), 1/sqrt(d_in))`.
    #[default]
    Uniform,
    /// Weights `N(0, 2/d_in)`, zero biases.
    He,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative, with the subgradient at exactly zero pinned to 0.
    #[inline]
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// `d_in × d_out`
    pub weights: Matrix,
    pub biases: Vec<f64>,
}

impl DenseLayer {
    pub fn d_in(&self) -> usize {
        self.weights.rows()
    }

    pub fn d_out(&self) -> usize {
        self.weights.cols()
    }

    fn zeros_like(&self) -> DenseLayer {
        DenseLayer {
            weights: Matrix::zeros(self.d_in(), self.d_out()),
            biases: vec![0.0; self.biases.len()],
        }
    }
}

/// Parameters of the multilayer perceptron.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
    pub activation: Activation,
    /// When false the bias vectors are held at zero and never trained.
    #[serde(default = "default_true")]
    pub biased: bool,
}

fn default_true() -> bool {
    true
}

/// Gradients with the same layout as [`Mlp::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<DenseLayer>,
}

impl MlpGrads {
    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.data().iter().chain(&l.biases))
            .fold(0.0f64, |m, g| m.max(g.abs()))
    }
}

/// Everything backprop needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `inputs[l]` is the input of layer `l`; `inputs[0]` is the batch.
    pub inputs: Vec<Matrix>,
    /// Pre-activation output of every layer.
    pub pre: Vec<Matrix>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.inputs.first().map_or(0, Matrix::rows)
    }
}

/// He-initialized network: weights `N(0, 2/d_in)`, zero biases.
pub fn init_params(layer_dims: &[usize], init: WeightInit, seed: u64) -> Result<Mlp> {
    if layer_dims.len() < 2 {
        return Err(Error::validation(format!(
            "need at least input and output dims, got {layer_dims:?}"
        )));
    }
    if layer_dims.contains(&0) {
        return Err(Error::validation(format!(
            "layer dims must be positive, got {layer_dims:?}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = layer_dims
        .windows(2)
        .map(|w| {
            let (d_in, d_out) = (w[0], w[1]);
            let (weights, biases) = match init {
                WeightInit::He => {
                    let normal = Normal::new(0.0, (2.0 / d_in as f64).sqrt()).expect("valid std");
                    let w = (0..d_in * d_out).map(|_| normal.sample(&mut rng)).collect();
                    (w, vec![0.0; d_out])
                }
                WeightInit::Uniform => {
                    let bound = 1.0 / (d_in as f64).sqrt();
                    let uniform = Uniform::new_inclusive(-bound, bound).expect("valid bounds");
                    let w = (0..d_in * d_out).map(|_| uniform.sample(&mut rng)).collect();
                    let b = (0..d_out).map(|_| uniform.sample(&mut rng)).collect();
                    (w, b)
                }
            };
            DenseLayer {
                weights: Matrix::from_vec(d_in, d_out, weights).expect("sized"),
                biases,
            }
        })
        .collect();
    Ok(Mlp {
        layers,
        activation: Activation::Relu,
        biased: true,
    })
}

impl Mlp {
    pub fn input_dim(&self) -> usize {
        self.layers[0].d_in()
    }

    pub fn latent_dim(&self) -> usize {
        self.layers.last().map_or(0, DenseLayer::d_out)
    }

    /// `[d_in, d_1, ..., latent_dim]`
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(DenseLayer::d_out));
        dims
    }

    /// Removes bias terms (zeroed and frozen).
    pub fn without_biases(mut self) -> Self {
        for layer in &mut self.layers {
            layer.biases.iter_mut().for_each(|b| *b = 0.0);
        }
        self.biased = false;
        self
    }

    /// Checks the layer chain, bias lengths and finiteness.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::validation("network has no layers"));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.d_in() == 0 || layer.d_out() == 0 {
                return Err(Error::validation(format!("layer {l} has an empty dimension")));
            }
            if layer.biases.len() != layer.d_out() {
                return Err(Error::validation(format!(
                    "layer {l}: {} biases for {} outputs",
                    layer.biases.len(),
                    layer.d_out()
                )));
            }
            if l > 0 && self.layers[l - 1].d_out() != layer.d_in() {
                return Err(Error::validation(format!(
                    "layer {l} expects {} inputs but layer {} emits {}",
                    layer.d_in(),
                    l - 1,
                    self.layers[l - 1].d_out()
                )));
            }
            if !layer.weights.all_finite() || layer.biases.iter().any(|b| !b.is_finite()) {
                return Err(Error::numeric(format!("layer {l} has non-finite parameters")));
            }
        }
        Ok(())
    }

    fn check_input(&self, batch: &Matrix) -> Result<()> {
        if batch.cols() != self.input_dim() {
            return Err(Error::validation(format!(
                "batch has {} columns, network expects {}",
                batch.cols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    fn affine(&self, layer: &DenseLayer, input: &Matrix) -> Result<Matrix> {
        let mut z = input.matmul(&layer.weights)?;
        if self.biased {
            z.add_row_vector(&layer.biases);
        }
        Ok(z)
    }

    /// Forward pass keeping the intermediates needed by [`Mlp::backward`].
    pub fn forward(&self, batch: &Matrix) -> Result<(Matrix, ForwardCache)> {
        self.check_input(batch)?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut current = batch.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = self.affine(layer, &current)?;
            let next = if l == last {
                z.clone()
            } else {
                let mut a = z.clone();
                a.data_mut().iter_mut().for_each(|x| *x = self.activation.apply(*x));
                a
            };
            inputs.push(current);
            pre.push(z);
            current = next;
        }
        Ok((current, ForwardCache { inputs, pre }))
    }

    /// Forward pass without a cache.
    pub fn predict(&self, batch: &Matrix) -> Result<Matrix> {
        self.check_input(batch)?;
        let last = self.layers.len() - 1;
        let mut current = batch.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = self.affine(layer, &current)?;
            if l != last {
                z.data_mut().iter_mut().for_each(|x| *x = self.activation.apply(*x));
            }
            current = z;
        }
        Ok(current)
    }

    /// Gradient of `Σ_i ⟨d_latent_i, latent_i⟩` with respect to every
    /// weight and bias.
    pub fn backward(&self, cache: &ForwardCache, d_latent: &Matrix) -> Result<MlpGrads> {
        if cache.pre.len() != self.layers.len() || cache.inputs.len() != self.layers.len() {
            return Err(Error::validation(format!(
                "cache holds {} layers, network has {}",
                cache.pre.len(),
                self.layers.len()
            )));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if cache.inputs[l].cols() != layer.d_in() || cache.pre[l].cols() != layer.d_out() {
                return Err(Error::validation(format!(
                    "cache layer {l} does not match the network shapes"
                )));
            }
        }
        let n = cache.batch_size();
        if d_latent.shape() != (n, self.latent_dim()) {
            return Err(Error::validation(format!(
                "d_latent is {}x{}, expected {n}x{}",
                d_latent.rows(),
                d_latent.cols(),
                self.latent_dim()
            )));
        }

        let mut grads: Vec<DenseLayer> = self.layers.iter().map(DenseLayer::zeros_like).collect();
        let mut delta = d_latent.clone();
        for l in (0..self.layers.len()).rev() {
            grads[l].weights = cache.inputs[l].t_matmul(&delta)?;
            if self.biased {
                grads[l].biases = delta.sum_rows();
            }
            if l > 0 {
                let mut upstream = delta.matmul_t(&self.layers[l].weights)?;
                for (g, &z) in upstream.data_mut().iter_mut().zip(cache.pre[l - 1].data()) {
                    *g *= self.activation.derivative(z);
                }
                delta = upstream;
            }
        }
        Ok(MlpGrads { layers: grads })
    }

    /// Pairs each trainable tensor with its gradient for the optimizer.
    pub fn param_slots<'a>(&'a mut self, grads: &'a MlpGrads) -> Vec<ParamSlot<'a>> {
        let biased = self.biased;
        let mut slots = Vec::with_capacity(2 * self.layers.len());
        for (l, (layer, grad)) in self.layers.iter_mut().zip(&grads.layers).enumerate() {
            slots.push(ParamSlot::new(
                format!("mlp.layers[{l}].weights"),
                layer.weights.data_mut(),
                grad.weights.data(),
            ));
            if biased {
                slots.push(ParamSlot::new(
                    format!("mlp.layers[{l}].biases"),
                    &mut layer.biases,
                    &grad.biases,
                ));
            }
        }
        slots
    }
}
