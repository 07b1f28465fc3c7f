//! Two-head multilayer perceptron with exact reverse-mode gradients.
//!
//! The trunk is a stack of affine layers followed by the chosen activation.
//! On top of the trunk sit two affine heads: a class head producing `N`
//! logits (turned into probabilities by softmax) and a variance head producing
//! a single unconstrained log-variance `s`.
//!
//! Every affine layer is stored as one `out × (in + 1)` matrix whose last
//! column is the bias. Checkpoints and gradient sets use the same layout.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::activation::{softmax_into, Activation};
use super::matrix::Matrix;
use crate::error::{Error, Result};

static NEXT_STAMP: AtomicU64 = AtomicU64::new(1);

fn fresh_stamp() -> u64 {
    NEXT_STAMP.fetch_add(1, Ordering::Relaxed)
}

/// Class probabilities `h` and log-variance `s` for one input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub h: Vec<f64>,
    pub s: f64,
}

impl Prediction {
    /// Validates the probability simplex and finiteness of `s`.
    pub fn new(h: Vec<f64>, s: f64) -> Result<Self> {
        if h.is_empty() {
            return Err(Error::shape("prediction needs at least one class"));
        }
        if !s.is_finite() || h.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0) {
            return Err(Error::invalid(
                "prediction entries must be finite probabilities",
            ));
        }
        let total: f64 = h.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("probabilities sum to {total}")));
        }
        Ok(Prediction { h, s })
    }

    pub fn num_classes(&self) -> usize {
        self.h.len()
    }
}

/// Intermediate values of one forward pass, sufficient for an exact backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    stamp: u64,
    /// `activations[0]` is the input, `activations[l]` the output of trunk layer `l`.
    activations: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
    pub prediction: Prediction,
}

impl ForwardCache {
    pub fn trunk_output(&self) -> &[f64] {
        self.activations
            .last()
            .expect("cache always holds the input")
    }
}

/// Per-parameter gradients, shaped exactly like the model they came from.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    pub trunk: Vec<Matrix>,
    pub class_head: Matrix,
    pub var_head: Matrix,
}

impl GradientSet {
    pub fn zeros_like(model: &TwoHeadMlp) -> Self {
        GradientSet {
            trunk: model
                .trunk
                .iter()
                .map(|m| Matrix::zeros(m.rows(), m.cols()))
                .collect(),
            class_head: Matrix::zeros(model.class_head.rows(), model.class_head.cols()),
            var_head: Matrix::zeros(1, model.var_head.cols()),
        }
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Matrix> {
        self.trunk
            .iter()
            .chain(std::iter::once(&self.class_head))
            .chain(std::iter::once(&self.var_head))
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        self.trunk
            .iter_mut()
            .chain(std::iter::once(&mut self.class_head))
            .chain(std::iter::once(&mut self.var_head))
    }

    pub fn clear(&mut self) {
        self.tensors_mut().for_each(|m| m.fill(0.0));
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().all(Matrix::is_finite)
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors()
            .flat_map(|m| m.as_slice().iter())
            .fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.tensors().map(Matrix::shape).collect()
    }
}

/// Multilayer perceptron with a class head and a log-variance head.
#[derive(Clone, Debug)]
pub struct TwoHeadMlp {
    layer_dims: Vec<usize>,
    trunk: Vec<Matrix>,
    class_head: Matrix,
    var_head: Matrix,
    activation: Activation,
    stamp: u64,
}

impl PartialEq for TwoHeadMlp {
    fn eq(&self, other: &Self) -> bool {
        self.layer_dims == other.layer_dims
            && self.activation == other.activation
            && self.trunk == other.trunk
            && self.class_head == other.class_head
            && self.var_head == other.var_head
    }
}

impl TwoHeadMlp {
    /// All-zero model. `layer_dims` runs from the input width to the trunk width.
    pub fn zeros(layer_dims: &[usize], num_classes: usize, activation: Activation) -> Result<Self> {
        if layer_dims.is_empty() || layer_dims.contains(&0) {
            return Err(Error::shape("layer dims must be non-empty and positive"));
        }
        if num_classes == 0 {
            return Err(Error::shape("model needs at least one class"));
        }
        let trunk = layer_dims
            .windows(2)
            .map(|w| Matrix::zeros(w[1], w[0] + 1))
            .collect();
        let width = *layer_dims.last().unwrap();
        Ok(TwoHeadMlp {
            layer_dims: layer_dims.to_vec(),
            trunk,
            class_head: Matrix::zeros(num_classes, width + 1),
            var_head: Matrix::zeros(1, width + 1),
            activation,
            stamp: fresh_stamp(),
        })
    }

    /// Uniform initialization in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init_uniform<R: Rng + ?Sized>(
        layer_dims: &[usize],
        num_classes: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut model = Self::zeros(layer_dims, num_classes, activation)?;
        for m in model.tensors_mut_internal() {
            let fan_in = m.cols() - 1;
            let fan_out = m.rows();
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for r in 0..m.rows() {
                let row = m.row_mut(r);
                for w in &mut row[..fan_in] {
                    *w = rng.random_range(-limit..limit);
                }
            }
        }
        Ok(model)
    }

    /// Assembles a model from explicit layer matrices (bias in the last column).
    pub fn from_layers(
        trunk: Vec<Matrix>,
        class_head: Matrix,
        var_head: Matrix,
        activation: Activation,
    ) -> Result<Self> {
        let input = match trunk.first() {
            Some(first) => first.cols().checked_sub(1),
            None => class_head.cols().checked_sub(1),
        }
        .filter(|&d| d > 0)
        .ok_or_else(|| Error::shape("layers need at least one input column plus bias"))?;
        let mut layer_dims = vec![input];
        for (l, m) in trunk.iter().enumerate() {
            if m.cols() != layer_dims[l] + 1 || m.rows() == 0 {
                return Err(Error::shape(format!(
                    "trunk layer {l} is {}x{}, expected {} columns",
                    m.rows(),
                    m.cols(),
                    layer_dims[l] + 1
                )));
            }
            layer_dims.push(m.rows());
        }
        let width = *layer_dims.last().unwrap();
        if class_head.cols() != width + 1 || class_head.rows() == 0 {
            return Err(Error::shape("class head does not match trunk width"));
        }
        if var_head.rows() != 1 || var_head.cols() != width + 1 {
            return Err(Error::shape("variance head must be 1 x (width + 1)"));
        }
        let model = TwoHeadMlp {
            layer_dims,
            trunk,
            class_head,
            var_head,
            activation,
            stamp: fresh_stamp(),
        };
        if !model.tensors().all(Matrix::is_finite) {
            return Err(Error::invalid("model weights must be finite"));
        }
        Ok(model)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn num_classes(&self) -> usize {
        self.class_head.rows()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn trunk(&self) -> &[Matrix] {
        &self.trunk
    }

    pub fn class_head(&self) -> &Matrix {
        &self.class_head
    }

    pub fn var_head(&self) -> &Matrix {
        &self.var_head
    }

    pub fn num_params(&self) -> usize {
        self.tensors().map(|m| m.as_slice().len()).sum()
    }

    /// Trunk layers, then the class head, then the variance head.
    pub fn tensors(&self) -> impl Iterator<Item = &Matrix> {
        self.trunk
            .iter()
            .chain(std::iter::once(&self.class_head))
            .chain(std::iter::once(&self.var_head))
    }

    /// Mutable access to every parameter tensor. Invalidates outstanding caches.
    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        self.stamp = fresh_stamp();
        self.tensors_mut_internal()
    }

    fn tensors_mut_internal(&mut self) -> impl Iterator<Item = &mut Matrix> {
        self.trunk
            .iter_mut()
            .chain(std::iter::once(&mut self.class_head))
            .chain(std::iter::once(&mut self.var_head))
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::shape(format!(
                "input has {} features, model expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Forward pass keeping every intermediate needed by [`TwoHeadMlp::backward`].
    pub fn forward(&self, x: &[f64]) -> Result<ForwardCache> {
        self.check_input(x)?;
        let mut activations = Vec::with_capacity(self.trunk.len() + 1);
        activations.push(x.to_vec());
        for layer in &self.trunk {
            let mut z = Vec::with_capacity(layer.rows());
            layer.affine_into(activations.last().unwrap(), &mut z);
            z.iter_mut().for_each(|v| *v = self.activation.apply(*v));
            activations.push(z);
        }
        let trunk_out = activations.last().unwrap();
        let mut logits = Vec::with_capacity(self.num_classes());
        self.class_head.affine_into(trunk_out, &mut logits);
        let mut s = Vec::with_capacity(1);
        self.var_head.affine_into(trunk_out, &mut s);
        let mut h = Vec::with_capacity(logits.len());
        softmax_into(&logits, &mut h);
        Ok(ForwardCache {
            stamp: self.stamp,
            activations,
            logits,
            prediction: Prediction { h, s: s[0] },
        })
    }

    /// Forward pass without keeping the cache around.
    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        self.forward(x).map(|c| c.prediction)
    }

    fn check_cache(&self, cache: &ForwardCache) -> Result<()> {
        if cache.stamp != self.stamp {
            return Err(Error::InvalidState(
                "forward cache was produced by a different or since-modified model".into(),
            ));
        }
        Ok(())
    }

    /// Reverse pass from cotangents on the probabilities `h` and on `s`.
    pub fn backward(&self, cache: &ForwardCache, d_h: &[f64], d_s: f64) -> Result<GradientSet> {
        let mut grads = GradientSet::zeros_like(self);
        self.backward_into(cache, d_h, d_s, &mut grads)?;
        Ok(grads)
    }

    /// Like [`TwoHeadMlp::backward`] but accumulates into `grads`.
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        d_h: &[f64],
        d_s: f64,
        grads: &mut GradientSet,
    ) -> Result<()> {
        if d_h.len() != self.num_classes() {
            return Err(Error::shape("d_h length differs from class count"));
        }
        let h = &cache.prediction.h;
        let dot: f64 = d_h.iter().zip(h).map(|(g, p)| g * p).sum();
        let d_logits: Vec<f64> = d_h.iter().zip(h).map(|(g, p)| p * (g - dot)).collect();
        self.backward_logits_into(cache, &d_logits, d_s, grads)
    }

    /// Reverse pass from cotangents on the logits (used by fused softmax losses).
    pub fn backward_logits(
        &self,
        cache: &ForwardCache,
        d_logits: &[f64],
        d_s: f64,
    ) -> Result<GradientSet> {
        let mut grads = GradientSet::zeros_like(self);
        self.backward_logits_into(cache, d_logits, d_s, &mut grads)?;
        Ok(grads)
    }

    pub fn backward_logits_into(
        &self,
        cache: &ForwardCache,
        d_logits: &[f64],
        d_s: f64,
        grads: &mut GradientSet,
    ) -> Result<()> {
        self.check_cache(cache)?;
        if d_logits.len() != self.num_classes() {
            return Err(Error::shape("d_logits length differs from class count"));
        }
        if grads.shapes() != self.tensors().map(Matrix::shape).collect::<Vec<_>>() {
            return Err(Error::shape("gradient set does not mirror the model"));
        }
        let trunk_out = cache.trunk_output();
        let width = trunk_out.len();

        let mut d_a = vec![0.0; width];
        for (o, &g) in d_logits.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let w_row = self.class_head.row(o);
            let g_row = grads.class_head.row_mut(o);
            for i in 0..width {
                g_row[i] += g * trunk_out[i];
                d_a[i] += g * w_row[i];
            }
            g_row[width] += g;
        }
        if d_s != 0.0 {
            let w_row = self.var_head.row(0);
            let g_row = grads.var_head.row_mut(0);
            for i in 0..width {
                g_row[i] += d_s * trunk_out[i];
                d_a[i] += d_s * w_row[i];
            }
            g_row[width] += d_s;
        }

        for l in (0..self.trunk.len()).rev() {
            let out = &cache.activations[l + 1];
            let input = &cache.activations[l];
            let d_z: Vec<f64> = d_a
                .iter()
                .zip(out)
                .map(|(g, a)| g * self.activation.derivative_from_output(*a))
                .collect();
            let layer = &self.trunk[l];
            let grad = &mut grads.trunk[l];
            let n_in = input.len();
            let mut d_prev = vec![0.0; n_in];
            for (o, &g) in d_z.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let w_row = layer.row(o);
                let g_row = grad.row_mut(o);
                for i in 0..n_in {
                    g_row[i] += g * input[i];
                    d_prev[i] += g * w_row[i];
                }
                g_row[n_in] += g;
            }
            d_a = d_prev;
        }
        Ok(())
    }
}

/// Forward pass, as a free function.
pub fn model_forward(model: &TwoHeadMlp, x: &[f64]) -> Result<ForwardCache> {
    model.forward(x)
}

/// Backward pass, as a free function.
pub fn model_backward(
    model: &TwoHeadMlp,
    cache: &ForwardCache,
    d_h: &[f64],
    d_s: f64,
) -> Result<GradientSet> {
    model.backward(cache, d_h, d_s)
}
