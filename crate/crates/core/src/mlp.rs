//! Fully connected ReLU network with a sigmoid output unit, differentiated by
//! hand.
//!
//! Parameters live in one flat buffer, layer by layer: each layer stores its
//! `out x in` weight matrix row-major followed by its `out` biases. Gradients
//! and optimizer state use the same layout, and the JSON dump is that buffer
//! verbatim.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::density::sigmoid;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Hidden layer widths of the classifier.
pub const HIDDEN_LAYERS: [usize; 2] = [64, 32];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    layer_dims: Vec<usize>,
    parameters: Vec<f64>,
}

/// Gradient buffer congruent with the parameters of the model it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    layer_dims: Vec<usize>,
    values: Vec<f64>,
}

fn parameter_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

/// (weights offset, bias offset, fan_in, fan_out) per layer.
fn layer_offsets(dims: &[usize]) -> Vec<(usize, usize, usize, usize)> {
    let mut offset = 0;
    dims.windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weights = offset;
            let bias = weights + fan_in * fan_out;
            offset = bias + fan_out;
            (weights, bias, fan_in, fan_out)
        })
        .collect()
}

struct ForwardCache {
    /// Pre-activations per layer, each `n x out`.
    pre: Vec<Matrix>,
    /// Layer inputs: the batch, then each hidden activation.
    inputs: Vec<Matrix>,
}

impl MlpModel {
    /// Classifier for `feature_dim` inputs with the standard hidden layers.
    pub fn init(feature_dim: usize, seed: u64) -> Result<Self> {
        let mut dims = vec![feature_dim];
        dims.extend(HIDDEN_LAYERS);
        dims.push(1);
        Self::with_layers(&dims, seed)
    }

    /// Glorot-uniform weights, zero biases.
    pub fn with_layers(layer_dims: &[usize], seed: u64) -> Result<Self> {
        let mut model = Self::zeros(layer_dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (w, _, fan_in, fan_out) in layer_offsets(layer_dims) {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut model.parameters[w..w + fan_in * fan_out] {
                *p = rng.gen_range(-bound..=bound);
            }
        }
        Ok(model)
    }

    pub fn zeros(layer_dims: &[usize]) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "invalid layer dims {layer_dims:?}"
            )));
        }
        if *layer_dims.last().unwrap() != 1 {
            return Err(Error::InvalidArgument("output layer must have width 1".into()));
        }
        Ok(MlpModel {
            layer_dims: layer_dims.to_vec(),
            parameters: vec![0.0; parameter_count(layer_dims)],
        })
    }

    pub fn from_parameters(layer_dims: &[usize], parameters: Vec<f64>) -> Result<Self> {
        let mut model = Self::zeros(layer_dims)?;
        if parameters.len() != model.parameters.len() {
            return Err(Error::Dimension(format!(
                "{} parameters for layer dims {layer_dims:?} (expected {})",
                parameters.len(),
                model.parameters.len()
            )));
        }
        if parameters.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("model parameters".into()));
        }
        model.parameters = parameters;
        Ok(model)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn feature_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn parameters(&self) -> &[f64] {
        &self.parameters
    }

    pub fn parameters_mut(&mut self) -> &mut [f64] {
        &mut self.parameters
    }

    /// Weight matrix (row-major `out x in`) and bias vector of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let (w, b, fan_in, fan_out) = layer_offsets(&self.layer_dims)[l];
        (
            &self.parameters[w..w + fan_in * fan_out],
            &self.parameters[b..b + fan_out],
        )
    }

    pub fn num_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    fn check_batch(&self, batch: &Matrix) -> Result<()> {
        if batch.cols() != self.feature_dim() {
            return Err(Error::Dimension(format!(
                "model expects {} features, batch has {}",
                self.feature_dim(),
                batch.cols()
            )));
        }
        Ok(())
    }

    fn forward_cache(&self, batch: &Matrix) -> ForwardCache {
        let mut pre = Vec::with_capacity(self.num_layers());
        let mut inputs = Vec::with_capacity(self.num_layers());
        inputs.push(batch.clone());
        for (l, (w_off, b_off, fan_in, fan_out)) in
            layer_offsets(&self.layer_dims).into_iter().enumerate()
        {
            let weights = &self.parameters[w_off..w_off + fan_in * fan_out];
            let bias = &self.parameters[b_off..b_off + fan_out];
            let input = &inputs[l];
            let mut z = Matrix::zeros(input.rows(), fan_out);
            for r in 0..input.rows() {
                let x = input.row(r);
                let out = z.row_mut(r);
                for (o, zo) in out.iter_mut().enumerate() {
                    let w = &weights[o * fan_in..(o + 1) * fan_in];
                    *zo = bias[o] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            if l + 1 < self.num_layers() {
                let mut a = z.clone();
                for r in 0..a.rows() {
                    a.row_mut(r).iter_mut().for_each(|v| *v = v.max(0.0));
                }
                inputs.push(a);
            }
            pre.push(z);
        }
        ForwardCache { pre, inputs }
    }

    /// Pre-sigmoid outputs, one per row.
    pub fn forward_logits(&self, batch: &Matrix) -> Result<Vec<f64>> {
        self.check_batch(batch)?;
        let cache = self.forward_cache(batch);
        Ok(cache.pre.last().unwrap().as_slice().to_vec())
    }

    /// Sigmoid outputs `h(x)`, one per row.
    pub fn forward(&self, batch: &Matrix) -> Result<Vec<f64>> {
        Ok(self
            .forward_logits(batch)?
            .into_iter()
            .map(sigmoid)
            .collect())
    }

    /// Runs the forward pass and returns the probabilities together with the
    /// gradient of `sum_i output_grads[i] * h_i` once `output_grads` is known.
    pub fn forward_backward(
        &self,
        batch: &Matrix,
        output_grads: impl FnOnce(&[f64]) -> Result<Vec<f64>>,
    ) -> Result<(Vec<f64>, GradientSet)> {
        self.check_batch(batch)?;
        let cache = self.forward_cache(batch);
        let probs: Vec<f64> = cache
            .pre
            .last()
            .unwrap()
            .as_slice()
            .iter()
            .map(|&z| sigmoid(z))
            .collect();
        let grads = output_grads(&probs)?;
        let set = self.backward_from_cache(&cache, &probs, &grads)?;
        Ok((probs, set))
    }

    /// Exact gradient of `sum_i output_grads[i] * h_i` with respect to every
    /// parameter. The ReLU derivative at 0 is taken as 0.
    pub fn backward(&self, batch: &Matrix, output_grads: &[f64]) -> Result<GradientSet> {
        self.check_batch(batch)?;
        let cache = self.forward_cache(batch);
        let probs: Vec<f64> = cache
            .pre
            .last()
            .unwrap()
            .as_slice()
            .iter()
            .map(|&z| sigmoid(z))
            .collect();
        self.backward_from_cache(&cache, &probs, output_grads)
    }

    fn backward_from_cache(
        &self,
        cache: &ForwardCache,
        probs: &[f64],
        output_grads: &[f64],
    ) -> Result<GradientSet> {
        let n = probs.len();
        if output_grads.len() != n {
            return Err(Error::Dimension(format!(
                "{} output gradients for {n} rows",
                output_grads.len()
            )));
        }
        let mut grads = GradientSet::zeros_like(self);
        let offsets = layer_offsets(&self.layer_dims);

        let delta_out: Vec<f64> = output_grads
            .iter()
            .zip(probs)
            .map(|(g, h)| g * h * (1.0 - h))
            .collect();
        let mut delta = Matrix::column_vector(&delta_out);

        for l in (0..self.num_layers()).rev() {
            let (w_off, _, fan_in, fan_out) = offsets[l];
            let input = &cache.inputs[l];
            {
                // biases directly follow the weights
                let (gw, rest) = grads.values[w_off..].split_at_mut(fan_in * fan_out);
                let gb = &mut rest[..fan_out];
                for r in 0..n {
                    let x = input.row(r);
                    for (o, &d) in delta.row(r).iter().enumerate() {
                        if d == 0.0 {
                            continue;
                        }
                        gb[o] += d;
                        for (g, xi) in gw[o * fan_in..(o + 1) * fan_in].iter_mut().zip(x) {
                            *g += d * xi;
                        }
                    }
                }
            }
            if l > 0 {
                let weights = &self.parameters[w_off..w_off + fan_in * fan_out];
                let below = &cache.pre[l - 1];
                let mut next = Matrix::zeros(n, fan_in);
                for r in 0..n {
                    let out = next.row_mut(r);
                    for (o, &d) in delta.row(r).iter().enumerate() {
                        if d == 0.0 {
                            continue;
                        }
                        for (v, w) in out.iter_mut().zip(&weights[o * fan_in..(o + 1) * fan_in]) {
                            *v += d * w;
                        }
                    }
                    for (v, z) in out.iter_mut().zip(below.row(r)) {
                        if *z <= 0.0 {
                            *v = 0.0;
                        }
                    }
                }
                delta = next;
            }
        }
        Ok(grads)
    }

    pub fn is_finite(&self) -> bool {
        self.parameters.iter().all(|p| p.is_finite())
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let raw: MlpModel = serde_json::from_str(&text)?;
        Self::from_parameters(&raw.layer_dims, raw.parameters)
    }
}

impl GradientSet {
    pub fn zeros_like(model: &MlpModel) -> Self {
        GradientSet {
            layer_dims: model.layer_dims.clone(),
            values: vec![0.0; model.parameters.len()],
        }
    }

    pub fn from_values(model: &MlpModel, values: Vec<f64>) -> Result<Self> {
        if values.len() != model.parameters.len() {
            return Err(Error::Dimension("gradient length mismatch".into()));
        }
        Ok(GradientSet {
            layer_dims: model.layer_dims.clone(),
            values,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_congruent(&self, model: &MlpModel) -> bool {
        self.layer_dims == model.layer_dims
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &GradientSet, scale: f64) -> Result<()> {
        if self.layer_dims != other.layer_dims {
            return Err(Error::Dimension("gradient shapes differ".into()));
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// A scalar objective of the model parameters with an analytic gradient.
pub trait ModelObjective {
    fn value(&self, model: &MlpModel) -> Result<f64>;
    fn gradient(&self, model: &MlpModel) -> Result<GradientSet>;
}

/// Largest relative discrepancy between the analytic gradient and central
/// differences over every parameter:
/// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn finite_difference_audit(
    model: &MlpModel,
    objective: &dyn ModelObjective,
    step: f64,
) -> Result<f64> {
    if !(step > 0.0) {
        return Err(Error::InvalidArgument("step must be positive".into()));
    }
    let analytic = objective.gradient(model)?;
    if !analytic.is_congruent(model) {
        return Err(Error::Dimension("objective gradient shape".into()));
    }
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for i in 0..model.parameters.len() {
        let original = model.parameters[i];
        probe.parameters[i] = original + step;
        let up = objective.value(&probe)?;
        probe.parameters[i] = original - step;
        let down = objective.value(&probe)?;
        probe.parameters[i] = original;
        let numeric = (up - down) / (2.0 * step);
        let a = analytic.values[i];
        let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}
