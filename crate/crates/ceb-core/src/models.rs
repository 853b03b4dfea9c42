//! Encoder architectures producing the latent mean f(x).
//!
//! A multilayer perceptron with relu hidden layers stands in for the large
//! backbones the objective is usually paired with. The last layer is linear
//! with `latent_dim` outputs and no activation: it parameterizes the mean of
//! the unit-variance Gaussian representation.

use crate::error::{Error, Result};
use crate::seeds;
use crate::tensor::Tensor;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Anything that maps a batch of inputs to class logits in evaluation mode.
///
/// Attacks and robustness grids run against this interface. `logits` must be
/// deterministic, and must stay differentiable with respect to `x` when `x`
/// is a tracked tensor, so gradient attacks can reach the input.
pub trait LogitModel: Send + Sync {
    fn num_classes(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn logits(&self, x: &Tensor) -> Result<Tensor>;

    fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let logits = self.logits(x)?;
        let (m, k) = (logits.shape()[0], logits.shape()[1]);
        let d = logits.data();
        Ok((0..m)
            .map(|i| {
                let row = &d[i * k..(i + 1) * k];
                let mut best = 0;
                for j in 1..k {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect())
    }
}

/// Architecture description, expressible in the experiment config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    /// Input shape; images keep `[h, w, c]`, flat features use `[dim]`.
    /// The encoder consumes the flattened product either way.
    pub input_shape: Vec<usize>,
    /// Hidden layer widths; empty means a pure linear encoder.
    #[serde(default)]
    pub hidden: Vec<usize>,
    /// Latent dimension d of the representation.
    pub latent_dim: usize,
}

impl EncoderSpec {
    pub fn input_dim(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_shape.is_empty() || self.input_dim() == 0 {
            return Err(Error::InvalidSpec(format!(
                "input shape {:?} has zero size",
                self.input_shape
            )));
        }
        if self.latent_dim == 0 {
            return Err(Error::InvalidSpec("latent_dim must be positive".into()));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::InvalidSpec(format!(
                "hidden sizes must be positive, got {:?}",
                self.hidden
            )));
        }
        Ok(())
    }
}

#[derive(Clone)]
pub struct DenseLayer {
    pub weight: Tensor, // [in, out]
    pub bias: Tensor,   // [out]
}

/// MLP encoder: relu hidden layers, linear `latent_dim` head.
#[derive(Clone)]
pub struct Encoder {
    spec: EncoderSpec,
    layers: Vec<DenseLayer>,
}

impl Encoder {
    /// Deterministic build given a seed. Hidden layers use fan-in-scaled
    /// normal init (stddev 1/sqrt(fan_in)); biases start at zero.
    pub fn build(spec: &EncoderSpec, seed: u64) -> Result<Encoder> {
        spec.validate()?;
        let mut rng = seeds::rng(seed, "encoder-init");
        let mut dims = vec![spec.input_dim()];
        dims.extend_from_slice(&spec.hidden);
        dims.push(spec.latent_dim);

        let mut layers = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let std = 1.0 / (fan_in as f64).sqrt();
            let weight = Tensor::param(
                &[fan_in, fan_out],
                (0..fan_in * fan_out)
                    .map(|_| std * rng.sample::<f64, _>(StandardNormal))
                    .collect(),
            )?;
            let bias = Tensor::param(&[fan_out], vec![0.0; fan_out])?;
            layers.push(DenseLayer { weight, bias });
        }
        Ok(Encoder {
            spec: spec.clone(),
            layers,
        })
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    pub fn latent_dim(&self) -> usize {
        self.spec.latent_dim
    }

    /// `[batch, input_dim] -> [batch, latent_dim]` mean encoding f(x).
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.shape().len() != 2 || x.shape()[1] != self.spec.input_dim() {
            return Err(Error::ShapeMismatch {
                op: "encoder_forward",
                lhs: x.shape().to_vec(),
                rhs: vec![0, self.spec.input_dim()],
            });
        }
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = h.matmul(&layer.weight)?.add_row(&layer.bias)?;
            if i != last {
                h = h.relu()?;
            }
        }
        Ok(h)
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.clone(), l.bias.clone()])
            .collect()
    }

    /// Replaces parameter tensors in declaration order; used by the
    /// optimizer and the checkpoint loader.
    pub fn set_parameters(&mut self, params: &[Tensor]) -> Result<()> {
        if params.len() != self.layers.len() * 2 {
            return Err(Error::InvalidSpec(format!(
                "expected {} parameter tensors, got {}",
                self.layers.len() * 2,
                params.len()
            )));
        }
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.weight = params[2 * i].clone();
            layer.bias = params[2 * i + 1].clone();
        }
        Ok(())
    }

    /// Named parameter list in declaration order, for checkpoints.
    pub fn named_parameters(&self) -> Vec<(String, Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    (format!("encoder.{i}.weight"), l.weight.clone()),
                    (format!("encoder.{i}.bias"), l.bias.clone()),
                ]
            })
            .collect()
    }
}
