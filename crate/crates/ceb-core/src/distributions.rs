//! The three distribution families the objective composes: unit-variance
//! diagonal Gaussians for the forward encoder e(z|x) and the backward
//! (class-conditional) encoder b(z|y), and a categorical for the classifier
//! c(y|z).
//!
//! Unit variance is hard-coded, not a default. The closed-form loss algebra
//! and the class-mean reading of the backward means both rely on the
//! covariance being exactly the identity, so no variance parameter exists
//! anywhere in these types.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::Rng;
use rand_distr::StandardNormal;

const LN_2PI: f64 = 1.8378770664093453; // ln(2*pi)

/// Diagonal Gaussian with identity covariance, parameterized only by its
/// per-row mean `[batch, d]`.
#[derive(Clone)]
pub struct GaussianDiagUnit {
    mean: Tensor,
}

impl GaussianDiagUnit {
    pub fn new(mean: Tensor) -> Result<GaussianDiagUnit> {
        if mean.shape().len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "gaussian_mean",
                lhs: mean.shape().to_vec(),
                rhs: vec![],
            });
        }
        Ok(GaussianDiagUnit { mean })
    }

    pub fn mean(&self) -> &Tensor {
        &self.mean
    }

    pub fn dim(&self) -> usize {
        self.mean.shape()[1]
    }

    /// Per-row log density: `-(d/2)·ln(2π) - ½‖z - mean‖²`, shape `[batch]`.
    /// Differentiable in both the mean and `z`.
    pub fn log_prob(&self, z: &Tensor) -> Result<Tensor> {
        if z.shape() != self.mean.shape() {
            return Err(Error::ShapeMismatch {
                op: "gaussian_log_prob",
                lhs: self.mean.shape().to_vec(),
                rhs: z.shape().to_vec(),
            });
        }
        let d = self.dim() as f64;
        let diff = z.sub(&self.mean)?;
        let sq = diff.mul(&diff)?.row_sum()?;
        sq.scale(-0.5)?.add_scalar(-0.5 * d * LN_2PI)
    }

    /// Reparameterized sample `z = mean + ε`, ε ~ N(0, I). Returns the noise
    /// alongside the sample so the rate term can also be evaluated in its
    /// closed quadratic form; `z - mean == ε` holds exactly. Gradients flow
    /// through the mean, never through ε.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> (Tensor, Tensor) {
        let eps_data: Vec<f64> = (0..self.mean.numel())
            .map(|_| rng.sample(StandardNormal))
            .collect();
        let eps = Tensor::from_vec(self.mean.shape(), eps_data).expect("matching shape");
        let z = self.mean.add(&eps).expect("matching shape");
        (z, eps)
    }

    /// Sample with caller-supplied noise; used to force ε = 0 or to replay a
    /// draw (`sample` is this with fresh ε).
    pub fn sample_with_noise(&self, eps: &Tensor) -> Result<Tensor> {
        self.mean.add(eps)
    }
}

/// Categorical over `K` classes given as unnormalized logits `[batch, K]`.
/// Normalization is implicit: log p(y) = logits\[y\] - logsumexp(logits).
#[derive(Clone)]
pub struct Categorical {
    logits: Tensor,
}

impl Categorical {
    pub fn new(logits: Tensor) -> Result<Categorical> {
        if logits.shape().len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "categorical_logits",
                lhs: logits.shape().to_vec(),
                rhs: vec![],
            });
        }
        Ok(Categorical { logits })
    }

    pub fn logits(&self) -> &Tensor {
        &self.logits
    }

    pub fn num_classes(&self) -> usize {
        self.logits.shape()[1]
    }

    /// Per-row log probability of the given labels, shape `[batch]`.
    pub fn log_prob(&self, labels: &[usize]) -> Result<Tensor> {
        let k = self.num_classes();
        for &y in labels {
            if y >= k {
                return Err(Error::LabelOutOfRange {
                    label: y,
                    num_classes: k,
                });
            }
        }
        let picked = self.logits.take_per_row(labels)?;
        let lse = self.logits.log_sum_exp()?;
        picked.sub(&lse)
    }

    /// Per-row argmax prediction.
    pub fn predict(&self) -> Vec<usize> {
        let (m, k) = (self.logits.shape()[0], self.logits.shape()[1]);
        let d = self.logits.data();
        (0..m)
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
            .collect()
    }
}
