//! Adam with stepwise learning-rate decay.

use crate::error::Result;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub epsilon: f64,
    /// Steps at which the learning rate is multiplied by `decay_factor`.
    #[serde(default)]
    pub lr_decay_steps: Vec<u64>,
    #[serde(default = "default_decay")]
    pub decay_factor: f64,
}

fn default_lr() -> f64 {
    1e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_decay() -> f64 {
    0.3
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_eps(),
            lr_decay_steps: Vec::new(),
            decay_factor: default_decay(),
        }
    }
}

/// Adam state over a fixed parameter list. Parameters are replaced with
/// fresh leaves on every step, so the previous step's graph drops with them.
pub struct Adam {
    cfg: OptimizerConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(cfg: OptimizerConfig) -> Adam {
        Adam {
            cfg,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    fn lr_at(&self, t: u64) -> f64 {
        let drops = self.cfg.lr_decay_steps.iter().filter(|&&s| t >= s).count();
        self.cfg.learning_rate * self.cfg.decay_factor.powi(drops as i32)
    }

    /// One update over the parameter list (same order every call). Tensors
    /// without an accumulated gradient are left untouched.
    pub fn step(&mut self, params: Vec<&mut Tensor>) -> Result<()> {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.v = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        }
        self.t += 1;
        let lr = self.lr_at(self.t);
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);

        for (i, p) in params.into_iter().enumerate() {
            let grad = match p.grad() {
                Some(g) => g,
                None => continue,
            };
            let mut data = p.data().to_vec();
            for k in 0..data.len() {
                let g = grad[k];
                self.m[i][k] = b1 * self.m[i][k] + (1.0 - b1) * g;
                self.v[i][k] = b2 * self.v[i][k] + (1.0 - b2) * g * g;
                let m_hat = self.m[i][k] / bc1;
                let v_hat = self.v[i][k] / bc2;
                data[k] -= lr * m_hat / (v_hat.sqrt() + self.cfg.epsilon);
            }
            *p = Tensor::param(p.shape(), data)?;
        }
        Ok(())
    }
}
