//! Projected gradient descent attacks in L2 and L∞.
//!
//! The attack has four parameters: the norm p, the ball radius ε, the step
//! count n, and the per-step size ε_i, which defaults to (4/3)·ε/n. One
//! step with the L∞ norm and no random start is exactly the fast gradient
//! method. Untargeted attacks ascend the cross-entropy of the true label;
//! random-target attacks descend the cross-entropy of a uniformly drawn
//! wrong label. Every step projects back onto the ε-ball around the clean
//! input and clips to the dataset's declared valid range.
//!
//! A zero gradient at an iterate leaves that example's step direction at
//! zero for the step; it is not an error. Attacks run a single restart; the
//! optional random start draws one initial point uniformly in the ball.

use crate::distributions::Categorical;
use crate::error::{Error, Result};
use crate::models::LogitModel;
use crate::seeds;
use crate::tensor::Tensor;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackNorm {
    L2,
    Linf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum AttackMode {
    /// Ascend the loss of the true label.
    #[default]
    Untargeted,
    /// Descend the loss of a uniformly drawn wrong label.
    RandomTarget { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub norm: AttackNorm,
    /// Ball radius in input units.
    pub epsilon: f64,
    /// Number of gradient steps n.
    pub steps: usize,
    /// Per-step limit ε_i; `None` means the default (4/3)·ε/n.
    #[serde(default)]
    pub step_size: Option<f64>,
    #[serde(default)]
    pub mode: AttackMode,
    /// Start from a uniform draw inside the ball instead of the clean
    /// input. Off by default.
    #[serde(default)]
    pub random_start: bool,
}

impl AttackConfig {
    pub fn untargeted(norm: AttackNorm, epsilon: f64, steps: usize) -> AttackConfig {
        AttackConfig {
            norm,
            epsilon,
            steps,
            step_size: None,
            mode: AttackMode::Untargeted,
            random_start: false,
        }
    }

    /// ε_i: the configured value, or 4ε/(3n) when unset.
    pub fn effective_step_size(&self) -> f64 {
        self.step_size
            .unwrap_or(4.0 * self.epsilon / (3.0 * self.steps as f64))
    }

    pub fn validate(&self) -> Result<()> {
        if !self.epsilon.is_finite() || self.epsilon <= 0.0 {
            return Err(Error::InvalidAttack(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.steps == 0 {
            return Err(Error::InvalidAttack("steps must be >= 1".into()));
        }
        Ok(())
    }
}

/// Outcome of an attack on a batch.
#[derive(Debug, Clone)]
pub struct AttackResult {
    /// Perturbed inputs `[n, d]`.
    pub adversarial: Tensor,
    /// Whether the adversarial prediction differs from the true label.
    pub success: Vec<bool>,
    pub clean_predictions: Vec<usize>,
    pub adversarial_predictions: Vec<usize>,
    /// Achieved `‖x_adv − x‖_p` per example; always ≤ ε + 1e-9.
    pub norms: Vec<f64>,
    /// Drawn labels for the random-target mode.
    pub targets: Option<Vec<usize>>,
}

impl AttackResult {
    /// Fraction of examples still classified as their true label.
    pub fn adversarial_accuracy(&self, labels: &[usize]) -> f64 {
        self.adversarial_predictions
            .iter()
            .zip(labels)
            .filter(|(p, y)| p == y)
            .count() as f64
            / labels.len().max(1) as f64
    }
}

/// Projects a perturbation onto the ε-ball of the norm, in place.
/// Projecting an already-feasible point is the identity.
pub fn project_ball(delta: &mut [f64], norm: AttackNorm, epsilon: f64) {
    match norm {
        AttackNorm::Linf => {
            for v in delta.iter_mut() {
                *v = v.clamp(-epsilon, epsilon);
            }
        }
        AttackNorm::L2 => {
            let n2 = delta.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n2 > epsilon {
                let s = epsilon / n2;
                for v in delta.iter_mut() {
                    *v *= s;
                }
            }
        }
    }
}

fn perturbation_norm(delta: &[f64], norm: AttackNorm) -> f64 {
    match norm {
        AttackNorm::Linf => delta.iter().fold(0.0, |m, v| m.max(v.abs())),
        AttackNorm::L2 => delta.iter().map(|v| v * v).sum::<f64>().sqrt(),
    }
}

/// Runs PGD against any model exposing logits. The model must be in
/// evaluation mode (deterministic logits on mean encodings). `input_range`
/// is the dataset's valid range; `None` bounds are unclipped.
pub fn pgd_attack(
    model: &dyn LogitModel,
    x: &Tensor,
    labels: &[usize],
    cfg: &AttackConfig,
    input_range: (Option<f64>, Option<f64>),
) -> Result<AttackResult> {
    cfg.validate()?;
    let (n, d) = match x.shape() {
        [n, d] => (*n, *d),
        other => {
            return Err(Error::ShapeMismatch {
                op: "pgd_attack",
                lhs: other.to_vec(),
                rhs: vec![],
            })
        }
    };
    if labels.len() != n {
        return Err(Error::InvalidAttack(format!(
            "{} labels for {} examples",
            labels.len(),
            n
        )));
    }
    let k = model.num_classes();
    if k < 2 {
        return Err(Error::InvalidAttack(format!(
            "model exposes {k} classes; attacks need at least 2"
        )));
    }
    for &y in labels {
        if y >= k {
            return Err(Error::LabelOutOfRange {
                label: y,
                num_classes: k,
            });
        }
    }
    let (lo, hi) = input_range;
    let in_range = |v: f64| lo.map_or(true, |l| v >= l) && hi.map_or(true, |h| v <= h);
    if !x.data().iter().all(|v| in_range(*v)) {
        return Err(Error::InvalidAttack(
            "clean inputs lie outside the declared valid range".into(),
        ));
    }

    // Targets: per-example uniform draw over the wrong labels.
    let (attack_labels, ascend, targets) = match cfg.mode {
        AttackMode::Untargeted => (labels.to_vec(), true, None),
        AttackMode::RandomTarget { seed } => {
            let mut rng = seeds::rng(seed, "pgd-targets");
            let drawn: Vec<usize> = labels
                .iter()
                .map(|&y| {
                    let t = rng.gen_range(0..k - 1);
                    if t >= y {
                        t + 1
                    } else {
                        t
                    }
                })
                .collect();
            (drawn.clone(), false, Some(drawn))
        }
    };

    let x0 = x.data().to_vec();
    let mut delta = vec![0.0; n * d];
    if cfg.random_start {
        let seed = match cfg.mode {
            AttackMode::RandomTarget { seed } => seed,
            AttackMode::Untargeted => 0,
        };
        let mut rng = seeds::rng(seed, "pgd-start");
        match cfg.norm {
            AttackNorm::Linf => {
                for v in delta.iter_mut() {
                    *v = rng.gen_range(-cfg.epsilon..=cfg.epsilon);
                }
            }
            AttackNorm::L2 => {
                for row in 0..n {
                    let dir: Vec<f64> = (0..d)
                        .map(|_| rng.sample::<f64, _>(StandardNormal))
                        .collect();
                    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
                    let radius = cfg.epsilon * rng.gen::<f64>().powf(1.0 / d as f64);
                    for j in 0..d {
                        delta[row * d + j] = radius * dir[j] / norm;
                    }
                }
            }
        }
        project_and_clip(&mut delta, &x0, n, d, cfg, lo, hi);
    }

    let step_size = cfg.effective_step_size();
    for _ in 0..cfg.steps {
        let current: Vec<f64> = x0.iter().zip(&delta).map(|(a, b)| a + b).collect();
        let xt = Tensor::param(&[n, d], current)?;
        let logits = model.logits(&xt)?;
        let ce = Categorical::new(logits)?.log_prob(&attack_labels)?.neg()?;
        // gradient w.r.t. the input only; the model's parameters stay
        // untouched (read-only during attacks)
        let grad = ce.sum()?.grad_wrt(&xt)?.unwrap_or_else(|| vec![0.0; n * d]);

        for row in 0..n {
            let g = &grad[row * d..(row + 1) * d];
            let sign = if ascend { 1.0 } else { -1.0 };
            match cfg.norm {
                AttackNorm::Linf => {
                    for j in 0..d {
                        // sign with sign(0) = 0: a zero gradient moves nothing
                        let s = if g[j] > 0.0 {
                            1.0
                        } else if g[j] < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                        delta[row * d + j] += step_size * sign * s;
                    }
                }
                AttackNorm::L2 => {
                    let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if gn > 0.0 {
                        for j in 0..d {
                            delta[row * d + j] += step_size * sign * g[j] / gn;
                        }
                    }
                }
            }
        }
        project_and_clip(&mut delta, &x0, n, d, cfg, lo, hi);
    }

    let adv_data: Vec<f64> = x0.iter().zip(&delta).map(|(a, b)| a + b).collect();
    let adversarial = Tensor::from_vec(&[n, d], adv_data)?;
    let clean_predictions = model.predict(x)?;
    let adversarial_predictions = model.predict(&adversarial)?;
    let norms = (0..n)
        .map(|row| perturbation_norm(&delta[row * d..(row + 1) * d], cfg.norm))
        .collect();
    let success = adversarial_predictions
        .iter()
        .zip(labels)
        .map(|(p, y)| p != y)
        .collect();

    Ok(AttackResult {
        adversarial,
        success,
        clean_predictions,
        adversarial_predictions,
        norms,
        targets,
    })
}

fn project_and_clip(
    delta: &mut [f64],
    x0: &[f64],
    n: usize,
    d: usize,
    cfg: &AttackConfig,
    lo: Option<f64>,
    hi: Option<f64>,
) {
    for row in 0..n {
        project_ball(&mut delta[row * d..(row + 1) * d], cfg.norm, cfg.epsilon);
    }
    // Clipping toward a range that contains the clean input never grows any
    // coordinate of the perturbation, so the ball constraint survives.
    if lo.is_some() || hi.is_some() {
        for (i, v) in delta.iter_mut().enumerate() {
            let mut x = x0[i] + *v;
            if let Some(l) = lo {
                x = x.max(l);
            }
            if let Some(h) = hi {
                x = x.min(h);
            }
            *v = x - x0[i];
        }
    }
}

/// One accuracy measurement per ε, untargeted, no random start. ε = 0 rows
/// report clean accuracy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub epsilon: f64,
    pub accuracy: f64,
}

/// Adversarial accuracy across a list of radii.
pub fn attack_sweep(
    model: &dyn LogitModel,
    x: &Tensor,
    labels: &[usize],
    norm: AttackNorm,
    epsilon_list: &[f64],
    steps: usize,
    input_range: (Option<f64>, Option<f64>),
) -> Result<Vec<SweepPoint>> {
    let mut points = Vec::with_capacity(epsilon_list.len());
    for &epsilon in epsilon_list {
        let accuracy = if epsilon == 0.0 {
            let pred = model.predict(x)?;
            pred.iter().zip(labels).filter(|(p, y)| p == y).count() as f64
                / labels.len().max(1) as f64
        } else {
            let cfg = AttackConfig::untargeted(norm, epsilon, steps);
            pgd_attack(model, x, labels, &cfg, input_range)?.adversarial_accuracy(labels)
        };
        points.push(SweepPoint { epsilon, accuracy });
    }
    Ok(points)
}
