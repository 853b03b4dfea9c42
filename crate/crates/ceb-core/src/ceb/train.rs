//! Minibatch training of a [`CebModel`] under a ρ schedule.

use super::optimizer::{Adam, OptimizerConfig};
use super::schedule::RhoSchedule;
use super::{ceb_loss, vib_loss, CebModel, LossBreakdown, Objective};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::seeds;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

/// Window of recent batch accuracies feeding the schedule's trigger.
const ACCURACY_WINDOW: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: u64,
    pub batch_size: usize,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
}

/// Per-epoch averages of the loss record plus training accuracy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: u64,
    pub hzx: f64,
    pub hzy: f64,
    pub hyz: f64,
    pub rex: f64,
    pub total: f64,
    pub accuracy: f64,
    /// ρ emitted at the last step of the epoch.
    pub rho: f64,
}

/// Reached when a loss term goes non-finite; the returned model is rolled
/// back to the last epoch that finished with finite losses.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Divergence {
    pub step: u64,
    pub term: String,
}

pub struct TrainResult {
    pub model: CebModel,
    pub history: Vec<EpochStats>,
    pub steps: u64,
    /// ρ at the end of training.
    pub final_rho: f64,
    /// Schedule state at the end of training (for checkpointing).
    pub schedule: RhoSchedule,
    /// Set when training aborted on a non-finite loss.
    pub diverged: Option<Divergence>,
}

/// Runs minibatch Adam on the selected objective with ρ drawn from the
/// schedule each step. Batch order and noise are derived from `seed`, so a
/// rerun with the same inputs is bit-identical. On divergence the model is
/// rolled back to the last good epoch snapshot and training stops.
pub fn train(
    mut model: CebModel,
    data: &Dataset,
    objective: Objective,
    mut schedule: RhoSchedule,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainResult> {
    data.validate()?;
    schedule.validate()?;
    if cfg.batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be positive".into()));
    }

    let mut order_rng = seeds::rng(seed, "batch-order");
    let mut noise_rng = seeds::rng(seed, "train-noise");
    let mut adam = Adam::new(cfg.optimizer.clone());

    let mut history = Vec::new();
    let mut step: u64 = 0;
    let mut rho = {
        // preview of rho(0) for the degenerate no-step case; the real
        // schedule state only advances inside the loop
        let mut preview = schedule.clone();
        preview.advance(0, 0.0)
    };
    let mut acc_window: Vec<f64> = Vec::with_capacity(ACCURACY_WINDOW);
    let mut last_good: Vec<Tensor> = model.parameters().iter().map(|p| p.detach()).collect();
    let mut diverged = None;

    let mut indices: Vec<usize> = (0..data.len()).collect();
    'epochs: for epoch in 0..cfg.epochs {
        indices.shuffle(&mut order_rng);
        let mut sums = LossBreakdown {
            hzx: 0.0,
            hzy: 0.0,
            hyz: 0.0,
            rex: 0.0,
            gamma: 0.0,
            total: 0.0,
        };
        let mut correct = 0usize;
        let mut seen = 0usize;
        let mut batches = 0usize;

        for chunk in indices.chunks(cfg.batch_size) {
            let (x, labels) = data.batch(chunk);
            let running_acc = if acc_window.is_empty() {
                0.0
            } else {
                acc_window.iter().sum::<f64>() / acc_window.len() as f64
            };
            rho = schedule.advance(step, running_acc);

            let out = match objective {
                Objective::Ceb => ceb_loss(&model, &x, &labels, rho, &mut noise_rng),
                Objective::Vib => vib_loss(&model, &x, &labels, rho, &mut noise_rng),
            };
            let out = match out {
                Ok(out) => out,
                Err(Error::NonFiniteLoss { term, .. }) => {
                    diverged = Some(Divergence {
                        step,
                        term: term.to_string(),
                    });
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };

            model.zero_grad();
            out.total.backward()?;
            let mut params = model.parameters();
            adam.step(params.iter_mut().collect())?;
            model.set_parameters(&params)?;

            // training-mode batch accuracy for the trigger window
            let pred = crate::distributions::Categorical::new(out.logits)?.predict();
            let batch_correct = pred.iter().zip(&labels).filter(|(p, y)| p == y).count();
            if acc_window.len() == ACCURACY_WINDOW {
                acc_window.remove(0);
            }
            acc_window.push(batch_correct as f64 / labels.len() as f64);

            correct += batch_correct;
            seen += labels.len();
            sums.hzx += out.breakdown.hzx;
            sums.hzy += out.breakdown.hzy;
            sums.hyz += out.breakdown.hyz;
            sums.rex += out.breakdown.rex;
            sums.total += out.breakdown.total;
            batches += 1;
            step += 1;
        }

        let b = batches as f64;
        history.push(EpochStats {
            epoch,
            hzx: sums.hzx / b,
            hzy: sums.hzy / b,
            hyz: sums.hyz / b,
            rex: sums.rex / b,
            total: sums.total / b,
            accuracy: correct as f64 / seen as f64,
            rho,
        });
        last_good = model.parameters().iter().map(|p| p.detach()).collect();
    }

    if diverged.is_some() {
        // roll back to the last epoch that completed with finite losses
        let restored: Vec<Tensor> = last_good
            .iter()
            .map(|p| Tensor::param(p.shape(), p.data().to_vec()))
            .collect::<Result<_>>()?;
        model.set_parameters(&restored)?;
    }

    Ok(TrainResult {
        model,
        history,
        steps: step,
        final_rho: rho,
        schedule,
        diverged,
    })
}
