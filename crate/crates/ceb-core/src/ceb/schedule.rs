//! Bottleneck-strength control: ρ reparameterizations and annealing.
//!
//! ρ lives on the whole real line. The rate term of the conditional
//! objective is weighted by γ = e^{-ρ}; the unconditional variant uses the
//! sigmoid multiplier σ(-ρ) = 1/(1+e^ρ). Either way ρ → ∞ turns the
//! bottleneck off.
//!
//! Training at low ρ from scratch tends to collapse, so [`RhoSchedule`]
//! supports a jump-start: begin with the bottleneck off (ρ = 100), anneal
//! linearly down to an intermediate ρ, hold until training accuracy clears
//! a trigger, then anneal to the target.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// γ = e^{-ρ}, the weight on the residual-information term.
pub fn rho_to_gamma(rho: f64) -> f64 {
    (-rho).exp()
}

/// σ(-ρ) = 1/(1+e^ρ), the rate multiplier in the unconditional objective.
/// Branches on the sign of ρ so neither exponential overflows.
pub fn sigma_neg_rho(rho: f64) -> f64 {
    if rho >= 0.0 {
        let e = (-rho).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + rho.exp())
    }
}

/// Clamped linear interpolation between two values over a step interval:
/// `start_val` before `start_step`, `end_val` after `end_step`.
pub fn lerp(
    step: u64,
    start_step: u64,
    end_step: u64,
    start_val: f64,
    end_val: f64,
) -> Result<f64> {
    if start_step >= end_step {
        return Err(Error::DegenerateInterval {
            start: start_step,
            end: end_step,
        });
    }
    let t = (step.saturating_sub(start_step)) as f64 / (end_step - start_step) as f64;
    let t = t.clamp(0.0, 1.0);
    Ok(start_val * (1.0 - t) + end_val * t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulePhase {
    /// High-ρ warmup annealing down to `intermediate_rho`, then waiting on
    /// the accuracy trigger before the final anneal.
    JumpStart,
    /// Single linear anneal toward `target_rho`.
    AnnealToTarget,
    /// Emitting `target_rho` forever.
    Constant,
}

/// Piecewise-linear ρ state machine.
///
/// The emitted value is linear in the step count within each phase. With an
/// `accuracy_trigger` set, the final anneal of a jump-start begins only
/// after training accuracy first exceeds the trigger (and the warmup anneal
/// has completed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoSchedule {
    pub phase: SchedulePhase,
    pub start_rho: f64,
    #[serde(default)]
    pub intermediate_rho: Option<f64>,
    pub target_rho: f64,
    #[serde(default)]
    pub anneal_start_step: u64,
    #[serde(default)]
    pub anneal_end_step: u64,
    /// Length of the post-trigger anneal in a jump-start.
    #[serde(default)]
    pub final_anneal_steps: u64,
    #[serde(default)]
    pub accuracy_trigger: Option<f64>,
    /// Step at which the final anneal began; set once the trigger fires.
    #[serde(default)]
    pub final_anneal_start: Option<u64>,
}

impl RhoSchedule {
    pub fn constant(rho: f64) -> RhoSchedule {
        RhoSchedule {
            phase: SchedulePhase::Constant,
            start_rho: rho,
            intermediate_rho: None,
            target_rho: rho,
            anneal_start_step: 0,
            anneal_end_step: 0,
            final_anneal_steps: 0,
            accuracy_trigger: None,
            final_anneal_start: None,
        }
    }

    pub fn anneal(start_rho: f64, target_rho: f64, start_step: u64, end_step: u64) -> RhoSchedule {
        RhoSchedule {
            phase: SchedulePhase::AnnealToTarget,
            start_rho,
            intermediate_rho: None,
            target_rho,
            anneal_start_step: start_step,
            anneal_end_step: end_step,
            final_anneal_steps: 0,
            accuracy_trigger: None,
            final_anneal_start: None,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn jump_start(
        start_rho: f64,
        intermediate_rho: f64,
        target_rho: f64,
        anneal_start_step: u64,
        anneal_end_step: u64,
        final_anneal_steps: u64,
        accuracy_trigger: Option<f64>,
    ) -> RhoSchedule {
        RhoSchedule {
            phase: SchedulePhase::JumpStart,
            start_rho,
            intermediate_rho: Some(intermediate_rho),
            target_rho,
            anneal_start_step,
            anneal_end_step,
            final_anneal_steps,
            accuracy_trigger,
            final_anneal_start: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.phase {
            SchedulePhase::Constant => Ok(()),
            SchedulePhase::AnnealToTarget => {
                if self.anneal_start_step >= self.anneal_end_step {
                    return Err(Error::DegenerateInterval {
                        start: self.anneal_start_step,
                        end: self.anneal_end_step,
                    });
                }
                Ok(())
            }
            SchedulePhase::JumpStart => {
                if self.anneal_start_step >= self.anneal_end_step {
                    return Err(Error::DegenerateInterval {
                        start: self.anneal_start_step,
                        end: self.anneal_end_step,
                    });
                }
                if self.final_anneal_steps == 0 {
                    return Err(Error::DegenerateInterval { start: 0, end: 0 });
                }
                if self.intermediate_rho.is_none() {
                    return Err(Error::InvalidConfig(
                        "jump-start schedule requires intermediate_rho".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    /// Emits ρ for `step`, observing the running training accuracy for the
    /// trigger. Must be called once per step, in step order.
    pub fn advance(&mut self, step: u64, running_accuracy: f64) -> f64 {
        match self.phase {
            SchedulePhase::Constant => self.target_rho,
            SchedulePhase::AnnealToTarget => {
                let rho = lerp(
                    step,
                    self.anneal_start_step,
                    self.anneal_end_step,
                    self.start_rho,
                    self.target_rho,
                )
                .expect("validated interval");
                if step >= self.anneal_end_step {
                    self.phase = SchedulePhase::Constant;
                }
                rho
            }
            SchedulePhase::JumpStart => {
                let intermediate = self.intermediate_rho.expect("validated");
                if let Some(t0) = self.final_anneal_start {
                    let rho = lerp(
                        step,
                        t0,
                        t0 + self.final_anneal_steps,
                        intermediate,
                        self.target_rho,
                    )
                    .expect("validated interval");
                    if step >= t0 + self.final_anneal_steps {
                        self.phase = SchedulePhase::Constant;
                    }
                    return rho;
                }
                // Warmup leg, then hold at the intermediate value until the
                // trigger fires (no trigger means it fires right away).
                let warm = lerp(
                    step,
                    self.anneal_start_step,
                    self.anneal_end_step,
                    self.start_rho,
                    intermediate,
                )
                .expect("validated interval");
                let triggered = match self.accuracy_trigger {
                    Some(th) => running_accuracy > th,
                    None => true,
                };
                if step >= self.anneal_end_step && triggered {
                    self.final_anneal_start = Some(step);
                }
                warm
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_closed_forms() {
        assert_eq!(rho_to_gamma(0.0), 1.0);
        assert!((rho_to_gamma(-1.0) - std::f64::consts::E).abs() < 1e-15);
        assert!((rho_to_gamma(100.0) - (-100.0f64).exp()).abs() < 1e-60);
        assert!(rho_to_gamma(100.0) < 1e-40);
    }

    #[test]
    fn sigma_closed_forms_and_limits() {
        assert_eq!(sigma_neg_rho(0.0), 0.5);
        assert!((sigma_neg_rho(1.0) - 1.0 / (1.0 + std::f64::consts::E)).abs() < 1e-15);
        assert_eq!(sigma_neg_rho(1e6), 0.0);
        assert!((sigma_neg_rho(-1e6) - 1.0).abs() < 1e-15);
        // stable through the |rho| > 30 region
        for rho in [-200.0, -31.0, 31.0, 200.0, 800.0] {
            let s = sigma_neg_rho(rho);
            assert!(s.is_finite() && (0.0..=1.0).contains(&s), "rho={rho} s={s}");
        }
    }

    #[test]
    fn lerp_clamps_both_sides() {
        assert_eq!(lerp(0, 0, 100, 100.0, 5.0).unwrap(), 100.0);
        assert_eq!(lerp(50, 0, 100, 100.0, 0.0).unwrap(), 50.0);
        assert_eq!(lerp(200, 0, 100, 100.0, 5.0).unwrap(), 5.0);
    }

    #[test]
    fn lerp_rejects_degenerate_interval() {
        assert!(matches!(
            lerp(0, 10, 10, 0.0, 1.0),
            Err(Error::DegenerateInterval { start: 10, end: 10 })
        ));
    }

    #[test]
    fn constant_schedule_never_moves() {
        let mut s = RhoSchedule::constant(100.0);
        for step in [0u64, 5, 1000] {
            assert_eq!(s.advance(step, 1.0), 100.0);
        }
    }

    #[test]
    fn anneal_schedule_hits_target_and_stays() {
        let mut s = RhoSchedule::anneal(100.0, 3.0, 0, 1000);
        s.validate().unwrap();
        assert_eq!(s.advance(0, 0.0), 100.0);
        assert!((s.advance(500, 0.0) - 51.5).abs() < 1e-12);
        assert_eq!(s.advance(1000, 0.0), 3.0);
        assert_eq!(s.phase, SchedulePhase::Constant);
        assert_eq!(s.advance(5000, 0.0), 3.0);
    }

    #[test]
    fn jump_start_waits_for_the_accuracy_trigger() {
        // 100 -> 10 over steps 0..200, hold, then -> 2 over 100 steps once
        // accuracy exceeds 20%.
        let mut s = RhoSchedule::jump_start(100.0, 10.0, 2.0, 0, 200, 100, Some(0.2));
        s.validate().unwrap();

        assert_eq!(s.advance(0, 0.0), 100.0);
        assert_eq!(s.advance(100, 0.1), 55.0);
        assert_eq!(s.advance(200, 0.15), 10.0);
        // trigger not yet fired: holds
        assert_eq!(s.advance(300, 0.19), 10.0);
        // fires here; the final anneal starts at this step
        assert_eq!(s.advance(350, 0.25), 10.0);
        assert_eq!(s.advance(400, 0.9), 6.0);
        assert_eq!(s.advance(450, 0.9), 2.0);
        assert_eq!(s.phase, SchedulePhase::Constant);
        assert_eq!(s.advance(10_000, 0.9), 2.0);
    }

    #[test]
    fn jump_start_without_trigger_chains_the_anneals() {
        let mut s = RhoSchedule::jump_start(100.0, 10.0, 0.0, 0, 100, 50, None);
        assert_eq!(s.advance(0, 0.0), 100.0);
        assert_eq!(s.advance(100, 0.0), 10.0);
        assert_eq!(s.advance(125, 0.0), 5.0);
        assert_eq!(s.advance(150, 0.0), 0.0);
        assert_eq!(s.advance(151, 0.0), 0.0);
    }

    #[test]
    fn trigger_cannot_fire_before_warmup_completes() {
        let mut s = RhoSchedule::jump_start(100.0, 10.0, 2.0, 0, 200, 100, Some(0.2));
        // accuracy is already above the trigger during warmup
        assert_eq!(s.advance(100, 0.9), 55.0);
        assert!(s.final_anneal_start.is_none());
        assert_eq!(s.advance(200, 0.9), 10.0);
        assert_eq!(s.final_anneal_start, Some(200));
    }
}
