//! The experiment configuration file: one TOML document that pins the
//! dataset, model, objective, ρ sweep, schedule, optimizer, attacks,
//! corruption set and seeds. Every artifact a run writes embeds the SHA-256
//! hash of the canonical config, so a run directory always names the exact
//! configuration that produced it.

use crate::attacks::{AttackConfig, AttackNorm};
use crate::ceb::{ClassifierKind, Objective, RhoSchedule, TrainConfig};
use crate::corruptions::CorruptionKind;
use crate::data::SyntheticSpec;
use crate::error::{Error, Result};
use crate::models::EncoderSpec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

/// Where the data comes from: a synthetic generator or a file on disk
/// (the binary dataset container, or CSV for small external data).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DatasetConfig {
    Synthetic(SyntheticSpec),
    File { path: PathBuf },
}

/// Schedule template; the per-run target ρ is filled in from the sweep
/// list when a run starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleConfig {
    #[default]
    Constant,
    Anneal {
        start_rho: f64,
        anneal_start_step: u64,
        anneal_end_step: u64,
    },
    JumpStart {
        start_rho: f64,
        intermediate_rho: f64,
        anneal_start_step: u64,
        anneal_end_step: u64,
        final_anneal_steps: u64,
        #[serde(default)]
        accuracy_trigger: Option<f64>,
    },
}

impl ScheduleConfig {
    pub fn build(&self, target_rho: f64) -> RhoSchedule {
        match *self {
            ScheduleConfig::Constant => RhoSchedule::constant(target_rho),
            ScheduleConfig::Anneal {
                start_rho,
                anneal_start_step,
                anneal_end_step,
            } => RhoSchedule::anneal(start_rho, target_rho, anneal_start_step, anneal_end_step),
            ScheduleConfig::JumpStart {
                start_rho,
                intermediate_rho,
                anneal_start_step,
                anneal_end_step,
                final_anneal_steps,
                accuracy_trigger,
            } => RhoSchedule::jump_start(
                start_rho,
                intermediate_rho,
                target_rho,
                anneal_start_step,
                anneal_end_step,
                final_anneal_steps,
                accuracy_trigger,
            ),
        }
    }
}

/// Untargeted accuracy-vs-ε curve specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSweepConfig {
    pub norm: AttackNorm,
    /// Radii; include 0 for the clean-accuracy point.
    pub epsilons: Vec<f64>,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub encoder: EncoderSpec,
    pub objective: Objective,
    #[serde(default = "default_classifier")]
    pub classifier: ClassifierKind,
    /// ρ values for `sweep`; single-run commands use the first entry unless
    /// told otherwise.
    pub rho: Vec<f64>,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    pub train: TrainConfig,
    /// Untargeted accuracy-vs-ε curves to evaluate.
    #[serde(default)]
    pub attack_sweeps: Vec<AttackSweepConfig>,
    /// Additional single attacks (for instance random-target PGD).
    #[serde(default)]
    pub attacks: Vec<AttackConfig>,
    /// Corruption kinds for the error grid; empty means all eight.
    #[serde(default)]
    pub corruptions: Vec<CorruptionKind>,
    /// One model is trained per (ρ, seed) pair in `sweep`.
    pub seeds: Vec<u64>,
    /// Output root; overrides the CEB_OUTPUT_ROOT environment variable.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_classifier() -> ClassifierKind {
    ClassifierKind::Linear
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.rho.is_empty() {
            return Err(Error::InvalidConfig("rho list is empty".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("seeds list is empty".into()));
        }
        if self.train.batch_size == 0 || self.train.epochs == 0 {
            return Err(Error::InvalidConfig(
                "train.epochs and train.batch_size must be positive".into(),
            ));
        }
        self.schedule.build(self.rho[0]).validate()?;
        for sweep in &self.attack_sweeps {
            if sweep.steps == 0 {
                return Err(Error::InvalidConfig("attack sweep needs steps >= 1".into()));
            }
            if sweep.epsilons.iter().any(|e| *e < 0.0) {
                return Err(Error::InvalidConfig("attack epsilons must be >= 0".into()));
            }
        }
        for attack in &self.attacks {
            attack
                .validate()
                .map_err(|e| Error::InvalidConfig(format!("attack config invalid: {e}")))?;
        }
        Ok(())
    }

    /// Corruption kinds to evaluate; defaults to all eight when unset.
    pub fn corruption_set(&self) -> Vec<CorruptionKind> {
        if self.corruptions.is_empty() {
            CorruptionKind::ALL.to_vec()
        } else {
            self.corruptions.clone()
        }
    }

    /// SHA-256 of the canonical (JSON) serialization; embedded in every
    /// artifact the config produces.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        let mut h = Sha256::new();
        h.update(&canonical);
        let digest = h.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::InvalidConfig(format!("config does not serialize: {e}")))
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    let config: ExperimentConfig = toml::from_str(&text)?;
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::GeneratorSpec;

    fn sample() -> ExperimentConfig {
        ExperimentConfig {
            dataset: DatasetConfig::Synthetic(SyntheticSpec {
                generator: GeneratorSpec::Blobs {
                    classes: 2,
                    base_dim: 2,
                    separation: 6.0,
                    nuisance_dims: 50,
                },
                n_train: 256,
                n_test: 128,
            }),
            encoder: EncoderSpec {
                input_shape: vec![52],
                hidden: vec![32],
                latent_dim: 8,
            },
            objective: Objective::Ceb,
            classifier: ClassifierKind::Linear,
            rho: vec![0.0, 2.0, 5.0, 100.0],
            schedule: ScheduleConfig::JumpStart {
                start_rho: 100.0,
                intermediate_rho: 10.0,
                anneal_start_step: 0,
                anneal_end_step: 40,
                final_anneal_steps: 40,
                accuracy_trigger: Some(0.2),
            },
            train: TrainConfig {
                epochs: 40,
                batch_size: 64,
                optimizer: Default::default(),
            },
            attack_sweeps: vec![AttackSweepConfig {
                norm: AttackNorm::Linf,
                epsilons: vec![0.0, 0.25, 0.5, 1.0],
                steps: 10,
            }],
            attacks: vec![AttackConfig {
                norm: AttackNorm::L2,
                epsilon: 16.0,
                steps: 20,
                step_size: Some(2.0),
                mode: crate::attacks::AttackMode::RandomTarget { seed: 11 },
                random_start: false,
            }],
            corruptions: vec![],
            seeds: vec![1, 2, 3],
            output_dir: None,
        }
    }

    #[test]
    fn toml_round_trip_preserves_the_config() {
        let cfg = sample();
        let text = cfg.to_toml().unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn config_hash_is_stable_and_content_sensitive() {
        let cfg = sample();
        assert_eq!(cfg.hash(), cfg.hash());
        let mut other = sample();
        other.seeds = vec![9];
        assert_ne!(cfg.hash(), other.hash());
        assert_eq!(cfg.hash().len(), 64);
    }

    #[test]
    fn empty_rho_or_seeds_is_invalid() {
        let mut cfg = sample();
        cfg.rho.clear();
        assert!(cfg.validate().is_err());
        let mut cfg = sample();
        cfg.seeds.clear();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn default_corruption_set_is_all_eight() {
        assert_eq!(sample().corruption_set().len(), 8);
    }

    #[test]
    fn file_dataset_variant_parses() {
        let text = r#"
            objective = "ceb"
            rho = [1.0]
            seeds = [3]

            [dataset]
            path = "data/some.bin"

            [encoder]
            input_shape = [4]
            hidden = [8]
            latent_dim = 2

            [train]
            epochs = 5
            batch_size = 16
        "#;
        let cfg: ExperimentConfig = toml::from_str(text).unwrap();
        assert!(matches!(cfg.dataset, DatasetConfig::File { .. }));
        cfg.validate().unwrap();
    }
}
