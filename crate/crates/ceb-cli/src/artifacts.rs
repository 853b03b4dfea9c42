//! On-disk run artifacts besides checkpoints and datasets. All JSON, all
//! carrying a format version and the producing config hash.

use anyhow::{Context, Result};
use ceb_core::attacks::{AttackConfig, SweepPoint};
use ceb_core::ceb::EpochStats;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const ARTIFACT_FORMAT_VERSION: u32 = 1;

/// Training log for one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsLog {
    pub format_version: u32,
    pub config_hash: String,
    pub run_id: String,
    pub rho: f64,
    pub seed: u64,
    pub steps: u64,
    pub final_rho: f64,
    pub clean_test_accuracy: f64,
    pub diverged_at_step: Option<u64>,
    pub history: Vec<EpochStats>,
}

/// One untargeted accuracy-vs-ε curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackCurve {
    pub norm: String,
    pub steps: usize,
    pub points: Vec<SweepPoint>,
}

/// Result of a single configured attack.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SingleAttackOutcome {
    pub config: AttackConfig,
    pub adversarial_accuracy: f64,
    pub success_rate: f64,
    pub mean_perturbation_norm: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackReport {
    pub format_version: u32,
    pub config_hash: String,
    pub model_id: String,
    pub clean_accuracy: f64,
    pub curves: Vec<AttackCurve>,
    pub single_attacks: Vec<SingleAttackOutcome>,
}

/// One trained run inside a sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRun {
    pub rho: f64,
    pub seed: u64,
    pub run_id: String,
    pub clean_test_accuracy: f64,
    pub checkpoint: String,
    pub diverged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub format_version: u32,
    pub config_hash: String,
    /// Selected by best mean clean test accuracy; ties go to the lower rho.
    pub rho_star: f64,
    pub selection_rule: String,
    pub runs: Vec<SweepRun>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value)?;
    std::fs::write(path, json.as_bytes()).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

/// Writes an x/y series as a two-column CSV for external plotting.
pub fn write_series(path: &Path, x_label: &str, y_label: &str, rows: &[(f64, f64)]) -> Result<()> {
    let mut text = format!("{x_label},{y_label}\n");
    for (x, y) in rows {
        text.push_str(&format!("{x},{y}\n"));
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
