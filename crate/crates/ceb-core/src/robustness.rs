//! Corruption error grids and their aggregates.
//!
//! `E_cs` is the misclassification fraction at corruption kind c and
//! severity s. Per-kind errors average the five severities
//! (`E_c = (1/5)·Σ_s E_cs`), `avg` is the unweighted mean of `E_c` over the
//! kinds, and `mce` normalizes each kind's summed errors by a designated
//! baseline model's before averaging:
//!
//! ```text
//! mCE = (100/C) · Σ_c  (Σ_s E_cs) / (Σ_s E_cs^baseline)
//! ```
//!
//! The baseline is a config-designated checkpoint (for instance the
//! quasi-deterministic ρ=100 model), and reports carry the baseline
//! identity so grids from different baselines are never compared silently.

use crate::corruptions::{corrupt_dataset, CorruptionKind, CorruptionSpec, SEVERITY_TABLE_VERSION};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::LogitModel;
use crate::seeds;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const REPORT_FORMAT_VERSION: u32 = 1;
pub const SEVERITIES: [u8; 5] = [1, 2, 3, 4, 5];

/// Misclassification fractions per (kind, severity).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorGrid {
    pub kinds: Vec<CorruptionKind>,
    /// `errors[c][s-1]` is E_cs; every entry lies in [0, 1].
    pub errors: Vec<[f64; 5]>,
}

impl ErrorGrid {
    pub fn validate(&self) -> Result<()> {
        if self.kinds.len() != self.errors.len() {
            return Err(Error::GridMismatch(format!(
                "{} kinds but {} error rows",
                self.kinds.len(),
                self.errors.len()
            )));
        }
        if self.kinds.is_empty() {
            return Err(Error::GridMismatch("empty corruption set".into()));
        }
        for (kind, row) in self.kinds.iter().zip(&self.errors) {
            if row.iter().any(|e| !(0.0..=1.0).contains(e)) {
                return Err(Error::GridMismatch(format!(
                    "error outside [0,1] for {}",
                    kind.name()
                )));
            }
        }
        Ok(())
    }

    /// E_c per kind: the severity average.
    pub fn per_corruption(&self) -> Vec<f64> {
        self.errors
            .iter()
            .map(|row| row.iter().sum::<f64>() / 5.0)
            .collect()
    }

    /// Unweighted mean of E_c across kinds.
    pub fn avg(&self) -> f64 {
        let per = self.per_corruption();
        per.iter().sum::<f64>() / per.len() as f64
    }

    fn row(&self, kind: CorruptionKind) -> Option<&[f64; 5]> {
        self.kinds
            .iter()
            .position(|k| *k == kind)
            .map(|i| &self.errors[i])
    }
}

/// Evaluates the model on the corrupted test set for every (kind, severity)
/// cell. Cells are independent and run in parallel; each cell corrupts with
/// its own seed derived from `seed`, so the grid replays exactly.
pub fn evaluate_grid(
    model: &dyn LogitModel,
    data: &Dataset,
    kinds: &[CorruptionKind],
    seed: u64,
) -> Result<ErrorGrid> {
    data.validate()?;
    if kinds.is_empty() {
        return Err(Error::GridMismatch("empty corruption set".into()));
    }
    let cells: Vec<(usize, u8)> = (0..kinds.len())
        .flat_map(|c| SEVERITIES.map(|s| (c, s)))
        .collect();
    let results: Vec<((usize, u8), Result<f64>)> = cells
        .par_iter()
        .map(|&(c, s)| {
            let cell_seed = seeds::derive(seed, &format!("grid/{}/{}", kinds[c].name(), s));
            let spec = match CorruptionSpec::new(kinds[c], s, cell_seed) {
                Ok(spec) => spec,
                Err(e) => return ((c, s), Err(e)),
            };
            ((c, s), cell_error(model, data, &spec))
        })
        .collect();

    let mut errors = vec![[0.0; 5]; kinds.len()];
    for ((c, s), res) in results {
        errors[c][s as usize - 1] = res?;
    }
    Ok(ErrorGrid {
        kinds: kinds.to_vec(),
        errors,
    })
}

fn cell_error(model: &dyn LogitModel, data: &Dataset, spec: &CorruptionSpec) -> Result<f64> {
    let corrupted = corrupt_dataset(data, spec)?;
    let pred = model.predict(&corrupted.features_tensor())?;
    let wrong = pred
        .iter()
        .zip(&corrupted.labels)
        .filter(|(p, y)| p != y)
        .count();
    Ok(wrong as f64 / corrupted.len() as f64)
}

/// Clean (uncorrupted) error of the model on the dataset.
pub fn clean_error(model: &dyn LogitModel, data: &Dataset) -> Result<f64> {
    data.validate()?;
    let pred = model.predict(&data.features_tensor())?;
    let wrong = pred
        .iter()
        .zip(&data.labels)
        .filter(|(p, y)| p != y)
        .count();
    Ok(wrong as f64 / data.len() as f64)
}

/// mCE plus any kinds excluded for a zero baseline denominator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MceOutcome {
    /// Percent; 100 means matching the baseline.
    pub mce: f64,
    /// Warnings for corruption kinds dropped from the average.
    pub warnings: Vec<String>,
}

/// Baseline-normalized mean corruption error, in percent. The two grids
/// must cover the same corruption kinds (order does not matter). Kinds
/// where the baseline error sums to zero are excluded with a warning.
pub fn mce(model_grid: &ErrorGrid, baseline_grid: &ErrorGrid) -> Result<MceOutcome> {
    model_grid.validate()?;
    baseline_grid.validate()?;
    let mut model_kinds: Vec<&str> = model_grid.kinds.iter().map(|k| k.name()).collect();
    let mut base_kinds: Vec<&str> = baseline_grid.kinds.iter().map(|k| k.name()).collect();
    model_kinds.sort_unstable();
    base_kinds.sort_unstable();
    if model_kinds != base_kinds {
        return Err(Error::GridMismatch(format!(
            "corruption sets differ: {model_kinds:?} vs {base_kinds:?}"
        )));
    }

    let mut ratios = Vec::with_capacity(model_grid.kinds.len());
    let mut warnings = Vec::new();
    for (kind, row) in model_grid.kinds.iter().zip(&model_grid.errors) {
        let base_row = baseline_grid.row(*kind).expect("matched sets");
        let denom: f64 = base_row.iter().sum();
        if denom == 0.0 {
            warnings.push(format!(
                "{}: baseline errors sum to zero, excluded from mCE",
                kind.name()
            ));
            continue;
        }
        ratios.push(row.iter().sum::<f64>() / denom);
    }
    if ratios.is_empty() {
        return Err(Error::GridMismatch(
            "every corruption kind had a zero baseline denominator".into(),
        ));
    }
    let mce = 100.0 * ratios.iter().sum::<f64>() / ratios.len() as f64;
    Ok(MceOutcome { mce, warnings })
}

/// The on-disk robustness report. Serialized as JSON with these exact key
/// names; `format_version` and `config_hash` make artifacts self-describing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub format_version: u32,
    pub model_id: String,
    /// Identity of the mCE baseline; absent when no baseline was supplied.
    pub baseline_id: Option<String>,
    pub seed: u64,
    pub config_hash: String,
    pub severity_table_version: String,
    /// Severity tables are desk-scale and versioned; grids are only
    /// comparable within a table version, never to published benchmarks.
    pub comparability_note: String,
    pub clean_error: f64,
    pub grid: ErrorGrid,
    pub per_corruption: Vec<f64>,
    pub avg: f64,
    pub mce: Option<f64>,
    pub mce_warnings: Vec<String>,
}

impl RobustnessReport {
    pub fn build(
        model_id: &str,
        seed: u64,
        config_hash: &str,
        clean_error: f64,
        grid: ErrorGrid,
        baseline: Option<(&str, &ErrorGrid)>,
    ) -> Result<RobustnessReport> {
        grid.validate()?;
        let (baseline_id, mce_value, warnings) = match baseline {
            Some((id, base)) => {
                let out = mce(&grid, base)?;
                (Some(id.to_string()), Some(out.mce), out.warnings)
            }
            None => (None, None, Vec::new()),
        };
        Ok(RobustnessReport {
            format_version: REPORT_FORMAT_VERSION,
            model_id: model_id.to_string(),
            baseline_id,
            seed,
            config_hash: config_hash.to_string(),
            severity_table_version: SEVERITY_TABLE_VERSION.to_string(),
            comparability_note:
                "desk-scale severity tables; not comparable to published corruption benchmarks"
                    .to_string(),
            clean_error,
            per_corruption: grid.per_corruption(),
            avg: grid.avg(),
            grid,
            mce: mce_value,
            mce_warnings: warnings,
        })
    }

    /// Checks the stored aggregates against the grid.
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let per = self.grid.per_corruption();
        if per.len() != self.per_corruption.len()
            || per
                .iter()
                .zip(&self.per_corruption)
                .any(|(a, b)| (a - b).abs() > 1e-12)
        {
            return Err(Error::GridMismatch(
                "per_corruption is inconsistent with the grid".into(),
            ));
        }
        if (self.grid.avg() - self.avg).abs() > 1e-12 {
            return Err(Error::GridMismatch(
                "avg is inconsistent with the grid".into(),
            ));
        }
        Ok(())
    }
}
