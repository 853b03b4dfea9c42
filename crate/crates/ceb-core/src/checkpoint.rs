//! Self-describing binary checkpoints.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic    8 bytes  "CEBCKPT\0"
//! version  u32      1
//! hdr_len  u32      length of the JSON header
//! header   JSON     model structure, named parameter shapes (in buffer
//!                   order), objective, ρ, schedule state, seed, step count
//!                   and the producing config hash
//! buffers  f64[]    parameter values, concatenated in header order
//! ```
//!
//! Training is deterministic given config and seed, so two runs of the same
//! config produce byte-identical checkpoint files.

use crate::ceb::{CebModel, ClassifierKind, Objective, RhoSchedule};
use crate::error::{Error, Result};
use crate::models::EncoderSpec;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CEBCKPT\0";
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Run state stored next to the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model_id: String,
    pub objective: Objective,
    /// ρ at the end of training.
    pub rho: f64,
    pub schedule: RhoSchedule,
    pub seed: u64,
    pub step: u64,
    pub config_hash: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    format_version: u32,
    encoder_spec: EncoderSpec,
    num_classes: usize,
    classifier: ClassifierKind,
    class_prior: Vec<f64>,
    meta: CheckpointMeta,
    params: Vec<ParamEntry>,
}

pub fn save_checkpoint(path: &Path, model: &CebModel, meta: &CheckpointMeta) -> Result<()> {
    let named = model.named_parameters();
    let header = CheckpointHeader {
        format_version: CHECKPOINT_FORMAT_VERSION,
        encoder_spec: model.encoder_spec().clone(),
        num_classes: model.num_classes(),
        classifier: model.classifier_kind(),
        class_prior: model.class_prior().to_vec(),
        meta: meta.clone(),
        params: named
            .iter()
            .map(|(name, t)| ParamEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    for (_, t) in &named {
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(CebModel, CheckpointMeta)> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Malformed {
            kind: "checkpoint",
            detail: format!("bad magic {magic:?}"),
        });
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::FormatVersion {
            found: version,
            expected: CHECKPOINT_FORMAT_VERSION,
        });
    }
    r.read_exact(&mut u32buf)?;
    let hdr_len = u32::from_le_bytes(u32buf) as usize;
    let mut hdr = vec![0u8; hdr_len];
    r.read_exact(&mut hdr)?;
    let header: CheckpointHeader = serde_json::from_slice(&hdr)?;

    let mut model = CebModel::new(
        &header.encoder_spec,
        header.num_classes,
        header.classifier,
        0,
    )?;
    model.set_class_prior(header.class_prior.clone())?;

    let expected: Vec<(String, Tensor)> = model.named_parameters();
    if expected.len() != header.params.len() {
        return Err(Error::Malformed {
            kind: "checkpoint",
            detail: format!(
                "{} parameter buffers, model needs {}",
                header.params.len(),
                expected.len()
            ),
        });
    }
    let mut loaded = Vec::with_capacity(header.params.len());
    let mut f64buf = [0u8; 8];
    for ((name, t), entry) in expected.iter().zip(&header.params) {
        if name != &entry.name || t.shape() != entry.shape.as_slice() {
            return Err(Error::Malformed {
                kind: "checkpoint",
                detail: format!(
                    "parameter {:?} with shape {:?} does not match expected {name:?} {:?}",
                    entry.name,
                    entry.shape,
                    t.shape()
                ),
            });
        }
        let n: usize = entry.shape.iter().product();
        let mut data = vec![0.0f64; n];
        for v in &mut data {
            r.read_exact(&mut f64buf)?;
            *v = f64::from_le_bytes(f64buf);
        }
        loaded.push(Tensor::param(&entry.shape, data)?);
    }
    model.set_parameters(&loaded)?;
    Ok((model, header.meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ceb::{ceb_loss_with_noise, SchedulePhase};

    fn spec() -> EncoderSpec {
        EncoderSpec {
            input_shape: vec![3],
            hidden: vec![5],
            latent_dim: 2,
        }
    }

    fn meta() -> CheckpointMeta {
        CheckpointMeta {
            model_id: "test-model".into(),
            objective: Objective::Ceb,
            rho: 2.0,
            schedule: RhoSchedule::constant(2.0),
            seed: 7,
            step: 123,
            config_hash: "abc123".into(),
        }
    }

    #[test]
    fn checkpoints_round_trip_the_model_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = CebModel::new(&spec(), 3, ClassifierKind::Linear, 99).unwrap();
        save_checkpoint(&path, &model, &meta()).unwrap();
        let (loaded, m) = load_checkpoint(&path).unwrap();
        assert_eq!(m, meta());
        assert_eq!(m.schedule.phase, SchedulePhase::Constant);
        for ((na, a), (nb, b)) in model
            .named_parameters()
            .iter()
            .zip(loaded.named_parameters().iter())
        {
            assert_eq!(na, nb);
            assert_eq!(a.data(), b.data());
        }
        // the loaded model computes the same loss
        let x = Tensor::from_vec(&[1, 3], vec![0.2, -0.4, 0.9]).unwrap();
        let eps = Tensor::zeros(&[1, 2]);
        let a = ceb_loss_with_noise(&model, &x, &[1], 2.0, &eps).unwrap();
        let b = ceb_loss_with_noise(&loaded, &x, &[1], 2.0, &eps).unwrap();
        assert_eq!(a.breakdown.total, b.breakdown.total);
    }

    #[test]
    fn saving_twice_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.ckpt");
        let b = dir.path().join("b.ckpt");
        let model = CebModel::new(&spec(), 3, ClassifierKind::Consistent, 4).unwrap();
        save_checkpoint(&a, &model, &meta()).unwrap();
        save_checkpoint(&b, &model, &meta()).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn wrong_magic_and_version_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        std::fs::write(&path, b"WRONGMAG0000").unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::Malformed {
                kind: "checkpoint",
                ..
            })
        ));

        let good = dir.path().join("good.ckpt");
        let model = CebModel::new(&spec(), 2, ClassifierKind::Linear, 1).unwrap();
        save_checkpoint(&good, &model, &meta()).unwrap();
        let mut bytes = std::fs::read(&good).unwrap();
        bytes[8..12].copy_from_slice(&99u32.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::FormatVersion { found: 99, .. })
        ));
    }
}
