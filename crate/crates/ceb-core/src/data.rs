//! Datasets: synthetic generators, the on-disk container and CSV import.
//!
//! A dataset is a flat row-major f64 feature matrix plus integer labels,
//! with per-example shape metadata (`[dim]` for flat features, `[h, w, c]`
//! for images) and the valid input range used for attack clipping.
//!
//! ## File format
//!
//! Little-endian binary container:
//!
//! ```text
//! magic    8 bytes  "CEBDATA\0"
//! version  u32      1
//! hdr_len  u32      length of the JSON header
//! header   JSON     { format_version, n, feature_shape, num_classes,
//!                     input_min, input_max, seed, provenance, config_hash }
//! features n * prod(feature_shape) f64
//! labels   n u64
//! ```

use crate::error::{Error, Result};
use crate::seeds;
use crate::tensor::Tensor;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

pub const DATASET_MAGIC: &[u8; 8] = b"CEBDATA\0";
pub const DATASET_FORMAT_VERSION: u32 = 1;

/// In-memory dataset. Features are `[n, prod(feature_shape)]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
    /// Per-example shape: `[dim]` or `[h, w, c]`.
    pub feature_shape: Vec<usize>,
    pub num_classes: usize,
    /// Valid input range for attack clipping; `None` means unbounded.
    pub input_min: Option<f64>,
    pub input_max: Option<f64>,
    /// Seed the generator used (0 for imported data).
    pub seed: u64,
    /// Human-readable origin: generator and parameters, or source file.
    pub provenance: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_shape.iter().product()
    }

    pub fn is_image(&self) -> bool {
        self.feature_shape.len() == 3
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let d = self.feature_dim();
        if self.features.len() != self.len() * d {
            return Err(Error::InvalidDataset(format!(
                "feature buffer has {} values, expected {} x {}",
                self.features.len(),
                self.len(),
                d
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidDataset(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if let Some(&bad) = self.labels.iter().find(|&&y| y >= self.num_classes) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                num_classes: self.num_classes,
            });
        }
        Ok(())
    }

    /// All features as a `[n, dim]` tensor.
    pub fn features_tensor(&self) -> Tensor {
        Tensor::from_vec(&[self.len(), self.feature_dim()], self.features.clone())
            .expect("consistent buffer")
    }

    /// Rows selected by index as a `[b, dim]` tensor plus their labels.
    pub fn batch(&self, idx: &[usize]) -> (Tensor, Vec<usize>) {
        let d = self.feature_dim();
        let mut buf = Vec::with_capacity(idx.len() * d);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            buf.extend_from_slice(&self.features[i * d..(i + 1) * d]);
            labels.push(self.labels[i]);
        }
        (
            Tensor::from_vec(&[idx.len(), d], buf).expect("consistent buffer"),
            labels,
        )
    }

    /// Example `i` under its per-example shape (an image for image data).
    pub fn example(&self, i: usize) -> Tensor {
        let d = self.feature_dim();
        Tensor::from_vec(
            &self.feature_shape,
            self.features[i * d..(i + 1) * d].to_vec(),
        )
        .expect("consistent buffer")
    }

    /// Replaces example `i` with new per-example data of the same length.
    pub fn set_example(&mut self, i: usize, data: &[f64]) {
        let d = self.feature_dim();
        self.features[i * d..(i + 1) * d].copy_from_slice(data);
    }
}

/// Synthetic data families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorSpec {
    /// Gaussian class clusters with unit within-class stddev, centers spaced
    /// so adjacent centers sit `separation` apart, plus pure-noise nuisance
    /// dimensions for the bottleneck to discard.
    Blobs {
        classes: usize,
        #[serde(default = "default_base_dim")]
        base_dim: usize,
        separation: f64,
        #[serde(default)]
        nuisance_dims: usize,
    },
    /// Two interleaved half-circles with Gaussian noise and nuisance
    /// dimensions. Always 2 classes.
    TwoMoonsWithNuisance {
        noise_std: f64,
        #[serde(default)]
        nuisance_dims: usize,
    },
    /// Grayscale `size x size x 1` images of oriented sinusoidal stripes in
    /// [0, 1]; class = orientation. The image-shaped stand-in dataset for
    /// the corruption benchmark.
    Stripes {
        classes: usize,
        #[serde(default = "default_stripe_size")]
        size: usize,
        #[serde(default = "default_stripe_noise")]
        noise_std: f64,
    },
}

fn default_base_dim() -> usize {
    2
}
fn default_stripe_size() -> usize {
    8
}
fn default_stripe_noise() -> f64 {
    0.05
}

/// Generator plus split sizes; the train/test proportions are fixed by
/// config, and the split is deterministic given the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    #[serde(flatten)]
    pub generator: GeneratorSpec,
    pub n_train: usize,
    pub n_test: usize,
}

/// Generates a (train, test) pair. Identical spec and seed reproduce the
/// datasets byte for byte.
pub fn synthetic_dataset(spec: &SyntheticSpec, seed: u64) -> Result<(Dataset, Dataset)> {
    let n_total = spec.n_train + spec.n_test;
    if n_total == 0 {
        return Err(Error::EmptyDataset);
    }
    let all = match &spec.generator {
        GeneratorSpec::Blobs {
            classes,
            base_dim,
            separation,
            nuisance_dims,
        } => gen_blobs(
            *classes,
            *base_dim,
            *separation,
            *nuisance_dims,
            n_total,
            seed,
        )?,
        GeneratorSpec::TwoMoonsWithNuisance {
            noise_std,
            nuisance_dims,
        } => gen_two_moons(*noise_std, *nuisance_dims, n_total, seed),
        GeneratorSpec::Stripes {
            classes,
            size,
            noise_std,
        } => gen_stripes(*classes, *size, *noise_std, n_total, seed)?,
    };
    all.validate()?;
    let (train, test) = split(all, spec.n_train);
    Ok((train, test))
}

fn split(all: Dataset, n_train: usize) -> (Dataset, Dataset) {
    let d = all.feature_dim();
    let train = Dataset {
        features: all.features[..n_train * d].to_vec(),
        labels: all.labels[..n_train].to_vec(),
        provenance: format!("{} [train]", all.provenance),
        ..all.clone()
    };
    let test = Dataset {
        features: all.features[n_train * d..].to_vec(),
        labels: all.labels[n_train..].to_vec(),
        provenance: format!("{} [test]", all.provenance),
        ..all
    };
    (train, test)
}

fn gen_blobs(
    classes: usize,
    base_dim: usize,
    separation: f64,
    nuisance_dims: usize,
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::InvalidDataset(format!(
            "blobs needs at least 2 classes, got {classes}"
        )));
    }
    if base_dim < 2 && classes > 2 {
        return Err(Error::InvalidDataset(
            "blobs with more than 2 classes needs base_dim >= 2".into(),
        ));
    }
    let dim = base_dim + nuisance_dims;
    // Centers on a circle in the first two base dimensions, spaced so that
    // adjacent centers are `separation` apart (for K=2 this is a pair at
    // +/- separation/2 on the first axis). Within-class stddev is 1, so
    // `separation` is in units of sigma.
    let radius = if classes == 2 {
        separation / 2.0
    } else {
        separation / (2.0 * (std::f64::consts::PI / classes as f64).sin())
    };
    let mut centers = vec![vec![0.0; base_dim]; classes];
    for (k, c) in centers.iter_mut().enumerate() {
        let angle = 2.0 * std::f64::consts::PI * k as f64 / classes as f64;
        c[0] = radius * angle.cos();
        if base_dim > 1 {
            c[1] = radius * angle.sin();
        }
    }

    let mut rng = seeds::rng(seed, "blobs");
    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % classes;
        labels.push(y);
        for j in 0..base_dim {
            features.push(centers[y][j] + rng.sample::<f64, _>(StandardNormal));
        }
        for _ in 0..nuisance_dims {
            features.push(rng.sample::<f64, _>(StandardNormal));
        }
    }
    Ok(Dataset {
        features,
        labels,
        feature_shape: vec![dim],
        num_classes: classes,
        input_min: None,
        input_max: None,
        seed,
        provenance: format!(
            "blobs(classes={classes}, base_dim={base_dim}, separation={separation}, nuisance={nuisance_dims})"
        ),
    })
}

fn gen_two_moons(noise_std: f64, nuisance_dims: usize, n: usize, seed: u64) -> Dataset {
    let dim = 2 + nuisance_dims;
    let mut rng = seeds::rng(seed, "two-moons");
    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % 2;
        labels.push(y);
        let t = std::f64::consts::PI * rng.gen::<f64>();
        let (mut a, mut b) = if y == 0 {
            (t.cos(), t.sin())
        } else {
            (1.0 - t.cos(), 0.5 - t.sin())
        };
        a += noise_std * rng.sample::<f64, _>(StandardNormal);
        b += noise_std * rng.sample::<f64, _>(StandardNormal);
        features.push(a);
        features.push(b);
        for _ in 0..nuisance_dims {
            features.push(rng.sample::<f64, _>(StandardNormal));
        }
    }
    Dataset {
        features,
        labels,
        feature_shape: vec![dim],
        num_classes: 2,
        input_min: None,
        input_max: None,
        seed,
        provenance: format!(
            "two_moons_with_nuisance(noise_std={noise_std}, nuisance={nuisance_dims})"
        ),
    }
}

fn gen_stripes(
    classes: usize,
    size: usize,
    noise_std: f64,
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::InvalidDataset(format!(
            "stripes needs at least 2 classes, got {classes}"
        )));
    }
    if size < 4 {
        return Err(Error::InvalidDataset("stripes needs size >= 4".into()));
    }
    let dim = size * size;
    let mut rng = seeds::rng(seed, "stripes");
    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    // Low-amplitude, moderately high-frequency stripes keep the task
    // readable for a trained model but sensitive to the corruption kernels
    // (severity-5 noise costs a trained classifier roughly half its
    // accuracy at the default settings).
    let freq = 2.0; // stripe cycles across the image
    let amplitude = 0.2;
    for i in 0..n {
        let y = i % classes;
        labels.push(y);
        let theta = std::f64::consts::PI * y as f64 / classes as f64;
        let phase = 2.0 * std::f64::consts::PI * rng.gen::<f64>();
        let (ct, st) = (theta.cos(), theta.sin());
        for r in 0..size {
            for c in 0..size {
                let u = (c as f64 * ct + r as f64 * st) / size as f64;
                let v = 0.5
                    + amplitude * (2.0 * std::f64::consts::PI * freq * u + phase).sin()
                    + noise_std * rng.sample::<f64, _>(StandardNormal);
                features.push(v.clamp(0.0, 1.0));
            }
        }
    }
    Ok(Dataset {
        features,
        labels,
        feature_shape: vec![size, size, 1],
        num_classes: classes,
        input_min: Some(0.0),
        input_max: Some(1.0),
        seed,
        provenance: format!("stripes(classes={classes}, size={size}, noise_std={noise_std})"),
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetHeader {
    format_version: u32,
    n: usize,
    feature_shape: Vec<usize>,
    num_classes: usize,
    input_min: Option<f64>,
    input_max: Option<f64>,
    seed: u64,
    provenance: String,
    config_hash: String,
}

/// Writes the binary container described in the module docs.
pub fn write_dataset(path: &Path, ds: &Dataset, config_hash: &str) -> Result<()> {
    ds.validate()?;
    let header = DatasetHeader {
        format_version: DATASET_FORMAT_VERSION,
        n: ds.len(),
        feature_shape: ds.feature_shape.clone(),
        num_classes: ds.num_classes,
        input_min: ds.input_min,
        input_max: ds.input_max,
        seed: ds.seed,
        provenance: ds.provenance.clone(),
        config_hash: config_hash.to_string(),
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(DATASET_MAGIC)?;
    w.write_all(&DATASET_FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    for v in &ds.features {
        w.write_all(&v.to_le_bytes())?;
    }
    for &y in &ds.labels {
        w.write_all(&(y as u64).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the binary container; returns the dataset and the embedded
/// producing-config hash.
pub fn read_dataset(path: &Path) -> Result<(Dataset, String)> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != DATASET_MAGIC {
        return Err(Error::Malformed {
            kind: "dataset",
            detail: format!("bad magic {magic:?}"),
        });
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != DATASET_FORMAT_VERSION {
        return Err(Error::FormatVersion {
            found: version,
            expected: DATASET_FORMAT_VERSION,
        });
    }
    r.read_exact(&mut u32buf)?;
    let hdr_len = u32::from_le_bytes(u32buf) as usize;
    let mut hdr = vec![0u8; hdr_len];
    r.read_exact(&mut hdr)?;
    let header: DatasetHeader = serde_json::from_slice(&hdr)?;

    let dim: usize = header.feature_shape.iter().product();
    let mut features = vec![0.0f64; header.n * dim];
    let mut f64buf = [0u8; 8];
    for v in &mut features {
        r.read_exact(&mut f64buf)?;
        *v = f64::from_le_bytes(f64buf);
    }
    let mut labels = Vec::with_capacity(header.n);
    for _ in 0..header.n {
        r.read_exact(&mut f64buf)?;
        labels.push(u64::from_le_bytes(f64buf) as usize);
    }
    let ds = Dataset {
        features,
        labels,
        feature_shape: header.feature_shape,
        num_classes: header.num_classes,
        input_min: header.input_min,
        input_max: header.input_max,
        seed: header.seed,
        provenance: header.provenance,
    };
    ds.validate()?;
    Ok((ds, header.config_hash))
}

/// Imports a headerless CSV of `feature..., label` rows (label in the last
/// column as a non-negative integer).
pub fn import_csv(path: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    let mut features = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let mut dim: Option<usize> = None;
    for record in reader.records() {
        let record = record?;
        if record.len() < 2 {
            return Err(Error::InvalidDataset(
                "csv rows need at least one feature and a label".into(),
            ));
        }
        let row_dim = record.len() - 1;
        match dim {
            None => dim = Some(row_dim),
            Some(d) if d != row_dim => {
                return Err(Error::InvalidDataset(format!(
                    "inconsistent csv width: {row_dim} vs {d}"
                )))
            }
            _ => {}
        }
        for i in 0..row_dim {
            features.push(record[i].trim().parse::<f64>().map_err(|e| {
                Error::InvalidDataset(format!("bad feature value {:?}: {e}", &record[i]))
            })?);
        }
        let label = record[row_dim]
            .trim()
            .parse::<usize>()
            .map_err(|e| Error::InvalidDataset(format!("bad label {:?}: {e}", &record[row_dim])))?;
        labels.push(label);
    }
    let dim = dim.ok_or(Error::EmptyDataset)?;
    let num_classes = labels.iter().max().map(|m| m + 1).unwrap_or(0).max(2);
    let ds = Dataset {
        features,
        labels,
        feature_shape: vec![dim],
        num_classes,
        input_min: None,
        input_max: None,
        seed: 0,
        provenance: format!("csv:{}", path.display()),
    };
    ds.validate()?;
    Ok(ds)
}
