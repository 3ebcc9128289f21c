//! Model persistence.
//!
//! Layout: an 8-byte little-endian manifest length, the JSON manifest, then
//! every parameter array in manifest order as an 8-byte little-endian element
//! count followed by little-endian doubles. The manifest carries a SHA-256 of
//! the binary section.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{Architecture, Dlgm};
use crate::numcore::Matrix;
use crate::params::{GradientSet, Parameterized};
use crate::recognition::CovarianceMode;
use crate::trainer::OptimizerState;

pub const FORMAT_VERSION: u32 = 1;

/// Prefix for optimizer accumulator arrays.
const OPT_PREFIX: &str = "opt.";

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub model: Dlgm,
    pub seed: u64,
    /// Completed training steps.
    pub step: u64,
    /// `(height, width)` of the visible layer when it holds images.
    pub image_shape: Option<(usize, usize)>,
    /// Present in checkpoints so a run can resume.
    pub optimizer: Option<OptimizerState>,
}

impl ModelFile {
    pub fn new(model: Dlgm) -> Self {
        ModelFile {
            model,
            seed: 0,
            step: 0,
            image_shape: None,
            optimizer: None,
        }
    }

    pub fn covariance(&self) -> CovarianceMode {
        self.model.recognition.mode()
    }

    pub fn require_covariance(&self, mode: CovarianceMode) -> Result<()> {
        if self.covariance() != mode {
            return Err(Error::ModelFormat(format!(
                "model uses {} covariance, expected {mode}",
                self.covariance()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    architecture: Architecture,
    kappa: f64,
    seed: u64,
    step: u64,
    image_shape: Option<(usize, usize)>,
    optimizer: Option<OptimizerMeta>,
    arrays: Vec<ArrayMeta>,
    payload_sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerMeta {
    alpha: f64,
    rho: f64,
    delta: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArrayMeta {
    name: String,
    rows: usize,
    cols: usize,
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn named_arrays(file: &ModelFile) -> Vec<(String, &Matrix)> {
    let mut out = Vec::new();
    file.model.visit_params(&mut |name, m| out.push((name, m)));
    if let Some(opt) = &file.optimizer {
        out.extend(opt.accumulators().iter().map(|(n, m)| (format!("{OPT_PREFIX}{n}"), m)));
    }
    out
}

pub fn to_bytes(file: &ModelFile) -> Result<Vec<u8>> {
    let arrays = named_arrays(file);
    let mut payload = Vec::with_capacity(arrays.iter().map(|(_, m)| 8 + 8 * m.len()).sum());
    for (_, m) in &arrays {
        payload.extend_from_slice(&(m.len() as u64).to_le_bytes());
        for x in m.data() {
            payload.extend_from_slice(&x.to_le_bytes());
        }
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        architecture: file.model.architecture(),
        kappa: file.model.generative.kappa,
        seed: file.seed,
        step: file.step,
        image_shape: file.image_shape,
        optimizer: file.optimizer.as_ref().map(|o| OptimizerMeta {
            alpha: o.alpha,
            rho: o.rho,
            delta: o.delta,
        }),
        arrays: arrays
            .iter()
            .map(|(name, m)| ArrayMeta {
                name: name.clone(),
                rows: m.rows(),
                cols: m.cols(),
            })
            .collect(),
        payload_sha256: hex_digest(&payload),
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(8 + json.len() + payload.len());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Truncated {
            expected: n,
            found: bytes.len(),
        });
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

fn take_u64(bytes: &mut &[u8]) -> Result<u64> {
    Ok(u64::from_le_bytes(take(bytes, 8)?.try_into().expect("8 bytes")))
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelFile> {
    let mut rest = bytes;
    let len = usize::try_from(take_u64(&mut rest)?).map_err(|_| Error::DimOverflow)?;
    let json = take(&mut rest, len)?;
    let value: serde_json::Value = serde_json::from_slice(json)?;
    let version = value
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::ModelFormat("manifest has no format_version".into()))?;
    if version != FORMAT_VERSION as u64 {
        return Err(Error::UnsupportedVersion(version.min(u32::MAX as u64) as u32));
    }
    let manifest: Manifest = serde_json::from_value(value)?;
    if hex_digest(rest) != manifest.payload_sha256 {
        return Err(Error::Checksum);
    }

    let mut model = Dlgm::new(&manifest.architecture, manifest.kappa)?;
    let mut expected: Vec<ArrayMeta> = Vec::new();
    model.visit_params(&mut |name, m| {
        expected.push(ArrayMeta {
            name,
            rows: m.rows(),
            cols: m.cols(),
        })
    });
    let n_params = expected.len();
    if manifest.optimizer.is_some() {
        let opt: Vec<ArrayMeta> = expected
            .iter()
            .map(|a| ArrayMeta {
                name: format!("{OPT_PREFIX}{}", a.name),
                ..a.clone()
            })
            .collect();
        expected.extend(opt);
    }
    if manifest.arrays != expected {
        return Err(Error::ModelFormat(format!(
            "declared arrays do not match a {} model with this architecture",
            manifest.architecture.covariance
        )));
    }

    let mut arrays = Vec::with_capacity(expected.len());
    for meta in &manifest.arrays {
        let n = take_u64(&mut rest)?;
        if n != (meta.rows * meta.cols) as u64 {
            return Err(Error::ModelFormat(format!(
                "array {} has {n} elements, expected {}",
                meta.name,
                meta.rows * meta.cols
            )));
        }
        let raw = take(&mut rest, 8 * n as usize)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        arrays.push(Matrix::new(meta.rows, meta.cols, data)?);
    }
    if !rest.is_empty() {
        return Err(Error::TrailingBytes { extra: rest.len() });
    }

    let mut it = arrays.into_iter();
    model.visit_params_mut(&mut |_, m| *m = it.next().expect("layout checked"));
    let optimizer = match manifest.optimizer {
        Some(o) => {
            let mut acc = GradientSet::new();
            for (meta, m) in manifest.arrays[n_params..].iter().zip(it) {
                acc.insert(meta.name[OPT_PREFIX.len()..].to_string(), m);
            }
            Some(OptimizerState::from_parts(acc, o.alpha, o.rho, o.delta)?)
        }
        None => None,
    };
    Ok(ModelFile {
        model,
        seed: manifest.seed,
        step: manifest.step,
        image_shape: manifest.image_shape,
        optimizer,
    })
}

pub fn save_model(path: impl AsRef<Path>, file: &ModelFile) -> Result<()> {
    std::fs::write(path, to_bytes(file)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelFile> {
    from_bytes(&std::fs::read(path)?)
}
