//! `FSM1` model files.
//!
//! ```text
//! "FSM1" | version: u32 LE | header length: u64 LE | header JSON | payload: f64 LE
//! ```
//!
//! The header manifest lists every tensor's name, shape and payload offset (in `f64`
//! elements). Serialization is canonical, so load followed by save reproduces the bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encode::EncodeOptions;
use crate::net::{ModelConfig, ParamTensor, PredictorParams};
use crate::quantize::VelocitySequence;
use crate::train::{NeighborIndex, RegressionParams, TrainConfig};
use crate::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"FSM1";
pub const MODEL_VERSION: u32 = 1;
const INDEX_TENSOR: &str = "index.embeddings";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Sequence,
    Regression,
    Nn,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Sequence => "sequence",
            ModelKind::Regression => "regression",
            ModelKind::Nn => "nn",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub kind: ModelKind,
    pub precision: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub encode: EncodeOptions,
    /// Speed threshold used to decode regression outputs.
    pub stop_speed: f64,
    pub dataset_sha256: String,
    /// Hash of the dataset header's generation config.
    pub dataset_config_sha256: String,
    pub excluded_category: Option<String>,
    pub removed_records: usize,
    pub train_records: usize,
    /// Labels of the neighbour index rows (nn models only).
    pub index_labels: Vec<VelocitySequence>,
    pub manifest: Vec<ManifestEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelFile {
    pub header: ModelHeader,
    pub tensors: Vec<ParamTensor>,
}

/// A loaded model ready for prediction.
pub enum LoadedModel {
    Sequence(PredictorParams),
    Regression(RegressionParams),
    Nn(PredictorParams, NeighborIndex),
}

impl ModelFile {
    /// Fills in the manifest from `tensors`.
    pub fn new(mut header: ModelHeader, tensors: Vec<ParamTensor>) -> Self {
        let mut offset = 0;
        header.manifest = tensors
            .iter()
            .map(|t| {
                let e = ManifestEntry {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    offset,
                };
                offset += t.data.len();
                e
            })
            .collect();
        Self { header, tensors }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let n: usize = self.tensors.iter().map(|t| t.data.len()).sum();
        let mut out = Vec::with_capacity(16 + header.len() + 8 * n);
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in &self.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fmt = |m: &str| Error::Format(m.to_string());
        if bytes.len() < 16 || &bytes[..4] != MODEL_MAGIC {
            return Err(fmt("missing FSM1 magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != MODEL_VERSION {
            return Err(Error::Format(format!("unsupported model version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = &bytes[16..];
        if body.len() < hlen {
            return Err(fmt("truncated model header"));
        }
        let header: ModelHeader = serde_json::from_slice(&body[..hlen])?;
        let payload = &body[hlen..];
        if !payload.len().is_multiple_of(8) {
            return Err(fmt("payload is not a whole number of f64 values"));
        }
        let values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut expected = 0;
        let mut tensors = Vec::with_capacity(header.manifest.len());
        for e in &header.manifest {
            let len: usize = e.shape.iter().product();
            if e.offset != expected || e.offset + len > values.len() {
                return Err(Error::Format(format!("manifest entry {} out of range", e.name)));
            }
            tensors.push(ParamTensor {
                name: e.name.clone(),
                shape: e.shape.clone(),
                data: values[e.offset..e.offset + len].to_vec(),
            });
            expected += len;
        }
        if expected != values.len() {
            return Err(Error::Format(format!(
                "payload holds {} values, manifest declares {expected}",
                values.len()
            )));
        }
        Ok(Self { header, tensors })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn into_model(self) -> Result<LoadedModel> {
        let cfg = &self.header.model;
        match self.header.kind {
            ModelKind::Sequence => Ok(LoadedModel::Sequence(PredictorParams::from_tensors(
                cfg,
                self.tensors,
            )?)),
            ModelKind::Regression => Ok(LoadedModel::Regression(RegressionParams::from_tensors(
                cfg,
                self.tensors,
            )?)),
            ModelKind::Nn => {
                let mut tensors = self.tensors;
                let pos = tensors
                    .iter()
                    .position(|t| t.name == INDEX_TENSOR)
                    .ok_or_else(|| Error::Format("nn model without neighbour index".into()))?;
                let idx = tensors.remove(pos);
                let [rows, dim] = idx.shape[..] else {
                    return Err(Error::Format("neighbour index must be two-dimensional".into()));
                };
                if rows != self.header.index_labels.len() {
                    return Err(Error::Format("neighbour index rows do not match labels".into()));
                }
                let embeddings = (0..rows)
                    .map(|r| idx.data[r * dim..(r + 1) * dim].to_vec())
                    .collect();
                let params = PredictorParams::from_tensors(cfg, tensors)?;
                Ok(LoadedModel::Nn(
                    params,
                    NeighborIndex {
                        embeddings,
                        labels: self.header.index_labels,
                    },
                ))
            }
        }
    }
}

/// Flattens a neighbour index into a payload tensor plus its labels.
pub fn index_tensor(index: &NeighborIndex) -> (ParamTensor, Vec<VelocitySequence>) {
    let dim = index.embeddings.first().map_or(0, Vec::len);
    (
        ParamTensor {
            name: INDEX_TENSOR.into(),
            shape: vec![index.len(), dim],
            data: index.embeddings.concat(),
        },
        index.labels.clone(),
    )
}
