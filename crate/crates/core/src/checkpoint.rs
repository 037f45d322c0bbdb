//! Versioned JSON checkpoint with bit-exact parameter payloads.
//!
//! ```json
//! {
//!   "format_version": 1,
//!   "config": { ... },
//!   "gate_active": false,
//!   "label_names": ["angry", ...],
//!   "parameters": {
//!     "conv.kernel": { "shape": [16, 1, 3, 3], "data": "<base64 of little-endian f32>" }
//!   }
//! }
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FafModel, ModelConfig};
use crate::tensor::{ParamSet, Tensor};

pub const FORMAT_VERSION: i64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamPayload {
    pub shape: Vec<usize>,
    pub data: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: i64,
    pub config: ModelConfig,
    pub gate_active: bool,
    pub label_names: Vec<String>,
    pub parameters: BTreeMap<String, ParamPayload>,
}

fn encode_f32(values: &[f32]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

fn decode_f32(name: &str, payload: &str, expected_len: usize) -> Result<Vec<f32>> {
    let bytes = STANDARD
        .decode(payload)
        .map_err(|e| Error::CheckpointMalformed(format!("`{name}`: bad base64: {e}")))?;
    if bytes.len() != expected_len * 4 {
        return Err(Error::CheckpointMalformed(format!(
            "`{name}`: payload has {} bytes, shape needs {}",
            bytes.len(),
            expected_len * 4
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

impl Checkpoint {
    pub fn from_model(model: &FafModel<f32>) -> Self {
        let parameters = model
            .params()
            .iter()
            .map(|(name, t)| {
                (
                    name.clone(),
                    ParamPayload {
                        shape: t.shape().to_vec(),
                        data: encode_f32(t.data()),
                    },
                )
            })
            .collect();
        Self {
            format_version: FORMAT_VERSION,
            config: model.config().clone(),
            gate_active: model.gate_active(),
            label_names: model.config().label_names.clone(),
            parameters,
        }
    }

    pub fn into_model(self) -> Result<FafModel<f32>> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::CheckpointVersion {
                found: self.format_version,
                expected: FORMAT_VERSION,
            });
        }
        if self.label_names != self.config.label_names {
            return Err(Error::CheckpointMalformed(
                "label_names disagree with config.label_names".into(),
            ));
        }
        self.config
            .validate()
            .map_err(|e| Error::CheckpointMalformed(format!("invalid config: {e}")))?;
        let layout = self.config.parameter_layout();
        let mut params = ParamSet::new();
        for (name, (shape, _)) in &layout {
            let p = self
                .parameters
                .get(name)
                .ok_or_else(|| Error::CheckpointMalformed(format!("missing parameter `{name}`")))?;
            if &p.shape != shape {
                return Err(Error::CheckpointShape {
                    name: name.clone(),
                    expected: shape.clone(),
                    found: p.shape.clone(),
                });
            }
            let n = shape.iter().product();
            let data = decode_f32(name, &p.data, n)?;
            params.insert(name.clone(), Tensor::new(shape.clone(), data)?);
        }
        if let Some(extra) = self.parameters.keys().find(|k| !layout.contains_key(*k)) {
            return Err(Error::CheckpointMalformed(format!("unexpected parameter `{extra}`")));
        }
        FafModel::from_parts(self.config, params, self.gate_active)
            .map_err(|e| Error::CheckpointMalformed(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Parses a checkpoint document, checking the version before the body
    /// so version errors are reported even when the schema has changed.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::CheckpointMalformed(e.to_string()))?;
        let version = value
            .get("format_version")
            .and_then(serde_json::Value::as_i64)
            .ok_or_else(|| Error::CheckpointMalformed("missing integer format_version".into()))?;
        if version != FORMAT_VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        serde_json::from_value(value).map_err(|e| Error::CheckpointMalformed(e.to_string()))
    }
}

pub fn save(model: &FafModel<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = Checkpoint::from_model(model).to_json()?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<FafModel<f32>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_json(&text)?.into_model()
}
