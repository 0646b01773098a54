//! JSON checkpoints: model config, free-form run metadata and named
//! tensors. Floats round-trip bit-exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{PedGnnConfig, PedGnnParams};

pub const FORMAT: &str = "pedgnn-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: PedGnnConfig,
    #[serde(default)]
    pub meta: BTreeMap<String, serde_json::Value>,
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn from_params(params: &PedGnnParams, meta: BTreeMap<String, serde_json::Value>) -> Self {
        let tensors = params
            .tensors()
            .into_iter()
            .map(|(name, shape, range)| Tensor { name, shape, values: params.values[range].to_vec() })
            .collect();
        Checkpoint { format: FORMAT.into(), version: VERSION, config: params.config, meta, tensors }
    }

    /// Rebuilds the flat parameter vector, checking every tensor's name and
    /// shape against the layout implied by the config.
    pub fn to_params(&self) -> Result<PedGnnParams> {
        if self.format != FORMAT || self.version != VERSION {
            return Err(Error::format(format!("unsupported checkpoint {} v{}", self.format, self.version)));
        }
        let mut params = PedGnnParams::zeros(self.config)?;
        let layout = params.tensors();
        if layout.len() != self.tensors.len() {
            return Err(Error::format(format!("checkpoint has {} tensors, config needs {}", self.tensors.len(), layout.len())));
        }
        for ((name, shape, range), t) in layout.into_iter().zip(&self.tensors) {
            if t.name != name || t.shape != shape || t.values.len() != range.len() {
                return Err(Error::format(format!(
                    "tensor {} {:?} does not match expected {name} {shape:?}",
                    t.name, t.shape
                )));
            }
            if t.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("tensor {name} has non-finite values")));
            }
            params.values[range].copy_from_slice(&t.values);
        }
        Ok(params)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format_at(e.line(), e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
