use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tensorcore::Tensor;

use super::{Model, ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::structures::N_ELEMENTS;

pub const CHECKPOINT_FORMAT: &str = "mfpot-checkpoint-v1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorRecord {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl From<&Tensor> for TensorRecord {
    fn from(t: &Tensor) -> Self {
        Self {
            rows: t.rows(),
            cols: t.cols(),
            data: t.data().to_vec(),
        }
    }
}

impl TensorRecord {
    fn into_tensor(self, name: &str) -> Result<Tensor> {
        Tensor::from_vec(self.rows, self.cols, self.data)
            .map_err(|e| Error::Checkpoint(format!("tensor {name}: {e}")))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format: String,
    config: ModelConfig,
    composition: TensorRecord,
    params: BTreeMap<String, TensorRecord>,
}

impl Model {
    pub fn to_json(&self) -> Result<String> {
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.to_string(),
            config: self.config,
            composition: (&self.composition).into(),
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.to_string(), v.into()))
                .collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    /// Parses a checkpoint and checks that every tensor the configuration
    /// calls for is present with the right shape.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| Error::Checkpoint(format!("not valid JSON: {e}")))?;
        match value.get("format").and_then(|f| f.as_str()) {
            Some(CHECKPOINT_FORMAT) => {}
            Some(other) => {
                return Err(Error::CheckpointVersion {
                    found: other.to_string(),
                    expected: CHECKPOINT_FORMAT.to_string(),
                })
            }
            None => return Err(Error::Checkpoint("missing format tag".into())),
        }
        let file: CheckpointFile =
            serde_json::from_value(value).map_err(|e| Error::Checkpoint(e.to_string()))?;
        file.config.validate()?;
        let reference = ModelParams::init(&file.config, 0);
        let mut params = ModelParams::default();
        let mut records = file.params;
        for (name, expected) in reference.iter() {
            let record = records
                .remove(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            let t = record.into_tensor(name)?;
            if t.shape() != expected.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    t.shape(),
                    expected.shape()
                )));
            }
            if !t.is_finite() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has non-finite entries"
                )));
            }
            params.insert(name.to_string(), t);
        }
        if let Some(extra) = records.keys().next() {
            return Err(Error::Checkpoint(format!("unexpected tensor {extra}")));
        }
        let composition = file.composition.into_tensor("composition")?;
        if composition.shape() != (N_ELEMENTS, file.config.fidelity.n_fidelities) {
            return Err(Error::Checkpoint(format!(
                "composition table has shape {:?}",
                composition.shape()
            )));
        }
        Ok(Self {
            config: file.config,
            params,
            composition,
        })
    }

    /// Writes the checkpoint atomically: a temporary file is renamed into
    /// place so a failed write never leaves a partial checkpoint.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = self.to_json()?;
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
