use std::path::{Path, PathBuf};

use anyhow::Context;
use mfpot::model::ModelConfig;
use mfpot::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::UsageError;

/// Everything a run needs besides command-line flags. Omitted keys take
/// their defaults; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Network shape, graph cutoffs and fidelity mechanisms.
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Share of the (high-fidelity) data reserved for final testing.
    pub test_fraction: f64,
    /// Seed used by `train` for the test split; experiments loop over `seeds`.
    pub seed: u64,
    pub seeds: Vec<u64>,
    /// High-fidelity training frames per ablation run.
    pub ablation_hf: usize,
    /// High-fidelity training frame counts compared by `transfer`.
    pub transfer_sweep: Vec<usize>,
    pub data: Option<PathBuf>,
    pub data_lf: Option<PathBuf>,
    pub data_hf: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            test_fraction: 0.1,
            seed: 0,
            seeds: vec![0, 1, 2],
            ablation_hf: 100,
            transfer_sweep: vec![50, 100, 200, 400],
            data: None,
            data_lf: None,
            data_hf: None,
            out: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let cfg = match path {
            None => Self::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text)
                    .map_err(|e| UsageError(format!("config {}: {e}", p.display())))?
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.model
            .validate()
            .map_err(|e| UsageError(e.to_string()))?;
        self.train
            .validate()
            .map_err(|e| UsageError(e.to_string()))?;
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(UsageError("test_fraction must lie in [0, 1)".into()).into());
        }
        if self.seeds.is_empty() {
            return Err(UsageError("seeds must not be empty".into()).into());
        }
        Ok(())
    }
}

/// Flag value if given, else the config value, else a usage error.
pub fn pick(
    flag: Option<PathBuf>,
    config: &Option<PathBuf>,
    name: &str,
) -> anyhow::Result<PathBuf> {
    flag.or_else(|| config.clone()).ok_or_else(|| {
        UsageError(format!(
            "--{name} is required (or set it in the config file)"
        ))
        .into()
    })
}
