use super::{evaluate, train, Metrics, TrainConfig, TrainOutcome};
use crate::error::{Error, Result};
use crate::model::{FidelityConfig, Model, ModelConfig};
use crate::structures::LabeledFrame;

/// Fidelity tag of low-fidelity frames in two-fidelity experiments.
pub const LOW: usize = 1;
/// Fidelity tag of high-fidelity frames in two-fidelity experiments.
pub const HIGH: usize = 2;

/// Low-fidelity training frames plus high-fidelity training and test frames.
#[derive(Clone, Copy, Debug)]
pub struct ExperimentData<'a> {
    pub lf: &'a [LabeledFrame],
    pub hf_train: &'a [LabeledFrame],
    pub hf_test: &'a [LabeledFrame],
}

fn retag(frames: &[LabeledFrame], fidelity: usize) -> Vec<LabeledFrame> {
    frames.iter().map(|f| f.with_fidelity(fidelity)).collect()
}

/// `base` with two fidelities and the given mechanisms.
pub fn multi_fidelity_config(base: ModelConfig, toggles: FidelityConfig) -> ModelConfig {
    ModelConfig {
        fidelity: FidelityConfig {
            n_fidelities: 2,
            ..toggles
        },
        ..base
    }
}

/// `base` as a plain single-fidelity model.
pub fn high_fidelity_only_config(base: ModelConfig) -> ModelConfig {
    ModelConfig {
        fidelity: FidelityConfig::none(1),
        ..base
    }
}

/// Joint training with `lf` tagged as fidelity 1 and `hf` as fidelity 2.
pub fn train_multi_fidelity(
    lf: &[LabeledFrame],
    hf: &[LabeledFrame],
    base: ModelConfig,
    toggles: FidelityConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if hf.is_empty() {
        return Err(Error::Config("no high-fidelity training frames".into()));
    }
    let mut frames = retag(hf, HIGH);
    frames.extend(retag(lf, LOW));
    train(&frames, multi_fidelity_config(base, toggles), cfg)
}

/// Single-fidelity training on `hf` alone.
pub fn train_high_fidelity_only(
    hf: &[LabeledFrame],
    base: ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train(&retag(hf, 1), high_fidelity_only_config(base), cfg)
}

/// Overall metrics of `model` on `frames`, all evaluated at `fidelity`.
pub fn evaluate_at(model: &Model, frames: &[LabeledFrame], fidelity: usize) -> Result<Metrics> {
    Ok(evaluate(model, &retag(frames, fidelity))?.overall)
}
