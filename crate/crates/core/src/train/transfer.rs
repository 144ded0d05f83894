use super::experiment::high_fidelity_only_config;
use super::{train, train_model, EpochRecord, TrainConfig};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::structures::LabeledFrame;

/// Parameter name prefixes frozen during fine-tuning: the embeddings and
/// every convolution layer.
pub const TRANSFER_FROZEN_PREFIXES: [&str; 2] = ["embed.", "conv"];

#[derive(Clone, Debug)]
pub struct TransferOutcome {
    pub model: Model,
    pub pretrain: Vec<EpochRecord>,
    pub finetune: Vec<EpochRecord>,
    /// Names of the tensors held fixed while fine-tuning.
    pub frozen: Vec<String>,
}

/// Transfer-learning baseline: a single-fidelity model is pretrained on
/// `lf`, then its embeddings and convolutions are frozen while the
/// composition model is refit and the heads are fine-tuned on `hf`.
pub fn transfer_train(
    lf: &[LabeledFrame],
    hf: &[LabeledFrame],
    base: ModelConfig,
    cfg: &TrainConfig,
) -> Result<TransferOutcome> {
    if lf.is_empty() || hf.is_empty() {
        return Err(Error::Config(
            "transfer learning needs both fidelities".into(),
        ));
    }
    let config = high_fidelity_only_config(base);
    let lf: Vec<_> = lf.iter().map(|f| f.with_fidelity(1)).collect();
    let hf: Vec<_> = hf.iter().map(|f| f.with_fidelity(1)).collect();
    let pre = train(&lf, config, cfg)?;

    let mut fine_cfg = cfg.clone();
    fine_cfg
        .frozen
        .extend(TRANSFER_FROZEN_PREFIXES.iter().map(|p| p.to_string()));
    let frozen: Vec<String> = pre
        .model
        .params
        .names()
        .filter(|n| fine_cfg.is_frozen(n))
        .map(str::to_string)
        .collect();
    let fine = train_model(pre.model, &hf, &fine_cfg, &mut |_, _| Ok(()))?;
    Ok(TransferOutcome {
        model: fine.model,
        pretrain: pre.history,
        finetune: fine.history,
        frozen,
    })
}
