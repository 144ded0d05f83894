//! Loss, optimizer, training loop and the experiment harnesses built on it.

mod ablation;
mod experiment;
mod metrics;
mod transfer;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tensorcore::{Tape, Tensor, Var};

pub use ablation::{ablate, AblationRow, AblationTable, AblationVariant, ABLATION_METRICS};
pub use experiment::{
    evaluate_at, high_fidelity_only_config, multi_fidelity_config, train_high_fidelity_only,
    train_multi_fidelity, ExperimentData, HIGH, LOW,
};
pub use metrics::{ErrorStats, Metrics, MetricsAccumulator, MetricsReport};
pub use transfer::{transfer_train, TransferOutcome, TRANSFER_FROZEN_PREFIXES};

use crate::error::{Error, Result};
use crate::graph::CrystalGraph;
use crate::model::{Forward, Model, ModelConfig, Prediction};
use crate::structures::{split_dataset, LabeledFrame};

/// Relative weights of the energy, force, stress and magnetic moment terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub energy: f64,
    pub force: f64,
    pub stress: f64,
    pub magmom: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            energy: 1.0,
            force: 1.0,
            stress: 0.1,
            magmom: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub huber_delta: f64,
    pub weights: LossWeights,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm limit; `None` disables clipping.
    pub grad_clip: Option<f64>,
    /// Share of the training frames held out for per-epoch validation.
    pub validation_fraction: f64,
    pub seed: u64,
    /// Parameters whose names start with any of these prefixes are not updated.
    pub frozen: Vec<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 4,
            epochs: 60,
            lr: 0.005,
            huber_delta: 0.1,
            weights: LossWeights::default(),
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: None,
            validation_fraction: 0.1,
            seed: 0,
            frozen: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let w = self.weights;
        let checks = [
            (self.batch_size >= 1, "batch_size must be at least 1"),
            (self.epochs >= 1, "epochs must be at least 1"),
            (self.lr.is_finite() && self.lr > 0.0, "lr must be positive"),
            (
                self.huber_delta.is_finite() && self.huber_delta > 0.0,
                "huber_delta must be positive",
            ),
            (
                [w.energy, w.force, w.stress, w.magmom]
                    .iter()
                    .all(|x| x.is_finite() && *x >= 0.0),
                "loss weights must be non-negative",
            ),
            ((0.0..1.0).contains(&self.beta1), "beta1 must lie in [0, 1)"),
            ((0.0..1.0).contains(&self.beta2), "beta2 must lie in [0, 1)"),
            (self.adam_eps > 0.0, "adam_eps must be positive"),
            (
                self.grad_clip.is_none_or(|c| c.is_finite() && c > 0.0),
                "grad_clip must be positive",
            ),
            (
                (0.0..1.0).contains(&self.validation_fraction),
                "validation_fraction must lie in [0, 1)",
            ),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(Error::Config((*msg).into())),
            None => Ok(()),
        }
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.frozen.iter().any(|p| name.starts_with(p.as_str()))
    }
}

pub fn huber(residual: f64, delta: f64) -> f64 {
    let a = residual.abs();
    if a <= delta {
        0.5 * residual * residual
    } else {
        delta * (a - 0.5 * delta)
    }
}

fn mean_huber(pairs: impl Iterator<Item = (f64, f64)>, delta: f64) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (p, l) in pairs {
        sum += huber(p - l, delta);
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Weighted Huber loss of one frame. The magnetic moment term is dropped
/// for frames without magmom labels.
pub fn frame_loss(
    pred: &Prediction,
    label: &LabeledFrame,
    weights: &LossWeights,
    delta: f64,
) -> Result<f64> {
    let n = label.n_atoms();
    if pred.forces.len() != n || pred.magmoms.len() != n {
        return Err(Error::Shape(format!(
            "prediction has {} force rows and {} magmoms, label has {n} atoms",
            pred.forces.len(),
            pred.magmoms.len()
        )));
    }
    let mut loss = weights.energy * huber((pred.energy - label.energy) / n as f64, delta);
    let forces = pred
        .forces
        .iter()
        .zip(&label.forces)
        .flat_map(|(p, l)| (0..3).map(|c| (p[c], l[c])));
    loss += weights.force * mean_huber(forces, delta);
    let stress = (0..9).map(|k| (pred.stress[k / 3][k % 3], label.stress[k / 3][k % 3]));
    loss += weights.stress * mean_huber(stress, delta);
    if let Some(m) = &label.magmoms {
        loss +=
            weights.magmom * mean_huber(pred.magmoms.iter().copied().zip(m.iter().copied()), delta);
    }
    Ok(loss)
}

/// Records the frame loss on `tape` from the model outputs, forces and
/// stress already recorded there.
pub fn record_frame_loss(
    tape: &mut Tape,
    fwd: &Forward,
    forces: Var,
    stress: Var,
    label: &LabeledFrame,
    weights: &LossWeights,
    delta: f64,
) -> Result<Var> {
    let n = label.n_atoms();
    if tape.shape(forces) != (n, 3) || tape.shape(fwd.magmoms) != (n, 1) {
        return Err(Error::Shape(format!(
            "recorded outputs do not match a frame of {n} atoms"
        )));
    }
    let weighted_mean = |tape: &mut Tape, pred: Var, target: Tensor, weight: f64| {
        let count = target.len() as f64;
        let target = tape.constant(target);
        let diff = tape.sub(pred, target);
        let h = tape.huber(diff, delta);
        let total = tape.sum_all(h);
        tape.scale(total, weight / count)
    };
    // the energy residual is compared per atom
    let e_pred = tape.scale(fwd.energy, 1.0 / n as f64);
    let mut loss = weighted_mean(
        tape,
        e_pred,
        Tensor::scalar(label.energy / n as f64),
        weights.energy,
    );
    let f_term = weighted_mean(
        tape,
        forces,
        Tensor::from_rows3(&label.forces),
        weights.force,
    );
    loss = tape.add(loss, f_term);
    let s_term = weighted_mean(
        tape,
        stress,
        Tensor::from_rows3(&label.stress),
        weights.stress,
    );
    loss = tape.add(loss, s_term);
    if let Some(m) = &label.magmoms {
        let m_term = weighted_mean(tape, fwd.magmoms, Tensor::column_vector(m), weights.magmom);
        loss = tape.add(loss, m_term);
    }
    Ok(loss)
}

/// Learning rate at `epoch` (0-based) of a cosine schedule that starts at
/// `lr0` and ends at zero on the last epoch.
pub fn cosine_lr(epoch: usize, total_epochs: usize, lr0: f64) -> f64 {
    if total_epochs <= 1 {
        return lr0;
    }
    let t = epoch as f64 / (total_epochs - 1) as f64;
    lr0 * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    moments: BTreeMap<String, (Tensor, Tensor)>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update. Parameters without an entry in `grads`
/// are left untouched. Nothing is modified if any gradient is non-finite.
pub fn adam_step(
    params: &mut crate::model::ModelParams,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    for (name, g) in grads {
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient(name.clone()));
        }
        let p = params.get(name)?;
        if p.shape() != g.shape() {
            return Err(Error::Shape(format!(
                "gradient for {name} has shape {:?}, parameter has {:?}",
                g.shape(),
                p.shape()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (name, g) in grads {
        let (m, v) = state.moments.entry(name.clone()).or_insert_with(|| {
            (
                Tensor::zeros(g.rows(), g.cols()),
                Tensor::zeros(g.rows(), g.cols()),
            )
        });
        let p = params.get_mut(name)?;
        for (((p, m), v), g) in p
            .data_mut()
            .iter_mut()
            .zip(m.data_mut())
            .zip(v.data_mut())
            .zip(g.data())
        {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Metrics of one epoch. Training metrics come from the predictions made
/// during the epoch's optimization pass.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub train: MetricsReport,
    pub validation: Option<MetricsReport>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<EpochRecord>,
}

/// Loss, prediction and parameter gradients for one frame.
pub struct FrameGradient {
    pub loss: f64,
    pub prediction: Prediction,
    pub grads: Vec<(String, Tensor)>,
}

/// Differentiates the frame loss with respect to every parameter the frame
/// touches, except those `cfg` freezes.
pub fn frame_gradient(
    model: &Model,
    frame: &LabeledFrame,
    graph: &CrystalGraph,
    cfg: &TrainConfig,
) -> Result<FrameGradient> {
    let mut tape = Tape::new();
    let fwd = model.record(&mut tape, &frame.structure, graph, frame.fidelity)?;
    let (forces, stress) = fwd.derivatives(&mut tape)?;
    let loss = record_frame_loss(
        &mut tape,
        &fwd,
        forces,
        stress,
        frame,
        &cfg.weights,
        cfg.huber_delta,
    )?;
    let (names, vars): (Vec<&String>, Vec<Var>) = fwd
        .params
        .iter()
        .filter(|(name, _)| !cfg.is_frozen(name))
        .map(|(name, v)| (name, *v))
        .unzip();
    let g = tape.grad(loss, &vars)?;
    let grads = names
        .into_iter()
        .zip(g)
        .map(|(name, v)| (name.clone(), tape.value(v).clone()))
        .collect();
    Ok(FrameGradient {
        loss: tape.value(loss).item(),
        prediction: Prediction::read(&tape, &fwd, forces, stress),
        grads,
    })
}

fn build_graphs(model: &Model, frames: &[LabeledFrame]) -> Result<Vec<CrystalGraph>> {
    frames
        .iter()
        .map(|f| model.build_graph(&f.structure))
        .collect()
}

/// Metrics of `model` on `frames`, each evaluated at its own fidelity.
pub fn evaluate(model: &Model, frames: &[LabeledFrame]) -> Result<MetricsReport> {
    if frames.is_empty() {
        return Err(Error::Config("no frames to evaluate".into()));
    }
    let mut acc = MetricsAccumulator::new();
    for frame in frames {
        acc.add(&model.predict(&frame.structure, frame.fidelity)?, frame);
    }
    Ok(acc.finish())
}

fn evaluate_cached(
    model: &Model,
    frames: &[LabeledFrame],
    graphs: &[CrystalGraph],
) -> Result<MetricsReport> {
    let mut acc = MetricsAccumulator::new();
    for (frame, graph) in frames.iter().zip(graphs) {
        acc.add(
            &model.predict_with_graph(&frame.structure, graph, frame.fidelity)?,
            frame,
        );
    }
    Ok(acc.finish())
}

/// Initializes a model from `config` and `cfg.seed`, then trains it.
pub fn train(
    frames: &[LabeledFrame],
    config: ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let model = Model::new(config, cfg.seed)?;
    train_model(model, frames, cfg, &mut |_, _| Ok(()))
}

/// Fits the composition weights on the training part of `frames`, then runs
/// mini-batch Adam with a cosine schedule. `observer` is called after every
/// epoch and may save checkpoints; an error from it stops training.
pub fn train_model(
    mut model: Model,
    frames: &[LabeledFrame],
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&EpochRecord, &Model) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if frames.is_empty() {
        return Err(Error::Config("no training frames".into()));
    }
    let (train_frames, val_frames) = if cfg.validation_fraction > 0.0 {
        split_dataset(frames, cfg.validation_fraction, cfg.seed)
    } else {
        (frames.to_vec(), Vec::new())
    };
    if train_frames.is_empty() {
        return Err(Error::Config(
            "validation split left no training frames".into(),
        ));
    }
    for f in frames {
        model.config.fidelity.check_fidelity(f.fidelity)?;
    }
    model.fit_composition(&train_frames)?;
    let train_graphs = build_graphs(&model, &train_frames)?;
    let val_graphs = build_graphs(&model, &val_frames)?;

    let adam = AdamConfig {
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        eps: cfg.adam_eps,
    };
    let mut state = AdamState::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..train_frames.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch, cfg.epochs, cfg.lr);
        order.shuffle(&mut rng);
        let mut acc = MetricsAccumulator::new();
        let mut loss_sum = 0.0;
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut grads: BTreeMap<String, Tensor> = BTreeMap::new();
            for &i in chunk {
                let frame = &train_frames[i];
                let fg = frame_gradient(&model, frame, &train_graphs[i], cfg)?;
                if !fg.loss.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        batch,
                        detail: format!(
                            "frame {i} at fidelity {} gave loss {}",
                            frame.fidelity, fg.loss
                        ),
                    });
                }
                loss_sum += fg.loss;
                acc.add(&fg.prediction, frame);
                for (name, g) in fg.grads {
                    match grads.get_mut(&name) {
                        Some(total) => total
                            .data_mut()
                            .iter_mut()
                            .zip(g.data())
                            .for_each(|(t, x)| *t += x),
                        None => {
                            grads.insert(name, g);
                        }
                    }
                }
            }
            let inv = 1.0 / chunk.len() as f64;
            for g in grads.values_mut() {
                g.data_mut().iter_mut().for_each(|x| *x *= inv);
            }
            if let Some(limit) = cfg.grad_clip {
                let norm = grads
                    .values()
                    .flat_map(|g| g.data())
                    .map(|x| x * x)
                    .sum::<f64>()
                    .sqrt();
                if norm > limit {
                    let s = limit / norm;
                    grads
                        .values_mut()
                        .for_each(|g| g.data_mut().iter_mut().for_each(|x| *x *= s));
                }
            }
            adam_step(&mut model.params, &grads, &mut state, lr, &adam)?;
        }
        let validation = if val_frames.is_empty() {
            None
        } else {
            Some(evaluate_cached(&model, &val_frames, &val_graphs)?)
        };
        let record = EpochRecord {
            epoch,
            lr,
            loss: loss_sum / train_frames.len() as f64,
            train: acc.finish(),
            validation,
        };
        observer(&record, &model)?;
        history.push(record);
    }
    Ok(TrainOutcome { model, history })
}

const HISTORY_LABELS: [&str; 4] = ["energy", "force", "stress", "magmom"];

/// Column names of the metrics history CSV, in output order.
pub fn history_header() -> Vec<String> {
    let mut cols = vec!["epoch".to_string(), "lr".into(), "loss".into()];
    for split in ["train", "val"] {
        for label in HISTORY_LABELS {
            for stat in ["mae", "rmse"] {
                cols.push(format!("{split}_{label}_{stat}"));
            }
        }
    }
    cols
}

fn metric_cells(m: Option<&Metrics>, out: &mut Vec<String>) {
    let stats = m.map(|m| [Some(m.energy), Some(m.force), Some(m.stress), m.magmom]);
    for k in 0..4 {
        match stats.and_then(|s| s[k]) {
            Some(s) => {
                out.push(s.mae.to_string());
                out.push(s.rmse.to_string());
            }
            None => {
                out.push(String::new());
                out.push(String::new());
            }
        }
    }
}

/// Writes one row per epoch; absent metrics are empty cells.
pub fn write_history_csv<W: Write>(history: &[EpochRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(history_header())?;
    for r in history {
        let mut row = vec![r.epoch.to_string(), r.lr.to_string(), r.loss.to_string()];
        metric_cells(Some(&r.train.overall), &mut row);
        metric_cells(r.validation.as_ref().map(|v| &v.overall), &mut row);
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<history csv>", e))?;
    Ok(())
}

pub fn save_history_csv(history: &[EpochRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_history_csv(history, std::io::BufWriter::new(file))
}
