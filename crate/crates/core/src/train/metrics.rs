use std::collections::BTreeMap;

use serde::Serialize;

use crate::model::Prediction;
use crate::structures::LabeledFrame;

/// Mean absolute and root-mean-square error of one label.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ErrorStats {
    pub mae: f64,
    pub rmse: f64,
}

/// Errors per label: energy in eV/atom, force and stress per component
/// (eV/Å, eV/Å³), magnetic moment per atom (μB). Magnetic moment errors are
/// absent when no frame carried magmom labels.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub n_frames: usize,
    pub energy: ErrorStats,
    pub force: ErrorStats,
    pub stress: ErrorStats,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub magmom: Option<ErrorStats>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub overall: Metrics,
    pub per_fidelity: BTreeMap<usize, Metrics>,
}

impl MetricsReport {
    pub fn fidelity(&self, f: usize) -> Option<&Metrics> {
        self.per_fidelity.get(&f)
    }
}

#[derive(Clone, Debug, Default)]
struct Residuals {
    frames: usize,
    energy: Vec<f64>,
    force: Vec<f64>,
    stress: Vec<f64>,
    magmom: Vec<f64>,
}

fn stats(values: &mut [f64]) -> ErrorStats {
    if values.is_empty() {
        return ErrorStats {
            mae: 0.0,
            rmse: 0.0,
        };
    }
    // fixed summation order makes the result independent of frame order
    values.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    let mae = values.iter().sum::<f64>() / n;
    let mse = values.iter().map(|x| x * x).sum::<f64>() / n;
    ErrorStats {
        mae,
        rmse: mse.sqrt(),
    }
}

impl Residuals {
    fn add(&mut self, pred: &Prediction, label: &LabeledFrame) {
        let n = label.n_atoms() as f64;
        self.frames += 1;
        self.energy.push(((pred.energy - label.energy) / n).abs());
        for (p, l) in pred.forces.iter().zip(&label.forces) {
            for c in 0..3 {
                self.force.push((p[c] - l[c]).abs());
            }
        }
        for a in 0..3 {
            for b in 0..3 {
                self.stress
                    .push((pred.stress[a][b] - label.stress[a][b]).abs());
            }
        }
        if let Some(m) = &label.magmoms {
            for (p, l) in pred.magmoms.iter().zip(m) {
                self.magmom.push((p - l).abs());
            }
        }
    }

    fn finish(mut self) -> Metrics {
        Metrics {
            n_frames: self.frames,
            energy: stats(&mut self.energy),
            force: stats(&mut self.force),
            stress: stats(&mut self.stress),
            magmom: (!self.magmom.is_empty()).then(|| stats(&mut self.magmom)),
        }
    }
}

/// Collects prediction errors frame by frame.
#[derive(Clone, Debug, Default)]
pub struct MetricsAccumulator {
    overall: Residuals,
    per_fidelity: BTreeMap<usize, Residuals>,
}

impl MetricsAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, pred: &Prediction, label: &LabeledFrame) {
        self.overall.add(pred, label);
        self.per_fidelity
            .entry(label.fidelity)
            .or_default()
            .add(pred, label);
    }

    pub fn is_empty(&self) -> bool {
        self.overall.frames == 0
    }

    pub fn finish(self) -> MetricsReport {
        MetricsReport {
            overall: self.overall.finish(),
            per_fidelity: self
                .per_fidelity
                .into_iter()
                .map(|(f, r)| (f, r.finish()))
                .collect(),
        }
    }
}
