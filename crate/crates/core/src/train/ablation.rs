use std::io::Write;

use serde::Serialize;

use super::experiment::{
    evaluate_at, train_high_fidelity_only, train_multi_fidelity, ExperimentData, HIGH,
};
use super::{Metrics, TrainConfig};
use crate::error::{Error, Result};
use crate::model::{FidelityConfig, ModelConfig};

/// Metric columns of the ablation table, in output order.
pub const ABLATION_METRICS: [&str; 8] = [
    "energy_mae",
    "energy_rmse",
    "force_mae",
    "force_rmse",
    "stress_mae",
    "stress_rmse",
    "magmom_mae",
    "magmom_rmse",
];

/// Which fidelity mechanisms a run uses. `None` trains on high-fidelity
/// data only; `Only*` enables one mechanism and `Without*` disables one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum AblationVariant {
    None,
    Full,
    OnlyEmbedding,
    OnlyMessages,
    OnlyReadout,
    OnlyComposition,
    WithoutEmbedding,
    WithoutMessages,
    WithoutReadout,
    WithoutComposition,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 10] = [
        Self::None,
        Self::Full,
        Self::OnlyEmbedding,
        Self::OnlyMessages,
        Self::OnlyReadout,
        Self::OnlyComposition,
        Self::WithoutEmbedding,
        Self::WithoutMessages,
        Self::WithoutReadout,
        Self::WithoutComposition,
    ];

    /// Short row label; a combining overline marks a disabled mechanism.
    pub fn label(self) -> &'static str {
        match self {
            Self::None => "N",
            Self::Full => "F",
            Self::OnlyEmbedding => "E",
            Self::OnlyMessages => "M",
            Self::OnlyReadout => "R",
            Self::OnlyComposition => "C",
            Self::WithoutEmbedding => "E\u{304}",
            Self::WithoutMessages => "M\u{304}",
            Self::WithoutReadout => "R\u{304}",
            Self::WithoutComposition => "C\u{304}",
        }
    }

    /// Mechanisms of a two-fidelity run; `None` for high-fidelity-only training.
    pub fn toggles(self) -> Option<FidelityConfig> {
        let on = |e, m, r, c| FidelityConfig {
            n_fidelities: 2,
            embedding: e,
            messages: m,
            readout: r,
            composition: c,
        };
        Some(match self {
            Self::None => return None,
            Self::Full => on(true, true, true, true),
            Self::OnlyEmbedding => on(true, false, false, false),
            Self::OnlyMessages => on(false, true, false, false),
            Self::OnlyReadout => on(false, false, true, false),
            Self::OnlyComposition => on(false, false, false, true),
            Self::WithoutEmbedding => on(false, true, true, true),
            Self::WithoutMessages => on(true, false, true, true),
            Self::WithoutReadout => on(true, true, false, true),
            Self::WithoutComposition => on(true, true, true, false),
        })
    }
}

/// High-fidelity test metrics of one configuration, one entry per seed.
#[derive(Clone, Debug, Serialize)]
pub struct AblationRow {
    pub variant: AblationVariant,
    pub runs: Vec<Metrics>,
}

fn metric_values(m: &Metrics) -> [f64; 8] {
    let (mm, mr) = m.magmom.map_or((f64::NAN, f64::NAN), |s| (s.mae, s.rmse));
    [
        m.energy.mae,
        m.energy.rmse,
        m.force.mae,
        m.force.rmse,
        m.stress.mae,
        m.stress.rmse,
        mm,
        mr,
    ]
}

impl AblationRow {
    fn column(&self, k: usize) -> impl Iterator<Item = f64> + '_ {
        self.runs.iter().map(move |m| metric_values(m)[k])
    }

    /// Mean over seeds of metric column `k` (see [`ABLATION_METRICS`]).
    pub fn mean(&self, k: usize) -> f64 {
        self.column(k).sum::<f64>() / self.runs.len() as f64
    }

    /// Half the spread between the largest and smallest seed.
    pub fn half_range(&self, k: usize) -> f64 {
        let (lo, hi) = self
            .column(k)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
                (lo.min(x), hi.max(x))
            });
        0.5 * (hi - lo)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, variant: AblationVariant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    pub fn header() -> Vec<String> {
        let mut cols = vec!["config".to_string(), "n_seeds".into()];
        for m in ABLATION_METRICS {
            cols.push(format!("{m}_mean"));
            cols.push(format!("{m}_spread"));
        }
        cols
    }

    /// One row per configuration: mean and half-range over seeds.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::header())?;
        for row in &self.rows {
            let mut rec = vec![row.variant.label().to_string(), row.runs.len().to_string()];
            for k in 0..ABLATION_METRICS.len() {
                rec.push(row.mean(k).to_string());
                rec.push(row.half_range(k).to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<ablation csv>", e))?;
        Ok(())
    }
}

/// Trains every configuration once per seed and evaluates it on the
/// high-fidelity test frames. The `N` configuration never sees `data.lf`.
pub fn ablate(
    data: ExperimentData<'_>,
    base: ModelConfig,
    cfg: &TrainConfig,
    seeds: &[u64],
) -> Result<AblationTable> {
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    let mut rows = Vec::with_capacity(AblationVariant::ALL.len());
    for variant in AblationVariant::ALL {
        let mut runs = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let cfg = TrainConfig {
                seed,
                ..cfg.clone()
            };
            let metrics = match variant.toggles() {
                None => {
                    let out = train_high_fidelity_only(data.hf_train, base, &cfg)?;
                    evaluate_at(&out.model, data.hf_test, 1)?
                }
                Some(toggles) => {
                    let out = train_multi_fidelity(data.lf, data.hf_train, base, toggles, &cfg)?;
                    evaluate_at(&out.model, data.hf_test, HIGH)?
                }
            };
            runs.push(metrics);
        }
        rows.push(AblationRow { variant, runs });
    }
    Ok(AblationTable { rows })
}
