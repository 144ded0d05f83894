use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid structure: {0}")]
    InvalidStructure(String),
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("fidelity {fidelity} outside 1..={n_fidelities}")]
    FidelityOutOfRange {
        fidelity: usize,
        n_fidelities: usize,
    },
    #[error("atomic number {0} outside 1..=94")]
    ElementOutOfRange(u32),
    #[error("cutoff {r_cut} Å needs {needed} periodic images along axis {axis}, more than the limit of {limit}; use a larger cell")]
    TooManyImages {
        r_cut: f64,
        axis: usize,
        needed: usize,
        limit: usize,
    },
    #[error("value outside the basis domain: {0}")]
    Domain(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("no frames with fidelity {0} to fit a composition model")]
    EmptyFidelity(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite loss in epoch {epoch}, batch {batch}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        detail: String,
    },
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("checkpoint format {found} is not supported (expected {expected})")]
    CheckpointVersion { found: String, expected: String },
    #[error("oracle error: {0}")]
    Oracle(String),
    #[error("structure generation failed after {0} attempts")]
    GenerationFailed(usize),
    #[error(transparent)]
    Autodiff(#[from] tensorcore::AutodiffError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
