use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{
    GraphConfig, DEFAULT_MAX_IMAGES, DEFAULT_N_ANGULAR, DEFAULT_N_RADIAL, DEFAULT_R_ATOM,
    DEFAULT_R_BOND,
};

/// Number of fidelities and which of the four fidelity mechanisms are on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FidelityConfig {
    pub n_fidelities: usize,
    /// Fidelity embedding added to the atom embedding.
    pub embedding: bool,
    /// One-hot fidelity fed into every message MLP.
    pub messages: bool,
    /// One readout head per fidelity.
    pub readout: bool,
    /// One composition column per fidelity.
    pub composition: bool,
}

impl FidelityConfig {
    pub fn all(n_fidelities: usize) -> Self {
        Self {
            n_fidelities,
            embedding: true,
            messages: true,
            readout: true,
            composition: true,
        }
    }

    pub fn none(n_fidelities: usize) -> Self {
        Self {
            n_fidelities,
            embedding: false,
            messages: false,
            readout: false,
            composition: false,
        }
    }

    pub fn any_enabled(&self) -> bool {
        self.embedding || self.messages || self.readout || self.composition
    }

    pub fn check_fidelity(&self, fidelity: usize) -> Result<()> {
        if fidelity == 0 || fidelity > self.n_fidelities {
            return Err(Error::FidelityOutOfRange {
                fidelity,
                n_fidelities: self.n_fidelities,
            });
        }
        Ok(())
    }
}

impl Default for FidelityConfig {
    fn default() -> Self {
        Self::all(2)
    }
}

/// Network shape, cutoffs and fidelity handling.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub n_layers: usize,
    pub r_atom: f64,
    pub r_bond: f64,
    pub n_radial: usize,
    pub n_angular: usize,
    pub max_images: usize,
    pub fidelity: FidelityConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            feature_dim: 64,
            hidden_dim: 64,
            n_layers: 4,
            r_atom: DEFAULT_R_ATOM,
            r_bond: DEFAULT_R_BOND,
            n_radial: DEFAULT_N_RADIAL,
            n_angular: DEFAULT_N_ANGULAR,
            max_images: DEFAULT_MAX_IMAGES,
            fidelity: FidelityConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn graph(&self) -> GraphConfig {
        GraphConfig {
            r_atom: self.r_atom,
            r_bond: self.r_bond,
            n_radial: self.n_radial,
            n_angular: self.n_angular,
            max_images: self.max_images,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.feature_dim == 0 || self.hidden_dim == 0 {
            return bad("feature and hidden dimensions must be positive");
        }
        if self.n_layers < 2 {
            return bad("the magnetic moment head needs at least two convolution layers");
        }
        if !(self.r_bond > 0.0 && self.r_bond <= self.r_atom) {
            return bad("cutoffs must satisfy 0 < r_bond <= r_atom");
        }
        if self.n_radial == 0 || self.n_angular == 0 {
            return bad("basis sizes must be positive");
        }
        if self.fidelity.n_fidelities == 0 {
            return bad("need at least one fidelity");
        }
        Ok(())
    }
}
