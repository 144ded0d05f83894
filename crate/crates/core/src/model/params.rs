use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensorcore::Tensor;

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::structures::N_ELEMENTS;

/// Every learnable tensor of the network, keyed by name.
///
/// Names follow `embed.element`, `embed.fidelity`, `embed.bond`,
/// `embed.angle`, `conv{l}.{atom,bond,angle}.{w_in.k,w_fid,b_in,w_core,
/// b_core,w_gate,b_gate}`, `readout.{f}.{w1,b1,w2,b2}` and
/// `magmom.{w,b}`. The last convolution layer has no bond or angle block
/// because its bond updates could not reach the energy.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ModelParams {
    tensors: BTreeMap<String, Tensor>,
}

pub(crate) fn mlp_prefix(layer: usize, block: &str) -> String {
    format!("conv{layer}.{block}")
}

pub(crate) fn head_prefix(fidelity: usize) -> String {
    format!("readout.{fidelity}")
}

struct Init {
    rng: ChaCha8Rng,
    params: BTreeMap<String, Tensor>,
}

impl Init {
    fn xavier(&mut self, name: String, rows: usize, cols: usize, fan_in: usize, fan_out: usize) {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| self.rng.random_range(-bound..bound))
            .collect();
        let t = Tensor::from_vec(rows, cols, data).expect("sizes match");
        self.params.insert(name, t);
    }

    fn zeros(&mut self, name: String, rows: usize, cols: usize) {
        self.params.insert(name, Tensor::zeros(rows, cols));
    }

    fn gated_mlp(&mut self, prefix: &str, n_parts: usize, cfg: &ModelConfig) {
        let (d, h, n_f) = (cfg.feature_dim, cfg.hidden_dim, cfg.fidelity.n_fidelities);
        for k in 0..n_parts {
            self.xavier(format!("{prefix}.w_in.{k}"), d, 2 * h, n_parts * d, 2 * h);
        }
        self.zeros(format!("{prefix}.w_fid"), n_f, 2 * h);
        self.zeros(format!("{prefix}.b_in"), 1, 2 * h);
        self.xavier(format!("{prefix}.w_core"), h, d, h, d);
        self.zeros(format!("{prefix}.b_core"), 1, d);
        self.xavier(format!("{prefix}.w_gate"), h, d, h, d);
        self.zeros(format!("{prefix}.b_gate"), 1, d);
    }
}

impl ModelParams {
    /// Xavier-uniform weights drawn from `seed`, zero biases, zero
    /// fidelity embeddings and fidelity columns, and identical readout
    /// heads for every fidelity.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let (d, h, n_f) = (cfg.feature_dim, cfg.hidden_dim, cfg.fidelity.n_fidelities);
        let mut init = Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
            params: BTreeMap::new(),
        };
        init.xavier("embed.element".into(), N_ELEMENTS, d, N_ELEMENTS, d);
        init.zeros("embed.fidelity".into(), n_f, d);
        init.xavier("embed.bond".into(), cfg.n_radial, d, cfg.n_radial, d);
        init.xavier("embed.angle".into(), cfg.n_angular, d, cfg.n_angular, d);
        for layer in 0..cfg.n_layers {
            init.gated_mlp(&mlp_prefix(layer, "atom"), 3, cfg);
            if layer + 1 < cfg.n_layers {
                init.gated_mlp(&mlp_prefix(layer, "bond"), 4, cfg);
            }
            // angle features are only read by a later bond update
            if layer + 2 < cfg.n_layers {
                init.gated_mlp(&mlp_prefix(layer, "angle"), 4, cfg);
            }
        }
        init.xavier("readout.1.w1".into(), d, h, d, h);
        init.zeros("readout.1.b1".into(), 1, h);
        init.xavier("readout.1.w2".into(), h, 1, h, 1);
        init.zeros("readout.1.b2".into(), 1, 1);
        for f in 2..=n_f {
            for part in ["w1", "b1", "w2", "b2"] {
                let t = init.params[&format!("readout.1.{part}")].clone();
                init.params.insert(format!("readout.{f}.{part}"), t);
            }
        }
        init.xavier("magmom.w".into(), d, 1, d, 1);
        init.zeros("magmom.b".into(), 1, 1);
        Self {
            tensors: init.params,
        }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Config(format!("model has no parameter named {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("model has no parameter named {name}")))
    }

    /// Replaces an existing tensor of the same shape.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self.get_mut(name)?;
        if slot.shape() != value.shape() {
            return Err(Error::Shape(format!(
                "parameter {name} is {:?}, got {:?}",
                slot.shape(),
                value.shape()
            )));
        }
        *slot = value;
        Ok(())
    }

    pub(crate) fn insert(&mut self, name: String, value: Tensor) {
        self.tensors.insert(name, value);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn n_values(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }
}
