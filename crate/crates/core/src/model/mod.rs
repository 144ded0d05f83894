//! The multi-fidelity graph network.
//!
//! The energy of a structure at fidelity `f` is
//! `N·E_c^f(x) + Σ_i L^f(v_i)`, where `v_i` are atom features after the
//! convolution layers and `E_c^f` is a linear function of the composition
//! `x`. Forces and stress are exact derivatives of that energy with respect
//! to positions and a symmetric strain; magnetic moments come from a linear
//! head on the features one layer before the last.

mod checkpoint;
mod composition;
mod config;
pub mod layers;
mod params;

use std::collections::HashMap;
use std::sync::Arc;

use tensorcore::{strain_leaf, Index, Tape, Tensor, Var};

pub use checkpoint::CHECKPOINT_FORMAT;
pub use composition::{composition_energy, fit_composition, fit_composition_pooled, fit_weights};
pub use config::{FidelityConfig, ModelConfig};
pub use layers::{one_hot_fidelity, GatedMlp, GraphIndex, ReadoutHead};
pub use params::ModelParams;

use crate::error::{Error, Result};
use crate::graph::{angular_basis_tape, envelope_tape, radial_basis_tape, CrystalGraph};
use crate::lin3::{Mat3, Vec3};
use crate::structures::{composition_vector, LabeledFrame, Structure, N_ELEMENTS};
use params::{head_prefix, mlp_prefix};

/// Energy (eV), forces (eV/Å), stress (eV/Å³) and magnetic moments (μB).
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub energy: f64,
    pub forces: Vec<Vec3>,
    pub stress: Mat3,
    pub magmoms: Vec<f64>,
}

/// Tape handles produced by [`Model::record`].
#[derive(Clone, Debug)]
pub struct Forward {
    pub energy: Var,
    /// `N×1`.
    pub magmoms: Var,
    /// `N×3` leaf.
    pub positions: Var,
    /// `3×3` leaf, zero-valued.
    pub strain: Var,
    /// Every parameter leaf the computation touched, by name.
    pub params: Vec<(String, Var)>,
    pub volume: f64,
}

impl Forward {
    /// Records `F = -∂E/∂r` (`N×3`) and `σ = (1/V)∂E/∂ε` (`3×3`).
    pub fn derivatives(&self, tape: &mut Tape) -> Result<(Var, Var)> {
        let g = tape.grad(self.energy, &[self.positions, self.strain])?;
        let forces = tape.neg(g[0]);
        let stress = tape.scale(g[1], 1.0 / self.volume);
        Ok((forces, stress))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
    /// `94×n_F` composition weights in eV/atom.
    pub composition: Tensor,
}

/// Binds named parameters to tape leaves on first use.
struct Binder<'a> {
    params: &'a ModelParams,
    vars: HashMap<String, Var>,
    order: Vec<(String, Var)>,
}

impl<'a> Binder<'a> {
    fn new(params: &'a ModelParams) -> Self {
        Self {
            params,
            vars: HashMap::new(),
            order: Vec::new(),
        }
    }

    fn var(&mut self, tape: &mut Tape, name: &str) -> Result<Var> {
        if let Some(&v) = self.vars.get(name) {
            return Ok(v);
        }
        let v = tape.leaf(self.params.get(name)?.clone());
        self.vars.insert(name.to_string(), v);
        self.order.push((name.to_string(), v));
        Ok(v)
    }

    fn mlp(
        &mut self,
        tape: &mut Tape,
        prefix: &str,
        n_parts: usize,
        with_fidelity: bool,
    ) -> Result<GatedMlp> {
        let mut w_in = Vec::with_capacity(n_parts);
        for k in 0..n_parts {
            w_in.push(self.var(tape, &format!("{prefix}.w_in.{k}"))?);
        }
        let w_fid = if with_fidelity {
            Some(self.var(tape, &format!("{prefix}.w_fid"))?)
        } else {
            None
        };
        Ok(GatedMlp {
            w_in,
            w_fid,
            b_in: self.var(tape, &format!("{prefix}.b_in"))?,
            w_core: self.var(tape, &format!("{prefix}.w_core"))?,
            b_core: self.var(tape, &format!("{prefix}.b_core"))?,
            w_gate: self.var(tape, &format!("{prefix}.w_gate"))?,
            b_gate: self.var(tape, &format!("{prefix}.b_gate"))?,
        })
    }

    fn head(&mut self, tape: &mut Tape, fidelity: usize) -> Result<ReadoutHead> {
        let p = head_prefix(fidelity);
        Ok(ReadoutHead {
            w1: self.var(tape, &format!("{p}.w1"))?,
            b1: self.var(tape, &format!("{p}.b1"))?,
            w2: self.var(tape, &format!("{p}.w2"))?,
            b2: self.var(tape, &format!("{p}.b2"))?,
        })
    }
}

impl Model {
    /// Freshly initialized network with zero composition weights.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            params: ModelParams::init(&config, seed),
            composition: Tensor::zeros(N_ELEMENTS, config.fidelity.n_fidelities),
            config,
        })
    }

    /// Readout head consulted for `fidelity`.
    pub fn readout_index(&self, fidelity: usize) -> usize {
        if self.config.fidelity.readout {
            fidelity
        } else {
            1
        }
    }

    /// Composition column (1-based) consulted for `fidelity`.
    pub fn composition_index(&self, fidelity: usize) -> usize {
        if self.config.fidelity.composition {
            fidelity
        } else {
            1
        }
    }

    /// Fits the composition weights: one column per fidelity that has
    /// frames, or a single pooled column when the per-fidelity composition
    /// model is disabled. Columns of fidelities absent from `frames` keep
    /// their current values.
    pub fn fit_composition(&mut self, frames: &[LabeledFrame]) -> Result<()> {
        let n_f = self.config.fidelity.n_fidelities;
        if frames.is_empty() {
            return Err(Error::EmptyFidelity(1));
        }
        for f in frames {
            self.config.fidelity.check_fidelity(f.fidelity)?;
        }
        if !self.config.fidelity.composition {
            self.composition = fit_composition_pooled(frames, n_f)?;
            return Ok(());
        }
        for f in 1..=n_f {
            let group: Vec<LabeledFrame> = frames
                .iter()
                .filter(|fr| fr.fidelity == f)
                .map(|fr| fr.with_fidelity(1))
                .collect();
            if group.is_empty() {
                continue;
            }
            let column = fit_composition(&group, 1)?;
            for a in 0..N_ELEMENTS {
                self.composition.set(a, f - 1, column.get(a, 0));
            }
        }
        Ok(())
    }

    /// Composition part of the total energy, `N·Σ_a w_{a,f}·x_a`.
    pub fn composition_total(&self, structure: &Structure, fidelity: usize) -> f64 {
        let x = composition_vector(structure);
        let col = self.composition_index(fidelity) - 1;
        structure.n_atoms() as f64 * composition_energy(&x, &self.composition, col)
    }

    pub fn build_graph(&self, structure: &Structure) -> Result<CrystalGraph> {
        self.config.graph().build(structure)
    }

    /// Records the energy and magnetic moments of `structure` on `tape`.
    /// `graph` must come from [`Model::build_graph`] on a structure with the
    /// same cell and atoms; positions are read from `structure`, so small
    /// displacements may reuse a graph only if no pair crosses a cutoff.
    pub fn record(
        &self,
        tape: &mut Tape,
        structure: &Structure,
        graph: &CrystalGraph,
        fidelity: usize,
    ) -> Result<Forward> {
        let cfg = &self.config;
        let fc = cfg.fidelity;
        fc.check_fidelity(fidelity)?;
        let n = structure.n_atoms();
        if graph.n_atoms != n {
            return Err(Error::Shape(format!(
                "graph has {} atoms, structure has {n}",
                graph.n_atoms
            )));
        }
        let mut b = Binder::new(&self.params);

        // geometry
        let positions = tape.leaf(Tensor::from_rows3(structure.positions()));
        let (strain, deform) = strain_leaf(tape);
        let r = tape.matmul(positions, deform);
        let shifts = tape.constant(graph.shifts.clone());
        let shifts = tape.matmul(shifts, deform);
        let rj = tape.gather(r, graph.dst.clone());
        let ri = tape.gather(r, graph.src.clone());
        let vec = tape.sub(rj, ri);
        let vec = tape.add(vec, shifts);
        let sq = tape.square(vec);
        let d2 = tape.sum_cols(sq);
        let d = tape.sqrt(d2);

        // bond features
        let rbf = radial_basis_tape(tape, d, cfg.r_atom, cfg.n_radial);
        let w_bond = b.var(tape, "embed.bond")?;
        let mut e = tape.matmul(rbf, w_bond);
        let env_atom = envelope_tape(tape, d, cfg.r_atom);

        // angle features
        let inv_d = tape.powf(d, -1.0);
        let unit = tape.mul_col(vec, inv_d);
        let u1 = tape.gather(unit, graph.triplet_first.clone());
        let u2 = tape.gather(unit, graph.triplet_second.clone());
        let u12 = tape.mul(u1, u2);
        let cos = tape.sum_cols(u12);
        let abf = angular_basis_tape(tape, cos, cfg.n_angular);
        let w_angle = b.var(tape, "embed.angle")?;
        let mut a = tape.matmul(abf, w_angle);
        let env_bond = envelope_tape(tape, d, cfg.r_bond);
        let eb1 = tape.gather(env_bond, graph.triplet_first.clone());
        let eb2 = tape.gather(env_bond, graph.triplet_second.clone());
        let triplet_weight = tape.mul(eb1, eb2);

        // atom features
        let species: Index = structure
            .species()
            .iter()
            .map(|&z| z as usize - 1)
            .collect::<Vec<_>>()
            .into();
        let element = b.var(tape, "embed.element")?;
        let mut v = tape.gather(element, species);
        if fc.embedding {
            let table = b.var(tape, "embed.fidelity")?;
            let row = tape.gather(table, Arc::from([fidelity - 1]));
            v = tape.add_row(v, row);
        }
        let fg = if fc.messages {
            let one_hot = one_hot_fidelity(fidelity, fc.n_fidelities)?;
            Some(tape.constant(Tensor::row_vector(&one_hot)))
        } else {
            None
        };

        let gi = GraphIndex {
            n_atoms: n,
            n_edges: graph.n_edges(),
            src: graph.src.clone(),
            dst: graph.dst.clone(),
            first: graph.triplet_first.clone(),
            second: graph.triplet_second.clone(),
            center: graph.triplet_center.clone(),
        };
        let mut penultimate = v;
        for layer in 0..cfg.n_layers {
            let last = layer + 1 == cfg.n_layers;
            if last {
                penultimate = v;
            }
            let mlp = b.mlp(tape, &mlp_prefix(layer, "atom"), 3, fc.messages)?;
            v = layers::atom_conv(tape, &gi, v, e, env_atom, fg, &mlp)?;
            if !last {
                let mlp = b.mlp(tape, &mlp_prefix(layer, "bond"), 4, fc.messages)?;
                e = layers::bond_conv(tape, &gi, e, a, v, triplet_weight, fg, &mlp)?;
            }
            if layer + 2 < cfg.n_layers {
                let mlp = b.mlp(tape, &mlp_prefix(layer, "angle"), 4, fc.messages)?;
                a = layers::angle_update(tape, &gi, e, a, v, fg, &mlp)?;
            }
        }

        let head = b.head(tape, self.readout_index(fidelity))?;
        let readout = layers::readout_energy(tape, v, &head);
        let comp = tape.scalar(self.composition_total(structure, fidelity));
        let energy = tape.add(readout, comp);

        let mw = b.var(tape, "magmom.w")?;
        let mb = b.var(tape, "magmom.b")?;
        let magmoms = layers::magmom_head(tape, penultimate, mw, mb);

        Ok(Forward {
            energy,
            magmoms,
            positions,
            strain,
            params: b.order,
            volume: structure.volume(),
        })
    }

    /// Energy only, without recording derivatives.
    pub fn energy(&self, structure: &Structure, fidelity: usize) -> Result<f64> {
        let graph = self.build_graph(structure)?;
        let mut tape = Tape::new();
        let fwd = self.record(&mut tape, structure, &graph, fidelity)?;
        Ok(tape.value(fwd.energy).item())
    }

    pub fn predict(&self, structure: &Structure, fidelity: usize) -> Result<Prediction> {
        let graph = self.build_graph(structure)?;
        self.predict_with_graph(structure, &graph, fidelity)
    }

    pub fn predict_with_graph(
        &self,
        structure: &Structure,
        graph: &CrystalGraph,
        fidelity: usize,
    ) -> Result<Prediction> {
        let mut tape = Tape::new();
        let fwd = self.record(&mut tape, structure, graph, fidelity)?;
        let (forces, stress) = fwd.derivatives(&mut tape)?;
        Ok(Prediction::read(&tape, &fwd, forces, stress))
    }
}

impl Prediction {
    /// Reads recorded values back into plain arrays.
    pub fn read(tape: &Tape, fwd: &Forward, forces: Var, stress: Var) -> Self {
        let s = tape.value(stress);
        let mut stress_m = [[0.0; 3]; 3];
        for (i, row) in stress_m.iter_mut().enumerate() {
            row.copy_from_slice(s.row(i));
        }
        Prediction {
            energy: tape.value(fwd.energy).item(),
            forces: tape.value(forces).to_rows3(),
            stress: stress_m,
            magmoms: tape.value(fwd.magmoms).data().to_vec(),
        }
    }
}
