//! Building blocks of the network, recorded on a [`Tape`].
//!
//! Features are stored one row per atom, edge or triplet. Message inputs are
//! concatenations of rows drawn from different feature tables; the first
//! linear layer of a gated MLP is applied blockwise, projecting each table
//! before gathering, which equals projecting the gathered concatenation.

use tensorcore::{Index, Tape, Tensor, Var};

use crate::error::{Error, Result};
use crate::structures::N_ELEMENTS;

/// `(f_g)_i = δ_if` for `i = 1..=n_fidelities`.
pub fn one_hot_fidelity(fidelity: usize, n_fidelities: usize) -> Result<Vec<f64>> {
    if fidelity == 0 || fidelity > n_fidelities {
        return Err(Error::FidelityOutOfRange {
            fidelity,
            n_fidelities,
        });
    }
    let mut v = vec![0.0; n_fidelities];
    v[fidelity - 1] = 1.0;
    Ok(v)
}

/// Initial atom feature `X_Z + X_f`, or `X_Z` when the fidelity embedding
/// is disabled. `element` is `94×d` and `fidelity_table` is `n_F×d`.
pub fn embed(
    z: u8,
    fidelity: usize,
    element: &Tensor,
    fidelity_table: &Tensor,
    use_fidelity: bool,
) -> Result<Vec<f64>> {
    if z == 0 || z as usize > N_ELEMENTS {
        return Err(Error::ElementOutOfRange(z as u32));
    }
    let mut v = element.row(z as usize - 1).to_vec();
    if use_fidelity {
        if fidelity == 0 || fidelity > fidelity_table.rows() {
            return Err(Error::FidelityOutOfRange {
                fidelity,
                n_fidelities: fidelity_table.rows(),
            });
        }
        for (a, b) in v.iter_mut().zip(fidelity_table.row(fidelity - 1)) {
            *a += b;
        }
    }
    Ok(v)
}

fn check_shape(tape: &Tape, v: Var, rows: Option<usize>, cols: usize, what: &str) -> Result<()> {
    let (r, c) = tape.shape(v);
    if c != cols || rows.is_some_and(|n| n != r) {
        return Err(Error::Shape(format!(
            "{what}: expected {}x{cols}, got {r}x{c}",
            rows.map_or("?".to_string(), |n| n.to_string())
        )));
    }
    Ok(())
}

/// `a·W + f_g·W_F + b` over the rows of `a`, dropping the `W_F` term when
/// `use_fidelity` is false. `f_g` is a `1×n_F` row and `W_F` is `n_F×out`.
#[allow(clippy::too_many_arguments)]
pub fn fidelity_linear(
    tape: &mut Tape,
    a: Var,
    f_g: Var,
    w: Var,
    w_f: Var,
    b: Var,
    use_fidelity: bool,
) -> Result<Var> {
    let (k, out) = tape.shape(w);
    check_shape(tape, a, None, k, "fidelity_linear input")?;
    check_shape(tape, b, Some(1), out, "fidelity_linear bias")?;
    let mut y = tape.matmul(a, w);
    if use_fidelity {
        let n_f = tape.shape(f_g).1;
        check_shape(tape, f_g, Some(1), n_f, "one-hot fidelity")?;
        check_shape(tape, w_f, Some(n_f), out, "fidelity weights")?;
        let shift = tape.matmul(f_g, w_f);
        y = tape.add_row(y, shift);
    }
    Ok(tape.add_row(y, b))
}

/// One block of a message input: a feature table and the row index that
/// maps it onto message rows (`None` when the rows already line up).
#[derive(Clone, Debug)]
pub struct Part {
    pub features: Var,
    pub index: Option<Index>,
}

impl Part {
    pub fn direct(features: Var) -> Self {
        Self {
            features,
            index: None,
        }
    }

    pub fn gathered(features: Var, index: Index) -> Self {
        Self {
            features,
            index: Some(index),
        }
    }
}

/// Tape handles of one gated MLP. `w_in[k]` projects input block `k` to
/// the `2h` hidden units (core then gate).
#[derive(Clone, Debug)]
pub struct GatedMlp {
    pub w_in: Vec<Var>,
    pub w_fid: Option<Var>,
    pub b_in: Var,
    pub w_core: Var,
    pub b_core: Var,
    pub w_gate: Var,
    pub b_gate: Var,
}

/// `silu(core(x)) ⊙ sigmoid(gate(x))` where both branches share the input
/// and have one silu hidden layer. `fidelity` is the one-hot row, used only
/// when the MLP carries fidelity weights.
pub fn gated_mlp(
    tape: &mut Tape,
    parts: &[Part],
    rows: usize,
    fidelity: Option<Var>,
    mlp: &GatedMlp,
) -> Result<Var> {
    if parts.len() != mlp.w_in.len() {
        return Err(Error::Shape(format!(
            "gated MLP expects {} input blocks, got {}",
            mlp.w_in.len(),
            parts.len()
        )));
    }
    let width = tape.shape(mlp.b_in).1;
    let hidden = width / 2;
    let mut h: Option<Var> = None;
    for (part, &w) in parts.iter().zip(&mlp.w_in) {
        check_shape(
            tape,
            part.features,
            None,
            tape.shape(w).0,
            "gated MLP input block",
        )?;
        let mut proj = tape.matmul(part.features, w);
        if let Some(idx) = &part.index {
            proj = tape.gather(proj, idx.clone());
        }
        check_shape(tape, proj, Some(rows), width, "gated MLP message rows")?;
        h = Some(match h {
            Some(acc) => tape.add(acc, proj),
            None => proj,
        });
    }
    let mut h = h.ok_or_else(|| Error::Shape("gated MLP needs at least one input block".into()))?;
    if let (Some(w_fid), Some(f_g)) = (mlp.w_fid, fidelity) {
        let shift = tape.matmul(f_g, w_fid);
        h = tape.add_row(h, shift);
    }
    h = tape.add_row(h, mlp.b_in);
    let h = tape.silu(h);
    let hc = tape.slice_cols(h, 0, hidden);
    let hg = tape.slice_cols(h, hidden, hidden);
    let core = tape.matmul(hc, mlp.w_core);
    let core = tape.add_row(core, mlp.b_core);
    let core = tape.silu(core);
    let gate = tape.matmul(hg, mlp.w_gate);
    let gate = tape.add_row(gate, mlp.b_gate);
    let gate = tape.sigmoid(gate);
    Ok(tape.mul(core, gate))
}

/// Index arrays of a crystal graph as used by the convolutions.
#[derive(Clone, Debug)]
pub struct GraphIndex {
    pub n_atoms: usize,
    pub n_edges: usize,
    pub src: Index,
    pub dst: Index,
    pub first: Index,
    pub second: Index,
    pub center: Index,
}

impl GraphIndex {
    pub fn n_triplets(&self) -> usize {
        self.first.len()
    }
}

/// `v_i ← v_i + Σ_j env(d_ij)·φ_v(v_i ⊕ v_j ⊕ e_ij ⊕ f_g)` over edges `i → j`.
/// `env` is the `E×1` envelope column.
pub fn atom_conv(
    tape: &mut Tape,
    g: &GraphIndex,
    v: Var,
    e: Var,
    env: Var,
    fidelity: Option<Var>,
    mlp: &GatedMlp,
) -> Result<Var> {
    let parts = [
        Part::gathered(v, g.src.clone()),
        Part::gathered(v, g.dst.clone()),
        Part::direct(e),
    ];
    let m = gated_mlp(tape, &parts, g.n_edges, fidelity, mlp)?;
    let m = tape.mul_col(m, env);
    let agg = tape.scatter_add(m, g.src.clone(), g.n_atoms);
    Ok(tape.add(v, agg))
}

/// For each triplet `(j→i, j→k)` the message
/// `φ_e(e_ji ⊕ e_jk ⊕ a_ijk ⊕ v_j ⊕ f_g)`, weighted by `weight` (`T×1`), is
/// added to the bond `j→k`.
#[allow(clippy::too_many_arguments)]
pub fn bond_conv(
    tape: &mut Tape,
    g: &GraphIndex,
    e: Var,
    a: Var,
    v: Var,
    weight: Var,
    fidelity: Option<Var>,
    mlp: &GatedMlp,
) -> Result<Var> {
    let parts = triplet_parts(g, e, a, v);
    let m = gated_mlp(tape, &parts, g.n_triplets(), fidelity, mlp)?;
    let m = tape.mul_col(m, weight);
    let agg = tape.scatter_add(m, g.second.clone(), g.n_edges);
    Ok(tape.add(e, agg))
}

/// `a_ijk ← φ_a(e_ji ⊕ e_jk ⊕ a_ijk ⊕ v_j ⊕ f_g)`.
pub fn angle_update(
    tape: &mut Tape,
    g: &GraphIndex,
    e: Var,
    a: Var,
    v: Var,
    fidelity: Option<Var>,
    mlp: &GatedMlp,
) -> Result<Var> {
    let parts = triplet_parts(g, e, a, v);
    gated_mlp(tape, &parts, g.n_triplets(), fidelity, mlp)
}

fn triplet_parts(g: &GraphIndex, e: Var, a: Var, v: Var) -> [Part; 4] {
    [
        Part::gathered(e, g.first.clone()),
        Part::gathered(e, g.second.clone()),
        Part::direct(a),
        Part::gathered(v, g.center.clone()),
    ]
}

/// Readout MLP `d → h → 1` with a silu hidden layer.
#[derive(Clone, Copy, Debug)]
pub struct ReadoutHead {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

/// Per-atom energy contributions (`N×1`).
pub fn readout_atomic(tape: &mut Tape, v: Var, head: &ReadoutHead) -> Var {
    let h = tape.matmul(v, head.w1);
    let h = tape.add_row(h, head.b1);
    let h = tape.silu(h);
    let y = tape.matmul(h, head.w2);
    tape.add_row(y, head.b2)
}

/// `Σ_i L(v_i)` as a `1×1` value.
pub fn readout_energy(tape: &mut Tape, v: Var, head: &ReadoutHead) -> Var {
    let per_atom = readout_atomic(tape, v, head);
    tape.sum_all(per_atom)
}

/// Linear magnetic-moment head, `N×1`.
pub fn magmom_head(tape: &mut Tape, v: Var, w: Var, b: Var) -> Var {
    let m = tape.matmul(v, w);
    tape.add_row(m, b)
}
