//! Periodic crystal graphs and the distance/angle basis expansions.
//!
//! The atom graph holds directed edges `i → j` to every periodic image of
//! `j` within `r_atom`. The bond graph connects pairs of edges that share a
//! source atom and are both shorter than `r_bond`; each such ordered pair is
//! a triplet carrying the cosine of the angle between the two edges.

use std::sync::Arc;

use tensorcore::{Index, Tape, Tensor, Var};

use crate::error::{Error, Result};
use crate::lin3::{self, Vec3};
use crate::structures::Structure;

pub const DEFAULT_R_ATOM: f64 = 5.0;
pub const DEFAULT_R_BOND: f64 = 3.0;
pub const DEFAULT_N_RADIAL: usize = 31;
pub const DEFAULT_N_ANGULAR: usize = 31;
pub const DEFAULT_MAX_IMAGES: usize = 8;

/// Tolerance for cosines that drift outside `[-1, 1]` through rounding.
pub const COS_SLACK: f64 = 1e-9;

/// A directed edge from `src` to the image of `dst` displaced by
/// `image·L`.
#[derive(Clone, Debug, PartialEq)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub image: [i32; 3],
    pub distance: f64,
    pub unit: Vec3,
}

/// An ordered pair of distinct bond-graph edges leaving the same center.
#[derive(Clone, Debug, PartialEq)]
pub struct Triplet {
    pub first: usize,
    pub second: usize,
    pub center: usize,
    pub cos_angle: f64,
}

#[derive(Clone, Debug)]
pub struct AtomGraph {
    pub edges: Vec<Edge>,
    /// `E × n_radial`.
    pub radial_features: Tensor,
}

#[derive(Clone, Debug)]
pub struct BondGraph {
    pub triplets: Vec<Triplet>,
    /// `T × n_angular`.
    pub angular_features: Tensor,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GraphConfig {
    pub r_atom: f64,
    pub r_bond: f64,
    pub n_radial: usize,
    pub n_angular: usize,
    pub max_images: usize,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            r_atom: DEFAULT_R_ATOM,
            r_bond: DEFAULT_R_BOND,
            n_radial: DEFAULT_N_RADIAL,
            n_angular: DEFAULT_N_ANGULAR,
            max_images: DEFAULT_MAX_IMAGES,
        }
    }
}

/// Atom graph plus bond graph for one structure, with the index arrays the
/// model gathers and scatters through.
#[derive(Clone, Debug)]
pub struct CrystalGraph {
    pub n_atoms: usize,
    pub atom_graph: AtomGraph,
    pub bond_graph: BondGraph,
    pub r_atom: f64,
    pub r_bond: f64,
    pub src: Index,
    pub dst: Index,
    /// `E × 3` Cartesian image offsets `image·L`.
    pub shifts: Tensor,
    pub triplet_first: Index,
    pub triplet_second: Index,
    pub triplet_center: Index,
}

impl CrystalGraph {
    pub fn n_edges(&self) -> usize {
        self.atom_graph.edges.len()
    }

    pub fn n_triplets(&self) -> usize {
        self.bond_graph.triplets.len()
    }
}

/// All directed edges within `r_cut`, with the default image limit.
pub fn build_neighbor_list(structure: &Structure, r_cut: f64) -> Result<Vec<Edge>> {
    build_neighbor_list_with(structure, r_cut, DEFAULT_MAX_IMAGES)
}

pub fn build_neighbor_list_with(
    structure: &Structure,
    r_cut: f64,
    max_images: usize,
) -> Result<Vec<Edge>> {
    if !(r_cut > 0.0) {
        return Err(Error::Config(format!(
            "cutoff must be positive, got {r_cut}"
        )));
    }
    let widths = structure.perpendicular_widths();
    let mut reach = [0.0; 3];
    for axis in 0..3 {
        reach[axis] = r_cut / widths[axis];
        let needed = reach[axis].ceil() as usize;
        if needed > max_images {
            return Err(Error::TooManyImages {
                r_cut,
                axis,
                needed,
                limit: max_images,
            });
        }
    }
    let lattice = structure.lattice();
    let pos = structure.positions();
    let frac = structure.fractional_positions();
    let n = structure.n_atoms();
    let r2 = r_cut * r_cut;
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let s = lin3::sub(frac[j], frac[i]);
            let delta = lin3::sub(pos[j], pos[i]);
            // any image within r_cut has |s_a + T_a| <= r_cut / width_a
            let lo: Vec<i32> = (0..3)
                .map(|a| (-s[a] - reach[a] - 1e-9).ceil() as i32)
                .collect();
            let hi: Vec<i32> = (0..3)
                .map(|a| (-s[a] + reach[a] + 1e-9).floor() as i32)
                .collect();
            for t0 in lo[0]..=hi[0] {
                for t1 in lo[1]..=hi[1] {
                    for t2 in lo[2]..=hi[2] {
                        let image = [t0, t1, t2];
                        let shift = lin3::vec_mat([t0 as f64, t1 as f64, t2 as f64], lattice);
                        let v = lin3::add(delta, shift);
                        let d2 = lin3::dot(v, v);
                        if d2 > r2 || d2 == 0.0 {
                            continue;
                        }
                        let d = d2.sqrt();
                        edges.push(Edge {
                            src: i,
                            dst: j,
                            image,
                            distance: d,
                            unit: lin3::scale(v, 1.0 / d),
                        });
                    }
                }
            }
        }
    }
    Ok(edges)
}

/// Smooth cutoff `½(cos(πd/r_cut) + 1)`; zero with zero slope at `r_cut`.
pub fn envelope(d: f64, r_cut: f64) -> f64 {
    if d >= r_cut {
        0.0
    } else {
        0.5 * ((std::f64::consts::PI * d / r_cut).cos() + 1.0)
    }
}

fn radial_centers(r_cut: f64, n: usize) -> (Vec<f64>, f64) {
    if n == 1 {
        return (vec![0.0], r_cut);
    }
    let spacing = r_cut / (n - 1) as f64;
    ((0..n).map(|k| k as f64 * spacing).collect(), spacing)
}

/// Gaussians centered uniformly on `[0, r_cut]` with width equal to their
/// spacing, times the cutoff envelope.
pub fn radial_basis(d: f64, r_cut: f64, n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::Config(
            "radial basis needs at least one function".into(),
        ));
    }
    if !(d > 0.0) || d > r_cut {
        return Err(Error::Domain(format!("distance {d} outside (0, {r_cut}]")));
    }
    let (centers, width) = radial_centers(r_cut, n);
    let env = envelope(d, r_cut);
    Ok(centers
        .iter()
        .map(|c| {
            let z = (d - c) / width;
            (-z * z).exp() * env
        })
        .collect())
}

/// Chebyshev polynomials `T_k(cosθ) = cos(kθ)` for `k = 0..n`.
pub fn angular_basis(cos_theta: f64, n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::Config(
            "angular basis needs at least one function".into(),
        ));
    }
    if !(cos_theta.abs() <= 1.0 + COS_SLACK) {
        return Err(Error::Domain(format!("cosine {cos_theta} outside [-1, 1]")));
    }
    let x = cos_theta.clamp(-1.0, 1.0);
    let mut out = Vec::with_capacity(n);
    out.push(1.0);
    if n > 1 {
        out.push(x);
    }
    for k in 2..n {
        let next = 2.0 * x * out[k - 1] - out[k - 2];
        out.push(next);
    }
    Ok(out)
}

fn add_constant(tape: &mut Tape, a: Var, c: f64) -> Var {
    let (r, k) = tape.shape(a);
    let cst = tape.constant(Tensor::filled(r, k, c));
    tape.add(a, cst)
}

/// Recorded [`envelope`] of an `E×1` distance column.
pub fn envelope_tape(tape: &mut Tape, d: Var, r_cut: f64) -> Var {
    let arg = tape.scale(d, std::f64::consts::PI / r_cut);
    let c = tape.cos(arg);
    let c1 = add_constant(tape, c, 1.0);
    tape.scale(c1, 0.5)
}

/// Recorded [`radial_basis`] of an `E×1` distance column, giving `E×n`.
pub fn radial_basis_tape(tape: &mut Tape, d: Var, r_cut: f64, n: usize) -> Var {
    let (centers, width) = radial_centers(r_cut, n);
    let rows = tape.shape(d).0;
    let wide = tape.broadcast_cols(d, n);
    let neg: Vec<f64> = centers.iter().map(|c| -c).collect();
    let neg = tape.constant(Tensor::row_vector(&neg));
    let shifted = tape.add_row(wide, neg);
    let z = tape.scale(shifted, 1.0 / width);
    let z2 = tape.square(z);
    let arg = tape.neg(z2);
    let g = tape.exp(arg);
    let env = envelope_tape(tape, d, r_cut);
    debug_assert_eq!(tape.shape(env), (rows, 1));
    tape.mul_col(g, env)
}

/// Recorded [`angular_basis`] of a `T×1` cosine column, giving `T×n`.
pub fn angular_basis_tape(tape: &mut Tape, cos: Var, n: usize) -> Var {
    let rows = tape.shape(cos).0;
    let mut cols = Vec::with_capacity(n);
    cols.push(tape.constant(Tensor::filled(rows, 1, 1.0)));
    if n > 1 {
        cols.push(cos);
    }
    for k in 2..n {
        let xt = tape.mul(cos, cols[k - 1]);
        let two_xt = tape.scale(xt, 2.0);
        let next = tape.sub(two_xt, cols[k - 2]);
        cols.push(next);
    }
    tape.concat_cols(&cols)
}

/// Builds the crystal graph with the default basis sizes.
pub fn build_crystal_graph(
    structure: &Structure,
    r_atom: f64,
    r_bond: f64,
) -> Result<CrystalGraph> {
    GraphConfig {
        r_atom,
        r_bond,
        ..GraphConfig::default()
    }
    .build(structure)
}

impl GraphConfig {
    pub fn build(&self, structure: &Structure) -> Result<CrystalGraph> {
        if !(self.r_bond > 0.0 && self.r_bond <= self.r_atom) {
            return Err(Error::Config(format!(
                "need 0 < r_bond <= r_atom, got r_bond = {}, r_atom = {}",
                self.r_bond, self.r_atom
            )));
        }
        let edges = build_neighbor_list_with(structure, self.r_atom, self.max_images)?;
        let n_edges = edges.len();

        let mut radial = Tensor::zeros(n_edges, self.n_radial);
        for (k, e) in edges.iter().enumerate() {
            let row = radial_basis(e.distance, self.r_atom, self.n_radial)?;
            radial.row_mut(k).copy_from_slice(&row);
        }

        // bond-graph members grouped by their source atom
        let mut by_center: Vec<Vec<usize>> = vec![Vec::new(); structure.n_atoms()];
        for (k, e) in edges.iter().enumerate() {
            if e.distance <= self.r_bond {
                by_center[e.src].push(k);
            }
        }
        let mut triplets = Vec::new();
        for (center, members) in by_center.iter().enumerate() {
            for &a in members {
                for &b in members {
                    if a == b {
                        continue;
                    }
                    let cos = lin3::dot(edges[a].unit, edges[b].unit).clamp(-1.0, 1.0);
                    triplets.push(Triplet {
                        first: a,
                        second: b,
                        center,
                        cos_angle: cos,
                    });
                }
            }
        }
        let mut angular = Tensor::zeros(triplets.len(), self.n_angular);
        for (k, t) in triplets.iter().enumerate() {
            let row = angular_basis(t.cos_angle, self.n_angular)?;
            angular.row_mut(k).copy_from_slice(&row);
        }

        let lattice = structure.lattice();
        let mut shifts = Tensor::zeros(n_edges, 3);
        for (k, e) in edges.iter().enumerate() {
            let t = e.image;
            let s = lin3::vec_mat([t[0] as f64, t[1] as f64, t[2] as f64], lattice);
            shifts.row_mut(k).copy_from_slice(&s);
        }
        let idx = |v: Vec<usize>| -> Index { Arc::from(v) };
        Ok(CrystalGraph {
            n_atoms: structure.n_atoms(),
            src: idx(edges.iter().map(|e| e.src).collect()),
            dst: idx(edges.iter().map(|e| e.dst).collect()),
            shifts,
            triplet_first: idx(triplets.iter().map(|t| t.first).collect()),
            triplet_second: idx(triplets.iter().map(|t| t.second).collect()),
            triplet_center: idx(triplets.iter().map(|t| t.center).collect()),
            atom_graph: AtomGraph {
                edges,
                radial_features: radial,
            },
            bond_graph: BondGraph {
                triplets,
                angular_features: angular,
            },
            r_atom: self.r_atom,
            r_bond: self.r_bond,
        })
    }
}
