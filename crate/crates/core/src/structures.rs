//! Periodic crystal structures, labeled training frames, and their
//! JSON-lines storage format.
//!
//! One frame per line:
//!
//! ```text
//! {"lattice":[[..3]x3],"species":[Z,..],"positions":[[x,y,z],..],"fidelity":f,
//!  "energy":E,"forces":[[..3],..],"stress":[[..3]x3],"magmoms":[m,..]}
//! ```
//!
//! Units are Å, eV, eV/Å, eV/Å³ and μB. `magmoms` is optional. Stress uses
//! the `σ = (1/V)·∂E/∂ε` sign convention.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lin3::{self, Mat3, Vec3};

/// Number of elements covered by embeddings and composition models.
pub const N_ELEMENTS: usize = 94;

/// Conversion factor from eV/Å³ to GPa.
pub const EV_PER_A3_TO_GPA: f64 = 160.21766208;

/// Largest stress asymmetry tolerated on ingest, in eV/Å³.
pub const STRESS_ASYMMETRY_TOLERANCE: f64 = 1e-6;

/// A periodic cell: lattice rows are the cell vectors (Å), positions are
/// Cartesian (Å), species are atomic numbers.
#[derive(Clone, Debug, PartialEq)]
pub struct Structure {
    lattice: Mat3,
    species: Vec<u8>,
    positions: Vec<Vec3>,
}

impl Structure {
    pub fn new(lattice: Mat3, species: Vec<u8>, positions: Vec<Vec3>) -> Result<Self> {
        if species.is_empty() {
            return Err(Error::InvalidStructure("structure has no atoms".into()));
        }
        if species.len() != positions.len() {
            return Err(Error::InvalidStructure(format!(
                "{} species but {} positions",
                species.len(),
                positions.len()
            )));
        }
        if let Some(&z) = species.iter().find(|&&z| z == 0 || z as usize > N_ELEMENTS) {
            return Err(Error::ElementOutOfRange(z as u32));
        }
        let volume = lin3::det(&lattice);
        if !(volume > 0.0) || !volume.is_finite() {
            return Err(Error::InvalidStructure(format!(
                "lattice determinant must be positive, got {volume}"
            )));
        }
        if lattice
            .iter()
            .flatten()
            .chain(positions.iter().flatten())
            .any(|x| !x.is_finite())
        {
            return Err(Error::InvalidStructure("non-finite coordinate".into()));
        }
        Ok(Self {
            lattice,
            species,
            positions,
        })
    }

    pub fn lattice(&self) -> &Mat3 {
        &self.lattice
    }

    pub fn species(&self) -> &[u8] {
        &self.species
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn n_atoms(&self) -> usize {
        self.species.len()
    }

    pub fn volume(&self) -> f64 {
        lin3::det(&self.lattice)
    }

    /// Fractional coordinates `s` with `r = s·L`.
    pub fn fractional_positions(&self) -> Vec<Vec3> {
        let inv = lin3::inverse(&self.lattice).expect("valid lattice is invertible");
        self.positions
            .iter()
            .map(|&r| lin3::vec_mat(r, &inv))
            .collect()
    }

    /// Perpendicular distance between opposite faces of the cell, per axis.
    pub fn perpendicular_widths(&self) -> Vec3 {
        let v = self.volume();
        let l = &self.lattice;
        [
            v / lin3::norm(lin3::cross(l[1], l[2])),
            v / lin3::norm(lin3::cross(l[2], l[0])),
            v / lin3::norm(lin3::cross(l[0], l[1])),
        ]
    }

    /// Same structure with every atom mapped into the home cell.
    pub fn wrapped(&self) -> Self {
        let positions = self
            .fractional_positions()
            .into_iter()
            .map(|s| {
                let w = [
                    s[0] - s[0].floor(),
                    s[1] - s[1].floor(),
                    s[2] - s[2].floor(),
                ];
                lin3::vec_mat(w, &self.lattice)
            })
            .collect();
        Self {
            positions,
            ..self.clone()
        }
    }

    pub fn translated(&self, shift: Vec3) -> Self {
        Self {
            positions: self
                .positions
                .iter()
                .map(|&r| lin3::add(r, shift))
                .collect(),
            ..self.clone()
        }
    }

    /// Applies the row-vector rotation `r → r·R` to lattice and positions.
    pub fn rotated(&self, rotation: &Mat3) -> Self {
        Self {
            lattice: lin3::mat_mul(&self.lattice, rotation),
            species: self.species.clone(),
            positions: self
                .positions
                .iter()
                .map(|&r| lin3::vec_mat(r, rotation))
                .collect(),
        }
    }

    /// Applies the homogeneous deformation `r → r·(I + ε)` to lattice and
    /// positions.
    pub fn strained(&self, strain: &Mat3) -> Self {
        let mut f = lin3::identity();
        for (r, row) in f.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v += strain[r][c];
            }
        }
        self.rotated(&f)
    }

    /// Reorders atoms so that new atom `k` is old atom `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            lattice: self.lattice,
            species: order.iter().map(|&i| self.species[i]).collect(),
            positions: order.iter().map(|&i| self.positions[i]).collect(),
        }
    }

    pub fn with_positions(&self, positions: Vec<Vec3>) -> Result<Self> {
        Self::new(self.lattice, self.species.clone(), positions)
    }

    /// The `m0×m1×m2` supercell.
    pub fn supercell(&self, reps: [usize; 3]) -> Self {
        let l = &self.lattice;
        let mut species = Vec::new();
        let mut positions = Vec::new();
        for a in 0..reps[0] {
            for b in 0..reps[1] {
                for c in 0..reps[2] {
                    let shift = lin3::vec_mat([a as f64, b as f64, c as f64], l);
                    for (z, r) in self.species.iter().zip(&self.positions) {
                        species.push(*z);
                        positions.push(lin3::add(*r, shift));
                    }
                }
            }
        }
        let lattice = [
            lin3::scale(l[0], reps[0] as f64),
            lin3::scale(l[1], reps[1] as f64),
            lin3::scale(l[2], reps[2] as f64),
        ];
        Self {
            lattice,
            species,
            positions,
        }
    }
}

/// A structure with reference labels at one fidelity.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledFrame {
    pub structure: Structure,
    pub fidelity: usize,
    /// Total energy of the cell, eV.
    pub energy: f64,
    /// eV/Å.
    pub forces: Vec<Vec3>,
    /// Symmetric, eV/Å³.
    pub stress: Mat3,
    /// Per-atom magnetic moments, μB; absent for frames without magnetic labels.
    pub magmoms: Option<Vec<f64>>,
}

impl LabeledFrame {
    /// Validates shapes and symmetrizes the stress.
    pub fn new(
        structure: Structure,
        fidelity: usize,
        energy: f64,
        forces: Vec<Vec3>,
        stress: Mat3,
        magmoms: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = structure.n_atoms();
        if fidelity == 0 {
            return Err(Error::InvalidFrame("fidelity tags start at 1".into()));
        }
        if forces.len() != n {
            return Err(Error::Shape(format!(
                "{n} atoms but {} force rows",
                forces.len()
            )));
        }
        if let Some(m) = &magmoms {
            if m.len() != n {
                return Err(Error::Shape(format!("{n} atoms but {} magmoms", m.len())));
            }
        }
        let mut sym = stress;
        for a in 0..3 {
            for b in 0..3 {
                let asym = (stress[a][b] - stress[b][a]).abs();
                if asym > STRESS_ASYMMETRY_TOLERANCE {
                    return Err(Error::InvalidFrame(format!(
                        "stress asymmetry {asym:e} eV/Å³ exceeds {STRESS_ASYMMETRY_TOLERANCE:e}"
                    )));
                }
                sym[a][b] = 0.5 * (stress[a][b] + stress[b][a]);
            }
        }
        Ok(Self {
            structure,
            fidelity,
            energy,
            forces,
            stress: sym,
            magmoms,
        })
    }

    pub fn n_atoms(&self) -> usize {
        self.structure.n_atoms()
    }

    pub fn with_fidelity(&self, fidelity: usize) -> Self {
        Self {
            fidelity,
            ..self.clone()
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameRecord {
    lattice: Mat3,
    species: Vec<u32>,
    positions: Vec<Vec3>,
    fidelity: usize,
    energy: f64,
    forces: Vec<Vec3>,
    stress: Mat3,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    magmoms: Option<Vec<f64>>,
}

/// Bare structure as accepted by `predict`; label keys, if present, are
/// ignored.
#[derive(Serialize, Deserialize)]
pub struct StructureRecord {
    pub lattice: Mat3,
    pub species: Vec<u32>,
    pub positions: Vec<Vec3>,
}

impl StructureRecord {
    pub fn into_structure(self) -> Result<Structure> {
        let species = to_species(&self.species)?;
        Structure::new(self.lattice, species, self.positions)
    }

    pub fn from_structure(s: &Structure) -> Self {
        Self {
            lattice: s.lattice,
            species: s.species.iter().map(|&z| z as u32).collect(),
            positions: s.positions.clone(),
        }
    }
}

fn to_species(z: &[u32]) -> Result<Vec<u8>> {
    z.iter()
        .map(|&z| {
            if (1..=N_ELEMENTS as u32).contains(&z) {
                Ok(z as u8)
            } else {
                Err(Error::ElementOutOfRange(z))
            }
        })
        .collect()
}

fn record_to_frame(rec: FrameRecord, n_fidelities: usize) -> Result<LabeledFrame> {
    if rec.fidelity < 1 || rec.fidelity > n_fidelities {
        return Err(Error::FidelityOutOfRange {
            fidelity: rec.fidelity,
            n_fidelities,
        });
    }
    let species = to_species(&rec.species)?;
    let structure = Structure::new(rec.lattice, species, rec.positions)?;
    LabeledFrame::new(
        structure,
        rec.fidelity,
        rec.energy,
        rec.forces,
        rec.stress,
        rec.magmoms,
    )
}

/// Reads frames from any buffered reader. Blank lines are skipped; errors
/// carry the 1-based line number.
pub fn read_frames<R: BufRead>(reader: R, n_fidelities: usize) -> Result<Vec<LabeledFrame>> {
    let mut frames = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: FrameRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let frame = record_to_frame(rec, n_fidelities).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        frames.push(frame);
    }
    Ok(frames)
}

/// Parses a JSON-lines frame file. Fidelity tags must lie in `1..=n_fidelities`.
pub fn parse_frames(path: impl AsRef<Path>, n_fidelities: usize) -> Result<Vec<LabeledFrame>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_frames(BufReader::new(file), n_fidelities)
}

/// Serializes one frame as a single JSON line (without the newline).
pub fn frame_to_json(frame: &LabeledFrame) -> Result<String> {
    let s = &frame.structure;
    let rec = FrameRecord {
        lattice: s.lattice,
        species: s.species.iter().map(|&z| z as u32).collect(),
        positions: s.positions.clone(),
        fidelity: frame.fidelity,
        energy: frame.energy,
        forces: frame.forces.clone(),
        stress: frame.stress,
        magmoms: frame.magmoms.clone(),
    };
    Ok(serde_json::to_string(&rec)?)
}

pub fn write_frames_to<W: Write>(frames: &[LabeledFrame], mut out: W) -> Result<()> {
    for f in frames {
        let line = frame_to_json(f)?;
        writeln!(out, "{line}").map_err(|e| Error::io("<writer>", e))?;
    }
    Ok(())
}

/// Writes frames one per line. Numbers use the shortest representation that
/// parses back to the identical `f64`.
pub fn write_frames(frames: &[LabeledFrame], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for f in frames {
        let line = frame_to_json(f)?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Atomic fractions indexed by atomic number (`x[z - 1]`).
#[derive(Clone, Debug, PartialEq)]
pub struct CompositionVector(pub [f64; N_ELEMENTS]);

impl CompositionVector {
    /// Fraction of element `z` (1-based atomic number).
    pub fn fraction(&self, z: u8) -> f64 {
        self.0[z as usize - 1]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn composition_vector(structure: &Structure) -> CompositionVector {
    let mut counts = [0usize; N_ELEMENTS];
    for &z in structure.species() {
        counts[z as usize - 1] += 1;
    }
    let n = structure.n_atoms() as f64;
    let mut x = [0.0; N_ELEMENTS];
    for (xi, c) in x.iter_mut().zip(counts) {
        *xi = c as f64 / n;
    }
    CompositionVector(x)
}

/// Deterministic shuffled split. The test part holds
/// `round(test_fraction·len)` items; both parts keep the input order.
pub fn split_dataset<T: Clone>(items: &[T], test_fraction: f64, seed: u64) -> (Vec<T>, Vec<T>) {
    assert!(
        (0.0..1.0).contains(&test_fraction),
        "test fraction must lie in [0, 1)"
    );
    let n_test = (test_fraction * items.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_test = vec![false; items.len()];
    for &i in &order[..n_test] {
        is_test[i] = true;
    }
    let mut train = Vec::with_capacity(items.len() - n_test);
    let mut test = Vec::with_capacity(n_test);
    for (item, t) in items.iter().zip(is_test) {
        if t {
            test.push(item.clone());
        } else {
            train.push(item.clone());
        }
    }
    (train, test)
}
