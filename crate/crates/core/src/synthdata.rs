//! Synthetic two-fidelity reference data.
//!
//! Structures are distorted rock-salt cells (transition-metal and lithium
//! cations on one sublattice, oxygen on the other). Labels come from an
//! analytic potential: per-element reference energies, a tapered 8-4 pair
//! term and a tapered three-body angle term. The low-fidelity oracle uses
//! perturbed pair and angle parameters, shifted reference energies and
//! label noise, and provides no magnetic moments.

use rand::seq::IndexedRandom;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::graph::{build_neighbor_list, Edge};
use crate::lin3::{self, Mat3, Vec3};
use crate::structures::{LabeledFrame, Structure};

pub const LITHIUM: u8 = 3;
pub const OXYGEN: u8 = 8;
pub const MANGANESE: u8 = 25;
pub const IRON: u8 = 26;

pub const HIGH_FIDELITY: usize = 2;
pub const LOW_FIDELITY: usize = 1;

/// Closest approach the oracle accepts.
pub const ORACLE_MIN_DISTANCE: f64 = 0.5;

/// Label noise of the low-fidelity data.
pub const LF_ENERGY_NOISE_PER_ATOM: f64 = 0.002;
pub const LF_FORCE_NOISE: f64 = 0.02;

/// Shape of the generated cells.
#[derive(Clone, Debug, PartialEq)]
pub struct Template {
    pub lattice_constant: f64,
    /// Supercells of the 8-site conventional cell to choose from.
    pub repeats: Vec<[usize; 3]>,
    pub cations: Vec<u8>,
    pub anion: u8,
    /// Largest fraction of cation sites left empty.
    pub max_vacancy_fraction: f64,
    /// Cells never shrink below this many atoms through vacancies.
    pub min_atoms: usize,
    /// Half-width of the uniform symmetric strain components.
    pub max_strain: f64,
    /// Standard deviation of the Gaussian position noise, Å.
    pub jitter: f64,
    pub min_distance: f64,
    pub max_attempts: usize,
}

impl Template {
    /// 8- to 48-atom cells built from 1 to 6 conventional cells.
    pub fn standard() -> Self {
        Self {
            lattice_constant: 4.2,
            repeats: vec![[1, 1, 1], [2, 1, 1], [3, 1, 1], [2, 2, 1], [3, 2, 1]],
            cations: vec![LITHIUM, MANGANESE, IRON],
            anion: OXYGEN,
            max_vacancy_fraction: 0.25,
            min_atoms: 8,
            max_strain: 0.03,
            jitter: 0.1,
            min_distance: 1.2,
            max_attempts: 1000,
        }
    }

    /// Single 8-atom conventional cells; cheap enough for repeated training
    /// experiments.
    pub fn small() -> Self {
        Self {
            repeats: vec![[1, 1, 1]],
            ..Self::standard()
        }
    }
}

fn conventional_sites() -> ([Vec3; 4], [Vec3; 4]) {
    let cation = [
        [0.0, 0.0, 0.0],
        [0.0, 0.5, 0.5],
        [0.5, 0.0, 0.5],
        [0.5, 0.5, 0.0],
    ];
    let mut anion = cation;
    for s in anion.iter_mut() {
        s[0] += 0.5;
    }
    (cation, anion)
}

fn min_distance_ok(s: &Structure, min_distance: f64) -> Result<bool> {
    Ok(build_neighbor_list(s, min_distance)?.is_empty())
}

fn gen_one(t: &Template, rng: &mut ChaCha8Rng) -> Result<Structure> {
    let reps = *t
        .repeats
        .choose(rng)
        .ok_or_else(|| Error::Config("template has no repeats".into()))?;
    let a = t.lattice_constant;
    let (cat_sites, an_sites) = conventional_sites();

    let n_kinds = rng.random_range(1..=t.cations.len());
    let mut kinds = t.cations.clone();
    kinds.shuffle(rng);
    kinds.truncate(n_kinds);

    let mut cation_frac = Vec::new();
    let mut anion_frac = Vec::new();
    for i in 0..reps[0] {
        for j in 0..reps[1] {
            for k in 0..reps[2] {
                let cell = [i as f64, j as f64, k as f64];
                for s in cat_sites {
                    cation_frac.push(lin3::add(s, cell));
                }
                for s in an_sites {
                    anion_frac.push(lin3::add(s, cell));
                }
            }
        }
    }
    let n_sites = cation_frac.len() + anion_frac.len();
    let max_vac = ((t.max_vacancy_fraction * cation_frac.len() as f64).floor() as usize)
        .min(n_sites.saturating_sub(t.min_atoms));
    let n_vac = rng.random_range(0..=max_vac);
    cation_frac.shuffle(rng);
    cation_frac.truncate(cation_frac.len() - n_vac);

    let mut species = Vec::with_capacity(n_sites - n_vac);
    let mut frac = Vec::with_capacity(n_sites - n_vac);
    for s in cation_frac {
        species.push(*kinds.choose(rng).expect("at least one kind"));
        frac.push(s);
    }
    for s in anion_frac {
        species.push(t.anion);
        frac.push(s);
    }

    let mut strain = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in i..3 {
            let e = if t.max_strain > 0.0 {
                rng.random_range(-t.max_strain..=t.max_strain)
            } else {
                0.0
            };
            strain[i][j] = e;
            strain[j][i] = e;
        }
    }
    let deform = lin3::add_mat(&lin3::identity(), &strain);
    let base = [
        [a * reps[0] as f64, 0.0, 0.0],
        [0.0, a * reps[1] as f64, 0.0],
        [0.0, 0.0, a * reps[2] as f64],
    ];
    let lattice = lin3::mat_mul(&base, &deform);
    let ideal: Vec<Vec3> = frac
        .iter()
        .map(|f| {
            lin3::vec_mat(
                [
                    f[0] / reps[0] as f64,
                    f[1] / reps[1] as f64,
                    f[2] / reps[2] as f64,
                ],
                &lattice,
            )
        })
        .collect();

    let noise = Normal::new(0.0, t.jitter.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    for _ in 0..t.max_attempts {
        let positions: Vec<Vec3> = ideal
            .iter()
            .map(|p| {
                if t.jitter > 0.0 {
                    [
                        p[0] + noise.sample(rng),
                        p[1] + noise.sample(rng),
                        p[2] + noise.sample(rng),
                    ]
                } else {
                    *p
                }
            })
            .collect();
        let s = Structure::new(lattice, species.clone(), positions)?;
        if min_distance_ok(&s, t.min_distance)? {
            return Ok(s);
        }
    }
    Err(Error::GenerationFailed(t.max_attempts))
}

/// `n` random structures, reproducible from `seed`.
pub fn gen_structures(template: &Template, n: usize, seed: u64) -> Result<Vec<Structure>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| gen_one(template, &mut rng)).collect()
}

/// 8-4 pair well `ε[(σ/d)⁸ − 2(σ/d)⁴]` with its minimum `-ε` at `d = σ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairParams {
    pub epsilon: f64,
    pub sigma: f64,
}

/// Parameters of one fidelity level of the oracle.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleParams {
    /// `(Z_a, Z_b, params)` with `Z_a <= Z_b`.
    pub pairs: Vec<(u8, u8, PairParams)>,
    /// Fallback for pairs not listed.
    pub default_pair: PairParams,
    pub pair_r_on: f64,
    pub pair_r_cut: f64,
    pub lambda: f64,
    pub three_body_r_on: f64,
    pub three_body_r_cut: f64,
    /// `(Z, μ_Z)` reference energies in eV/atom.
    pub reference: Vec<(u8, f64)>,
}

impl OracleParams {
    pub fn high_fidelity() -> Self {
        let p = |epsilon, sigma| PairParams { epsilon, sigma };
        Self {
            pairs: vec![
                (LITHIUM, OXYGEN, p(0.10, 2.15)),
                (OXYGEN, MANGANESE, p(0.16, 2.20)),
                (OXYGEN, IRON, p(0.14, 2.12)),
                (OXYGEN, OXYGEN, p(0.04, 3.0)),
            ],
            default_pair: p(0.03, 3.0),
            pair_r_on: 3.3,
            pair_r_cut: 3.6,
            lambda: 0.1,
            three_body_r_on: 2.45,
            three_body_r_cut: 2.75,
            reference: vec![
                (LITHIUM, -1.9),
                (OXYGEN, -4.9),
                (MANGANESE, -8.0),
                (IRON, -7.0),
            ],
        }
    }

    /// Well depths scaled by up to 8%, equilibrium distances by up to 1%,
    /// the angle strength by 10% and every reference energy shifted.
    pub fn low_fidelity() -> Self {
        let hf = Self::high_fidelity();
        let scale = [(1.08, 0.99), (0.92, 1.01), (1.05, 0.995), (0.95, 1.0)];
        let pairs = hf
            .pairs
            .iter()
            .zip(scale)
            .map(|(&(a, b, p), (se, ss))| {
                (
                    a,
                    b,
                    PairParams {
                        epsilon: p.epsilon * se,
                        sigma: p.sigma * ss,
                    },
                )
            })
            .collect();
        Self {
            pairs,
            default_pair: PairParams {
                epsilon: hf.default_pair.epsilon * 0.95,
                sigma: hf.default_pair.sigma,
            },
            lambda: hf.lambda * 0.9,
            reference: vec![
                (LITHIUM, -1.6),
                (OXYGEN, -4.4),
                (MANGANESE, -7.3),
                (IRON, -6.5),
            ],
            ..hf
        }
    }

    pub fn pair(&self, a: u8, b: u8) -> PairParams {
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        self.pairs
            .iter()
            .find(|(x, y, _)| *x == a && *y == b)
            .map_or(self.default_pair, |p| p.2)
    }

    pub fn reference_energy(&self, z: u8) -> f64 {
        self.reference
            .iter()
            .find(|(x, _)| *x == z)
            .map_or(0.0, |r| r.1)
    }
}

/// Cosine switch: 1 below `r_on`, 0 above `r_cut`. Returns value and slope.
fn taper(d: f64, r_on: f64, r_cut: f64) -> (f64, f64) {
    if d <= r_on {
        (1.0, 0.0)
    } else if d >= r_cut {
        (0.0, 0.0)
    } else {
        let w = r_cut - r_on;
        let x = PI * (d - r_on) / w;
        (0.5 * (1.0 + x.cos()), -0.5 * x.sin() * PI / w)
    }
}

fn pair_energy(p: PairParams, d: f64) -> (f64, f64) {
    let s4 = (p.sigma / d).powi(4);
    let s8 = s4 * s4;
    let e = p.epsilon * (s8 - 2.0 * s4);
    let de = p.epsilon * (-8.0 * s8 + 8.0 * s4) / d;
    (e, de)
}

/// Oracle energy (eV), forces (eV/Å) and stress `(1/V)∂E/∂ε` (eV/Å³).
pub fn oracle_label(
    structure: &Structure,
    params: &OracleParams,
) -> Result<(f64, Vec<Vec3>, Mat3)> {
    let n = structure.n_atoms();
    let species = structure.species();
    let r_max = params.pair_r_cut.max(params.three_body_r_cut);
    let edges = build_neighbor_list(structure, r_max)?;
    if let Some(e) = edges.iter().find(|e| e.distance < ORACLE_MIN_DISTANCE) {
        return Err(Error::Oracle(format!(
            "atoms {} and {} are {:.3} Å apart",
            e.src, e.dst, e.distance
        )));
    }

    let mut energy: f64 = species.iter().map(|&z| params.reference_energy(z)).sum();
    // dE/dv for every directed edge vector v = r_dst + T·L − r_src
    let mut dv = vec![[0.0; 3]; edges.len()];

    for (k, e) in edges.iter().enumerate() {
        if e.distance >= params.pair_r_cut {
            continue;
        }
        let (phi, dphi) = pair_energy(params.pair(species[e.src], species[e.dst]), e.distance);
        let (t, dt) = taper(e.distance, params.pair_r_on, params.pair_r_cut);
        // each unordered pair appears as two directed edges
        energy += 0.5 * phi * t;
        let g = 0.5 * (dphi * t + phi * dt);
        dv[k] = lin3::scale(e.unit, g);
    }

    let mut by_center: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (k, e) in edges.iter().enumerate() {
        if e.distance < params.three_body_r_cut {
            by_center[e.src].push(k);
        }
    }
    for members in &by_center {
        for (x, &p) in members.iter().enumerate() {
            for &q in &members[x + 1..] {
                let (ep, eq): (&Edge, &Edge) = (&edges[p], &edges[q]);
                let c = lin3::dot(ep.unit, eq.unit);
                let (tp, dtp) = taper(ep.distance, params.three_body_r_on, params.three_body_r_cut);
                let (tq, dtq) = taper(eq.distance, params.three_body_r_on, params.three_body_r_cut);
                let a = c + 1.0 / 3.0;
                energy += params.lambda * a * a * tp * tq;
                let de_dc = params.lambda * 2.0 * a * tp * tq;
                // ∂c/∂v_p = (u_q − c·u_p)/d_p
                let gp = lin3::add(
                    lin3::scale(
                        lin3::sub(eq.unit, lin3::scale(ep.unit, c)),
                        de_dc / ep.distance,
                    ),
                    lin3::scale(ep.unit, params.lambda * a * a * dtp * tq),
                );
                let gq = lin3::add(
                    lin3::scale(
                        lin3::sub(ep.unit, lin3::scale(eq.unit, c)),
                        de_dc / eq.distance,
                    ),
                    lin3::scale(eq.unit, params.lambda * a * a * tp * dtq),
                );
                dv[p] = lin3::add(dv[p], gp);
                dv[q] = lin3::add(dv[q], gq);
            }
        }
    }

    let mut forces = vec![[0.0; 3]; n];
    let mut virial = [[0.0; 3]; 3];
    for (e, g) in edges.iter().zip(&dv) {
        forces[e.src] = lin3::add(forces[e.src], *g);
        forces[e.dst] = lin3::sub(forces[e.dst], *g);
        let v = lin3::scale(e.unit, e.distance);
        for a in 0..3 {
            for b in 0..3 {
                virial[a][b] += v[a] * g[b];
            }
        }
    }
    let vol = structure.volume();
    let mut stress = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            stress[a][b] = 0.5 * (virial[a][b] + virial[b][a]) / vol;
        }
    }
    Ok((energy, forces, stress))
}

/// Magnetic moment per site type: `(Z, base, coefficient)`.
const MAGMOM_TABLE: [(u8, f64, f64); 4] = [
    (LITHIUM, 0.0, 0.0),
    (OXYGEN, 0.0, 0.02),
    (MANGANESE, 5.2, -0.25),
    (IRON, 4.6, -0.2),
];

/// Coordination weights fall from 1 at this distance to 0 at the cutoff.
pub const MAGMOM_CN_ON: f64 = 2.0;
pub const MAGMOM_CN_CUT: f64 = 3.0;

/// Smoothly weighted neighbor count within 3 Å.
pub fn coordination_numbers(structure: &Structure) -> Result<Vec<f64>> {
    let mut cn = vec![0.0; structure.n_atoms()];
    for e in build_neighbor_list(structure, MAGMOM_CN_CUT)? {
        cn[e.src] += taper(e.distance, MAGMOM_CN_ON, MAGMOM_CN_CUT).0;
    }
    Ok(cn)
}

/// `m_i = base_Z + coefficient_Z·CN_i` in μB.
pub fn oracle_magmom(structure: &Structure) -> Result<Vec<f64>> {
    let cn = coordination_numbers(structure)?;
    Ok(structure
        .species()
        .iter()
        .zip(cn)
        .map(|(&z, c)| {
            let (_, base, coef) = MAGMOM_TABLE
                .iter()
                .find(|m| m.0 == z)
                .copied()
                .unwrap_or((z, 0.0, 0.0));
            base + coef * c
        })
        .collect())
}

/// High-fidelity frame: exact oracle labels plus magnetic moments.
pub fn label_high_fidelity(structure: Structure) -> Result<LabeledFrame> {
    let (energy, forces, stress) = oracle_label(&structure, &OracleParams::high_fidelity())?;
    let magmoms = oracle_magmom(&structure)?;
    LabeledFrame::new(
        structure,
        HIGH_FIDELITY,
        energy,
        forces,
        stress,
        Some(magmoms),
    )
}

/// Low-fidelity frame: perturbed oracle with label noise, no magmoms.
pub fn label_low_fidelity(structure: Structure, rng: &mut impl Rng) -> Result<LabeledFrame> {
    let (energy, mut forces, stress) = oracle_label(&structure, &OracleParams::low_fidelity())?;
    let n = structure.n_atoms() as f64;
    let e_noise = Normal::new(0.0, LF_ENERGY_NOISE_PER_ATOM * n).expect("positive std");
    let f_noise = Normal::new(0.0, LF_FORCE_NOISE).expect("positive std");
    let energy = energy + e_noise.sample(rng);
    for f in forces.iter_mut() {
        for c in f.iter_mut() {
            *c += f_noise.sample(rng);
        }
    }
    LabeledFrame::new(structure, LOW_FIDELITY, energy, forces, stress, None)
}

/// `n_hf` high-fidelity frames (fidelity 2) followed by `n_lf` low-fidelity
/// frames (fidelity 1). The two structure pools are drawn independently
/// from the same template.
pub fn make_dataset(
    n_lf: usize,
    n_hf: usize,
    seed: u64,
    template: &Template,
) -> Result<Vec<LabeledFrame>> {
    let mut seeder = ChaCha8Rng::seed_from_u64(seed);
    let hf_seed: u64 = seeder.random();
    let lf_seed: u64 = seeder.random();
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seeder.random());
    let mut frames = Vec::with_capacity(n_lf + n_hf);
    for s in gen_structures(template, n_hf, hf_seed)? {
        frames.push(label_high_fidelity(s)?);
    }
    for s in gen_structures(template, n_lf, lf_seed)? {
        frames.push(label_low_fidelity(s, &mut noise_rng)?);
    }
    Ok(frames)
}
