//! Linear composition model: a per-atom reference energy that depends only
//! on elemental fractions, one weight column per fidelity.

use nalgebra::{DMatrix, DVector};
use tensorcore::Tensor;

use crate::error::{Error, Result};
use crate::structures::{composition_vector, CompositionVector, LabeledFrame, N_ELEMENTS};

/// Relative singular-value cutoff of the pseudo-inverse.
const PINV_RCOND: f64 = 1e-12;

/// `Σ_a w[a, column]·x_a` in eV/atom for a `94×n` weight table.
pub fn composition_energy(x: &CompositionVector, weights: &Tensor, column: usize) -> f64 {
    x.as_slice()
        .iter()
        .enumerate()
        .filter(|(_, &xa)| xa != 0.0)
        .map(|(a, &xa)| weights.get(a, column) * xa)
        .sum()
}

/// Minimum-norm least-squares weights for `E/N ≈ Σ_a w_a x_a`, with
/// `samples` given as `(composition, energy per atom)` pairs. Elements that
/// never occur get weight zero.
pub fn fit_weights(samples: &[(CompositionVector, f64)]) -> Result<[f64; N_ELEMENTS]> {
    if samples.is_empty() {
        return Err(Error::Config(
            "composition fit needs at least one sample".into(),
        ));
    }
    let present: Vec<usize> = (0..N_ELEMENTS)
        .filter(|&a| samples.iter().any(|(x, _)| x.0[a] != 0.0))
        .collect();
    let a = DMatrix::from_fn(samples.len(), present.len(), |i, k| {
        samples[i].0 .0[present[k]]
    });
    let b = DVector::from_iterator(samples.len(), samples.iter().map(|s| s.1));
    let svd = a.svd(true, true);
    let cutoff = svd.singular_values.max() * PINV_RCOND;
    let solution = svd
        .solve(&b, cutoff)
        .map_err(|e| Error::Config(format!("composition fit failed: {e}")))?;
    let mut w = [0.0; N_ELEMENTS];
    for (k, &elem) in present.iter().enumerate() {
        w[elem] = solution[k];
    }
    Ok(w)
}

fn samples<'a>(frames: impl Iterator<Item = &'a LabeledFrame>) -> Vec<(CompositionVector, f64)> {
    frames
        .map(|f| {
            (
                composition_vector(&f.structure),
                f.energy / f.n_atoms() as f64,
            )
        })
        .collect()
}

/// Fits one column per fidelity `1..=n_fidelities` from that fidelity's
/// frames. Returns a `94×n_fidelities` table.
pub fn fit_composition(frames: &[LabeledFrame], n_fidelities: usize) -> Result<Tensor> {
    let mut table = Tensor::zeros(N_ELEMENTS, n_fidelities);
    for f in 1..=n_fidelities {
        let s = samples(frames.iter().filter(|fr| fr.fidelity == f));
        if s.is_empty() {
            return Err(Error::EmptyFidelity(f));
        }
        let w = fit_weights(&s)?;
        for (a, v) in w.iter().enumerate() {
            table.set(a, f - 1, *v);
        }
    }
    Ok(table)
}

/// One weight column fitted to all frames regardless of fidelity, stored
/// in column 1 of a `94×n_fidelities` table.
pub fn fit_composition_pooled(frames: &[LabeledFrame], n_fidelities: usize) -> Result<Tensor> {
    let s = samples(frames.iter());
    if s.is_empty() {
        return Err(Error::EmptyFidelity(1));
    }
    let w = fit_weights(&s)?;
    let mut table = Tensor::zeros(N_ELEMENTS, n_fidelities);
    for (a, v) in w.iter().enumerate() {
        table.set(a, 0, *v);
    }
    Ok(table)
}
