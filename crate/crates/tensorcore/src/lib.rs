//! Reverse-mode differentiation over dense `f64` matrices.
//!
//! The tape records its own backward passes, so a gradient is an ordinary
//! tape value that can be differentiated again. Interatomic potentials use
//! this twice: forces and stress are first derivatives of the energy, and
//! training on them needs the derivative of a loss built from those forces
//! with respect to the model parameters.
//!
//! ```
//! use tensorcore::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::row_vector(&[1.0, -2.0, 3.0]));
//! let sq = tape.square(x);
//! let e = tape.sum_all(sq);
//! let g = tape.grad(e, &[x]).unwrap()[0];
//! assert_eq!(tape.value(g).data(), &[2.0, -4.0, 6.0]);
//!
//! // differentiate the gradient norm again
//! let g2 = tape.square(g);
//! let n = tape.sum_all(g2);
//! let h = tape.grad(n, &[x]).unwrap()[0];
//! assert_eq!(tape.value(h).data(), &[8.0, -16.0, 24.0]);
//! ```

mod func;
mod tape;
mod tensor;

pub use func::Func;
pub use tape::{Index, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("differentiation target must be a scalar, got a {0}x{1} value")]
    NotScalar(usize, usize),
    #[error("node {0} is not a leaf of the tape")]
    NotALeaf(usize),
    #[error("shape error: {0}")]
    Shape(String),
}

/// `∂energy/∂positions` for an `N×3` positions leaf.
pub fn grad_wrt_positions(
    tape: &mut Tape,
    energy: Var,
    positions: Var,
) -> Result<Var, AutodiffError> {
    if tape.shape(positions).1 != 3 {
        return Err(AutodiffError::Shape(format!(
            "positions must be Nx3, got {:?}",
            tape.shape(positions)
        )));
    }
    Ok(tape.grad(energy, &[positions])?[0])
}

/// `∂energy/∂ε` at `ε = 0` for a strain leaf created by [`strain_leaf`].
/// The result is symmetric because the strain enters only through its
/// symmetric part.
pub fn grad_wrt_strain(tape: &mut Tape, energy: Var, strain: Var) -> Result<Var, AutodiffError> {
    if tape.shape(strain) != (3, 3) {
        return Err(AutodiffError::Shape(format!(
            "strain must be 3x3, got {:?}",
            tape.shape(strain)
        )));
    }
    Ok(tape.grad(energy, &[strain])?[0])
}

/// Gradients of a scalar loss with respect to parameter leaves. The loss may
/// itself contain recorded gradients.
pub fn grad_loss_wrt_params(
    tape: &mut Tape,
    loss: Var,
    params: &[Var],
) -> Result<Vec<Var>, AutodiffError> {
    tape.grad(loss, params)
}

/// Records a zero `3×3` strain leaf and the deformation `I + (S + Sᵀ)/2`
/// built from it. Row-vector coordinates map as `r → r·(I + ε)`.
pub fn strain_leaf(tape: &mut Tape) -> (Var, Var) {
    let s = tape.leaf(Tensor::zeros(3, 3));
    let st = tape.transpose(s);
    let sum = tape.add(s, st);
    let sym = tape.scale(sum, 0.5);
    let eye = tape.constant(Tensor::identity(3));
    let deform = tape.add(eye, sym);
    (s, deform)
}
