//! Least-squares objective, analytic gradients and a finite-difference
//! oracle.
//!
//! For a Hermitian `U` and `x = a + ib`, the real gradients of
//! `f(x) = x†Ux` are `∇_a f = Ux + Uᵀx*` and `∇_b f = iUᵀx* − iUx`, which
//! collapse to `2 Re(Ux)` and `2 Im(Ux)`. The objective exploits the
//! collapsed form: every gradient is assembled from `Σ_c w_c U†(t_c) O U(t_c) ψ`
//! computed by one adjoint pass over the time grid.

pub mod fd;
pub mod problem;

pub use fd::{finite_difference, relative_error, FdGradient};
pub use problem::{
    ActiveMask, Estimator, GradientBundle, ParamBlock, ParameterVector, PopulationModel, Pulse,
    ReconstructionProblem, Reference, StateModel,
};

use nalgebra::DMatrix;

use crate::{Complex64, Error, Result};

/// Hermiticity tolerance accepted by [`quad_grad`].
pub const QUAD_HERMITIAN_TOLERANCE: f64 = 1e-10;
/// Largest imaginary residue tolerated in the real gradients.
pub const QUAD_IMAG_TOLERANCE: f64 = 1e-12;

/// `(∇_a f, ∇_b f)` for `f = x†Ux`, evaluated with the general identities.
pub fn quad_grad(u: &DMatrix<Complex64>, x: &[Complex64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = x.len();
    if u.nrows() != n || u.ncols() != n {
        return Err(Error::input(format!(
            "matrix is {}x{}, vector has length {n}",
            u.nrows(),
            u.ncols()
        )));
    }
    let herm = (u - u.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
    if herm > QUAD_HERMITIAN_TOLERANCE {
        return Err(Error::input(format!("matrix is not Hermitian (error {herm:.3e})")));
    }
    let i = Complex64::new(0.0, 1.0);
    let mut ga = Vec::with_capacity(n);
    let mut gb = Vec::with_capacity(n);
    for r in 0..n {
        let mut ux = Complex64::new(0.0, 0.0);
        let mut utx = Complex64::new(0.0, 0.0);
        for c in 0..n {
            ux += u[(r, c)] * x[c];
            utx += u[(c, r)] * x[c].conj();
        }
        let a = ux + utx;
        let b = i * utx - i * ux;
        let scale = a.norm().max(b.norm()).max(1.0);
        if a.im.abs() > QUAD_IMAG_TOLERANCE * scale || b.im.abs() > QUAD_IMAG_TOLERANCE * scale {
            return Err(Error::Numerical("quadratic-form gradient is not real".into()));
        }
        ga.push(a.re);
        gb.push(b.re);
    }
    Ok((ga, gb))
}
