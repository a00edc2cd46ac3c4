//! Rigid-rotor basis, operators, spectrum and impulsive kicks.

pub mod basis;
pub mod harmonics;
pub mod kick;
pub mod operator;
pub mod spectrum;

pub use basis::{Parity, RotorBasis, JM};
pub use kick::{
    build_kick, build_kick_padded, compose_preparation, default_padding, BlockOperator,
    KickOperator, Preparation,
};
pub use operator::{
    angular_matrix, cos2_operator, observable_operator, AngularFunction, HermitianOperator,
    ObservableKind, Polarization, QuadratureOptions,
};
pub use spectrum::Spectrum;

use nalgebra::DMatrix;
use serde_json::{json, Value};

use crate::Complex64;

/// Debug dump of a dense matrix: `{"rows", "cols", "data": [[re, im], …]}`
/// in row-major order.
pub fn dense_dump(m: &DMatrix<Complex64>) -> Value {
    let mut data = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            let v = m[(r, c)];
            data.push(json!([v.re, v.im]));
        }
    }
    json!({ "rows": m.nrows(), "cols": m.ncols(), "data": data })
}
