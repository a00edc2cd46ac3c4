use std::collections::BTreeSet;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::basis::RotorBasis;
use super::harmonics::{gauss_legendre, LegendreTable};
use crate::{Complex64, Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Entries with magnitude below this are treated as structural zeros.
pub const DROP_TOLERANCE: f64 = 1e-14;
/// Hermiticity tolerance checked on construction.
pub const HERMITIAN_TOLERANCE: f64 = 1e-12;

/// A real function on the unit sphere whose matrix elements are taken
/// between spherical harmonics.
pub trait AngularFunction: Sync {
    fn eval(&self, theta: f64, phi: f64) -> f64;

    /// Largest `|ΔJ|` the function can couple, if bounded.
    fn max_delta_j(&self) -> Option<u32>;

    /// Largest `|ΔM|` (the highest φ-harmonic present).
    fn max_delta_m(&self) -> u32 {
        2
    }
}

/// Unit vector along a laser polarization, in the lab frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polarization(pub [f64; 3]);

impl Polarization {
    pub const X: Polarization = Polarization([1.0, 0.0, 0.0]);
    pub const Y: Polarization = Polarization([0.0, 1.0, 0.0]);
    pub const Z: Polarization = Polarization([0.0, 0.0, 1.0]);

    /// In the XY plane at 45° to X.
    pub fn xy45() -> Polarization {
        let h = 0.5f64.sqrt();
        Polarization([h, h, 0.0])
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.norm();
        if !n.is_finite() || (n - 1.0).abs() > 1e-12 {
            return Err(Error::input(format!(
                "polarization {:?} is not a unit vector (norm {n})",
                self.0
            )));
        }
        Ok(())
    }
}

/// `cos²` of the angle between the molecular axis and a polarization axis.
#[derive(Clone, Copy, Debug)]
pub struct PolarizationCos2(pub Polarization);

impl AngularFunction for PolarizationCos2 {
    fn eval(&self, theta: f64, phi: f64) -> f64 {
        let [ex, ey, ez] = self.0 .0;
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = phi.sin_cos();
        let c = ex * st * cp + ey * st * sp + ez * ct;
        c * c
    }

    fn max_delta_j(&self) -> Option<u32> {
        Some(2)
    }
}

/// Observables supported by the reconstruction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservableKind {
    /// `⟨cos²θ⟩`, alignment along the lab Z axis.
    Cos2Theta,
    /// `⟨cos²φ⟩`.
    Cos2Phi,
    /// `⟨sin²θ sin 2φ⟩`.
    Sin2ThetaSin2Phi,
}

impl ObservableKind {
    pub const ALL: [ObservableKind; 3] = [
        ObservableKind::Cos2Theta,
        ObservableKind::Cos2Phi,
        ObservableKind::Sin2ThetaSin2Phi,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ObservableKind::Cos2Theta => "cos2_theta",
            ObservableKind::Cos2Phi => "cos2_phi",
            ObservableKind::Sin2ThetaSin2Phi => "sin2_theta_sin2_phi",
        }
    }
}

impl AngularFunction for ObservableKind {
    fn eval(&self, theta: f64, phi: f64) -> f64 {
        match self {
            ObservableKind::Cos2Theta => theta.cos().powi(2),
            ObservableKind::Cos2Phi => phi.cos().powi(2),
            ObservableKind::Sin2ThetaSin2Phi => theta.sin().powi(2) * (2.0 * phi).sin(),
        }
    }

    fn max_delta_j(&self) -> Option<u32> {
        match self {
            ObservableKind::Cos2Phi => None,
            _ => Some(2),
        }
    }
}

/// Sparse Hermitian matrix over a [`RotorBasis`] (compressed rows).
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianOperator {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<Complex64>,
    selection_rules: BTreeSet<(i32, i32)>,
}

impl HermitianOperator {
    /// Builds from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(
        dim: usize,
        mut triplets: Vec<(usize, usize, Complex64)>,
        selection_rules: BTreeSet<(i32, i32)>,
    ) -> Result<Self> {
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; dim + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut values: Vec<Complex64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if r >= dim || c >= dim {
                return Err(Error::input(format!("entry ({r},{c}) outside {dim}x{dim}")));
            }
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            last = Some((r, c));
            row_ptr[r + 1] += 1;
            cols.push(c);
            values.push(v);
        }
        for r in 0..dim {
            row_ptr[r + 1] += row_ptr[r];
        }
        let op = HermitianOperator {
            dim,
            row_ptr,
            cols,
            values,
            selection_rules,
        };
        let err = op.hermiticity_error();
        if err > HERMITIAN_TOLERANCE {
            return Err(Error::input(format!(
                "operator is not Hermitian (max |A - A†| = {err:.3e})"
            )));
        }
        Ok(op)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Declared `(ΔJ, ΔM)` couplings, `ΔJ = J_row − J_col`.
    pub fn selection_rules(&self) -> &BTreeSet<(i32, i32)> {
        &self.selection_rules
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, Complex64)> + '_ {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.cols[range.clone()].binary_search(&c) {
            Ok(k) => self.values[range.start + k],
            Err(_) => ZERO,
        }
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, Complex64)> + '_ {
        (0..self.dim).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    /// `out = A x`.
    pub fn apply_into(&self, x: &[Complex64], out: &mut [Complex64]) {
        debug_assert_eq!(x.len(), self.dim);
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = ZERO;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * x[self.cols[k]];
            }
            *o = acc;
        }
    }

    pub fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![ZERO; self.dim];
        self.apply_into(x, &mut out);
        out
    }

    /// `x† A x` (real part is the expectation value; the imaginary residue
    /// is returned for checking).
    pub fn quadratic_form(&self, x: &[Complex64]) -> Complex64 {
        let mut acc = ZERO;
        for (r, xr) in x.iter().enumerate() {
            let mut row = ZERO;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                row += self.values[k] * x[self.cols[k]];
            }
            acc += xr.conj() * row;
        }
        acc
    }

    pub fn hermiticity_error(&self) -> f64 {
        self.triplets()
            .map(|(r, c, v)| (v - self.get(c, r).conj()).norm())
            .fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (r, c, v) in self.triplets() {
            m[(r, c)] = v;
        }
        m
    }

    /// Restriction to the given (sorted or not) index subset, in local
    /// numbering.
    pub fn restrict(&self, indices: &[usize]) -> HermitianOperator {
        let mut local = vec![usize::MAX; self.dim];
        for (k, &i) in indices.iter().enumerate() {
            local[i] = k;
        }
        let mut row_ptr = Vec::with_capacity(indices.len() + 1);
        row_ptr.push(0);
        let mut cols = Vec::new();
        let mut values = Vec::new();
        for &i in indices {
            let mut row: Vec<(usize, Complex64)> = self
                .row(i)
                .filter(|&(c, _)| local[c] != usize::MAX)
                .map(|(c, v)| (local[c], v))
                .collect();
            row.sort_by_key(|e| e.0);
            for (c, v) in row {
                cols.push(c);
                values.push(v);
            }
            row_ptr.push(cols.len());
        }
        HermitianOperator {
            dim: indices.len(),
            row_ptr,
            cols,
            values,
            selection_rules: self.selection_rules.clone(),
        }
    }

    /// Elementwise sum of operators over the same basis.
    pub fn sum(ops: &[&HermitianOperator]) -> Result<HermitianOperator> {
        let dim = ops.first().map(|o| o.dim).unwrap_or(0);
        if ops.iter().any(|o| o.dim != dim) {
            return Err(Error::input("operator dimensions differ"));
        }
        let triplets = ops.iter().flat_map(|o| o.triplets()).collect();
        let rules = ops
            .iter()
            .flat_map(|o| o.selection_rules.iter().copied())
            .collect();
        HermitianOperator::from_triplets(dim, triplets, rules)
    }
}

/// Quadrature settings for the matrix-element builder.
#[derive(Clone, Copy, Debug)]
pub struct QuadratureOptions {
    /// Gauss–Legendre nodes in `cos θ`; `None` picks `j_max + 4`, which is
    /// exact for products of two harmonics with a degree-2 function.
    pub theta_nodes: Option<usize>,
    /// Uniform φ samples used for the Fourier decomposition of `f`.
    pub phi_nodes: usize,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        QuadratureOptions {
            theta_nodes: None,
            phi_nodes: 32,
        }
    }
}

/// Matrix of `f(θ,φ)` between the basis functions,
/// `⟨J'M'|f|JM⟩ = ∫ Y*_{J'M'} f Y_{JM} dΩ`.
///
/// `f` is split into φ-harmonics `f_q(θ)` with a uniform φ rule; each
/// harmonic couples `M' = M + q` and its θ-integral is done with
/// Gauss–Legendre in `cos θ`.
pub fn angular_matrix(
    basis: &RotorBasis,
    f: &dyn AngularFunction,
    opts: QuadratureOptions,
) -> Result<HermitianOperator> {
    let j_max = basis.j_max();
    let n_theta = opts.theta_nodes.unwrap_or(j_max as usize + 4);
    let n_phi = opts.phi_nodes.max(4 * f.max_delta_m() as usize + 1);
    let (xs, ws) = gauss_legendre(n_theta);
    let q_max = f.max_delta_m() as i32;

    // harmonics[node][q + q_max] = f_q(θ_node)
    let harmonics: Vec<Vec<Complex64>> = xs
        .iter()
        .map(|&x| {
            let theta = x.clamp(-1.0, 1.0).acos();
            let samples: Vec<f64> = (0..n_phi)
                .map(|k| f.eval(theta, 2.0 * PI * k as f64 / n_phi as f64))
                .collect();
            (-q_max..=q_max)
                .map(|q| {
                    let mut acc = ZERO;
                    for (k, s) in samples.iter().enumerate() {
                        let ang = -(q as f64) * 2.0 * PI * k as f64 / n_phi as f64;
                        acc += Complex64::from_polar(*s, ang);
                    }
                    acc / n_phi as f64
                })
                .collect()
        })
        .collect();
    let active_q: Vec<i32> = (-q_max..=q_max)
        .filter(|&q| {
            harmonics
                .iter()
                .any(|h| h[(q + q_max) as usize].norm() > DROP_TOLERANCE)
        })
        .collect();
    let tables: Vec<LegendreTable> = xs.iter().map(|&x| LegendreTable::new(j_max, x)).collect();

    let dj_max = f.max_delta_j().map(|d| d.min(j_max)).unwrap_or(j_max) as i64;
    let mut triplets = Vec::new();
    let mut rules = BTreeSet::new();
    for (col, s) in basis.states().iter().enumerate() {
        for &q in &active_q {
            let m_row = s.m + q;
            let j_lo = (s.j as i64 - dj_max).max(m_row.unsigned_abs() as i64);
            let j_hi = (s.j as i64 + dj_max).min(j_max as i64);
            for j_row in j_lo..=j_hi {
                let row_state = super::basis::JM::new(j_row as u32, m_row);
                let Some(row) = basis.index_of(row_state) else {
                    continue;
                };
                let mut acc = ZERO;
                for ((t, w), h) in tables.iter().zip(&ws).zip(&harmonics) {
                    let radial = w * t.get(row_state.j, m_row) * t.get(s.j, s.m);
                    acc += h[(q + q_max) as usize] * radial;
                }
                if acc.norm() > DROP_TOLERANCE {
                    triplets.push((row, col, acc));
                    rules.insert((row_state.j as i32 - s.j as i32, q));
                }
            }
        }
    }
    // remove the quadrature round-off from the Hermitian pairs
    let mut sym = Vec::with_capacity(triplets.len() * 2);
    for &(r, c, v) in &triplets {
        sym.push((r, c, v * 0.5));
        sym.push((c, r, v.conj() * 0.5));
    }
    HermitianOperator::from_triplets(basis.len(), sym, rules)
}

/// Matrix of `cos²` of the angle to the given polarization direction.
pub fn cos2_operator(basis: &RotorBasis, polarization: Polarization) -> Result<HermitianOperator> {
    polarization.validate()?;
    angular_matrix(basis, &PolarizationCos2(polarization), QuadratureOptions::default())
}

pub fn observable_operator(basis: &RotorBasis, kind: ObservableKind) -> Result<HermitianOperator> {
    angular_matrix(basis, &kind, QuadratureOptions::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotor::basis::{Parity, JM};

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn isotropic_averages() {
        let b = RotorBasis::new(4, Parity::AllJ);
        let z = cos2_operator(&b, Polarization::Z).unwrap();
        let x = cos2_operator(&b, Polarization::X).unwrap();
        assert!((z.get(0, 0) - c(1.0 / 3.0)).norm() < 1e-14);
        assert!((x.get(0, 0) - c(1.0 / 3.0)).norm() < 1e-14);
        let phi = observable_operator(&b, ObservableKind::Cos2Phi).unwrap();
        assert!((phi.get(0, 0) - c(0.5)).norm() < 1e-14);
        let s = observable_operator(&b, ObservableKind::Sin2ThetaSin2Phi).unwrap();
        assert!(s.get(0, 0).norm() < 1e-14);
    }

    #[test]
    fn z_coupling_two_zero() {
        let b = RotorBasis::new(2, Parity::AllJ);
        let z = cos2_operator(&b, Polarization::Z).unwrap();
        let i20 = b.index_of(JM::new(2, 0)).unwrap();
        let expected = 2.0 / (3.0 * 5f64.sqrt());
        assert!((z.get(i20, 0) - c(expected)).norm() < 1e-14);
    }

    #[test]
    fn z_selection_rules() {
        let b = RotorBasis::new(8, Parity::AllJ);
        let z = cos2_operator(&b, Polarization::Z).unwrap();
        for (r, cidx, v) in z.triplets() {
            let (sr, sc) = (b.state(r), b.state(cidx));
            let dj = sr.j as i32 - sc.j as i32;
            assert_eq!(sr.m, sc.m, "ΔM≠0 entry {v}");
            assert!([-2, 0, 2].contains(&dj));
        }
        assert!(z.selection_rules().iter().all(|&(_, dm)| dm == 0));
    }

    #[test]
    fn triad_sums_to_identity() {
        let b = RotorBasis::new(5, Parity::AllJ);
        let ops: Vec<_> = [Polarization::X, Polarization::Y, Polarization::Z]
            .into_iter()
            .map(|p| cos2_operator(&b, p).unwrap())
            .collect();
        let total = HermitianOperator::sum(&ops.iter().collect::<Vec<_>>()).unwrap();
        let dense = total.to_dense();
        for r in 0..b.len() {
            for cc in 0..b.len() {
                let e = if r == cc { 1.0 } else { 0.0 };
                assert!((dense[(r, cc)] - c(e)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_non_unit_polarization() {
        let b = RotorBasis::new(1, Parity::AllJ);
        assert!(cos2_operator(&b, Polarization([1.0, 1.0, 0.0])).is_err());
    }

    #[test]
    fn rejects_non_hermitian_triplets() {
        let t = vec![(0, 1, c(1.0))];
        assert!(HermitianOperator::from_triplets(2, t, BTreeSet::new()).is_err());
    }

    #[test]
    fn restrict_keeps_block_entries() {
        let b = RotorBasis::new(4, Parity::AllJ);
        let z = cos2_operator(&b, Polarization::Z).unwrap();
        let idx: Vec<usize> = b
            .states()
            .iter()
            .enumerate()
            .filter(|(_, s)| s.m == 0)
            .map(|(i, _)| i)
            .collect();
        let local = z.restrict(&idx);
        assert_eq!(local.dim(), 5);
        assert_eq!(local.get(1, 1), z.get(idx[1], idx[1]));
        assert_eq!(local.get(0, 2), z.get(idx[0], idx[2]));
    }
}
