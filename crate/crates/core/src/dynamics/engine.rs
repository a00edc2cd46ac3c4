//! Sector-decomposed propagation used by the reconstruction objective.
//!
//! The basis is split into sectors, the connected components of every
//! observable and preparation coupling. States never leave their sectors
//! under free evolution, the kick or any observable, so expectation values
//! and their adjoints are sums of independent per-sector pieces. For a Z
//! pulse the sectors are the `M` blocks, which is what keeps 3003-state
//! ensembles cheap.

use crate::parallel;
use crate::rotor::{BlockOperator, HermitianOperator, RotorBasis};
use crate::{Complex64, Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
// time points handled per work item; fixed so sums do not depend on the
// worker count
const TIME_CHUNK: usize = 64;

#[derive(Clone, Debug)]
struct Sector {
    indices: Vec<usize>,
    levels: Vec<usize>,
    ops: Vec<HermitianOperator>,
}

/// Amplitudes of a state split by sector.
#[derive(Clone, Debug, PartialEq)]
pub struct SectorState {
    pub pieces: Vec<(usize, Vec<Complex64>)>,
}

impl SectorState {
    pub fn norm_sqr(&self) -> f64 {
        self.pieces
            .iter()
            .flat_map(|(_, v)| v.iter())
            .map(|c| c.norm_sqr())
            .sum()
    }

    /// `self += scale · other` for states with the same piece layout.
    pub fn add_scaled(&mut self, other: &SectorState, scale: f64) {
        for ((sa, a), (sb, b)) in self.pieces.iter_mut().zip(&other.pieces) {
            debug_assert_eq!(sa, sb);
            for (x, y) in a.iter_mut().zip(b) {
                *x += y * scale;
            }
        }
    }

    pub fn zeros_like(&self) -> SectorState {
        SectorState {
            pieces: self
                .pieces
                .iter()
                .map(|(s, v)| (*s, vec![ZERO; v.len()]))
                .collect(),
        }
    }

    /// `Σ conj(self) · other`.
    pub fn inner(&self, other: &SectorState) -> Complex64 {
        self.pieces
            .iter()
            .zip(&other.pieces)
            .flat_map(|((_, a), (_, b))| a.iter().zip(b))
            .map(|(x, y)| x.conj() * y)
            .sum()
    }
}

/// `exp(−i h_J t_c)` for every level and time, plus `∂h_J/∂I`.
#[derive(Clone, Debug)]
pub struct PhaseTable {
    n_levels: usize,
    times: Vec<f64>,
    table: Vec<Complex64>,
    dh_di: Vec<f64>,
}

impl PhaseTable {
    pub fn new(j_max: u32, inertia: f64, times: &[f64]) -> Result<Self> {
        if !(inertia > 0.0 && inertia.is_finite()) {
            return Err(Error::input(format!("moment of inertia must be positive, got {inertia}")));
        }
        let n_levels = j_max as usize + 1;
        let jj1: Vec<f64> = (0..n_levels).map(|j| (j * (j + 1)) as f64).collect();
        let mut table = Vec::with_capacity(times.len() * n_levels);
        for &t in times {
            for k in &jj1 {
                table.push(Complex64::from_polar(1.0, -k / (2.0 * inertia) * t));
            }
        }
        let dh_di = jj1.iter().map(|k| -k / (2.0 * inertia * inertia)).collect();
        Ok(PhaseTable {
            n_levels,
            times: times.to_vec(),
            table,
            dh_di,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    #[inline]
    fn row(&self, c: usize) -> &[Complex64] {
        &self.table[c * self.n_levels..(c + 1) * self.n_levels]
    }
}

/// Per-sector operator cache over one basis.
#[derive(Clone, Debug)]
pub struct SectorEngine {
    dim: usize,
    j_max: u32,
    sectors: Vec<Sector>,
    locate: Vec<(usize, usize)>,
    n_obs: usize,
}

impl SectorEngine {
    /// Sectors are the connected components of the observables together
    /// with the block structure of `preparation` (if any).
    pub fn new(
        basis: &RotorBasis,
        observables: &[&HermitianOperator],
        preparation: Option<&BlockOperator>,
    ) -> Result<Self> {
        let dim = basis.len();
        if let Some(o) = observables.iter().find(|o| o.dim() != dim) {
            return Err(Error::input(format!(
                "observable dimension {} does not match basis size {dim}",
                o.dim()
            )));
        }
        let mut parent: Vec<usize> = (0..dim).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        let join = |a: usize, b: usize, p: &mut Vec<usize>| {
            let (ra, rb) = (find(p, a), find(p, b));
            if ra != rb {
                p[ra.max(rb)] = ra.min(rb);
            }
        };
        for op in observables {
            for (r, c, _) in op.triplets() {
                join(r, c, &mut parent);
            }
        }
        if let Some(prep) = preparation {
            if prep.dim() != dim {
                return Err(Error::input("preparation dimension does not match basis"));
            }
            for blk in prep.blocks() {
                for w in blk.indices.windows(2) {
                    join(w[0], w[1], &mut parent);
                }
            }
        }
        let mut groups = std::collections::BTreeMap::<usize, Vec<usize>>::new();
        for i in 0..dim {
            let r = find(&mut parent, i);
            groups.entry(r).or_default().push(i);
        }
        let mut locate = vec![(0, 0); dim];
        let sectors: Vec<Sector> = groups
            .into_values()
            .enumerate()
            .map(|(s, indices)| {
                for (k, &i) in indices.iter().enumerate() {
                    locate[i] = (s, k);
                }
                Sector {
                    levels: indices.iter().map(|&i| basis.state(i).j as usize).collect(),
                    ops: observables.iter().map(|o| o.restrict(&indices)).collect(),
                    indices,
                }
            })
            .collect();
        Ok(SectorEngine {
            dim,
            j_max: basis.j_max(),
            sectors,
            locate,
            n_obs: observables.len(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_sectors(&self) -> usize {
        self.sectors.len()
    }

    pub fn n_observables(&self) -> usize {
        self.n_obs
    }

    pub fn phase_table(&self, inertia: f64, times: &[f64]) -> Result<PhaseTable> {
        PhaseTable::new(self.j_max, inertia, times)
    }

    /// Splits a dense vector, dropping sectors that are identically zero.
    pub fn split_dense(&self, x: &[Complex64]) -> SectorState {
        let pieces = self
            .sectors
            .iter()
            .enumerate()
            .filter_map(|(s, sec)| {
                let v: Vec<Complex64> = sec.indices.iter().map(|&i| x[i]).collect();
                v.iter().any(|c| c.norm() > 0.0).then_some((s, v))
            })
            .collect();
        SectorState { pieces }
    }

    /// Splits a dense vector keeping every sector (layout independent of the
    /// values).
    pub fn split_full(&self, x: &[Complex64]) -> SectorState {
        let pieces = self
            .sectors
            .iter()
            .enumerate()
            .map(|(s, sec)| (s, sec.indices.iter().map(|&i| x[i]).collect()))
            .collect();
        SectorState { pieces }
    }

    /// Splits a sparse vector given by global indices.
    pub fn split_sparse(&self, indices: &[usize], values: &[Complex64]) -> SectorState {
        let mut pieces: Vec<(usize, Vec<Complex64>)> = Vec::new();
        for (&i, &v) in indices.iter().zip(values) {
            let (s, k) = self.locate[i];
            let pos = match pieces.iter().position(|(ps, _)| *ps == s) {
                Some(p) => p,
                None => {
                    pieces.push((s, vec![ZERO; self.sectors[s].indices.len()]));
                    pieces.len() - 1
                }
            };
            pieces[pos].1[k] += v;
        }
        pieces.sort_by_key(|p| p.0);
        SectorState { pieces }
    }

    pub fn to_dense(&self, st: &SectorState) -> Vec<Complex64> {
        let mut out = vec![ZERO; self.dim];
        for (s, v) in &st.pieces {
            for (&i, &c) in self.sectors[*s].indices.iter().zip(v) {
                out[i] = c;
            }
        }
        out
    }

    /// Sector piece for an arbitrary state restricted to one sector's layout.
    pub fn piece_indices(&self, sector: usize) -> &[usize] {
        &self.sectors[sector].indices
    }

    /// `⟨ψ|U†(t_c) O_o U(t_c)|ψ⟩` for every observable `o` and time `c`,
    /// returned as `[o][c]`.
    pub fn traces(&self, st: &SectorState, phases: &PhaseTable) -> Vec<Vec<f64>> {
        let k = phases.times.len();
        let chunks = k.div_ceil(TIME_CHUNK);
        let parts = parallel::map_range(chunks, |ch| {
            let range = ch * TIME_CHUNK..((ch + 1) * TIME_CHUNK).min(k);
            let mut out = vec![vec![0.0; range.len()]; self.n_obs];
            let mut phi = Vec::new();
            for (local_c, c) in range.enumerate() {
                let row = phases.row(c);
                for (s, x) in &st.pieces {
                    let sec = &self.sectors[*s];
                    phi.clear();
                    phi.extend(x.iter().zip(&sec.levels).map(|(a, &l)| a * row[l]));
                    for (o, op) in sec.ops.iter().enumerate() {
                        out[o][local_c] += op.quadratic_form(&phi).re;
                    }
                }
            }
            out
        });
        let mut res = vec![Vec::with_capacity(k); self.n_obs];
        for part in parts {
            for (o, v) in part.into_iter().enumerate() {
                res[o].extend(v);
            }
        }
        res
    }

    /// Adjoint pass. With weights `w[o][c]` returns
    /// `G = Σ_{o,c} w_oc U†(t_c) O_o U(t_c) ψ` and
    /// `Σ_{o,c} w_oc Σ_n (∂O_o(t_c)/∂h_n)(∂h_n/∂I)`.
    pub fn adjoint(
        &self,
        st: &SectorState,
        weights: &[Vec<f64>],
        phases: &PhaseTable,
        want_inertia: bool,
    ) -> (SectorState, f64) {
        debug_assert_eq!(weights.len(), self.n_obs);
        let k = phases.times.len();
        let chunks = k.div_ceil(TIME_CHUNK);
        let parts = parallel::map_range(chunks, |ch| {
            let range = ch * TIME_CHUNK..((ch + 1) * TIME_CHUNK).min(k);
            let mut g = st.zeros_like();
            let mut d_inertia = 0.0;
            let mut phi = Vec::new();
            let mut y = Vec::new();
            for c in range {
                let row = phases.row(c);
                let t = phases.times[c];
                for ((s, x), (_, gp)) in st.pieces.iter().zip(g.pieces.iter_mut()) {
                    let sec = &self.sectors[*s];
                    phi.clear();
                    phi.extend(x.iter().zip(&sec.levels).map(|(a, &l)| a * row[l]));
                    y.resize(phi.len(), ZERO);
                    for (o, op) in sec.ops.iter().enumerate() {
                        let w = weights[o][c];
                        if w == 0.0 {
                            continue;
                        }
                        op.apply_into(&phi, &mut y);
                        for ((gv, yv), &l) in gp.iter_mut().zip(&y).zip(&sec.levels) {
                            *gv += row[l].conj() * yv * w;
                        }
                        if want_inertia {
                            let mut acc = 0.0;
                            for ((p, yv), &l) in phi.iter().zip(&y).zip(&sec.levels) {
                                acc += (p.conj() * yv).im * phases.dh_di[l];
                            }
                            d_inertia += w * (-2.0 * t) * acc;
                        }
                    }
                }
            }
            (g, d_inertia)
        });
        let mut g = st.zeros_like();
        let mut d_inertia = 0.0;
        for (pg, pd) in parts {
            g.add_scaled(&pg, 1.0);
            d_inertia += pd;
        }
        (g, d_inertia)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotor::{cos2_operator, observable_operator, ObservableKind, Parity, Polarization};

    #[test]
    fn z_observable_sectors_follow_m_and_parity() {
        let b = RotorBasis::new(6, Parity::AllJ);
        let z = cos2_operator(&b, Polarization::Z).unwrap();
        let e = SectorEngine::new(&b, &[&z], None).unwrap();
        // (M, J parity) pairs: M in -6..=6 with both parities where allowed
        let mut expected = std::collections::BTreeSet::new();
        for s in b.states() {
            expected.insert((s.m, s.j % 2));
        }
        assert_eq!(e.n_sectors(), expected.len());
    }

    #[test]
    fn split_round_trip() {
        let b = RotorBasis::new(4, Parity::AllJ);
        let ops = [
            observable_operator(&b, ObservableKind::Cos2Theta).unwrap(),
            observable_operator(&b, ObservableKind::Sin2ThetaSin2Phi).unwrap(),
        ];
        let e = SectorEngine::new(&b, &[&ops[0], &ops[1]], None).unwrap();
        let x: Vec<Complex64> = (0..b.len())
            .map(|i| Complex64::new(i as f64 * 0.1, 1.0 - i as f64 * 0.05))
            .collect();
        assert_eq!(e.to_dense(&e.split_dense(&x)), x);
        assert_eq!(e.to_dense(&e.split_full(&x)), x);
        let idx = [3usize, 7, 11];
        let vals = [x[3], x[7], x[11]];
        let sp = e.split_sparse(&idx, &vals);
        let dense = e.to_dense(&sp);
        for i in 0..b.len() {
            let expect = if idx.contains(&i) { x[i] } else { ZERO };
            assert_eq!(dense[i], expect);
        }
    }
}
