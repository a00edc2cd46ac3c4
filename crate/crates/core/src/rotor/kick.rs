//! Impulsive kicks `V(P) = exp(i P C)` and multi-pulse preparations.
//!
//! `C` is the cos² coupling for the pulse polarization. It is block diagonal
//! (for a Z pulse, one block per `M`), so `V` and `∂V/∂P = i C V` are stored
//! as [`BlockOperator`]s and exponentiated block by block through a
//! Hermitian eigendecomposition on a padded basis.

use nalgebra::{DMatrix, SymmetricEigen};

use super::basis::RotorBasis;
use super::operator::{cos2_operator, HermitianOperator, Polarization};
use super::spectrum::Spectrum;
use crate::{Complex64, Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Population allowed to leave the basis when kicking a source state.
pub const LEAKAGE_TOLERANCE: f64 = 1e-8;

/// A dense block of a block-diagonal matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub indices: Vec<usize>,
    pub matrix: DMatrix<Complex64>,
}

/// Block-diagonal complex matrix; the blocks partition `0..dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockOperator {
    dim: usize,
    blocks: Vec<Block>,
    // (block, position inside block) for every index
    locate: Vec<(usize, usize)>,
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n).collect())
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }

    fn groups(mut self) -> Vec<Vec<usize>> {
        let n = self.0.len();
        let mut map = std::collections::BTreeMap::<usize, Vec<usize>>::new();
        for i in 0..n {
            let r = self.find(i);
            map.entry(r).or_default().push(i);
        }
        map.into_values().collect()
    }
}

/// Connected components of the sparsity graph of a set of operators over
/// `0..dim`; each component is returned as a sorted index list.
pub fn coupled_components<'a>(
    dim: usize,
    patterns: impl IntoIterator<Item = &'a HermitianOperator>,
) -> Vec<Vec<usize>> {
    let mut uf = UnionFind::new(dim);
    for op in patterns {
        for (r, c, _) in op.triplets() {
            uf.union(r, c);
        }
    }
    uf.groups()
}

impl BlockOperator {
    pub fn from_blocks(dim: usize, blocks: Vec<Block>) -> Result<Self> {
        let mut locate = vec![(usize::MAX, 0); dim];
        for (b, blk) in blocks.iter().enumerate() {
            if blk.matrix.nrows() != blk.indices.len() || blk.matrix.ncols() != blk.indices.len() {
                return Err(Error::input("block matrix does not match its index list"));
            }
            for (k, &i) in blk.indices.iter().enumerate() {
                if i >= dim || locate[i].0 != usize::MAX {
                    return Err(Error::input(format!("index {i} repeated or out of range")));
                }
                locate[i] = (b, k);
            }
        }
        if locate.iter().any(|l| l.0 == usize::MAX) {
            return Err(Error::input("blocks do not cover every index"));
        }
        Ok(BlockOperator {
            dim,
            blocks,
            locate,
        })
    }

    pub fn identity(dim: usize) -> Self {
        let blocks = (0..dim)
            .map(|i| Block {
                indices: vec![i],
                matrix: DMatrix::from_element(1, 1, Complex64::new(1.0, 0.0)),
            })
            .collect();
        BlockOperator::from_blocks(dim, blocks).expect("identity partition")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// Block containing index `i` and the position of `i` inside it.
    pub fn locate(&self, i: usize) -> (usize, usize) {
        self.locate[i]
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        let (br, kr) = self.locate[r];
        let (bc, kc) = self.locate[c];
        if br == bc {
            self.blocks[br].matrix[(kr, kc)]
        } else {
            ZERO
        }
    }

    /// Nonzero part of column `c`: the block's global indices and values.
    pub fn column(&self, c: usize) -> (&[usize], Vec<Complex64>) {
        let (b, k) = self.locate[c];
        let blk = &self.blocks[b];
        (&blk.indices, blk.matrix.column(k).iter().copied().collect())
    }

    pub fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![ZERO; self.dim];
        for blk in &self.blocks {
            for (r, &gi) in blk.indices.iter().enumerate() {
                let mut acc = ZERO;
                for (c, &gj) in blk.indices.iter().enumerate() {
                    acc += blk.matrix[(r, c)] * x[gj];
                }
                out[gi] = acc;
            }
        }
        out
    }

    pub fn apply_adjoint(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![ZERO; self.dim];
        for blk in &self.blocks {
            for (c, &gj) in blk.indices.iter().enumerate() {
                let mut acc = ZERO;
                for (r, &gi) in blk.indices.iter().enumerate() {
                    acc += blk.matrix[(r, c)].conj() * x[gi];
                }
                out[gj] = acc;
            }
        }
        out
    }

    /// `D · self` for a diagonal `D`.
    pub fn scale_rows(&self, diag: &[Complex64]) -> BlockOperator {
        let mut out = self.clone();
        for blk in &mut out.blocks {
            for (r, &gi) in blk.indices.iter().enumerate() {
                let d = diag[gi];
                blk.matrix.row_mut(r).iter_mut().for_each(|v| *v *= d);
            }
        }
        out
    }

    /// Product `self · rhs`; the result is block diagonal on the coarsest
    /// partition that refines into both factors' blocks.
    pub fn mul(&self, rhs: &BlockOperator) -> Result<BlockOperator> {
        if self.dim != rhs.dim {
            return Err(Error::input("block operator dimensions differ"));
        }
        if self.same_partition(rhs) {
            let blocks = self
                .blocks
                .iter()
                .zip(&rhs.blocks)
                .map(|(a, b)| Block {
                    indices: a.indices.clone(),
                    matrix: &a.matrix * &b.matrix,
                })
                .collect();
            return BlockOperator::from_blocks(self.dim, blocks);
        }
        let mut uf = UnionFind::new(self.dim);
        for blk in self.blocks.iter().chain(&rhs.blocks) {
            for w in blk.indices.windows(2) {
                uf.union(w[0], w[1]);
            }
        }
        let blocks = uf
            .groups()
            .into_iter()
            .map(|g| {
                let a = self.dense_on(&g);
                let b = rhs.dense_on(&g);
                Block {
                    matrix: a * b,
                    indices: g,
                }
            })
            .collect();
        BlockOperator::from_blocks(self.dim, blocks)
    }

    fn same_partition(&self, other: &BlockOperator) -> bool {
        self.blocks.len() == other.blocks.len()
            && self
                .blocks
                .iter()
                .zip(&other.blocks)
                .all(|(a, b)| a.indices == b.indices)
    }

    /// Dense submatrix on an index set that is a union of whole blocks.
    fn dense_on(&self, indices: &[usize]) -> DMatrix<Complex64> {
        let n = indices.len();
        let mut m = DMatrix::zeros(n, n);
        for (r, &gi) in indices.iter().enumerate() {
            for (c, &gj) in indices.iter().enumerate() {
                m[(r, c)] = self.get(gi, gj);
            }
        }
        m
    }

    /// Restriction to the leading `inner` indices (rows and columns).
    pub fn truncate(&self, inner: usize) -> BlockOperator {
        let blocks = self
            .blocks
            .iter()
            .filter_map(|blk| {
                let keep: Vec<usize> = (0..blk.indices.len())
                    .filter(|&k| blk.indices[k] < inner)
                    .collect();
                if keep.is_empty() {
                    return None;
                }
                let indices = keep.iter().map(|&k| blk.indices[k]).collect();
                let matrix = DMatrix::from_fn(keep.len(), keep.len(), |r, c| {
                    blk.matrix[(keep[r], keep[c])]
                });
                Some(Block { indices, matrix })
            })
            .collect();
        BlockOperator::from_blocks(inner, blocks).expect("truncation keeps a partition")
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for blk in &self.blocks {
            for (r, &gi) in blk.indices.iter().enumerate() {
                for (c, &gj) in blk.indices.iter().enumerate() {
                    m[(gi, gj)] = blk.matrix[(r, c)];
                }
            }
        }
        m
    }

    /// Largest block size.
    pub fn max_block(&self) -> usize {
        self.blocks.iter().map(|b| b.indices.len()).max().unwrap_or(0)
    }
}

/// `V(P) = exp(i P C)` for one polarized pulse.
#[derive(Clone, Debug)]
pub struct KickOperator {
    strength: f64,
    polarization: Polarization,
    basis: RotorBasis,
    padded: RotorBasis,
    v_padded: BlockOperator,
    dv_padded: BlockOperator,
}

/// Default padding `max(8, ceil |P|)` levels above the basis cutoff.
pub fn default_padding(strength: f64) -> u32 {
    (strength.abs().ceil() as u32).max(8)
}

pub fn build_kick(
    basis: &RotorBasis,
    strength: f64,
    polarization: Polarization,
) -> Result<KickOperator> {
    build_kick_padded(basis, strength, polarization, default_padding(strength))
}

pub fn build_kick_padded(
    basis: &RotorBasis,
    strength: f64,
    polarization: Polarization,
    padding: u32,
) -> Result<KickOperator> {
    if !strength.is_finite() {
        return Err(Error::input(format!("kick strength must be finite, got {strength}")));
    }
    polarization.validate()?;
    let padded = basis.padded(padding);
    let coupling = cos2_operator(&padded, polarization)?;
    let components = coupled_components(padded.len(), [&coupling]);
    let mut v_blocks = Vec::with_capacity(components.len());
    let mut dv_blocks = Vec::with_capacity(components.len());
    for indices in components {
        let local = coupling.restrict(&indices);
        let eig = SymmetricEigen::new(local.to_dense());
        let q = &eig.eigenvectors;
        let n = indices.len();
        let phases: Vec<Complex64> = eig
            .eigenvalues
            .iter()
            .map(|&l| Complex64::from_polar(1.0, strength * l))
            .collect();
        let qh = q.adjoint();
        let mut qv = q.clone();
        let mut qdv = q.clone();
        for c in 0..n {
            let lam = Complex64::new(eig.eigenvalues[c], 0.0);
            qv.column_mut(c).iter_mut().for_each(|v| *v *= phases[c]);
            qdv.column_mut(c)
                .iter_mut()
                .for_each(|v| *v *= I * lam * phases[c]);
        }
        v_blocks.push(Block {
            indices: indices.clone(),
            matrix: &qv * &qh,
        });
        dv_blocks.push(Block {
            indices,
            matrix: &qdv * &qh,
        });
    }
    Ok(KickOperator {
        strength,
        polarization,
        basis: basis.clone(),
        v_padded: BlockOperator::from_blocks(padded.len(), v_blocks)?,
        dv_padded: BlockOperator::from_blocks(padded.len(), dv_blocks)?,
        padded,
    })
}

impl KickOperator {
    pub fn strength(&self) -> f64 {
        self.strength
    }

    pub fn polarization(&self) -> Polarization {
        self.polarization
    }

    pub fn basis(&self) -> &RotorBasis {
        &self.basis
    }

    pub fn padded_basis(&self) -> &RotorBasis {
        &self.padded
    }

    /// `V` restricted to the requested basis.
    pub fn matrix(&self) -> BlockOperator {
        self.v_padded.truncate(self.basis.len())
    }

    /// `∂V/∂P = i C V` restricted to the requested basis.
    pub fn derivative(&self) -> BlockOperator {
        self.dv_padded.truncate(self.basis.len())
    }

    pub fn padded_matrix(&self) -> &BlockOperator {
        &self.v_padded
    }

    pub fn padded_derivative(&self) -> &BlockOperator {
        &self.dv_padded
    }

    /// Population leaving the requested basis when kicking each of its
    /// states.
    pub fn leakage(&self) -> Vec<f64> {
        column_leakage(&self.v_padded, self.basis.len())
    }

    /// Fails with [`Error::Leakage`] if any of `sources` leaks more than
    /// [`LEAKAGE_TOLERANCE`].
    pub fn ensure_contained(&self, sources: &[usize]) -> Result<()> {
        check_leakage(&self.leakage(), sources, self.basis.j_max())
    }
}

fn column_leakage(op: &BlockOperator, inner: usize) -> Vec<f64> {
    (0..inner)
        .map(|c| {
            let (idx, col) = op.column(c);
            idx.iter()
                .zip(&col)
                .filter(|(&i, _)| i >= inner)
                .map(|(_, v)| v.norm_sqr())
                .sum()
        })
        .collect()
}

fn check_leakage(leakage: &[f64], sources: &[usize], j_max: u32) -> Result<()> {
    for &s in sources {
        let l = leakage[s];
        if !(l < LEAKAGE_TOLERANCE) {
            return Err(Error::Leakage {
                index: s,
                j_max,
                leakage: l,
                tolerance: LEAKAGE_TOLERANCE,
            });
        }
    }
    Ok(())
}

/// Total preparation `V_total = V_n U(τ_n) ⋯ U(τ_2) V_1` and its parameter
/// derivatives, restricted to the requested basis.
#[derive(Clone, Debug)]
pub struct Preparation {
    basis: RotorBasis,
    total: BlockOperator,
    d_strength: Vec<BlockOperator>,
    d_inertia: BlockOperator,
    leakage: Vec<f64>,
}

enum Factor<'a> {
    Kick(&'a BlockOperator),
    Free(Vec<Complex64>),
}

fn product(factors: &[Factor<'_>], dim: usize) -> Result<BlockOperator> {
    let mut acc = BlockOperator::identity(dim);
    for f in factors {
        acc = match f {
            Factor::Kick(k) => k.mul(&acc)?,
            Factor::Free(d) => acc.scale_rows(d),
        };
    }
    Ok(acc)
}

/// Composes kicks separated by free evolution. `delay_before` of the first
/// pulse is ignored; later delays are the free-evolution times between
/// consecutive pulses.
pub fn compose_preparation(kicks: &[(&KickOperator, f64)], inertia: f64) -> Result<Preparation> {
    let Some((first, _)) = kicks.first() else {
        return Err(Error::input("preparation needs at least one kick"));
    };
    let basis = first.basis.clone();
    let padded = first.padded.clone();
    for (k, delay) in kicks {
        if k.basis != basis || k.padded != padded {
            return Err(Error::input("kicks were built on different bases"));
        }
        if !(*delay >= 0.0) {
            return Err(Error::input(format!("pulse delay must be non-negative, got {delay}")));
        }
    }
    let spectrum = Spectrum::new(&padded, inertia)?;
    let dh = spectrum.d_energies_d_inertia();
    let dim = padded.len();
    let inner = basis.len();

    // factors applied right to left: V_1, U(τ_2), V_2, ...
    let mut kinds: Vec<(Option<usize>, f64)> = Vec::new();
    for (n, (_, delay)) in kicks.iter().enumerate() {
        if n > 0 {
            kinds.push((None, *delay));
        }
        kinds.push((Some(n), 0.0));
    }
    let build = |replace: Option<usize>, free_deriv: Option<usize>| -> Result<BlockOperator> {
        let factors: Vec<Factor<'_>> = kinds
            .iter()
            .enumerate()
            .map(|(pos, &(kick, tau))| match kick {
                Some(n) if replace == Some(n) => Factor::Kick(&kicks[n].0.dv_padded),
                Some(n) => Factor::Kick(&kicks[n].0.v_padded),
                None => {
                    let u = spectrum.propagator(tau);
                    if free_deriv == Some(pos) {
                        Factor::Free(
                            u.iter()
                                .zip(&dh)
                                .map(|(u, d)| u * Complex64::new(0.0, -tau * d))
                                .collect(),
                        )
                    } else {
                        Factor::Free(u)
                    }
                }
            })
            .collect();
        product(&factors, dim)
    };

    let total_padded = build(None, None)?;
    let leakage = column_leakage(&total_padded, inner);
    let d_strength = (0..kicks.len())
        .map(|n| build(Some(n), None).map(|m| m.truncate(inner)))
        .collect::<Result<Vec<_>>>()?;
    let mut d_inertia: Option<BlockOperator> = None;
    for (pos, (kick, _)) in kinds.iter().enumerate() {
        if kick.is_none() {
            let term = build(None, Some(pos))?.truncate(inner);
            d_inertia = Some(match d_inertia {
                None => term,
                Some(acc) => add(&acc, &term)?,
            });
        }
    }
    let total = total_padded.truncate(inner);
    let d_inertia = match d_inertia {
        Some(d) => d,
        None => zeros_like(&total),
    };
    Ok(Preparation {
        basis,
        total,
        d_strength,
        d_inertia,
        leakage,
    })
}

fn zeros_like(op: &BlockOperator) -> BlockOperator {
    let blocks = op
        .blocks
        .iter()
        .map(|b| Block {
            indices: b.indices.clone(),
            matrix: DMatrix::zeros(b.indices.len(), b.indices.len()),
        })
        .collect();
    BlockOperator::from_blocks(op.dim, blocks).expect("same partition")
}

fn add(a: &BlockOperator, b: &BlockOperator) -> Result<BlockOperator> {
    if a.same_partition(b) {
        let blocks = a
            .blocks
            .iter()
            .zip(&b.blocks)
            .map(|(x, y)| Block {
                indices: x.indices.clone(),
                matrix: &x.matrix + &y.matrix,
            })
            .collect();
        return BlockOperator::from_blocks(a.dim, blocks);
    }
    // coarsen through multiplication by the identity on the joint partition
    let mut uf = UnionFind::new(a.dim);
    for blk in a.blocks.iter().chain(&b.blocks) {
        for w in blk.indices.windows(2) {
            uf.union(w[0], w[1]);
        }
    }
    let blocks = uf
        .groups()
        .into_iter()
        .map(|g| Block {
            matrix: a.dense_on(&g) + b.dense_on(&g),
            indices: g,
        })
        .collect();
    BlockOperator::from_blocks(a.dim, blocks)
}

impl Preparation {
    /// Builds every pulse with a shared padding and composes them.
    pub fn build(
        basis: &RotorBasis,
        pulses: &[(f64, Polarization, f64)],
        inertia: f64,
        padding: Option<u32>,
    ) -> Result<Preparation> {
        let pad = padding.unwrap_or_else(|| {
            pulses
                .iter()
                .map(|p| default_padding(p.0))
                .max()
                .unwrap_or(8)
        });
        let kicks = pulses
            .iter()
            .map(|&(p, pol, _)| build_kick_padded(basis, p, pol, pad))
            .collect::<Result<Vec<_>>>()?;
        let list: Vec<(&KickOperator, f64)> =
            kicks.iter().zip(pulses).map(|(k, p)| (k, p.2)).collect();
        compose_preparation(&list, inertia)
    }

    pub fn basis(&self) -> &RotorBasis {
        &self.basis
    }

    pub fn matrix(&self) -> &BlockOperator {
        &self.total
    }

    /// `∂V_total/∂P_n` for each pulse.
    pub fn strength_derivatives(&self) -> &[BlockOperator] {
        &self.d_strength
    }

    /// `∂V_total/∂I` through the free evolution between pulses (zero for a
    /// single pulse).
    pub fn inertia_derivative(&self) -> &BlockOperator {
        &self.d_inertia
    }

    pub fn leakage(&self) -> &[f64] {
        &self.leakage
    }

    pub fn ensure_contained(&self, sources: &[usize]) -> Result<()> {
        check_leakage(&self.leakage, sources, self.basis.j_max())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotor::basis::{Parity, JM};

    fn unit_error(m: &DMatrix<Complex64>, cols: &[usize]) -> f64 {
        let mut worst = 0.0f64;
        for &a in cols {
            for &b in cols {
                let dot: Complex64 = m.column(a).iter().zip(m.column(b).iter()).map(|(x, y)| x.conj() * y).sum();
                let e = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((dot - e).norm());
            }
        }
        worst
    }

    #[test]
    fn zero_strength_is_identity() {
        let b = RotorBasis::new(3, Parity::AllJ);
        let k = build_kick(&b, 0.0, Polarization::Z).unwrap();
        let v = k.matrix().to_dense();
        for r in 0..b.len() {
            for c in 0..b.len() {
                let e = if r == c { 1.0 } else { 0.0 };
                assert!((v[(r, c)] - Complex64::new(e, 0.0)).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn z_kick_from_ground_stays_even_m0_and_unitary() {
        let b = RotorBasis::new(24, Parity::AllJ);
        let k = build_kick(&b, 8.278, Polarization::Z).unwrap();
        k.ensure_contained(&[0]).unwrap();
        let v = k.matrix();
        let (idx, col) = v.column(0);
        let mut norm = 0.0;
        for (&i, v) in idx.iter().zip(&col) {
            let s = b.state(i);
            if s.m != 0 || s.j % 2 == 1 {
                assert!(v.norm() < 1e-14, "{s} populated");
            }
            norm += v.norm_sqr();
        }
        assert!((norm - 1.0).abs() < 1e-10);
    }

    #[test]
    fn leakage_is_reported() {
        let b = RotorBasis::new(4, Parity::EvenJOnly);
        let k = build_kick(&b, 8.278, Polarization::Z).unwrap();
        let top = b.index_of(JM::new(4, 0)).unwrap();
        assert!(matches!(k.ensure_contained(&[top]), Err(Error::Leakage { .. })));
    }

    #[test]
    fn padded_kick_is_unitary() {
        let b = RotorBasis::new(6, Parity::AllJ);
        for pol in [Polarization::X, Polarization::xy45(), Polarization::Z] {
            let k = build_kick(&b, 2.5, pol).unwrap();
            let v = k.padded_matrix().to_dense();
            let all: Vec<usize> = (0..v.ncols()).collect();
            assert!(unit_error(&v, &all) < 1e-10);
        }
    }

    #[test]
    fn single_kick_preparation_is_the_kick() {
        let b = RotorBasis::new(4, Parity::AllJ);
        let k = build_kick(&b, 1.3, Polarization::X).unwrap();
        let prep = compose_preparation(&[(&k, 0.0)], 100.0).unwrap();
        assert_eq!(prep.matrix(), &k.matrix());
        assert_eq!(prep.strength_derivatives()[0], k.derivative());
        assert!(prep.inertia_derivative().to_dense().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn zero_delay_two_kicks_is_product() {
        let b = RotorBasis::new(3, Parity::AllJ);
        let k1 = build_kick(&b, 0.7, Polarization::X).unwrap();
        let k2 = build_kick(&b, 0.4, Polarization::xy45()).unwrap();
        let prep = compose_preparation(&[(&k1, 0.0), (&k2, 0.0)], 50.0).unwrap();
        let expected = k2.padded_matrix().to_dense() * k1.padded_matrix().to_dense();
        let got = prep.matrix().to_dense();
        for r in 0..b.len() {
            for c in 0..b.len() {
                assert!((got[(r, c)] - expected[(r, c)]).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn mismatched_bases_rejected() {
        let k1 = build_kick(&RotorBasis::new(3, Parity::AllJ), 0.7, Polarization::X).unwrap();
        let k2 = build_kick(&RotorBasis::new(4, Parity::AllJ), 0.7, Polarization::X).unwrap();
        assert!(compose_preparation(&[(&k1, 0.0), (&k2, 1.0)], 5.0).is_err());
        assert!(compose_preparation(&[], 5.0).is_err());
        assert!(compose_preparation(&[(&k1, 0.0), (&k1, -1.0)], 5.0).is_err());
    }

    #[test]
    fn block_product_with_different_partitions() {
        let b = RotorBasis::new(3, Parity::AllJ);
        let kz = build_kick(&b, 0.9, Polarization::Z).unwrap();
        let kx = build_kick(&b, 0.6, Polarization::X).unwrap();
        let (z, x) = (kz.padded_matrix(), kx.padded_matrix());
        let prod = x.mul(z).unwrap().to_dense();
        let dense = x.to_dense() * z.to_dense();
        assert!((prod - dense).norm() < 1e-13);
    }
}
