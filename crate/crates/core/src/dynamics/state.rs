use crate::rotor::BlockOperator;
use crate::{Complex64, Error, Result};

/// Normalization tolerance for pure states.
pub const NORM_TOLERANCE: f64 = 1e-10;

/// Amplitudes `c_n = ⟨φ_n|ψ⟩` over a rotor basis.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    amplitudes: Vec<Complex64>,
}

impl StateVector {
    pub fn new(amplitudes: Vec<Complex64>) -> Self {
        StateVector { amplitudes }
    }

    /// Basis state `|n⟩`.
    pub fn basis_state(dim: usize, n: usize) -> Self {
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); dim];
        amplitudes[n] = Complex64::new(1.0, 0.0);
        StateVector { amplitudes }
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn into_amplitudes(self) -> Vec<Complex64> {
        self.amplitudes
    }

    pub fn len(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitudes.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn normalized(mut self) -> Result<Self> {
        let n = self.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::input("cannot normalize a zero or non-finite state"));
        }
        self.amplitudes.iter_mut().for_each(|c| *c /= n);
        Ok(self)
    }

    pub fn check_normalized(&self) -> Result<()> {
        let n = self.norm();
        if (n - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::input(format!("state is not normalized (norm {n})")));
        }
        Ok(())
    }

    /// `V |self⟩`.
    pub fn transformed(&self, op: &BlockOperator) -> StateVector {
        StateVector::new(op.apply(&self.amplitudes))
    }
}

/// Pre-preparation member state `|χ_j⟩`.
#[derive(Clone, Debug, PartialEq)]
pub enum InitialState {
    /// A basis state, given by index.
    Basis(usize),
    /// General superposition.
    Vector(Vec<Complex64>),
}

impl InitialState {
    pub fn to_dense(&self, dim: usize) -> Vec<Complex64> {
        match self {
            InitialState::Basis(n) => StateVector::basis_state(dim, *n).into_amplitudes(),
            InitialState::Vector(v) => v.clone(),
        }
    }

    /// Indices with nonzero amplitude.
    pub fn support(&self) -> Vec<usize> {
        match self {
            InitialState::Basis(n) => vec![*n],
            InitialState::Vector(v) => v
                .iter()
                .enumerate()
                .filter(|(_, c)| c.norm() > 0.0)
                .map(|(i, _)| i)
                .collect(),
        }
    }

    /// `op |χ⟩` as (indices, values); basis states touch a single block.
    pub fn apply(&self, op: &BlockOperator) -> (Vec<usize>, Vec<Complex64>) {
        match self {
            InitialState::Basis(n) => {
                let (idx, col) = op.column(*n);
                (idx.to_vec(), col)
            }
            InitialState::Vector(v) => {
                let out = op.apply(v);
                ((0..out.len()).collect(), out)
            }
        }
    }
}

/// Weighted mixture `Σ_j p_j |ψ_j⟩⟨ψ_j|`.
#[derive(Clone, Debug)]
pub struct Ensemble {
    members: Vec<(StateVector, f64)>,
}

impl Ensemble {
    pub fn new(members: Vec<(StateVector, f64)>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::input("ensemble has no members"));
        }
        let dim = members[0].0.len();
        let mut total = 0.0;
        for (s, p) in &members {
            if s.len() != dim {
                return Err(Error::input("ensemble members live in different bases"));
            }
            if !(*p >= 0.0) {
                return Err(Error::input(format!("negative probability {p}")));
            }
            s.check_normalized()?;
            total += p;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::input(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Ensemble { members })
    }

    pub fn pure(state: StateVector) -> Result<Self> {
        Ensemble::new(vec![(state, 1.0)])
    }

    pub fn members(&self) -> &[(StateVector, f64)] {
        &self.members
    }

    pub fn dim(&self) -> usize {
        self.members[0].0.len()
    }
}
