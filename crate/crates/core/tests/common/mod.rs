#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use rotor_recon::dynamics::{InitialState, Trajectory};
use rotor_recon::gradients::{
    ActiveMask, Estimator, ParameterVector, PopulationModel, Pulse, ReconstructionProblem, Reference,
    StateModel,
};
use rotor_recon::rotor::{ObservableKind, RotorBasis};
use rotor_recon::Complex64;

pub type C = Complex64;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_state(rng: &mut ChaCha8Rng, dim: usize) -> Vec<C> {
    let v: Vec<C> = (0..dim)
        .map(|_| C::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect();
    let n = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    v.into_iter().map(|c| c / n).collect()
}

pub fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.05).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

pub fn grid(k: usize, span: f64) -> Vec<f64> {
    (0..k).map(|c| span * c as f64 / k as f64).collect()
}

/// References with placeholder values; replace them after building.
pub fn placeholder_refs(kinds: &[ObservableKind], times: &[f64]) -> Vec<Reference> {
    kinds
        .iter()
        .map(|&k| Reference::new(Trajectory::new(k, times.to_vec(), vec![0.0; times.len()]).unwrap()))
        .collect()
}

pub fn refs_from(kinds: &[ObservableKind], times: &[f64], values: Vec<Vec<f64>>) -> Vec<Reference> {
    kinds
        .iter()
        .zip(values)
        .map(|(&k, v)| Reference::new(Trajectory::new(k, times.to_vec(), v).unwrap()))
        .collect()
}

/// Adds a deterministic perturbation so that residuals are nonzero.
pub fn perturbed(values: Vec<Vec<f64>>, rng: &mut ChaCha8Rng, size: f64) -> Vec<Vec<f64>> {
    values
        .into_iter()
        .map(|v| v.into_iter().map(|x| x + size * (rng.random::<f64>() - 0.5)).collect())
        .collect()
}

pub fn free_params(states: &[Vec<C>], p: Vec<f64>, inertia: f64, active: ActiveMask) -> ParameterVector {
    ParameterVector {
        a: states.iter().map(|s| s.iter().map(|c| c.re).collect()).collect(),
        b: states.iter().map(|s| s.iter().map(|c| c.im).collect()).collect(),
        p,
        strengths: vec![],
        inertia,
        temperature: None,
        active,
    }
}

pub fn all_free() -> ActiveMask {
    ActiveMask {
        amplitudes: true,
        populations: true,
        strengths: false,
        inertia: true,
        temperature: false,
    }
}

/// Free-amplitude problem whose references come from a random truth plus a
/// perturbation; returns the problem and a second random trial point.
pub struct FreeInstance {
    pub problem: ReconstructionProblem,
    pub trial: ParameterVector,
    pub times: Vec<f64>,
}

pub fn free_instance(
    seed: u64,
    basis: RotorBasis,
    kinds: &[ObservableKind],
    members: usize,
    inertia: f64,
    times: Vec<f64>,
    ridge: f64,
    estimator: Estimator,
) -> FreeInstance {
    let mut r = rng(seed);
    let dim = basis.len();
    let problem = ReconstructionProblem::new(
        basis,
        placeholder_refs(kinds, &times),
        StateModel::Free {
            members,
            support: None,
        },
        PopulationModel::Explicit,
        estimator,
        ridge,
    )
    .unwrap();
    let truth_states: Vec<Vec<C>> = (0..members).map(|_| random_state(&mut r, dim)).collect();
    let truth = free_params(&truth_states, random_simplex(&mut r, members), inertia, all_free());
    let values = perturbed(problem.signals(&truth).unwrap(), &mut r, 0.05);
    let problem = problem.with_references(refs_from(kinds, &times, values)).unwrap();
    let trial_states: Vec<Vec<C>> = (0..members).map(|_| random_state(&mut r, dim)).collect();
    let trial = free_params(
        &trial_states,
        random_simplex(&mut r, members),
        inertia * (1.0 + 0.01 * (r.random::<f64>() - 0.5)),
        all_free(),
    );
    FreeInstance { problem, trial, times }
}

pub fn prepared_problem(
    basis: RotorBasis,
    kinds: &[ObservableKind],
    initial: Vec<InitialState>,
    pulses: Vec<Pulse>,
    populations: PopulationModel,
    estimator: Estimator,
    times: &[f64],
) -> ReconstructionProblem {
    ReconstructionProblem::new(
        basis,
        placeholder_refs(kinds, times),
        StateModel::Prepared {
            initial,
            pulses,
            padding: None,
        },
        populations,
        estimator,
        0.0,
    )
    .unwrap()
}

/// `exp(−i h t)` with `h_J = J(J+1)/(2I)` from the basis labels.
pub fn propagator(basis: &RotorBasis, inertia: f64, t: f64) -> DVector<C> {
    DVector::from_iterator(
        basis.len(),
        basis.states().iter().map(|s| {
            let j = s.j as f64;
            C::from_polar(1.0, -j * (j + 1.0) / (2.0 * inertia) * t)
        }),
    )
}

/// `B(t) = U†(t) O U(t)` as a dense matrix.
pub fn heisenberg(o: &DMatrix<C>, u: &DVector<C>) -> DMatrix<C> {
    let n = u.len();
    DMatrix::from_fn(n, n, |r, c| u[r].conj() * o[(r, c)] * u[c])
}

pub fn expectation(b: &DMatrix<C>, psi: &DVector<C>) -> C {
    (psi.adjoint() * b * psi)[(0, 0)]
}

/// Dense signals `Σ_j p_j ψ_j† B(t) ψ_j`.
pub fn dense_signals(
    basis: &RotorBasis,
    ops: &[DMatrix<C>],
    states: &[DVector<C>],
    p: &[f64],
    inertia: f64,
    times: &[f64],
) -> Vec<Vec<f64>> {
    ops.iter()
        .map(|o| {
            times
                .iter()
                .map(|&t| {
                    let b = heisenberg(o, &propagator(basis, inertia, t));
                    states
                        .iter()
                        .zip(p)
                        .map(|(s, pj)| pj * expectation(&b, s).re)
                        .sum()
                })
                .collect()
        })
        .collect()
}

pub fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().chain(b).map(|v| v.abs()).fold(1e-300, f64::max);
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}
