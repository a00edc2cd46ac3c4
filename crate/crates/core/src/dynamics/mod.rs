//! Forward problem: propagation of pure states, ensembles and random-phase
//! wave functions, and synthetic trajectories.

pub mod engine;
pub mod rpwf;
pub mod state;
pub mod trajectory;

pub use engine::{PhaseTable, SectorEngine, SectorState};
pub use rpwf::{sample_phases, RpwfSample};
pub use state::{Ensemble, InitialState, StateVector};
pub use trajectory::{
    add_noise, read_sidecar, uniform_grid, validate_grid, write_with_sidecar, Trajectory, TrajectorySidecar,
};

use crate::parallel;
use crate::rotor::{HermitianOperator, Preparation, Spectrum};
use crate::{Complex64, Error, Result};

/// Allowed imaginary residue of an expectation value.
pub const IMAG_TOLERANCE: f64 = 1e-12;

fn check_dims(psi_len: usize, spectrum: &Spectrum, op: &HermitianOperator) -> Result<()> {
    if psi_len != spectrum.len() || op.dim() != spectrum.len() {
        return Err(Error::input(format!(
            "basis mismatch: state {psi_len}, spectrum {}, operator {}",
            spectrum.len(),
            op.dim()
        )));
    }
    Ok(())
}

/// `⟨ψ|U†(t) O U(t)|ψ⟩` at each time, with `U(t) = exp(−i h t)`.
pub fn propagate_expectation(
    psi: &StateVector,
    spectrum: &Spectrum,
    op: &HermitianOperator,
    times: &[f64],
) -> Result<Vec<f64>> {
    check_dims(psi.len(), spectrum, op)?;
    psi.check_normalized()?;
    expectation_trace(psi.amplitudes(), spectrum, op, times)
}

fn expectation_trace(
    amps: &[Complex64],
    spectrum: &Spectrum,
    op: &HermitianOperator,
    times: &[f64],
) -> Result<Vec<f64>> {
    let values = parallel::map_slice(times, |&t| {
        let phi: Vec<Complex64> = amps
            .iter()
            .zip(spectrum.energies())
            .map(|(c, &h)| c * Complex64::from_polar(1.0, -h * t))
            .collect();
        op.quadratic_form(&phi)
    });
    values
        .into_iter()
        .map(|z| {
            if z.im.abs() > IMAG_TOLERANCE * z.re.abs().max(1.0) {
                Err(Error::Numerical(format!("expectation value has imaginary part {}", z.im)))
            } else {
                Ok(z.re)
            }
        })
        .collect()
}

/// `Σ_j p_j ⟨ψ_j|U†OU|ψ_j⟩`.
pub fn ensemble_signal(
    ens: &Ensemble,
    spectrum: &Spectrum,
    op: &HermitianOperator,
    times: &[f64],
) -> Result<Vec<f64>> {
    check_dims(ens.dim(), spectrum, op)?;
    let traces = parallel::map_slice(ens.members(), |(s, _)| {
        expectation_trace(s.amplitudes(), spectrum, op, times)
    });
    let mut out = vec![0.0; times.len()];
    for (trace, (_, p)) in traces.into_iter().zip(ens.members()) {
        for (o, v) in out.iter_mut().zip(trace?) {
            *o += p * v;
        }
    }
    Ok(out)
}

/// Random-phase estimate of the ensemble signal for populations `p` over the
/// basis states of the preparation's basis: `N` random-phase states are
/// kicked, propagated and their traces averaged.
pub fn rpwf_signal(
    populations: &[f64],
    prep: &Preparation,
    spectrum: &Spectrum,
    op: &HermitianOperator,
    times: &[f64],
    samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let dim = prep.basis().len();
    if populations.len() != dim {
        return Err(Error::input(format!(
            "{} populations for a {dim}-state basis",
            populations.len()
        )));
    }
    check_dims(dim, spectrum, op)?;
    if samples == 0 {
        return Err(Error::input("RPWF needs at least one sample"));
    }
    let members: Vec<InitialState> = (0..dim).map(InitialState::Basis).collect();
    let engine = SectorEngine::new(prep.basis(), &[op], Some(prep.matrix()))?;
    let phases = engine.phase_table(spectrum.inertia(), times)?;
    let traces = parallel::map_range(samples, |k| {
        let alpha = RpwfSample::draw(seed, k as u64, dim).state(populations, &members, dim);
        let psi = prep.matrix().apply(&alpha);
        engine.traces(&engine.split_full(&psi), &phases).remove(0)
    });
    let mut out = vec![0.0; times.len()];
    for tr in traces {
        for (o, v) in out.iter_mut().zip(tr) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|v| *v /= samples as f64);
    Ok(out)
}
