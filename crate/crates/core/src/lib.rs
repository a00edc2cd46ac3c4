//! Simulation and gradient-based reconstruction of laser-kicked linear rigid
//! rotors.
//!
//! The crate is organised bottom-up:
//!
//! * [`rotor`] builds the `|J,M⟩` basis, angular operators, the rotor
//!   spectrum and impulsive kick unitaries (with their strength derivatives).
//! * [`dynamics`] propagates pure states, ensembles and random-phase wave
//!   functions and synthesises observable trajectories.
//! * [`gradients`] holds the least-squares objective together with analytic
//!   gradients for amplitudes, populations, kick strengths, the moment of
//!   inertia and the temperature, plus a central-difference oracle.
//! * [`pgd`] is a projected gradient descent driver with composable
//!   constraint projections.
//! * [`thermal`] builds Boltzmann populations and their temperature
//!   derivative.
//! * [`scenario`] wires everything into JSON-configured forward simulations
//!   and reconstructions; the `rotor-recon` binary is a thin front end to it.
//!
//! Atomic units are used throughout (ħ = 1, energies in hartree, times in
//! atomic units of time).

pub mod dynamics;
pub mod error;
pub mod gradients;
pub(crate) mod parallel;
pub mod pgd;
pub mod rotor;
pub mod scenario;
pub mod thermal;

pub use error::{Error, Result};
pub use num_complex::Complex64;
pub use parallel::is_parallel;

/// Femtoseconds per atomic unit of time (CODATA 2018).
pub const FS_PER_AU_TIME: f64 = 2.418_884_326_585_7e-2;
