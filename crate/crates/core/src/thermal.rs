//! Boltzmann populations over individual `|J,M⟩` states and their
//! derivatives with respect to temperature and moment of inertia.

use serde::{Deserialize, Serialize};

use crate::rotor::Spectrum;
use crate::{Error, Result};

/// Boltzmann constant in hartree per kelvin.
pub const BOLTZMANN_HARTREE_PER_KELVIN: f64 = 3.166_811_563e-6;

fn check_temperature(t: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::input(format!("temperature must be positive, got {t} K")));
    }
    Ok(())
}

/// `p_n = exp(−h_n/kT) / Z` for the given state energies. Energies are
/// shifted by their minimum before exponentiation.
pub fn boltzmann_populations(energies: &[f64], temperature: f64) -> Result<Vec<f64>> {
    check_temperature(temperature)?;
    if energies.is_empty() {
        return Err(Error::input("no states to populate"));
    }
    let beta = 1.0 / (BOLTZMANN_HARTREE_PER_KELVIN * temperature);
    let h0 = energies.iter().copied().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = energies.iter().map(|h| (-(h - h0) * beta).exp()).collect();
    let z: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / z).collect())
}

/// `dp_n/dT = p_n (h_n − ⟨h⟩) / (k T²)`.
pub fn population_temperature_derivative(energies: &[f64], temperature: f64) -> Result<Vec<f64>> {
    let p = boltzmann_populations(energies, temperature)?;
    let mean: f64 = p.iter().zip(energies).map(|(p, h)| p * h).sum();
    let k_t2 = BOLTZMANN_HARTREE_PER_KELVIN * temperature * temperature;
    Ok(p.iter()
        .zip(energies)
        .map(|(p, h)| p * (h - mean) / k_t2)
        .collect())
}

/// `dp_n/dI = −β p_n (h'_n − Σ_m p_m h'_m)` given `h'_n = ∂h_n/∂I`.
pub fn population_inertia_derivative(
    energies: &[f64],
    d_energies: &[f64],
    temperature: f64,
) -> Result<Vec<f64>> {
    let p = boltzmann_populations(energies, temperature)?;
    let beta = 1.0 / (BOLTZMANN_HARTREE_PER_KELVIN * temperature);
    let mean: f64 = p.iter().zip(d_energies).map(|(p, d)| p * d).sum();
    Ok(p.iter()
        .zip(d_energies)
        .map(|(p, d)| -beta * p * (d - mean))
        .collect())
}

/// Thermal populations at one temperature together with `dp/dT`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThermalModel {
    pub temperature: f64,
    pub populations: Vec<f64>,
    pub dp_dt: Vec<f64>,
}

impl ThermalModel {
    pub fn new(spectrum: &Spectrum, temperature: f64) -> Result<Self> {
        Self::from_energies(spectrum.energies(), temperature)
    }

    pub fn from_energies(energies: &[f64], temperature: f64) -> Result<Self> {
        Ok(ThermalModel {
            temperature,
            populations: boltzmann_populations(energies, temperature)?,
            dp_dt: population_temperature_derivative(energies, temperature)?,
        })
    }
}
