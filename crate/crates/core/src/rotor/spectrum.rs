use super::basis::RotorBasis;
use crate::{Complex64, Error, Result};

/// Rigid-rotor energies `h_J = J(J+1)/(2I)`, one entry per basis state.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    inertia: f64,
    energies: Vec<f64>,
    // J(J+1) per state, kept so derivatives need no basis lookup
    jj1: Vec<f64>,
}

impl Spectrum {
    pub fn new(basis: &RotorBasis, inertia: f64) -> Result<Self> {
        if !(inertia > 0.0 && inertia.is_finite()) {
            return Err(Error::input(format!(
                "moment of inertia must be positive and finite, got {inertia}"
            )));
        }
        let jj1: Vec<f64> = basis
            .states()
            .iter()
            .map(|s| (s.j * (s.j + 1)) as f64)
            .collect();
        let energies = jj1.iter().map(|k| k / (2.0 * inertia)).collect();
        Ok(Spectrum {
            inertia,
            energies,
            jj1,
        })
    }

    pub fn inertia(&self) -> f64 {
        self.inertia
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }

    /// `∂h_J/∂I = −J(J+1)/(2I²)` per state.
    pub fn d_energies_d_inertia(&self) -> Vec<f64> {
        let i2 = 2.0 * self.inertia * self.inertia;
        self.jj1.iter().map(|k| -k / i2).collect()
    }

    /// Diagonal of `U(t) = exp(−i h t)`.
    pub fn propagator(&self, t: f64) -> Vec<Complex64> {
        self.energies
            .iter()
            .map(|&h| Complex64::from_polar(1.0, -h * t))
            .collect()
    }

    /// Full revival period `2πI`.
    pub fn revival_period(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.inertia
    }
}

/// Propagator sign convention helper: `exp(−i h t)` for a single level.
#[inline]
pub fn phase(h: f64, t: f64) -> Complex64 {
    Complex64::from_polar(1.0, -h * t)
}
