//! Random-phase wave functions `|α_k⟩ = Σ_n e^{−iα_k^n} √p_n |χ_n⟩`.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::state::InitialState;
use crate::Complex64;

/// Phases `α_k^n ∈ [0, 2π)` for sample `k`. Each sample draws from its own
/// ChaCha stream, so a phase depends only on `(seed, k, n)`.
pub fn sample_phases(seed: u64, k: u64, n_states: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    (0..n_states).map(|_| rng.random::<f64>() * TAU).collect()
}

/// One random-phase sample.
#[derive(Clone, Debug)]
pub struct RpwfSample {
    pub seed: u64,
    pub index: u64,
    pub phases: Vec<f64>,
}

impl RpwfSample {
    pub fn draw(seed: u64, index: u64, n_states: usize) -> Self {
        RpwfSample {
            seed,
            index,
            phases: sample_phases(seed, index, n_states),
        }
    }

    /// `Θ_{nn} = e^{−iα^n}`.
    pub fn theta(&self, n: usize) -> Complex64 {
        Complex64::from_polar(1.0, -self.phases[n])
    }

    /// Dense `|α_k⟩` over a basis of dimension `dim`.
    pub fn state(&self, populations: &[f64], members: &[InitialState], dim: usize) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); dim];
        for (n, (p, chi)) in populations.iter().zip(members).enumerate() {
            let coef = self.theta(n) * p.max(0.0).sqrt();
            match chi {
                InitialState::Basis(i) => out[*i] += coef,
                InitialState::Vector(v) => {
                    for (o, c) in out.iter_mut().zip(v) {
                        *o += coef * c;
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phases_are_deterministic_and_in_range() {
        let a = sample_phases(7, 3, 100);
        let b = sample_phases(7, 3, 100);
        assert_eq!(a, b);
        assert!(a.iter().all(|&x| (0.0..TAU).contains(&x)));
        assert_ne!(a, sample_phases(7, 4, 100));
        assert_ne!(a, sample_phases(8, 3, 100));
        // prefix property: more states do not change earlier phases
        assert_eq!(&sample_phases(7, 3, 200)[..100], &a[..]);
    }

    #[test]
    fn amplitudes_have_sqrt_p_modulus() {
        let p = [0.5, 0.3, 0.2];
        let members: Vec<_> = (0..3).map(InitialState::Basis).collect();
        let s = RpwfSample::draw(1, 0, 3);
        let v = s.state(&p, &members, 3);
        for n in 0..3 {
            assert!((v[n] - s.theta(n) * p[n].sqrt()).norm() < 1e-15);
            assert!((v[n].norm() - p[n].sqrt()).abs() < 1e-15);
        }
    }
}
