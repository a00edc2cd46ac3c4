//! Built-in scenarios.

use std::f64::consts::PI;

use super::config::{
    BasisSpec, InitialSpec, MemberSpec, NamedPolarization, NoiseSpec, PolarizationSpec, PopulationMode,
    MParity, MultiStart, PulseSpec, Quantity, ReconstructSpec, RpwfSpec, ScenarioConfig, SupportSpec, TimeGrid, Unit,
    SCHEMA_VERSION,
};
use crate::pgd::OptimizerConfig;
use crate::rotor::{ObservableKind, Parity};

pub const INERTIA: f64 = 539_010.0;
pub const FIG1_STRENGTH: f64 = 8.278;
pub const FIG5_STRENGTH: f64 = 5.174;
pub const ROOM_TEMPERATURE: f64 = 300.0;
pub const FIG4_STRENGTH: f64 = 0.2;

/// Revival period of an even-J packet.
pub fn revival_period(inertia: f64) -> f64 {
    2.0 * PI * inertia
}

fn one_revival(points: usize) -> TimeGrid {
    TimeGrid {
        start: 0.0,
        stop: revival_period(INERTIA),
        points,
        unit: Unit::Au,
    }
}

fn z_kick(strength: Quantity) -> PulseSpec {
    PulseSpec {
        polarization: PolarizationSpec::Named(NamedPolarization::Z),
        strength,
        delay: None,
    }
}

fn dimless(v: f64) -> Quantity {
    Quantity::known(v, Unit::Dimensionless)
}

fn base(name: &str, description: &str) -> ScenarioConfig {
    ScenarioConfig {
        schema_version: SCHEMA_VERSION,
        name: name.into(),
        description: description.into(),
        basis: BasisSpec {
            j_max: 20,
            parity: Parity::EvenJOnly,
        },
        inertia: Quantity::known(INERTIA, Unit::Au),
        pulses: vec![z_kick(dimless(FIG1_STRENGTH))],
        initial_state: InitialSpec::Pure { j: 0, m: 0 },
        observables: vec![ObservableKind::Cos2Theta],
        time_grid: one_revival(400),
        noise: NoiseSpec::default(),
        reconstruct: ReconstructSpec::WavePacket {
            support: SupportSpec::default(),
        },
        optimizer: OptimizerConfig::default(),
        ridge: 0.0,
        rpwf: RpwfSpec::default(),
        multistart: None,
        data: None,
    }
}

/// Wave packet from |0,0⟩ kicked along Z, fitted to a noisy alignment
/// trace.
pub fn fig1() -> ScenarioConfig {
    ScenarioConfig {
        noise: NoiseSpec { level: 0.03, seed: 1 },
        reconstruct: ReconstructSpec::WavePacket {
            support: SupportSpec {
                m: Some(0),
                j_max: Some(18),
                ..Default::default()
            },
        },
        optimizer: OptimizerConfig {
            max_iterations: 4000,
            ..Default::default()
        },
        ridge: 1e-4,
        ..base("fig1", "pure |0,0> kicked along Z; wave-packet amplitudes from <cos^2 theta>")
    }
}

fn big_thermal_basis() -> BasisSpec {
    BasisSpec {
        j_max: 92,
        parity: Parity::EvenJOnly,
    }
}

fn rpwf_on() -> RpwfSpec {
    RpwfSpec {
        enabled: true,
        samples: 30,
        seed: 7,
    }
}

/// 3003 states with random populations, recovered with sampled wave
/// functions.
pub fn fig2a() -> ScenarioConfig {
    ScenarioConfig {
        basis: big_thermal_basis(),
        pulses: vec![z_kick(dimless(FIG5_STRENGTH))],
        initial_state: InitialSpec::UniformRandom { j_max: 76, seed: 2024 },
        reconstruct: ReconstructSpec::Preparation {
            populations: PopulationMode::Free,
        },
        rpwf: rpwf_on(),
        optimizer: OptimizerConfig {
            max_iterations: 300,
            ..Default::default()
        },
        ..base("fig2a", "3003 uniformly random populations, even J <= 76, sampled estimator")
    }
}

fn thermal_300(temperature: Quantity) -> InitialSpec {
    InitialSpec::Thermal {
        j_max: 76,
        temperature,
    }
}

/// Room-temperature ensemble with every population free.
pub fn fig2b() -> ScenarioConfig {
    ScenarioConfig {
        initial_state: thermal_300(Quantity::known(ROOM_TEMPERATURE, Unit::Kelvin)),
        ..fig2a().renamed("fig2b", "thermal ensemble at 300 K, populations free")
    }
}

/// Room-temperature ensemble with the temperature as the only unknown.
pub fn fig3() -> ScenarioConfig {
    ScenarioConfig {
        initial_state: thermal_300(Quantity::estimated(
            ROOM_TEMPERATURE,
            20.0,
            1000.0,
            Some(150.0),
            Unit::Kelvin,
        )),
        reconstruct: ReconstructSpec::Preparation {
            populations: PopulationMode::Temperature,
        },
        rpwf: RpwfSpec::default(),
        ..fig2a().renamed("fig3", "thermal ensemble at 300 K, temperature fitted")
    }
}

/// Two cross-polarized kicks; amplitudes fitted to three observables.
pub fn fig4() -> ScenarioConfig {
    let t_rev = revival_period(INERTIA);
    ScenarioConfig {
        basis: BasisSpec {
            j_max: 4,
            parity: Parity::EvenJOnly,
        },
        pulses: vec![
            PulseSpec {
                polarization: PolarizationSpec::Named(NamedPolarization::X),
                strength: dimless(FIG4_STRENGTH),
                delay: None,
            },
            PulseSpec {
                polarization: PolarizationSpec::Named(NamedPolarization::Xy45),
                strength: dimless(FIG4_STRENGTH),
                delay: Some(Quantity::known(t_rev / 8.0, Unit::Au)),
            },
        ],
        observables: ObservableKind::ALL.to_vec(),
        reconstruct: ReconstructSpec::WavePacket {
            support: SupportSpec {
                m_parity: Some(MParity::Even),
                ..Default::default()
            },
        },
        optimizer: OptimizerConfig {
            max_iterations: 4000,
            ..Default::default()
        },
        multistart: Some(MultiStart {
            starts: 12,
            screen_iterations: 500,
        }),
        ..base("fig4", "two cross-polarized kicks; amplitudes from three observables")
    }
}

/// J = 0 / J = 2 mixture; kick strength, inertia and populations fitted
/// together.
pub fn fig5() -> ScenarioConfig {
    let mut members = vec![MemberSpec {
        j: 0,
        m: 0,
        population: 0.4,
    }];
    members.extend((-2..=2).map(|m| MemberSpec {
        j: 2,
        m,
        population: 0.12,
    }));
    ScenarioConfig {
        basis: BasisSpec {
            j_max: 18,
            parity: Parity::EvenJOnly,
        },
        inertia: Quantity::estimated(INERTIA, 500_000.0, 580_000.0, Some(528_000.0), Unit::Au),
        pulses: vec![z_kick(Quantity::estimated(
            FIG5_STRENGTH,
            2.0,
            8.0,
            Some(4.7),
            Unit::Dimensionless,
        ))],
        initial_state: InitialSpec::Ensemble { members },
        reconstruct: ReconstructSpec::Preparation {
            populations: PopulationMode::Free,
        },
        optimizer: OptimizerConfig {
            max_iterations: 2000,
            ..Default::default()
        },
        ..base("fig5", "J = 0 / J = 2 mixture; P, I and populations fitted together")
    }
}

impl ScenarioConfig {
    fn renamed(self, name: &str, description: &str) -> Self {
        ScenarioConfig {
            name: name.into(),
            description: description.into(),
            ..self
        }
    }
}

pub fn all() -> Vec<ScenarioConfig> {
    vec![fig1(), fig2a(), fig2b(), fig3(), fig4(), fig5()]
}

pub fn by_name(name: &str) -> Option<ScenarioConfig> {
    all().into_iter().find(|c| c.name == name)
}
