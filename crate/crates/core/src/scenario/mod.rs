//! JSON-configured scenarios: forward simulation, reconstruction, gradient
//! checks and the built-in presets.
//!
//! Physical quantities carry a unit (`au`, `fs`, `K` or `dimensionless`) and
//! are converted to atomic units on load.

pub mod config;
pub mod presets;
pub mod run;

pub use config::{
    Bounds, BasisSpec, InitialSpec, MemberSpec, MParity, MultiStart, NamedPolarization, NoiseSpec, PolarizationSpec,
    PopulationMode, PulseSpec, Quantity, ReconstructSpec, RpwfSpec, ScenarioConfig, SupportSpec,
    TimeGrid, Unit,
};
pub use run::{
    exit_code, gradcheck, metrics, reconstruct, simulate, wave_packet_errors, GradcheckOptions,
    GradcheckReport, GradcheckRow, GroundTruth, Metrics, Reconstruction, ReconstructOptions,
    ResultBundle, Scenario, Simulation, StartSummary, GRADCHECK_TOLERANCE, PHASE_THRESHOLD,
};
