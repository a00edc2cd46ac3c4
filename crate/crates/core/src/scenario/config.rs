use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::pgd::{OptimizerConfig, Scalar};
use crate::rotor::{ObservableKind, Parity, Polarization, JM};
use crate::{Error, Result, FS_PER_AU_TIME};

pub const SCHEMA_VERSION: u32 = 1;

/// Largest accepted `j_max`.
pub const MAX_J: u32 = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Unit {
    #[serde(rename = "au")]
    Au,
    #[serde(rename = "fs")]
    Fs,
    #[serde(rename = "K")]
    Kelvin,
    #[serde(rename = "dimensionless")]
    Dimensionless,
}

impl Unit {
    fn label(self) -> &'static str {
        match self {
            Unit::Au => "au",
            Unit::Fs => "fs",
            Unit::Kelvin => "K",
            Unit::Dimensionless => "dimensionless",
        }
    }

    /// Factor to atomic units (kelvin for temperatures).
    fn factor(self) -> f64 {
        match self {
            Unit::Fs => 1.0 / FS_PER_AU_TIME,
            _ => 1.0,
        }
    }
}

fn dimensionless() -> Unit {
    Unit::Dimensionless
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub lo: f64,
    pub hi: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guess: Option<f64>,
}

/// A physical parameter. `value` is the generating value used by
/// `simulate`; `unknown` marks it for estimation by `reconstruct`, which
/// never reads `value` in that case.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Quantity {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unknown: Option<Bounds>,
    #[serde(default = "dimensionless")]
    pub unit: Unit,
}

impl Quantity {
    pub fn known(value: f64, unit: Unit) -> Self {
        Quantity {
            value: Some(value),
            unknown: None,
            unit,
        }
    }

    /// Unknown with a generating value kept for simulation.
    pub fn estimated(value: f64, lo: f64, hi: f64, guess: Option<f64>, unit: Unit) -> Self {
        Quantity {
            value: Some(value),
            unknown: Some(Bounds { lo, hi, guess }),
            unit,
        }
    }

    pub fn is_unknown(&self) -> bool {
        self.unknown.is_some()
    }

    fn validate(&self, what: &str, allowed: &[Unit], positive: bool) -> Result<()> {
        if !allowed.contains(&self.unit) {
            let names: Vec<&str> = allowed.iter().map(|u| u.label()).collect();
            return Err(Error::input(format!(
                "{what}: unit '{}' not accepted here (use one of: {})",
                self.unit.label(),
                names.join(", ")
            )));
        }
        if self.value.is_none() && self.unknown.is_none() {
            return Err(Error::input(format!("{what}: give a 'value', an 'unknown' box, or both")));
        }
        let check = |v: f64, label: &str| -> Result<()> {
            if !v.is_finite() {
                return Err(Error::input(format!("{what}: {label} must be finite, got {v}")));
            }
            if positive && v <= 0.0 {
                return Err(Error::input(format!("{what}: {label} must be > 0, got {v}")));
            }
            if !positive && v < 0.0 {
                return Err(Error::input(format!("{what}: {label} must be >= 0, got {v}")));
            }
            Ok(())
        };
        if let Some(v) = self.value {
            check(v, "value")?;
        }
        if let Some(b) = self.unknown {
            check(b.lo, "unknown.lo")?;
            check(b.hi, "unknown.hi")?;
            if b.lo > b.hi {
                return Err(Error::input(format!(
                    "{what}: unknown box is empty (lo {} > hi {})",
                    b.lo, b.hi
                )));
            }
            for (label, v) in [("guess", b.guess), ("value", self.value)] {
                if let Some(v) = v {
                    if !(v >= b.lo && v <= b.hi) {
                        return Err(Error::input(format!(
                            "{what}: {label} {v} lies outside the unknown box [{}, {}]",
                            b.lo, b.hi
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Generating value in internal units.
    pub fn generating(&self, what: &str) -> Result<f64> {
        self.value.map(|v| v * self.unit.factor()).ok_or_else(|| {
            Error::input(format!(
                "{what} is unknown and has no 'value'; simulate needs every parameter known"
            ))
        })
    }

    /// Reconstruction view in internal units.
    pub fn scalar(&self, what: &str) -> Result<Scalar> {
        let f = self.unit.factor();
        match (self.unknown, self.value) {
            (Some(b), _) => Ok(Scalar::Free {
                lo: b.lo * f,
                hi: b.hi * f,
                guess: b.guess.map(|g| g * f),
            }),
            (None, Some(v)) => Ok(Scalar::Known(v * f)),
            (None, None) => Err(Error::input(format!("{what} has neither value nor unknown box"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSpec {
    pub j_max: u32,
    pub parity: Parity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedPolarization {
    X,
    Y,
    Z,
    /// In the XY plane at 45° to X.
    Xy45,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PolarizationSpec {
    Named(NamedPolarization),
    Vector([f64; 3]),
}

impl PolarizationSpec {
    pub fn resolve(&self) -> Polarization {
        match self {
            PolarizationSpec::Named(NamedPolarization::X) => Polarization::X,
            PolarizationSpec::Named(NamedPolarization::Y) => Polarization::Y,
            PolarizationSpec::Named(NamedPolarization::Z) => Polarization::Z,
            PolarizationSpec::Named(NamedPolarization::Xy45) => Polarization::xy45(),
            PolarizationSpec::Vector(v) => Polarization(*v),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseSpec {
    pub polarization: PolarizationSpec,
    pub strength: Quantity,
    /// Free evolution before this pulse; must be absent or zero for the
    /// first pulse.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay: Option<Quantity>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemberSpec {
    pub j: u32,
    pub m: i32,
    pub population: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    Pure { j: u32, m: i32 },
    Ensemble { members: Vec<MemberSpec> },
    /// Boltzmann ensemble over every admitted state with `J ≤ j_max`.
    Thermal { j_max: u32, temperature: Quantity },
    /// Populations drawn uniformly from [0, 1) and normalized, over every
    /// admitted state with `J ≤ j_max`.
    UniformRandom { j_max: u32, seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    pub start: f64,
    /// Exclusive end point.
    pub stop: f64,
    pub points: usize,
    pub unit: Unit,
}

impl TimeGrid {
    pub fn times(&self) -> Vec<f64> {
        let f = self.unit.factor();
        let (a, b) = (self.start * f, self.stop * f);
        (0..self.points)
            .map(|c| a + (b - a) * c as f64 / self.points as f64)
            .collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    /// Noise standard deviation relative to the signal's standard deviation.
    pub level: f64,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SupportSpec {
    /// Admit only this `M`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<i32>,
    /// Admit only `J ≤ j_max`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub j_max: Option<u32>,
    /// Admit only even or only odd `M`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m_parity: Option<MParity>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MParity {
    Even,
    Odd,
}

impl SupportSpec {
    pub fn admits(&self, s: JM) -> bool {
        self.m.is_none_or(|m| s.m == m)
            && self.j_max.is_none_or(|j| s.j <= j)
            && self.m_parity.is_none_or(|p| (s.m.rem_euclid(2) == 0) == (p == MParity::Even))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PopulationMode {
    Known,
    Free,
    Temperature,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "target", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReconstructSpec {
    /// Free amplitudes of the prepared pure state.
    WavePacket {
        #[serde(default)]
        support: SupportSpec,
    },
    /// Pre-pulse members are known; populations, strengths, inertia and
    /// temperature per their specs.
    Preparation { populations: PopulationMode },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RpwfSpec {
    pub enabled: bool,
    pub samples: usize,
    pub seed: u64,
}

impl Default for RpwfSpec {
    fn default() -> Self {
        RpwfSpec {
            enabled: false,
            samples: 30,
            seed: 0,
        }
    }
}

/// Several random starts, each run for `screen_iterations`; the one with
/// the lowest objective is continued.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiStart {
    pub starts: usize,
    pub screen_iterations: usize,
}

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub basis: BasisSpec,
    pub inertia: Quantity,
    pub pulses: Vec<PulseSpec>,
    pub initial_state: InitialSpec,
    pub observables: Vec<ObservableKind>,
    pub time_grid: TimeGrid,
    #[serde(default)]
    pub noise: NoiseSpec,
    pub reconstruct: ReconstructSpec,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub ridge: f64,
    #[serde(default)]
    pub rpwf: RpwfSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multistart: Option<MultiStart>,
    /// Directory holding reference trajectories, relative to the config
    /// file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
}

const TIME_UNITS: &[Unit] = &[Unit::Au, Unit::Fs];

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig =
            serde_json::from_str(text).map_err(|e| Error::input(format!("config schema: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads and validates a config file; a relative `data` directory is
    /// resolved against the file's directory and must exist.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::input(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text).map_err(|e| match e {
            Error::Input(m) => Error::Input(format!("{}: {m}", path.display())),
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        if let Some(d) = &cfg.data {
            let full = if d.is_relative() {
                path.parent().unwrap_or(Path::new(".")).join(d)
            } else {
                d.clone()
            };
            if !full.is_dir() {
                return Err(Error::input(format!(
                    "{}: data directory {} does not exist",
                    path.display(),
                    full.display()
                )));
            }
            cfg.data = Some(full);
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// Hex SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::input(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.name.is_empty() || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
            return Err(Error::input(format!(
                "name '{}' must be non-empty and use only letters, digits, '-', '_' or '.'",
                self.name
            )));
        }
        let b = self.basis;
        if b.j_max > MAX_J {
            return Err(Error::input(format!("basis.j_max {} exceeds the limit {MAX_J}", b.j_max)));
        }
        self.inertia.validate("inertia", &[Unit::Au], true)?;
        self.validate_pulses()?;
        self.validate_initial()?;
        if self.observables.is_empty() {
            return Err(Error::input("observables: list at least one of cos2_theta, cos2_phi, sin2_theta_sin2_phi"));
        }
        let distinct: BTreeSet<&str> = self.observables.iter().map(|o| o.label()).collect();
        if distinct.len() != self.observables.len() {
            return Err(Error::input("observables: each observable may appear only once"));
        }
        let g = self.time_grid;
        if !TIME_UNITS.contains(&g.unit) {
            return Err(Error::input("time_grid.unit must be 'au' or 'fs'"));
        }
        if g.points < 2 {
            return Err(Error::input(format!("time_grid.points must be at least 2, got {}", g.points)));
        }
        if !(g.start.is_finite() && g.stop.is_finite() && g.start >= 0.0 && g.stop > g.start) {
            return Err(Error::input(format!(
                "time_grid needs 0 <= start < stop, got start {} stop {}",
                g.start, g.stop
            )));
        }
        if !(self.noise.level >= 0.0 && self.noise.level.is_finite()) {
            return Err(Error::input(format!("noise.level must be >= 0, got {}", self.noise.level)));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(Error::input(format!("ridge must be >= 0, got {}", self.ridge)));
        }
        self.validate_reconstruct()?;
        self.optimizer.validate()?;
        if let Some(m) = self.multistart {
            if m.starts == 0 || m.screen_iterations == 0 {
                return Err(Error::input("multistart.starts and multistart.screen_iterations must be at least 1"));
            }
        }
        Ok(())
    }

    fn validate_pulses(&self) -> Result<()> {
        if self.pulses.is_empty() {
            return Err(Error::input("pulses: at least one pulse is required"));
        }
        for (k, p) in self.pulses.iter().enumerate() {
            let what = format!("pulses[{k}]");
            p.polarization.resolve().validate().map_err(|e| Error::input(format!("{what}.polarization: {e}")))?;
            p.strength
                .validate(&format!("{what}.strength"), &[Unit::Dimensionless], false)?;
            if let Some(d) = &p.delay {
                d.validate(&format!("{what}.delay"), TIME_UNITS, false)?;
                if d.is_unknown() {
                    return Err(Error::input(format!("{what}.delay cannot be unknown")));
                }
                if k == 0 && d.value != Some(0.0) {
                    return Err(Error::input("pulses[0].delay must be omitted or zero"));
                }
            } else if k > 0 {
                return Err(Error::input(format!("{what}.delay is required after the first pulse")));
            }
        }
        Ok(())
    }

    fn admitted(&self, j: u32, m: i32, what: &str) -> Result<()> {
        if m.unsigned_abs() > j {
            return Err(Error::input(format!("{what}: |m| = {} exceeds j = {j}", m.unsigned_abs())));
        }
        if j > self.basis.j_max || !self.basis.parity.admits(j) {
            return Err(Error::input(format!(
                "{what}: state |{j},{m}⟩ is not in the basis (j_max {}, parity {:?})",
                self.basis.j_max, self.basis.parity
            )));
        }
        Ok(())
    }

    fn validate_initial(&self) -> Result<()> {
        match &self.initial_state {
            InitialSpec::Pure { j, m } => self.admitted(*j, *m, "initial_state")?,
            InitialSpec::Ensemble { members } => {
                if members.is_empty() {
                    return Err(Error::input("initial_state.members must not be empty"));
                }
                let mut seen = BTreeSet::new();
                for (k, s) in members.iter().enumerate() {
                    let what = format!("initial_state.members[{k}]");
                    self.admitted(s.j, s.m, &what)?;
                    if !seen.insert((s.j, s.m)) {
                        return Err(Error::input(format!("{what}: state |{},{}⟩ listed twice", s.j, s.m)));
                    }
                    if !(s.population >= 0.0 && s.population.is_finite()) {
                        return Err(Error::input(format!("{what}.population must be >= 0")));
                    }
                }
                let total: f64 = members.iter().map(|s| s.population).sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::input(format!("initial_state populations sum to {total}, not 1")));
                }
            }
            InitialSpec::Thermal { j_max, temperature } => {
                if *j_max > self.basis.j_max {
                    return Err(Error::input(format!(
                        "initial_state.j_max {j_max} exceeds basis.j_max {}",
                        self.basis.j_max
                    )));
                }
                temperature.validate("initial_state.temperature", &[Unit::Kelvin], true)?;
            }
            InitialSpec::UniformRandom { j_max, .. } => {
                if *j_max > self.basis.j_max {
                    return Err(Error::input(format!(
                        "initial_state.j_max {j_max} exceeds basis.j_max {}",
                        self.basis.j_max
                    )));
                }
            }
        }
        Ok(())
    }

    fn validate_reconstruct(&self) -> Result<()> {
        let thermal_unknown = matches!(
            &self.initial_state,
            InitialSpec::Thermal { temperature, .. } if temperature.is_unknown()
        );
        match self.reconstruct {
            ReconstructSpec::WavePacket { support } => {
                if !matches!(self.initial_state, InitialSpec::Pure { .. }) {
                    return Err(Error::config("wave_packet reconstruction needs a pure initial_state"));
                }
                if self.pulses.iter().any(|p| p.strength.is_unknown()) {
                    return Err(Error::config(
                        "wave_packet reconstruction fits the prepared state directly; pulse strengths cannot be unknown",
                    ));
                }
                if self.rpwf.enabled {
                    return Err(Error::config("rpwf applies to population reconstruction, not wave_packet"));
                }
                let any = (0..=self.basis.j_max)
                    .filter(|&j| self.basis.parity.admits(j))
                    .any(|j| (-(j as i32)..=j as i32).any(|m| support.admits(JM::new(j, m))));
                if !any {
                    return Err(Error::config("reconstruct.support admits no basis state"));
                }
            }
            ReconstructSpec::Preparation { populations } => {
                let thermal = matches!(self.initial_state, InitialSpec::Thermal { .. });
                if populations == PopulationMode::Temperature && !thermal {
                    return Err(Error::config("populations 'temperature' needs a thermal initial_state"));
                }
                if thermal_unknown && populations != PopulationMode::Temperature {
                    return Err(Error::config(
                        "an unknown temperature needs reconstruct.populations = 'temperature'",
                    ));
                }
            }
        }
        if self.rpwf.enabled && self.rpwf.samples == 0 {
            return Err(Error::input("rpwf.samples must be at least 1"));
        }
        Ok(())
    }
}
