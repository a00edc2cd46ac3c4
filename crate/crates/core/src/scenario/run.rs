use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{InitialSpec, PopulationMode, ReconstructSpec, ScenarioConfig};
use crate::dynamics::{add_noise, write_with_sidecar, InitialState, Trajectory, TrajectorySidecar};
use crate::gradients::{
    finite_difference, relative_error, Estimator, ParamBlock, ParameterVector, PopulationModel,
    Pulse, ReconstructionProblem, Reference, StateModel,
};
use crate::pgd::{gauge_fix, initialize, minimize, Outcome, PopulationSpec, Scalar, Status, Unknowns};
use crate::rotor::{RotorBasis, JM};
use crate::thermal::BOLTZMANN_HARTREE_PER_KELVIN;
use crate::{Complex64, Error, Result, FS_PER_AU_TIME};

/// Coefficients smaller than this (in the truth) are left out of phase
/// errors.
pub const PHASE_THRESHOLD: f64 = 1e-2;

/// Default gradient-check tolerance.
pub const GRADCHECK_TOLERANCE: f64 = 1e-6;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// A validated config with derived quantities in internal units.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub basis: RotorBasis,
    pub times: Vec<f64>,
    pub pulses: Vec<Pulse>,
    /// Pre-pulse source states.
    pub members: Vec<JM>,
}

fn member_states(cfg: &ScenarioConfig, basis: &RotorBasis) -> Vec<JM> {
    match &cfg.initial_state {
        InitialSpec::Pure { j, m } => vec![JM::new(*j, *m)],
        InitialSpec::Ensemble { members } => members.iter().map(|s| JM::new(s.j, s.m)).collect(),
        InitialSpec::Thermal { j_max, .. } | InitialSpec::UniformRandom { j_max, .. } => {
            basis.states().iter().copied().filter(|s| s.j <= *j_max).collect()
        }
    }
}

fn uniform_random_populations(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

impl Scenario {
    pub fn new(config: ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let basis = RotorBasis::new(config.basis.j_max, config.basis.parity);
        let times = config.time_grid.times();
        let mut pulses = Vec::with_capacity(config.pulses.len());
        for (k, p) in config.pulses.iter().enumerate() {
            let delay = match &p.delay {
                Some(d) => d.generating(&format!("pulses[{k}].delay"))?,
                None => 0.0,
            };
            pulses.push(Pulse {
                polarization: p.polarization.resolve(),
                delay,
            });
        }
        let members = member_states(&config, &basis);
        Ok(Scenario {
            config,
            basis,
            times,
            pulses,
            members,
        })
    }

    fn sources(&self) -> Vec<InitialState> {
        self.members
            .iter()
            .map(|&s| InitialState::Basis(self.basis.index_of(s).expect("validated")))
            .collect()
    }

    fn thermal(&self) -> bool {
        matches!(self.config.initial_state, InitialSpec::Thermal { .. })
    }

    /// Populations fixed by the config itself (not thermal).
    fn declared_populations(&self) -> Option<Vec<f64>> {
        match &self.config.initial_state {
            InitialSpec::Pure { .. } => Some(vec![1.0]),
            InitialSpec::Ensemble { members } => Some(members.iter().map(|s| s.population).collect()),
            InitialSpec::UniformRandom { seed, .. } => {
                Some(uniform_random_populations(self.members.len(), *seed))
            }
            InitialSpec::Thermal { .. } => None,
        }
    }

    fn placeholder_refs(&self) -> Result<Vec<Reference>> {
        self.config
            .observables
            .iter()
            .map(|&k| Ok(Reference::new(Trajectory::new(k, self.times.clone(), vec![0.0; self.times.len()])?)))
            .collect()
    }

    /// Exact prepared-state model evaluated at the generating values.
    fn generating_model(&self) -> Result<(ReconstructionProblem, ParameterVector)> {
        let cfg = &self.config;
        let thermal = self.thermal();
        let problem = ReconstructionProblem::new(
            self.basis.clone(),
            self.placeholder_refs()?,
            StateModel::Prepared {
                initial: self.sources(),
                pulses: self.pulses.clone(),
                padding: None,
            },
            if thermal { PopulationModel::Thermal } else { PopulationModel::Explicit },
            Estimator::Exact,
            0.0,
        )?;
        let temperature = match &cfg.initial_state {
            InitialSpec::Thermal { temperature, .. } => Some(temperature.generating("initial_state.temperature")?),
            _ => None,
        };
        let strengths = cfg
            .pulses
            .iter()
            .enumerate()
            .map(|(k, p)| p.strength.generating(&format!("pulses[{k}].strength")))
            .collect::<Result<Vec<_>>>()?;
        let x = ParameterVector {
            a: Vec::new(),
            b: Vec::new(),
            p: self
                .declared_populations()
                .unwrap_or_else(|| vec![1.0 / self.members.len() as f64; self.members.len()]),
            strengths,
            inertia: cfg.inertia.generating("inertia")?,
            temperature,
            active: Default::default(),
        };
        problem.check(&x)?;
        Ok((problem, x))
    }

    /// Ground truth implied by the generating values.
    pub fn ground_truth(&self) -> Result<GroundTruth> {
        let (problem, x) = self.generating_model()?;
        let populations = problem.effective_populations(&x)?;
        let wave_packet = if matches!(self.config.initial_state, InitialSpec::Pure { .. }) {
            let prep = problem.preparation(&x)?.expect("prepared model");
            let src = self.basis.index_of(self.members[0]).expect("validated");
            prep.ensure_contained(&[src])?;
            let (idx, col) = InitialState::Basis(src).apply(prep.matrix());
            let mut psi = vec![Complex64::new(0.0, 0.0); self.basis.len()];
            for (i, v) in idx.into_iter().zip(col) {
                psi[i] = v;
            }
            gauge_fix(&mut psi);
            Some(psi.iter().map(|c| [c.re, c.im]).collect())
        } else {
            None
        };
        Ok(GroundTruth {
            scenario: self.config.name.clone(),
            config_hash: self.config.hash(),
            members: self.members.clone(),
            populations,
            strengths: x.strengths.clone(),
            inertia: x.inertia,
            temperature: x.temperature,
            wave_packet,
        })
    }

    /// Clean model trajectories at the generating values.
    pub fn clean_trajectories(&self) -> Result<Vec<Trajectory>> {
        let (problem, x) = self.generating_model()?;
        let signals = problem.signals(&x)?;
        self.config
            .observables
            .iter()
            .zip(signals)
            .map(|(&k, v)| Trajectory::new(k, self.times.clone(), v))
            .collect()
    }

    /// Reconstruction problem and unknowns for the given references.
    pub fn reconstruction(&self, refs: Vec<Reference>) -> Result<(ReconstructionProblem, Unknowns)> {
        let cfg = &self.config;
        let inertia = cfg.inertia.scalar("inertia")?;
        match cfg.reconstruct {
            ReconstructSpec::WavePacket { support } => {
                let mask: Vec<bool> = self.basis.states().iter().map(|&s| support.admits(s)).collect();
                let support = if mask.iter().all(|&m| m) { None } else { Some(mask) };
                let problem = ReconstructionProblem::new(
                    self.basis.clone(),
                    refs,
                    StateModel::Free { members: 1, support },
                    PopulationModel::Explicit,
                    Estimator::Exact,
                    cfg.ridge,
                )?;
                let unknowns = Unknowns {
                    populations: PopulationSpec::Known(vec![1.0]),
                    strengths: Vec::new(),
                    inertia,
                };
                Ok((problem, unknowns))
            }
            ReconstructSpec::Preparation { populations } => {
                let temperature = match &cfg.initial_state {
                    InitialSpec::Thermal { temperature, .. } => Some(temperature.scalar("initial_state.temperature")?),
                    _ => None,
                };
                let (model, spec) = match (populations, temperature) {
                    (PopulationMode::Free, _) => (PopulationModel::Explicit, PopulationSpec::Free),
                    (_, Some(t)) => (PopulationModel::Thermal, PopulationSpec::Thermal(t)),
                    (PopulationMode::Known, None) => (
                        PopulationModel::Explicit,
                        PopulationSpec::Known(self.declared_populations().expect("not thermal")),
                    ),
                    (PopulationMode::Temperature, None) => unreachable!("validated"),
                };
                let estimator = if cfg.rpwf.enabled {
                    Estimator::Rpwf {
                        samples: cfg.rpwf.samples,
                        seed: cfg.rpwf.seed,
                    }
                } else {
                    Estimator::Exact
                };
                let problem = ReconstructionProblem::new(
                    self.basis.clone(),
                    refs,
                    StateModel::Prepared {
                        initial: self.sources(),
                        pulses: self.pulses.clone(),
                        padding: None,
                    },
                    model,
                    estimator,
                    cfg.ridge,
                )?;
                let strengths = cfg
                    .pulses
                    .iter()
                    .enumerate()
                    .map(|(k, p)| p.strength.scalar(&format!("pulses[{k}].strength")))
                    .collect::<Result<Vec<Scalar>>>()?;
                let unknowns = Unknowns {
                    populations: spec,
                    strengths,
                    inertia,
                };
                Ok((problem, unknowns))
            }
        }
    }

    /// Stem of the reference file read for `label`.
    pub fn data_stem(&self, label: &str) -> String {
        if self.config.noise.level > 0.0 {
            format!("{label}.noisy")
        } else {
            label.to_string()
        }
    }

    /// Reads the reference trajectories from `dir`.
    pub fn load_references(&self, dir: &Path) -> Result<Vec<Reference>> {
        let mut refs = Vec::new();
        for &kind in &self.config.observables {
            let path = dir.join(format!("{}.csv", self.data_stem(kind.label())));
            if !path.is_file() {
                return Err(Error::input(format!(
                    "reference trajectory {} not found (run `simulate` or point --data at the right directory)",
                    path.display()
                )));
            }
            let traj = Trajectory::read_csv(&path, kind)?;
            if traj.times.len() != self.times.len()
                || traj
                    .times
                    .iter()
                    .zip(&self.times)
                    .any(|(a, b)| (a - b).abs() > 1e-9 * b.abs().max(1.0))
            {
                return Err(Error::input(format!(
                    "{}: time grid differs from the config's time_grid",
                    path.display()
                )));
            }
            refs.push(Reference::new(traj));
        }
        Ok(refs)
    }
}

/// True parameters behind a simulation, written as `truth.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub scenario: String,
    pub config_hash: String,
    pub members: Vec<JM>,
    pub populations: Vec<f64>,
    pub strengths: Vec<f64>,
    pub inertia: f64,
    pub temperature: Option<f64>,
    /// Prepared pure state, gauge-fixed, as `[re, im]` pairs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wave_packet: Option<Vec<[f64; 2]>>,
}

impl GroundTruth {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::input(format!("cannot read truth file {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::input(format!("{}: {e}", path.display())))
    }

    pub fn amplitudes(&self) -> Option<Vec<Complex64>> {
        self.wave_packet
            .as_ref()
            .map(|v| v.iter().map(|&[re, im]| Complex64::new(re, im)).collect())
    }
}

#[derive(Clone, Debug)]
pub struct Simulation {
    pub clean: Vec<Trajectory>,
    pub noisy: Option<Vec<Trajectory>>,
    pub truth: GroundTruth,
    pub files: Vec<PathBuf>,
}

/// Forward simulation. Every parameter needs a generating value; with
/// `out` set, trajectories, sidecars and `truth.json` are written there.
pub fn simulate(config: &ScenarioConfig, seed: Option<u64>, out: Option<&Path>) -> Result<Simulation> {
    let mut config = config.clone();
    if let Some(s) = seed {
        config.noise.seed = s;
    }
    let scenario = Scenario::new(config)?;
    let cfg = &scenario.config;
    let truth = scenario.ground_truth()?;
    let clean = scenario.clean_trajectories()?;
    let noisy = if cfg.noise.level > 0.0 {
        Some(
            clean
                .iter()
                .enumerate()
                .map(|(k, t)| add_noise(t, cfg.noise.level, cfg.noise.seed.wrapping_add(k as u64)))
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    let mut files = Vec::new();
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        let hash = cfg.hash();
        let sidecar = |t: &Trajectory, level: f64, seed: Option<u64>, variant: &str| TrajectorySidecar {
            observable_kind: t.kind,
            noise_level: level,
            noise_sigma: t.noise_sigma,
            noise_seed: seed,
            j_max: cfg.basis.j_max,
            parity: cfg.basis.parity,
            samples: t.len(),
            generation: serde_json::json!({
                "scenario": cfg.name,
                "config_hash": hash,
                "variant": variant,
                "time_unit": "au",
                "fs_per_au_time": FS_PER_AU_TIME,
                "version": VERSION,
            }),
        };
        for t in &clean {
            let (a, b) = write_with_sidecar(t, &sidecar(t, 0.0, None, "clean"), dir, t.kind.label())?;
            files.extend([a, b]);
        }
        if let Some(noisy) = &noisy {
            for (k, t) in noisy.iter().enumerate() {
                let s = sidecar(t, cfg.noise.level, Some(cfg.noise.seed.wrapping_add(k as u64)), "noisy");
                let (a, b) = write_with_sidecar(t, &s, dir, &format!("{}.noisy", t.kind.label()))?;
                files.extend([a, b]);
            }
        }
        let path = dir.join("truth.json");
        fs::write(&path, serde_json::to_string_pretty(&truth)? + "\n")?;
        files.push(path);
    }
    Ok(Simulation {
        clean,
        noisy,
        truth,
        files,
    })
}

/// Errors of a reconstruction against a known truth.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Largest `||c_rec| − |c_true||` over the basis.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub norm_error: Option<f64>,
    /// Largest phase difference over coefficients with
    /// `|c_true| ≥ PHASE_THRESHOLD`, after aligning the global phase.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phase_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fidelity: Option<f64>,
    pub population_l1: f64,
    pub population_max_error: f64,
    pub strength_errors: Vec<f64>,
    pub inertia_error: f64,
    pub inertia_relative_error: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temperature_error: Option<f64>,
}

/// Phase of `c` relative to the truth's phase, wrapped to (−π, π].
fn phase_diff(rec: Complex64, truth: Complex64) -> f64 {
    (rec * truth.conj()).arg().abs()
}

pub fn wave_packet_errors(rec: &[Complex64], truth: &[Complex64]) -> (f64, f64, f64) {
    let k = (0..truth.len())
        .max_by(|&i, &j| truth[i].norm().total_cmp(&truth[j].norm()))
        .unwrap_or(0);
    let rot = if rec[k].norm() > 0.0 {
        let r = truth[k] / rec[k];
        r / r.norm()
    } else {
        Complex64::new(1.0, 0.0)
    };
    let aligned: Vec<Complex64> = rec.iter().map(|c| c * rot).collect();
    let norm = aligned
        .iter()
        .zip(truth)
        .map(|(r, t)| (r.norm() - t.norm()).abs())
        .fold(0.0, f64::max);
    let phase = aligned
        .iter()
        .zip(truth)
        .filter(|(_, t)| t.norm() >= PHASE_THRESHOLD)
        .map(|(r, t)| phase_diff(*r, *t))
        .fold(0.0, f64::max);
    let overlap: Complex64 = rec.iter().zip(truth).map(|(r, t)| t.conj() * r).sum();
    let nr: f64 = rec.iter().map(|c| c.norm_sqr()).sum();
    let nt: f64 = truth.iter().map(|c| c.norm_sqr()).sum();
    (norm, phase, overlap.norm_sqr() / (nr * nt))
}

/// Metrics of `x` against `truth`.
pub fn metrics(problem: &ReconstructionProblem, x: &ParameterVector, truth: &GroundTruth) -> Result<Metrics> {
    let mut m = Metrics {
        inertia_error: (x.inertia - truth.inertia).abs(),
        inertia_relative_error: (x.inertia - truth.inertia).abs() / truth.inertia,
        ..Default::default()
    };
    match problem.state_model() {
        StateModel::Free { .. } => {
            let t = truth.amplitudes().ok_or_else(|| {
                Error::input("truth file has no wave packet; it does not match this scenario")
            })?;
            let rec = x.amplitudes(0);
            if rec.len() != t.len() {
                return Err(Error::input("truth wave packet has a different basis size"));
            }
            let (n, p, f) = wave_packet_errors(&rec, &t);
            m.norm_error = Some(n);
            m.phase_error = Some(p);
            m.fidelity = Some(f);
        }
        StateModel::Prepared { .. } => {
            let p = problem.effective_populations(x)?;
            if p.len() != truth.populations.len() || x.strengths.len() != truth.strengths.len() {
                return Err(Error::input("truth file does not match this scenario's members or pulses"));
            }
            let d: Vec<f64> = p.iter().zip(&truth.populations).map(|(a, b)| (a - b).abs()).collect();
            m.population_l1 = d.iter().sum();
            m.population_max_error = d.iter().copied().fold(0.0, f64::max);
            m.strength_errors = x
                .strengths
                .iter()
                .zip(&truth.strengths)
                .map(|(a, b)| (a - b).abs())
                .collect();
            if let (Some(a), Some(b)) = (x.temperature, truth.temperature) {
                m.temperature_error = Some((a - b).abs());
            }
        }
    }
    Ok(m)
}

fn metric_map(m: &Metrics) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    if let Some(v) = m.norm_error {
        out.insert("norm_error".into(), v);
    }
    if let Some(v) = m.phase_error {
        out.insert("phase_error".into(), v);
    }
    if m.norm_error.is_none() {
        out.insert("population_l1".into(), m.population_l1);
    }
    if let Some(v) = m.strength_errors.iter().copied().reduce(f64::max) {
        out.insert("strength_error".into(), v);
    }
    out.insert("inertia_error".into(), m.inertia_error);
    if let Some(v) = m.temperature_error {
        out.insert("temperature_error".into(), v);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub optimizer: u64,
    pub noise: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rpwf: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    pub boltzmann_hartree_per_kelvin: f64,
    pub fs_per_au_time: f64,
    pub phase_threshold: f64,
}

/// Everything a reconstruction produced, written as `result.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultBundle {
    pub scenario: String,
    pub version: String,
    pub config_hash: String,
    pub seeds: Seeds,
    pub status: Status,
    pub converged: bool,
    pub exit_code: i32,
    pub iterations: usize,
    pub objective: f64,
    pub target_error: f64,
    /// Final parameters, amplitudes gauge-fixed.
    pub parameters: ParameterVector,
    pub members: Vec<JM>,
    /// Populations in effect (Boltzmann ones in temperature mode).
    pub populations: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<Metrics>,
    /// Screening runs when `multistart` is set; the best one was continued.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub starts: Vec<StartSummary>,
    pub constants: Constants,
    pub trace: String,
    pub trajectories: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StartSummary {
    pub seed: u64,
    pub objective: f64,
    pub status: Status,
}

pub fn exit_code(status: Status) -> i32 {
    match status {
        s if s.converged() => 0,
        Status::IterationCap => 2,
        _ => 4,
    }
}

#[derive(Clone, Debug, Default)]
pub struct ReconstructOptions {
    /// Directory with reference trajectories; falls back to the config's
    /// `data`.
    pub data: Option<PathBuf>,
    /// Precomputed references; take precedence over `data`.
    pub references: Option<Vec<Reference>>,
    /// Ground truth for metrics. Never read otherwise.
    pub truth: Option<GroundTruth>,
    /// Overrides `optimizer.seed`.
    pub seed: Option<u64>,
}

#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub scenario: Scenario,
    pub problem: ReconstructionProblem,
    pub outcome: Outcome,
    pub bundle: ResultBundle,
}

pub fn reconstruct(config: &ScenarioConfig, opts: ReconstructOptions) -> Result<Reconstruction> {
    let mut config = config.clone();
    if let Some(s) = opts.seed {
        config.optimizer.seed = s;
    }
    let scenario = Scenario::new(config)?;
    let refs = match (opts.references, opts.data.as_ref().or(scenario.config.data.as_ref())) {
        (Some(r), _) => r,
        (None, Some(dir)) => scenario.load_references(dir)?,
        (None, None) => {
            return Err(Error::input("no reference data: pass a data directory or set 'data' in the config"))
        }
    };
    let (problem, unknowns) = scenario.reconstruction(refs)?;
    let cfg = &scenario.config;
    let mut x0 = initialize(&problem, &unknowns, cfg.optimizer.seed)?;
    let constraints = unknowns.constraints(&problem)?;
    let truth = opts.truth;
    if let Some(t) = &truth {
        // Surface a mismatched truth file before spending the iterations.
        metrics(&problem, &x0, t)?;
    }
    let mut starts = Vec::new();
    if let Some(ms) = cfg.multistart {
        let screen = crate::pgd::OptimizerConfig {
            max_iterations: ms.screen_iterations,
            ..cfg.optimizer.clone()
        };
        let mut best: Option<(f64, ParameterVector)> = None;
        for k in 0..ms.starts {
            let seed = cfg.optimizer.seed.wrapping_add(k as u64);
            let x = initialize(&problem, &unknowns, seed)?;
            let out = minimize(&problem, &constraints, &screen, x, None)?;
            starts.push(StartSummary {
                seed,
                objective: out.value,
                status: out.status,
            });
            if best.as_ref().is_none_or(|(v, _)| out.value < *v) {
                best = Some((out.value, out.params));
            }
        }
        x0 = best.expect("at least one start").1;
    }
    let monitor = |x: &ParameterVector| match &truth {
        Some(t) => metrics(&problem, x, t).map(|m| metric_map(&m)).unwrap_or_default(),
        None => BTreeMap::new(),
    };
    let outcome = minimize(&problem, &constraints, &cfg.optimizer, x0, Some(&monitor))?;
    let mut params = outcome.params.clone();
    for j in 0..params.a.len() {
        let mut psi = params.amplitudes(j);
        gauge_fix(&mut psi);
        params.set_amplitudes(j, &psi);
    }
    let metrics = truth.as_ref().map(|t| metrics(&problem, &params, t)).transpose()?;
    let last = outcome.trace.records.last().unwrap_or(&outcome.trace.initial);
    let bundle = ResultBundle {
        scenario: cfg.name.clone(),
        version: VERSION.to_string(),
        config_hash: cfg.hash(),
        seeds: Seeds {
            optimizer: cfg.optimizer.seed,
            noise: cfg.noise.seed,
            rpwf: cfg.rpwf.enabled.then_some(cfg.rpwf.seed),
        },
        status: outcome.status,
        converged: outcome.status.converged(),
        exit_code: exit_code(outcome.status),
        iterations: outcome.trace.records.len(),
        objective: outcome.value,
        target_error: last.target_error,
        populations: problem.effective_populations(&params)?,
        parameters: params,
        members: match problem.state_model() {
            StateModel::Prepared { .. } => scenario.members.clone(),
            StateModel::Free { .. } => Vec::new(),
        },
        metrics,
        starts,
        constants: Constants {
            boltzmann_hartree_per_kelvin: BOLTZMANN_HARTREE_PER_KELVIN,
            fs_per_au_time: FS_PER_AU_TIME,
            phase_threshold: PHASE_THRESHOLD,
        },
        trace: "trace.jsonl".into(),
        trajectories: cfg.observables.iter().map(|k| format!("{}.fit.csv", k.label())).collect(),
    };
    Ok(Reconstruction {
        scenario,
        problem,
        outcome,
        bundle,
    })
}

impl Reconstruction {
    /// Writes `result.json`, `trace.jsonl` and fitted trajectories.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let cfg = &self.scenario.config;
        fs::write(dir.join("result.json"), serde_json::to_string_pretty(&self.bundle)? + "\n")?;
        self.outcome.trace.write_jsonl(&dir.join(&self.bundle.trace))?;
        let signals = self.problem.signals(&self.outcome.params)?;
        for (&kind, v) in cfg.observables.iter().zip(signals) {
            let t = Trajectory::new(kind, self.scenario.times.clone(), v)?;
            let sidecar = TrajectorySidecar {
                observable_kind: kind,
                noise_level: 0.0,
                noise_sigma: 0.0,
                noise_seed: None,
                j_max: cfg.basis.j_max,
                parity: cfg.basis.parity,
                samples: t.len(),
                generation: serde_json::json!({
                    "scenario": cfg.name,
                    "config_hash": self.bundle.config_hash,
                    "variant": "fit",
                    "time_unit": "au",
                    "version": VERSION,
                }),
            };
            write_with_sidecar(&t, &sidecar, dir, &format!("{}.fit", kind.label()))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckRow {
    pub block: String,
    pub components: usize,
    /// `None` for frozen blocks.
    pub relative_error: Option<f64>,
    pub step: Option<f64>,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub scenario: String,
    pub seed: u64,
    pub tolerance: f64,
    pub objective: f64,
    pub rows: Vec<GradcheckRow>,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct GradcheckOptions {
    pub data: Option<PathBuf>,
    pub seed: u64,
    pub tolerance: f64,
    /// Perturbs the analytic gradient of this block, to exercise the
    /// failure path.
    pub corrupt: Option<ParamBlock>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            data: None,
            seed: 0,
            tolerance: GRADCHECK_TOLERANCE,
            corrupt: None,
        }
    }
}

/// Random feasible evaluation point: `initialize` with free scalars moved
/// within their boxes and free populations drawn from the simplex interior.
fn evaluation_point(problem: &ReconstructionProblem, unknowns: &Unknowns, seed: u64) -> Result<ParameterVector> {
    let mut x = initialize(problem, unknowns, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut jitter = |v: f64, s: &Scalar| -> f64 {
        let i = s.interval();
        (v * (1.0 + 0.02 * (rng.random::<f64>() - 0.5))).clamp(i.lo, i.hi)
    };
    for (v, s) in x.strengths.iter_mut().zip(&unknowns.strengths) {
        if s.is_free() {
            *v = jitter(*v, s);
        }
    }
    if unknowns.inertia.is_free() {
        x.inertia = jitter(x.inertia, &unknowns.inertia);
    }
    if let (Some(t), PopulationSpec::Thermal(s)) = (x.temperature.as_mut(), &unknowns.populations) {
        if s.is_free() {
            *t = jitter(*t, s);
        }
    }
    if x.active.populations {
        let w: Vec<f64> = (0..x.p.len()).map(|_| rng.random::<f64>() + 0.05).collect();
        let z: f64 = w.iter().sum();
        x.p = w.into_iter().map(|v| v / z).collect();
    }
    Ok(x)
}

/// Compares analytic gradients with central differences at a random
/// feasible point. References come from `data` (or the config's `data`),
/// or are simulated from the generating values.
pub fn gradcheck(config: &ScenarioConfig, opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let scenario = Scenario::new(config.clone())?;
    let refs = match opts.data.as_ref().or(scenario.config.data.as_ref()) {
        Some(dir) => scenario.load_references(dir)?,
        None => scenario
            .clean_trajectories()?
            .into_iter()
            .map(Reference::new)
            .collect(),
    };
    let (problem, unknowns) = scenario.reconstruction(refs)?;
    let x = evaluation_point(&problem, &unknowns, opts.seed)?;
    let g = problem.evaluate(&x)?;
    if !g.is_finite() {
        return Err(Error::Numerical("non-finite objective or gradient at the check point".into()));
    }
    let mut rows = Vec::new();
    for block in ParamBlock::ALL {
        let n = x.block(block).len();
        if n == 0 || !x.active.is_active(block) {
            rows.push(GradcheckRow {
                block: block.label().into(),
                components: n,
                relative_error: None,
                step: None,
                passed: true,
            });
            continue;
        }
        let step = problem.fd_step(block, &x);
        let fd = finite_difference(&problem, &x, block, step)?;
        let mut analytic = g.block(block);
        if opts.corrupt == Some(block) {
            let scale = analytic.iter().fold(1e-3, |m: f64, v| m.max(v.abs()));
            analytic[0] += 1e-2 * scale;
        }
        let err = relative_error(&analytic, &fd.values, 1e-10);
        rows.push(GradcheckRow {
            block: block.label().into(),
            components: n,
            relative_error: Some(err),
            step: Some(step),
            passed: err < opts.tolerance && !fd.underflow,
        });
    }
    Ok(GradcheckReport {
        scenario: scenario.config.name.clone(),
        seed: opts.seed,
        tolerance: opts.tolerance,
        objective: g.value,
        passed: rows.iter().all(|r| r.passed),
        rows,
    })
}
