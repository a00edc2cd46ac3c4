use serde::{Deserialize, Serialize};

use crate::dynamics::trajectory::validate_grid;
use crate::dynamics::{sample_phases, InitialState, PhaseTable, SectorEngine, SectorState, Trajectory};
use crate::parallel;
use crate::rotor::{
    observable_operator, HermitianOperator, Polarization, Preparation, RotorBasis,
};
use crate::thermal;
use crate::{Complex64, Error, Result};

/// Floor applied to populations when converting `√p` gradients to `p`.
pub const POPULATION_FLOOR: f64 = 1e-12;

/// Largest phase change a finite-difference inertia step may cause.
pub const MAX_FD_PHASE: f64 = 1e-4;

/// One measured (or synthesised) trajectory the model is fitted to.
#[derive(Clone, Debug)]
pub struct Reference {
    pub trajectory: Trajectory,
    pub weight: f64,
}

impl Reference {
    pub fn new(trajectory: Trajectory) -> Self {
        Reference {
            trajectory,
            weight: 1.0,
        }
    }
}

/// A pulse of the preparation sequence. Strengths live in the parameter
/// vector.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pulse {
    pub polarization: Polarization,
    /// Free-evolution time before this pulse (ignored for the first).
    pub delay: f64,
}

/// How member states are parametrised.
#[derive(Clone, Debug)]
pub enum StateModel {
    /// Free complex amplitudes for each member, optionally confined to the
    /// basis states where `support` is true.
    Free {
        members: usize,
        support: Option<Vec<bool>>,
    },
    /// `ψ_j = V(P, I) χ_j` for fixed pre-pulse states `χ_j`.
    Prepared {
        initial: Vec<InitialState>,
        pulses: Vec<Pulse>,
        padding: Option<u32>,
    },
}

/// Where member populations come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PopulationModel {
    /// `p` is part of the parameter vector.
    Explicit,
    /// `p = p(T)` from a Boltzmann distribution over the member energies.
    Thermal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Estimator {
    Exact,
    Rpwf { samples: usize, seed: u64 },
}

/// Parameter blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamBlock {
    Re,
    Im,
    Populations,
    Strengths,
    Inertia,
    Temperature,
}

impl ParamBlock {
    pub const ALL: [ParamBlock; 6] = [
        ParamBlock::Re,
        ParamBlock::Im,
        ParamBlock::Populations,
        ParamBlock::Strengths,
        ParamBlock::Inertia,
        ParamBlock::Temperature,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ParamBlock::Re => "a",
            ParamBlock::Im => "b",
            ParamBlock::Populations => "p",
            ParamBlock::Strengths => "P",
            ParamBlock::Inertia => "I",
            ParamBlock::Temperature => "T",
        }
    }

    pub fn parse(s: &str) -> Option<ParamBlock> {
        ParamBlock::ALL
            .into_iter()
            .find(|b| b.label() == s || format!("{b:?}").eq_ignore_ascii_case(s))
    }
}

/// Which blocks the optimizer may move.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveMask {
    pub amplitudes: bool,
    pub populations: bool,
    pub strengths: bool,
    pub inertia: bool,
    pub temperature: bool,
}

impl ActiveMask {
    pub fn is_active(&self, block: ParamBlock) -> bool {
        match block {
            ParamBlock::Re | ParamBlock::Im => self.amplitudes,
            ParamBlock::Populations => self.populations,
            ParamBlock::Strengths => self.strengths,
            ParamBlock::Inertia => self.inertia,
            ParamBlock::Temperature => self.temperature,
        }
    }

    pub fn any(&self) -> bool {
        ParamBlock::ALL.iter().any(|&b| self.is_active(b))
    }
}

/// Full set of unknowns. `a[j]`, `b[j]` are the real and imaginary parts of
/// member `j` (empty for prepared states).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub p: Vec<f64>,
    pub strengths: Vec<f64>,
    pub inertia: f64,
    pub temperature: Option<f64>,
    pub active: ActiveMask,
}

impl ParameterVector {
    pub fn amplitudes(&self, j: usize) -> Vec<Complex64> {
        self.a[j]
            .iter()
            .zip(&self.b[j])
            .map(|(&re, &im)| Complex64::new(re, im))
            .collect()
    }

    pub fn set_amplitudes(&mut self, j: usize, psi: &[Complex64]) {
        self.a[j] = psi.iter().map(|c| c.re).collect();
        self.b[j] = psi.iter().map(|c| c.im).collect();
    }

    /// Block contents flattened in a fixed order.
    pub fn block(&self, block: ParamBlock) -> Vec<f64> {
        match block {
            ParamBlock::Re => self.a.concat(),
            ParamBlock::Im => self.b.concat(),
            ParamBlock::Populations => self.p.clone(),
            ParamBlock::Strengths => self.strengths.clone(),
            ParamBlock::Inertia => vec![self.inertia],
            ParamBlock::Temperature => self.temperature.into_iter().collect(),
        }
    }

    pub fn set_block(&mut self, block: ParamBlock, values: &[f64]) {
        let refill = |dst: &mut Vec<Vec<f64>>| {
            let mut it = values.iter();
            for v in dst.iter_mut() {
                for x in v.iter_mut() {
                    *x = *it.next().expect("block length");
                }
            }
        };
        match block {
            ParamBlock::Re => refill(&mut self.a),
            ParamBlock::Im => refill(&mut self.b),
            ParamBlock::Populations => self.p.copy_from_slice(values),
            ParamBlock::Strengths => self.strengths.copy_from_slice(values),
            ParamBlock::Inertia => self.inertia = values[0],
            ParamBlock::Temperature => {
                if let Some(t) = self.temperature.as_mut() {
                    *t = values[0];
                }
            }
        }
    }
}

/// Objective value, analytic gradient and per-trajectory diagnostics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GradientBundle {
    pub value: f64,
    pub d_a: Vec<Vec<f64>>,
    pub d_b: Vec<Vec<f64>>,
    /// `∂E/∂p`; in thermal mode this is the intermediate used for the
    /// temperature chain.
    pub d_p: Vec<f64>,
    pub d_strengths: Vec<f64>,
    pub d_inertia: f64,
    pub d_temperature: Option<f64>,
    pub signals: Vec<Vec<f64>>,
    pub residuals: Vec<Vec<f64>>,
    pub active: ActiveMask,
}

impl GradientBundle {
    pub fn block(&self, block: ParamBlock) -> Vec<f64> {
        match block {
            ParamBlock::Re => self.d_a.concat(),
            ParamBlock::Im => self.d_b.concat(),
            ParamBlock::Populations => self.d_p.clone(),
            ParamBlock::Strengths => self.d_strengths.clone(),
            ParamBlock::Inertia => vec![self.d_inertia],
            ParamBlock::Temperature => self.d_temperature.into_iter().collect(),
        }
    }

    pub fn block_norm(&self, block: ParamBlock) -> f64 {
        self.block(block).iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Norm over active blocks only.
    pub fn active_norm(&self) -> f64 {
        ParamBlock::ALL
            .iter()
            .filter(|&&b| self.active.is_active(b))
            .map(|&b| self.block_norm(b).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
            && ParamBlock::ALL
                .iter()
                .all(|&b| self.block(b).iter().all(|x| x.is_finite()))
    }
}

/// Least-squares fit of model signals to reference trajectories with an
/// optional ridge term on free amplitudes.
#[derive(Clone, Debug)]
pub struct ReconstructionProblem {
    basis: RotorBasis,
    references: Vec<Reference>,
    operators: Vec<HermitianOperator>,
    times: Vec<f64>,
    state: StateModel,
    populations: PopulationModel,
    estimator: Estimator,
    ridge: f64,
    engine: SectorEngine,
}

/// Member states `φ_n` in sparse form with their parameter derivatives.
struct Members {
    states: Vec<(Vec<usize>, Vec<Complex64>)>,
    d_strength: Vec<Vec<(Vec<usize>, Vec<Complex64>)>>,
    d_inertia: Vec<(Vec<usize>, Vec<Complex64>)>,
}

fn sparse_dot(g: &[Complex64], idx: &[usize], v: &[Complex64]) -> Complex64 {
    idx.iter().zip(v).map(|(&i, x)| g[i].conj() * x).sum()
}

impl ReconstructionProblem {
    pub fn new(
        basis: RotorBasis,
        references: Vec<Reference>,
        state: StateModel,
        populations: PopulationModel,
        estimator: Estimator,
        ridge: f64,
    ) -> Result<Self> {
        let Some(first) = references.first() else {
            return Err(Error::input("at least one reference trajectory is required"));
        };
        let times = first.trajectory.times.clone();
        validate_grid(&times)?;
        for r in &references {
            r.trajectory.validate()?;
            if r.trajectory.times != times {
                return Err(Error::input(format!(
                    "trajectory for {} uses a different time grid",
                    r.trajectory.kind.label()
                )));
            }
            if !(r.weight >= 0.0 && r.weight.is_finite()) {
                return Err(Error::input(format!("trajectory weight must be >= 0, got {}", r.weight)));
            }
        }
        if !(ridge >= 0.0 && ridge.is_finite()) {
            return Err(Error::input(format!("ridge weight must be >= 0, got {ridge}")));
        }
        if let Estimator::Rpwf { samples: 0, .. } = estimator {
            return Err(Error::input("RPWF needs at least one sample"));
        }
        let dim = basis.len();
        let prep_structure = match &state {
            StateModel::Free { members, support } => {
                if *members == 0 {
                    return Err(Error::input("at least one member state is required"));
                }
                if let Some(s) = support {
                    if s.len() != dim {
                        return Err(Error::input("support mask length does not match the basis"));
                    }
                    if !s.iter().any(|&x| x) {
                        return Err(Error::input("support mask admits no basis state"));
                    }
                }
                if populations == PopulationModel::Thermal {
                    return Err(Error::config(
                        "thermal populations need prepared basis-state members",
                    ));
                }
                None
            }
            StateModel::Prepared {
                initial, pulses, ..
            } => {
                if initial.is_empty() {
                    return Err(Error::input("at least one initial state is required"));
                }
                if pulses.is_empty() {
                    return Err(Error::input("at least one pulse is required"));
                }
                for p in pulses {
                    p.polarization.validate()?;
                    if !(p.delay >= 0.0 && p.delay.is_finite()) {
                        return Err(Error::input(format!("pulse delay must be >= 0, got {}", p.delay)));
                    }
                }
                for chi in initial {
                    match chi {
                        InitialState::Basis(i) if *i >= dim => {
                            return Err(Error::input(format!("initial state index {i} outside basis")));
                        }
                        InitialState::Vector(v) if v.len() != dim => {
                            return Err(Error::input("initial state length does not match the basis"));
                        }
                        InitialState::Vector(_) if populations == PopulationModel::Thermal => {
                            return Err(Error::config(
                                "thermal populations need basis-state members",
                            ));
                        }
                        _ => {}
                    }
                }
                // P only sets values; the block structure comes from the
                // polarizations
                let trial: Vec<(f64, Polarization, f64)> =
                    pulses.iter().map(|p| (1.0, p.polarization, p.delay)).collect();
                Some(Preparation::build(&basis, &trial, 1.0, Some(0))?)
            }
        };
        let operators = references
            .iter()
            .map(|r| observable_operator(&basis, r.trajectory.kind))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&HermitianOperator> = operators.iter().collect();
        let engine = SectorEngine::new(&basis, &refs, prep_structure.as_ref().map(|p| p.matrix()))?;
        Ok(ReconstructionProblem {
            basis,
            references,
            operators,
            times,
            state,
            populations,
            estimator,
            ridge,
            engine,
        })
    }

    pub fn basis(&self) -> &RotorBasis {
        &self.basis
    }

    pub fn references(&self) -> &[Reference] {
        &self.references
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn state_model(&self) -> &StateModel {
        &self.state
    }

    pub fn population_model(&self) -> PopulationModel {
        self.populations
    }

    pub fn estimator(&self) -> Estimator {
        self.estimator
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn operators(&self) -> &[HermitianOperator] {
        &self.operators
    }

    pub fn n_members(&self) -> usize {
        match &self.state {
            StateModel::Free { members, .. } => *members,
            StateModel::Prepared { initial, .. } => initial.len(),
        }
    }

    pub fn n_pulses(&self) -> usize {
        match &self.state {
            StateModel::Free { .. } => 0,
            StateModel::Prepared { pulses, .. } => pulses.len(),
        }
    }

    /// Support mask of free amplitudes, if any.
    pub fn support(&self) -> Option<&[bool]> {
        match &self.state {
            StateModel::Free { support, .. } => support.as_deref(),
            StateModel::Prepared { .. } => None,
        }
    }

    /// Replaces the reference values (same kinds and grid).
    pub fn with_references(mut self, references: Vec<Reference>) -> Result<Self> {
        if references.len() != self.references.len()
            || references
                .iter()
                .zip(&self.references)
                .any(|(a, b)| a.trajectory.kind != b.trajectory.kind || a.trajectory.times != self.times)
        {
            return Err(Error::input("replacement references must match kinds and grid"));
        }
        self.references = references;
        Ok(self)
    }

    /// Finite-difference step for `block`: the defaults of [`fd`], with the
    /// inertia step further capped so that no level's phase moves by more
    /// than [`MAX_FD_PHASE`] over the grid.
    ///
    /// [`fd`]: super::fd
    pub fn fd_step(&self, block: ParamBlock, x: &ParameterVector) -> f64 {
        let step = super::fd::default_step(block, x);
        if block != ParamBlock::Inertia {
            return step;
        }
        let j = self.basis.j_max() as f64;
        let t_max = self.times.iter().fold(0.0f64, |m, t| m.max(t.abs()));
        // |∂(h_J t)/∂I| δI = h_J t δI / I
        let phase_per_rel = j * (j + 1.0) / (2.0 * x.inertia) * t_max;
        if phase_per_rel * step / x.inertia > MAX_FD_PHASE {
            MAX_FD_PHASE / phase_per_rel * x.inertia
        } else {
            step
        }
    }

    /// Checks that `x` has the shapes this problem expects and that the
    /// active mask is compatible with the model.
    pub fn check(&self, x: &ParameterVector) -> Result<()> {
        let n = self.n_members();
        let dim = self.basis.len();
        match &self.state {
            StateModel::Free { .. } => {
                if x.a.len() != n || x.b.len() != n {
                    return Err(Error::input(format!("expected amplitudes for {n} members")));
                }
                if x.a.iter().chain(&x.b).any(|v| v.len() != dim) {
                    return Err(Error::input(format!("member amplitudes must have length {dim}")));
                }
                if x.active.strengths {
                    return Err(Error::config("free-state model has no kick strengths"));
                }
            }
            StateModel::Prepared { .. } => {
                if !x.a.is_empty() || !x.b.is_empty() {
                    return Err(Error::input("prepared-state model has no free amplitudes"));
                }
                if x.active.amplitudes {
                    return Err(Error::config("prepared-state model has no free amplitudes"));
                }
            }
        }
        if x.strengths.len() != self.n_pulses() {
            return Err(Error::input(format!(
                "expected {} kick strengths, got {}",
                self.n_pulses(),
                x.strengths.len()
            )));
        }
        if x.p.len() != n {
            return Err(Error::input(format!("expected {n} populations, got {}", x.p.len())));
        }
        if !(x.inertia > 0.0 && x.inertia.is_finite()) {
            return Err(Error::input(format!("moment of inertia must be positive, got {}", x.inertia)));
        }
        match self.populations {
            PopulationModel::Explicit => {
                if x.temperature.is_some() || x.active.temperature {
                    return Err(Error::config("temperature given without thermal populations"));
                }
                if x.p.iter().any(|p| !p.is_finite()) {
                    return Err(Error::input("populations must be finite"));
                }
                if matches!(self.estimator, Estimator::Rpwf { .. }) && x.p.iter().any(|&p| p < 0.0) {
                    return Err(Error::input("sampled estimator needs non-negative populations"));
                }
            }
            PopulationModel::Thermal => {
                if x.active.populations {
                    return Err(Error::config(
                        "temperature mode cannot be combined with free populations",
                    ));
                }
                if x.temperature.is_none() {
                    return Err(Error::config("thermal populations need a temperature"));
                }
            }
        }
        Ok(())
    }

    /// Energies of the members' source states (thermal mode).
    fn member_energies(&self, inertia: f64) -> (Vec<f64>, Vec<f64>) {
        let StateModel::Prepared { initial, .. } = &self.state else {
            unreachable!("checked at construction")
        };
        initial
            .iter()
            .map(|chi| match chi {
                InitialState::Basis(i) => {
                    let j = self.basis.state(*i).j as f64;
                    let jj = j * (j + 1.0);
                    (jj / (2.0 * inertia), -jj / (2.0 * inertia * inertia))
                }
                InitialState::Vector(_) => unreachable!("checked at construction"),
            })
            .unzip()
    }

    /// Populations actually used for `x` (Boltzmann in thermal mode).
    pub fn effective_populations(&self, x: &ParameterVector) -> Result<Vec<f64>> {
        match self.populations {
            PopulationModel::Explicit => Ok(x.p.clone()),
            PopulationModel::Thermal => {
                let (h, _) = self.member_energies(x.inertia);
                thermal::boltzmann_populations(&h, x.temperature.expect("checked"))
            }
        }
    }

    pub fn preparation(&self, x: &ParameterVector) -> Result<Option<Preparation>> {
        match &self.state {
            StateModel::Free { .. } => Ok(None),
            StateModel::Prepared {
                pulses, padding, ..
            } => {
                let list: Vec<(f64, Polarization, f64)> = pulses
                    .iter()
                    .zip(&x.strengths)
                    .map(|(p, &s)| (s, p.polarization, p.delay))
                    .collect();
                Preparation::build(&self.basis, &list, x.inertia, *padding).map(Some)
            }
        }
    }

    fn members(&self, x: &ParameterVector, want_derivs: bool) -> Result<Members> {
        let dim = self.basis.len();
        match &self.state {
            StateModel::Free { members, .. } => Ok(Members {
                states: (0..*members).map(|j| ((0..dim).collect(), x.amplitudes(j))).collect(),
                d_strength: Vec::new(),
                d_inertia: Vec::new(),
            }),
            StateModel::Prepared { initial, .. } => {
                let prep = self.preparation(x)?.expect("prepared model");
                let states = initial.iter().map(|chi| chi.apply(prep.matrix())).collect();
                let (d_strength, d_inertia) = if want_derivs {
                    (
                        prep.strength_derivatives()
                            .iter()
                            .map(|d| initial.iter().map(|chi| chi.apply(d)).collect())
                            .collect(),
                        initial
                            .iter()
                            .map(|chi| chi.apply(prep.inertia_derivative()))
                            .collect(),
                    )
                } else {
                    (Vec::new(), Vec::new())
                };
                Ok(Members {
                    states,
                    d_strength,
                    d_inertia,
                })
            }
        }
    }

    fn rpwf_state(&self, members: &Members, p: &[f64], phases: &[f64]) -> Vec<Complex64> {
        let mut psi = vec![Complex64::new(0.0, 0.0); self.basis.len()];
        for ((idx, vals), (&pn, &alpha)) in members.states.iter().zip(p.iter().zip(phases)) {
            let c = Complex64::from_polar(pn.max(0.0).sqrt(), -alpha);
            for (&i, v) in idx.iter().zip(vals) {
                psi[i] += c * v;
            }
        }
        psi
    }

    fn rpwf_phases(&self, seed: u64, samples: usize) -> Vec<Vec<f64>> {
        let n = self.n_members();
        (0..samples).map(|k| sample_phases(seed, k as u64, n)).collect()
    }

    /// Model signals `[trajectory][c]` for `x`.
    pub fn signals(&self, x: &ParameterVector) -> Result<Vec<Vec<f64>>> {
        self.check(x)?;
        let p = self.effective_populations(x)?;
        let members = self.members(x, false)?;
        let phases = self.engine.phase_table(x.inertia, &self.times)?;
        Ok(self.forward(&members, &p, &phases).signals)
    }

    fn forward(&self, members: &Members, p: &[f64], phases: &PhaseTable) -> Forward {
        let n_obs = self.references.len();
        let k = self.times.len();
        let mut signals = vec![vec![0.0; k]; n_obs];
        match self.estimator {
            Estimator::Exact => {
                let per: Vec<(SectorState, Vec<Vec<f64>>)> =
                    parallel::map_slice(&members.states, |(idx, vals)| {
                        let st = self.engine.split_sparse(idx, vals);
                        let tr = self.engine.traces(&st, phases);
                        (st, tr)
                    });
                for ((_, tr), &pj) in per.iter().zip(p) {
                    for (s, t) in signals.iter_mut().zip(tr) {
                        for (a, b) in s.iter_mut().zip(t) {
                            *a += pj * b;
                        }
                    }
                }
                Forward { signals, states: per }
            }
            Estimator::Rpwf { samples, seed } => {
                let alphas = self.rpwf_phases(seed, samples);
                let per: Vec<(SectorState, Vec<Vec<f64>>)> = parallel::map_slice(&alphas, |al| {
                    let st = self.engine.split_dense(&self.rpwf_state(members, p, al));
                    let tr = self.engine.traces(&st, phases);
                    (st, tr)
                });
                let scale = 1.0 / samples as f64;
                for (_, tr) in &per {
                    for (s, t) in signals.iter_mut().zip(tr) {
                        for (a, b) in s.iter_mut().zip(t) {
                            *a += scale * b;
                        }
                    }
                }
                Forward { signals, states: per }
            }
        }
    }

    fn ridge_value(&self, x: &ParameterVector) -> f64 {
        match self.state {
            StateModel::Free { .. } => {
                self.ridge
                    * x.a
                        .iter()
                        .chain(&x.b)
                        .flat_map(|v| v.iter())
                        .map(|v| v * v)
                        .sum::<f64>()
            }
            StateModel::Prepared { .. } => 0.0,
        }
    }

    fn residuals(&self, signals: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>) {
        let mut e = 0.0;
        let res: Vec<Vec<f64>> = signals
            .iter()
            .zip(&self.references)
            .map(|(s, r)| {
                let rv: Vec<f64> = s
                    .iter()
                    .zip(&r.trajectory.values)
                    .map(|(a, b)| a - b)
                    .collect();
                e += r.weight * rv.iter().map(|v| v * v).sum::<f64>();
                rv
            })
            .collect();
        (e, res)
    }

    /// `E = Σ_r w_r Σ_c [𝒪_r(t_c) − 𝒪_r^ref(t_c)]² + λ Σ_j ‖ψ_j‖²`.
    pub fn objective(&self, x: &ParameterVector) -> Result<f64> {
        let signals = self.signals(x)?;
        let (e, _) = self.residuals(&signals);
        let v = e + self.ridge_value(x);
        if !v.is_finite() {
            return Err(Error::Numerical(format!("objective is {v}")));
        }
        Ok(v)
    }

    /// Objective and analytic gradient for every block.
    pub fn evaluate(&self, x: &ParameterVector) -> Result<GradientBundle> {
        self.check(x)?;
        let n = self.n_members();
        let p = self.effective_populations(x)?;
        let prepared = matches!(self.state, StateModel::Prepared { .. });
        let members = self.members(x, prepared)?;
        let phases = self.engine.phase_table(x.inertia, &self.times)?;
        let fwd = self.forward(&members, &p, &phases);
        let (e_fit, residuals) = self.residuals(&fwd.signals);
        let value = e_fit + self.ridge_value(x);

        // adjoint weights ∂E/∂𝒪_r(t_c) = 2 w_r r_c
        let base: Vec<Vec<f64>> = residuals
            .iter()
            .zip(&self.references)
            .map(|(r, rf)| r.iter().map(|v| 2.0 * rf.weight * v).collect())
            .collect();
        let scaled = |s: f64| -> Vec<Vec<f64>> {
            base.iter().map(|r| r.iter().map(|v| v * s).collect()).collect()
        };

        let dim = self.basis.len();
        let n_p = self.n_pulses();
        let want_amp = !prepared;
        let mut d_amp: Vec<Vec<Complex64>> = Vec::new();
        let mut d_p = vec![0.0; n];
        let mut d_strengths = vec![0.0; n_p];
        let mut d_inertia = 0.0;

        match self.estimator {
            Estimator::Exact => {
                for (j, (_, tr)) in fwd.states.iter().enumerate() {
                    d_p[j] = tr
                        .iter()
                        .zip(&base)
                        .map(|(t, w)| t.iter().zip(w).map(|(a, b)| a * b).sum::<f64>())
                        .sum();
                }
                struct Part {
                    g: Vec<Complex64>,
                    d_strengths: Vec<f64>,
                    d_inertia: f64,
                }
                let parts: Vec<Part> = parallel::map_range(n, |j| {
                    let (st, _) = &fwd.states[j];
                    if p[j] == 0.0 {
                        return Part {
                            g: if want_amp { vec![Complex64::new(0.0, 0.0); dim] } else { Vec::new() },
                            d_strengths: vec![0.0; n_p],
                            d_inertia: 0.0,
                        };
                    }
                    let (g_sec, d_i) = self.engine.adjoint(st, &scaled(p[j]), &phases, true);
                    // packed gradient dE/da + i dE/db = 2 Σ w U†OUψ
                    let g: Vec<Complex64> = self.engine.to_dense(&g_sec).iter().map(|c| c * 2.0).collect();
                    let mut ds = vec![0.0; n_p];
                    let mut di = d_i;
                    if prepared {
                        for (k, dk) in members.d_strength.iter().enumerate() {
                            ds[k] = sparse_dot(&g, &dk[j].0, &dk[j].1).re;
                        }
                        let (idx, v) = &members.d_inertia[j];
                        di += sparse_dot(&g, idx, v).re;
                    }
                    Part {
                        g: if want_amp { g } else { Vec::new() },
                        d_strengths: ds,
                        d_inertia: di,
                    }
                });
                for part in parts {
                    for (a, b) in d_strengths.iter_mut().zip(&part.d_strengths) {
                        *a += b;
                    }
                    d_inertia += part.d_inertia;
                    if want_amp {
                        d_amp.push(part.g);
                    }
                }
            }
            Estimator::Rpwf { samples, seed } => {
                let alphas = self.rpwf_phases(seed, samples);
                let w = scaled(1.0 / samples as f64);
                struct Part {
                    d_ptilde: Vec<f64>,
                    g: Vec<Vec<Complex64>>,
                    d_strengths: Vec<f64>,
                    d_inertia: f64,
                }
                let parts: Vec<Part> = parallel::map_range(samples, |k| {
                    let (st, _) = &fwd.states[k];
                    let (g_sec, d_i) = self.engine.adjoint(st, &w, &phases, true);
                    let gk = self.engine.to_dense(&g_sec);
                    let mut d_ptilde = vec![0.0; n];
                    let mut g = Vec::new();
                    let mut ds = vec![0.0; n_p];
                    let mut di = d_i;
                    for (m, (idx, v)) in members.states.iter().enumerate() {
                        let theta = Complex64::from_polar(1.0, -alphas[k][m]);
                        let sp = p[m].max(0.0).sqrt();
                        d_ptilde[m] = 2.0 * (theta * sparse_dot(&gk, idx, v)).re;
                        if want_amp {
                            let c = theta.conj() * (2.0 * sp);
                            g.push(gk.iter().map(|x| x * c).collect());
                        }
                        if prepared {
                            for (kk, dk) in members.d_strength.iter().enumerate() {
                                ds[kk] += 2.0 * sp * (theta * sparse_dot(&gk, &dk[m].0, &dk[m].1)).re;
                            }
                            let (ii, iv) = &members.d_inertia[m];
                            di += 2.0 * sp * (theta * sparse_dot(&gk, ii, iv)).re;
                        }
                    }
                    Part {
                        d_ptilde,
                        g,
                        d_strengths: ds,
                        d_inertia: di,
                    }
                });
                let mut d_ptilde = vec![0.0; n];
                if want_amp {
                    d_amp = vec![vec![Complex64::new(0.0, 0.0); dim]; n];
                }
                for part in parts {
                    for (a, b) in d_ptilde.iter_mut().zip(&part.d_ptilde) {
                        *a += b;
                    }
                    for (acc, g) in d_amp.iter_mut().zip(&part.g) {
                        for (a, b) in acc.iter_mut().zip(g) {
                            *a += b;
                        }
                    }
                    for (a, b) in d_strengths.iter_mut().zip(&part.d_strengths) {
                        *a += b;
                    }
                    d_inertia += part.d_inertia;
                }
                for (dp, (dpt, &pm)) in d_p.iter_mut().zip(d_ptilde.iter().zip(&p)) {
                    *dp = dpt / (2.0 * pm.max(POPULATION_FLOOR).sqrt());
                }
            }
        }

        let mut d_temperature = None;
        if self.populations == PopulationModel::Thermal {
            let t = x.temperature.expect("checked");
            let (h, dh) = self.member_energies(x.inertia);
            let dp_dt = thermal::population_temperature_derivative(&h, t)?;
            d_temperature = Some(d_p.iter().zip(&dp_dt).map(|(a, b)| a * b).sum());
            let dp_di = thermal::population_inertia_derivative(&h, &dh, t)?;
            d_inertia += d_p.iter().zip(&dp_di).map(|(a, b)| a * b).sum::<f64>();
        }

        let (d_a, d_b) = if want_amp {
            let lam2 = 2.0 * self.ridge;
            d_amp
                .iter()
                .enumerate()
                .map(|(j, g)| {
                    let da = g.iter().zip(&x.a[j]).map(|(g, a)| g.re + lam2 * a).collect();
                    let db = g.iter().zip(&x.b[j]).map(|(g, b)| g.im + lam2 * b).collect();
                    (da, db)
                })
                .unzip()
        } else {
            (Vec::new(), Vec::new())
        };

        let bundle = GradientBundle {
            value,
            d_a,
            d_b,
            d_p,
            d_strengths,
            d_inertia,
            d_temperature,
            signals: fwd.signals,
            residuals,
            active: x.active,
        };
        if !bundle.is_finite() {
            return Err(Error::Numerical("objective or gradient is not finite".into()));
        }
        Ok(bundle)
    }
}

struct Forward {
    signals: Vec<Vec<f64>>,
    states: Vec<(SectorState, Vec<Vec<f64>>)>,
}
