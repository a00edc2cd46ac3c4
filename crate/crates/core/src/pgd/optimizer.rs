use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::constraints::{ConstraintSet, Interval, ProjectionActivity};
use crate::gradients::{
    ActiveMask, GradientBundle, ParamBlock, ParameterVector, PopulationModel, ReconstructionProblem,
    StateModel,
};
use crate::{Complex64, Error, Result};

/// A scalar unknown: fixed, or free within a box with an optional start.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scalar {
    Known(f64),
    Free {
        lo: f64,
        hi: f64,
        guess: Option<f64>,
    },
}

impl Scalar {
    pub fn is_free(&self) -> bool {
        matches!(self, Scalar::Free { .. })
    }

    pub fn interval(&self) -> Interval {
        match *self {
            Scalar::Known(v) => Interval { lo: v, hi: v },
            Scalar::Free { lo, hi, .. } => Interval { lo, hi },
        }
    }

    pub fn start(&self) -> f64 {
        match *self {
            Scalar::Known(v) => v,
            Scalar::Free { lo, hi, guess } => guess.unwrap_or(0.5 * (lo + hi)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PopulationSpec {
    Known(Vec<f64>),
    Free,
    Thermal(Scalar),
}

/// Which parameters are unknown, with their boxes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Unknowns {
    pub populations: PopulationSpec,
    pub strengths: Vec<Scalar>,
    pub inertia: Scalar,
}

impl Unknowns {
    pub fn active(&self, problem: &ReconstructionProblem) -> ActiveMask {
        ActiveMask {
            amplitudes: matches!(problem.state_model(), StateModel::Free { .. }),
            populations: matches!(self.populations, PopulationSpec::Free) && problem.n_members() > 1,
            strengths: self.strengths.iter().any(Scalar::is_free),
            inertia: self.inertia.is_free(),
            temperature: matches!(self.populations, PopulationSpec::Thermal(s) if s.is_free()),
        }
    }

    pub fn constraints(&self, problem: &ReconstructionProblem) -> Result<ConstraintSet> {
        if self.strengths.len() != problem.n_pulses() {
            return Err(Error::config(format!(
                "{} strength specs for {} pulses",
                self.strengths.len(),
                problem.n_pulses()
            )));
        }
        let thermal = matches!(self.populations, PopulationSpec::Thermal(_));
        if thermal != (problem.population_model() == PopulationModel::Thermal) {
            return Err(Error::config("population spec does not match the problem's population model"));
        }
        let mut c = ConstraintSet::for_problem(problem);
        c.strengths = self.strengths.iter().map(Scalar::interval).collect();
        c.inertia = self.inertia.interval();
        c.inertia.lo = c.inertia.lo.max(f64::MIN_POSITIVE);
        if let PopulationSpec::Thermal(t) = self.populations {
            let mut b = t.interval();
            b.lo = b.lo.max(f64::MIN_POSITIVE);
            c.temperature = Some(b);
        }
        c.validate()?;
        Ok(c)
    }
}

/// Feasible starting point: random normal amplitudes on the admitted
/// support (normalized), uniform populations, and box midpoints or guesses
/// for scalars.
pub fn initialize(problem: &ReconstructionProblem, unknowns: &Unknowns, seed: u64) -> Result<ParameterVector> {
    let constraints = unknowns.constraints(problem)?;
    let n = problem.n_members();
    let dim = problem.basis().len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, b) = match problem.state_model() {
        StateModel::Free { .. } => {
            let mut a = Vec::with_capacity(n);
            let mut b = Vec::with_capacity(n);
            for _ in 0..n {
                let psi: Vec<Complex64> = (0..dim)
                    .map(|i| {
                        let re: f64 = rng.sample(StandardNormal);
                        let im: f64 = rng.sample(StandardNormal);
                        match &constraints.support {
                            Some(m) if !m[i] => Complex64::new(0.0, 0.0),
                            _ => Complex64::new(re, im),
                        }
                    })
                    .collect();
                let psi = super::project_sphere(&psi, constraints.support.as_deref());
                a.push(psi.iter().map(|c| c.re).collect());
                b.push(psi.iter().map(|c| c.im).collect());
            }
            (a, b)
        }
        StateModel::Prepared { .. } => (Vec::new(), Vec::new()),
    };
    let (p, temperature) = match &unknowns.populations {
        PopulationSpec::Known(p) => {
            if p.len() != n {
                return Err(Error::config(format!("{} known populations for {n} members", p.len())));
            }
            (p.clone(), None)
        }
        PopulationSpec::Free => (vec![1.0 / n as f64; n], None),
        PopulationSpec::Thermal(t) => (vec![1.0 / n as f64; n], Some(t.start())),
    };
    let x = ParameterVector {
        a,
        b,
        p,
        strengths: unknowns.strengths.iter().map(Scalar::start).collect(),
        inertia: unknowns.inertia.start(),
        temperature,
        active: unknowns.active(problem),
    };
    problem.check(&x)?;
    Ok(x)
}

/// Rotates `psi` so that its largest-magnitude coefficient is real and
/// positive.
pub fn gauge_fix(psi: &mut [Complex64]) {
    let Some(k) = (0..psi.len()).max_by(|&i, &j| psi[i].norm().total_cmp(&psi[j].norm())) else {
        return;
    };
    let n = psi[k].norm();
    if n == 0.0 {
        return;
    }
    let rot = psi[k].conj() / n;
    psi.iter_mut().for_each(|c| *c *= rot);
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum StepPolicy {
    Fixed { eta: f64 },
    /// Armijo backtracking; trial steps start from the Barzilai–Borwein
    /// estimate once two iterates exist.
    Backtracking { beta: f64, c1: f64 },
}

impl StepPolicy {
    fn line_search(self) -> Option<(f64, f64)> {
        match self {
            StepPolicy::Fixed { .. } => None,
            StepPolicy::Backtracking { beta, c1 } => Some((beta, c1)),
        }
    }
}

/// Per-block step multipliers (a diagonal metric). `None` for inertia or
/// temperature means the square of the starting value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlockScales {
    pub amplitudes: f64,
    pub populations: f64,
    pub strengths: f64,
    pub inertia: Option<f64>,
    pub temperature: Option<f64>,
}

impl Default for BlockScales {
    fn default() -> Self {
        BlockScales {
            amplitudes: 1.0,
            populations: 1.0,
            strengths: 1.0,
            inertia: None,
            temperature: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub max_iterations: usize,
    pub step: StepPolicy,
    pub scales: BlockScales,
    /// First trial step; `None` moves the scaled point by 0.1 on the first
    /// iteration.
    pub initial_step: Option<f64>,
    pub grad_tol: f64,
    pub e_change_tol: f64,
    pub patience: usize,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            max_iterations: 500,
            step: StepPolicy::Backtracking { beta: 0.5, c1: 1e-4 },
            scales: BlockScales::default(),
            initial_step: None,
            grad_tol: 1e-9,
            e_change_tol: 1e-10,
            patience: 10,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64, name: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(format!("{name} must be > 0, got {v}")))
            }
        };
        if self.max_iterations == 0 {
            return Err(Error::config("max_iterations must be at least 1"));
        }
        match self.step {
            StepPolicy::Fixed { eta } => pos(eta, "fixed step")?,
            StepPolicy::Backtracking { beta, c1 } => {
                if !(beta > 0.0 && beta < 1.0) {
                    return Err(Error::config(format!("backtracking beta must lie in (0, 1), got {beta}")));
                }
                if !(c1 > 0.0 && c1 < 1.0) {
                    return Err(Error::config(format!("Armijo c1 must lie in (0, 1), got {c1}")));
                }
            }
        }
        pos(self.grad_tol, "grad_tol")?;
        pos(self.e_change_tol, "e_change_tol")?;
        if self.patience == 0 {
            return Err(Error::config("patience must be at least 1"));
        }
        let s = &self.scales;
        for (v, name) in [
            (s.amplitudes, "amplitude scale"),
            (s.populations, "population scale"),
            (s.strengths, "strength scale"),
        ] {
            pos(v, name)?;
        }
        for (v, name) in [(s.inertia, "inertia scale"), (s.temperature, "temperature scale")] {
            if let Some(v) = v {
                pos(v, name)?;
            }
        }
        if let Some(a) = self.initial_step {
            pos(a, "initial_step")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub value: f64,
    /// Norm of the difference between model and reference trajectories.
    pub target_error: f64,
    pub grad_norms: BTreeMap<String, f64>,
    pub projected_grad_norm: f64,
    pub step: f64,
    pub backtracks: usize,
    pub projection: ProjectionActivity,
    pub strengths: Vec<f64>,
    pub inertia: f64,
    pub temperature: Option<f64>,
    pub snapshot: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metrics: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    /// Relative change of E stayed below tolerance for `patience` iterations.
    EnergyStalled,
    /// Projected gradient norm fell below tolerance.
    GradientSmall,
    /// No step length produced sufficient decrease.
    LineSearchExhausted,
    IterationCap,
    NumericalFailure,
}

impl Status {
    pub fn converged(self) -> bool {
        matches!(
            self,
            Status::EnergyStalled | Status::GradientSmall | Status::LineSearchExhausted
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub initial: IterationRecord,
    pub records: Vec<IterationRecord>,
}

impl RunTrace {
    /// JSON lines: the initial point followed by one record per iteration.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for r in std::iter::once(&self.initial).chain(&self.records) {
            serde_json::to_writer(&mut out, r)?;
            writeln!(out)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<RunTrace> {
        let text = std::fs::read_to_string(path)?;
        let mut records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<IterationRecord>, _>>()?;
        if records.is_empty() {
            return Err(Error::input("empty run trace"));
        }
        let initial = records.remove(0);
        Ok(RunTrace { initial, records })
    }

    pub fn values(&self) -> Vec<f64> {
        std::iter::once(&self.initial)
            .chain(&self.records)
            .map(|r| r.value)
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub params: ParameterVector,
    pub value: f64,
    pub status: Status,
    pub trace: RunTrace,
}

/// Optional per-iteration diagnostics (e.g. error against a known truth).
pub type Monitor<'a> = &'a dyn Fn(&ParameterVector) -> BTreeMap<String, f64>;

/// Hex digest prefix of the active blocks.
pub fn snapshot_hash(x: &ParameterVector) -> String {
    let mut h = Sha256::new();
    for b in ParamBlock::ALL {
        if x.active.is_active(b) {
            for v in x.block(b) {
                h.update(v.to_le_bytes());
            }
        }
    }
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

struct Metric {
    amplitudes: f64,
    populations: f64,
    strengths: f64,
    inertia: f64,
    temperature: f64,
}

impl Metric {
    fn new(s: &BlockScales, x0: &ParameterVector) -> Self {
        Metric {
            amplitudes: s.amplitudes,
            populations: s.populations,
            strengths: s.strengths,
            inertia: s.inertia.unwrap_or(x0.inertia * x0.inertia),
            temperature: s
                .temperature
                .unwrap_or_else(|| x0.temperature.map_or(1.0, |t| t * t)),
        }
    }

    fn of(&self, b: ParamBlock) -> f64 {
        match b {
            ParamBlock::Re | ParamBlock::Im => self.amplitudes,
            ParamBlock::Populations => self.populations,
            ParamBlock::Strengths => self.strengths,
            ParamBlock::Inertia => self.inertia,
            ParamBlock::Temperature => self.temperature,
        }
    }
}

fn active_blocks(x: &ParameterVector) -> impl Iterator<Item = ParamBlock> + '_ {
    ParamBlock::ALL.into_iter().filter(|&b| x.active.is_active(b))
}

/// `x − α S g` on the active blocks.
fn descend(x: &ParameterVector, g: &GradientBundle, alpha: f64, m: &Metric) -> ParameterVector {
    let mut y = x.clone();
    for b in active_blocks(x) {
        let s = alpha * m.of(b);
        let v: Vec<f64> = x.block(b).iter().zip(g.block(b)).map(|(v, d)| v - s * d).collect();
        y.set_block(b, &v);
    }
    y
}

/// `Σ_b ⟨u_b, v_b⟩ / S_b` over active blocks of two parameter differences.
fn scaled_sq(d: &[(ParamBlock, Vec<f64>)], m: &Metric) -> f64 {
    d.iter()
        .map(|(b, v)| v.iter().map(|x| x * x).sum::<f64>() / m.of(*b))
        .sum()
}

fn diff(x: &ParameterVector, y: &ParameterVector) -> Vec<(ParamBlock, Vec<f64>)> {
    active_blocks(x)
        .map(|b| {
            let v = x.block(b).iter().zip(y.block(b)).map(|(a, c)| a - c).collect();
            (b, v)
        })
        .collect()
}

fn grad_diff(g1: &GradientBundle, g0: &GradientBundle, x: &ParameterVector) -> Vec<(ParamBlock, Vec<f64>)> {
    active_blocks(x)
        .map(|b| {
            let v = g1.block(b).iter().zip(g0.block(b)).map(|(a, c)| a - c).collect();
            (b, v)
        })
        .collect()
}

fn record(
    iteration: usize,
    x: &ParameterVector,
    g: &GradientBundle,
    pg: f64,
    step: f64,
    backtracks: usize,
    projection: ProjectionActivity,
    monitor: Option<Monitor<'_>>,
) -> IterationRecord {
    let grad_norms = ParamBlock::ALL
        .iter()
        .filter(|b| x.active.is_active(**b))
        .map(|&b| (b.label().to_string(), g.block_norm(b)))
        .collect();
    let target_error = g
        .residuals
        .iter()
        .flat_map(|r| r.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    IterationRecord {
        iteration,
        value: g.value,
        target_error,
        grad_norms,
        projected_grad_norm: pg,
        step,
        backtracks,
        projection,
        strengths: x.strengths.clone(),
        inertia: x.inertia,
        temperature: x.temperature,
        snapshot: snapshot_hash(x),
        metrics: monitor.map(|f| f(x)).unwrap_or_default(),
        note: None,
    }
}

/// Scaled norm of `P(x − S g) − x`.
fn projected_gradient_norm(
    x: &ParameterVector,
    g: &GradientBundle,
    m: &Metric,
    c: &ConstraintSet,
) -> Result<f64> {
    let mut y = descend(x, g, 1.0, m);
    c.project(&mut y)?;
    Ok(scaled_sq(&diff(&y, x), m).sqrt())
}

const MAX_BACKTRACKS: usize = 60;

/// Projected gradient descent from `x0`.
pub fn minimize(
    problem: &ReconstructionProblem,
    constraints: &ConstraintSet,
    config: &OptimizerConfig,
    x0: ParameterVector,
    monitor: Option<Monitor<'_>>,
) -> Result<Outcome> {
    config.validate()?;
    constraints.validate()?;
    problem.check(&x0)?;
    if !x0.active.any() {
        return Err(Error::config("no active parameter block to optimize"));
    }
    let metric = Metric::new(&config.scales, &x0);
    let mut x = x0;
    let initial_activity = constraints.project(&mut x)?;
    let mut g = problem.evaluate(&x)?;
    let pg0 = projected_gradient_norm(&x, &g, &metric, constraints)?;
    let initial = record(0, &x, &g, pg0, 0.0, 0, initial_activity, monitor);
    let mut trace = RunTrace {
        initial,
        records: Vec::new(),
    };
    if pg0 < config.grad_tol {
        return Ok(Outcome {
            value: g.value,
            params: x,
            status: Status::GradientSmall,
            trace,
        });
    }

    let mut best = (x.clone(), g.value);
    let mut alpha = match config.initial_step {
        Some(a) => a,
        None => {
            let sg: f64 = active_blocks(&x)
                .map(|b| m_sq(&g.block(b)) * metric.of(b))
                .sum::<f64>()
                .sqrt();
            if sg > 0.0 { 0.1 / sg } else { 1.0 }
        }
    };
    let mut prev: Option<(ParameterVector, GradientBundle)> = None;
    let mut calm = 0usize;
    let mut status = Status::IterationCap;

    for it in 1..=config.max_iterations {
        if let (Some((xp, gp)), Some(_)) = (&prev, config.step.line_search()) {
            let s = diff(&x, xp);
            let y = grad_diff(&g, gp, &x);
            let sy: f64 = s
                .iter()
                .zip(&y)
                .map(|((_, a), (_, b))| a.iter().zip(b).map(|(u, v)| u * v).sum::<f64>())
                .sum();
            let ss = scaled_sq(&s, &metric);
            alpha = if sy > 0.0 && ss > 0.0 { ss / sy } else { alpha * 2.0 };
        }
        let e0 = g.value;
        let (mut x_new, activity, mut backtracks, accepted_step);
        match config.step.line_search() {
            None => {
                let StepPolicy::Fixed { eta } = config.step else { unreachable!() };
                x_new = descend(&x, &g, eta, &metric);
                activity = constraints.project(&mut x_new)?;
                backtracks = 0;
                accepted_step = eta;
            }
            Some((beta, c1)) => {
                backtracks = 0;
                let mut a = alpha;
                loop {
                    let mut trial = descend(&x, &g, a, &metric);
                    let act = constraints.project(&mut trial)?;
                    let d2 = scaled_sq(&diff(&trial, &x), &metric);
                    let ok = match problem.objective(&trial) {
                        Ok(e) => e <= e0 - c1 / a * d2 && d2 > 0.0,
                        Err(Error::Numerical(_)) => false,
                        Err(e) => return Err(e),
                    };
                    if ok {
                        x_new = trial;
                        activity = act;
                        break;
                    }
                    backtracks += 1;
                    a *= beta;
                    if backtracks >= MAX_BACKTRACKS || d2 == 0.0 {
                        x_new = x.clone();
                        activity = act;
                        break;
                    }
                }
                accepted_step = a;
                if backtracks >= MAX_BACKTRACKS || x_new == x {
                    status = Status::LineSearchExhausted;
                    let mut r = record(it, &x, &g, f64::NAN, a, backtracks, activity, monitor);
                    r.note = Some("no step satisfied sufficient decrease".into());
                    r.projected_grad_norm = projected_gradient_norm(&x, &g, &metric, constraints)?;
                    trace.records.push(r);
                    break;
                }
            }
        }
        let g_new = match problem.evaluate(&x_new) {
            Ok(gn) => gn,
            Err(Error::Numerical(msg)) => {
                status = Status::NumericalFailure;
                let mut r = record(it, &x, &g, f64::NAN, accepted_step, backtracks, activity, monitor);
                r.note = Some(msg);
                trace.records.push(r);
                break;
            }
            Err(e) => return Err(e),
        };
        prev = Some((std::mem::replace(&mut x, x_new), std::mem::replace(&mut g, g_new)));
        alpha = accepted_step;
        if g.value < best.1 {
            best = (x.clone(), g.value);
        }
        let pg = projected_gradient_norm(&x, &g, &metric, constraints)?;
        trace
            .records
            .push(record(it, &x, &g, pg, accepted_step, backtracks, activity, monitor));

        let rel = (e0 - g.value).abs() / e0.abs().max(f64::MIN_POSITIVE);
        calm = if rel < config.e_change_tol { calm + 1 } else { 0 };
        if pg < config.grad_tol {
            status = Status::GradientSmall;
            break;
        }
        if calm >= config.patience {
            status = Status::EnergyStalled;
            break;
        }
    }
    let (params, value) = match config.step {
        StepPolicy::Fixed { .. } => best,
        StepPolicy::Backtracking { .. } => (x, g.value),
    };
    Ok(Outcome {
        params,
        value,
        status,
        trace,
    })
}

fn m_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}
