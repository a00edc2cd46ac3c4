use serde::{Deserialize, Serialize};

use crate::gradients::{ParameterVector, ReconstructionProblem, StateModel};
use crate::{Complex64, Error, Result};

/// Closed interval `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        let b = Interval { lo, hi };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lo.is_nan() || self.hi.is_nan() || self.lo > self.hi {
            return Err(Error::config(format!("infeasible box [{}, {}]", self.lo, self.hi)));
        }
        Ok(())
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn project(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }
}

/// Euclidean projection onto `{p ≥ 0, Σp = 1}` (sort-based threshold
/// method).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    assert!(!v.is_empty(), "simplex projection of an empty vector");
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (k, &x) in u.iter().enumerate() {
        cum += x;
        let t = (cum - 1.0) / (k + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// Zeroes amplitudes outside `mask`, then scales onto the unit sphere. A
/// vanishing vector maps to the first admitted basis state.
pub fn project_sphere(psi: &[Complex64], mask: Option<&[bool]>) -> Vec<Complex64> {
    let mut out: Vec<Complex64> = match mask {
        Some(m) => psi
            .iter()
            .zip(m)
            .map(|(c, &ok)| if ok { *c } else { Complex64::new(0.0, 0.0) })
            .collect(),
        None => psi.to_vec(),
    };
    let n = out.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    if n > 0.0 && n.is_finite() {
        out.iter_mut().for_each(|c| *c /= n);
    } else {
        let first = mask.map_or(Some(0), |m| m.iter().position(|&x| x)).unwrap_or(0);
        out.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        out[first] = Complex64::new(1.0, 0.0);
    }
    out
}

/// Which projections changed the point.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectionActivity {
    pub simplex: bool,
    pub sphere: bool,
    pub support: bool,
    pub boxes: bool,
}

/// Per-block feasible sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    /// Populations on the probability simplex.
    pub simplex: bool,
    /// Each free member on the unit sphere.
    pub unit_sphere: bool,
    /// Admitted basis states for free amplitudes.
    pub support: Option<Vec<bool>>,
    pub strengths: Vec<Interval>,
    pub inertia: Interval,
    pub temperature: Option<Interval>,
}

const ACTIVITY_TOLERANCE: f64 = 1e-15;

impl ConstraintSet {
    /// Default constraints for a problem: simplex populations, normalized
    /// members confined to the problem's support, and positivity for the
    /// scalars.
    pub fn for_problem(problem: &ReconstructionProblem) -> Self {
        ConstraintSet {
            simplex: true,
            unit_sphere: matches!(problem.state_model(), StateModel::Free { .. }),
            support: problem.support().map(<[bool]>::to_vec),
            strengths: vec![
                Interval {
                    lo: f64::NEG_INFINITY,
                    hi: f64::INFINITY
                };
                problem.n_pulses()
            ],
            inertia: Interval {
                lo: f64::MIN_POSITIVE,
                hi: f64::INFINITY,
            },
            temperature: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for b in self.strengths.iter().chain([&self.inertia]).chain(self.temperature.as_ref()) {
            b.validate()?;
        }
        if self.inertia.hi <= 0.0 {
            return Err(Error::config("moment-of-inertia box admits no positive value"));
        }
        if let Some(t) = &self.temperature {
            if t.hi <= 0.0 {
                return Err(Error::config("temperature box admits no positive value"));
            }
        }
        if let Some(m) = &self.support {
            if !m.iter().any(|&x| x) {
                return Err(Error::config("support mask admits no basis state"));
            }
        }
        Ok(())
    }

    /// Euclidean projection, block by block, of the active blocks of `x`.
    pub fn project(&self, x: &mut ParameterVector) -> Result<ProjectionActivity> {
        self.validate()?;
        if x.strengths.len() != self.strengths.len() {
            return Err(Error::config(format!(
                "{} strength boxes for {} strengths",
                self.strengths.len(),
                x.strengths.len()
            )));
        }
        let mut act = ProjectionActivity::default();
        let moved = |a: f64, b: f64| (a - b).abs() > ACTIVITY_TOLERANCE * a.abs().max(1.0);
        if x.active.amplitudes && (self.unit_sphere || self.support.is_some()) {
            for j in 0..x.a.len() {
                let psi = x.amplitudes(j);
                let mask = self.support.as_deref();
                if let Some(m) = mask {
                    if psi.iter().zip(m).any(|(c, &ok)| !ok && c.norm() > 0.0) {
                        act.support = true;
                    }
                }
                let projected = if self.unit_sphere {
                    project_sphere(&psi, mask)
                } else {
                    psi.iter()
                        .zip(mask.expect("support present"))
                        .map(|(c, &ok)| if ok { *c } else { Complex64::new(0.0, 0.0) })
                        .collect()
                };
                if self.unit_sphere {
                    let n: f64 = psi.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
                    if moved(n, 1.0) {
                        act.sphere = true;
                    }
                }
                x.set_amplitudes(j, &projected);
            }
        }
        if x.active.populations && self.simplex {
            let p = project_simplex(&x.p);
            if p.iter().zip(&x.p).any(|(a, b)| moved(*a, *b)) {
                act.simplex = true;
            }
            x.p = p;
        }
        let mut clamp = |v: &mut f64, b: &Interval| {
            let c = b.project(*v);
            if c != *v {
                act.boxes = true;
            }
            *v = c;
        };
        if x.active.strengths {
            for (v, b) in x.strengths.iter_mut().zip(&self.strengths) {
                clamp(v, b);
            }
        }
        if x.active.inertia {
            clamp(&mut x.inertia, &self.inertia);
        }
        if x.active.temperature {
            if let (Some(t), Some(b)) = (x.temperature.as_mut(), self.temperature.as_ref()) {
                clamp(t, b);
            }
        }
        Ok(act)
    }

    /// Largest constraint violation of the active blocks of `x`.
    pub fn residual(&self, x: &ParameterVector) -> f64 {
        let mut r = 0.0f64;
        if x.active.amplitudes {
            for j in 0..x.a.len() {
                let psi = x.amplitudes(j);
                if self.unit_sphere {
                    let n: f64 = psi.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
                    r = r.max((n - 1.0).abs());
                }
                if let Some(m) = &self.support {
                    for (c, &ok) in psi.iter().zip(m) {
                        if !ok {
                            r = r.max(c.norm());
                        }
                    }
                }
            }
        }
        if x.active.populations && self.simplex {
            r = r.max((x.p.iter().sum::<f64>() - 1.0).abs());
            r = r.max(x.p.iter().fold(0.0f64, |m, &v| m.max(-v)));
        }
        let out = |v: f64, b: &Interval| (b.lo - v).max(v - b.hi).max(0.0);
        if x.active.strengths {
            for (v, b) in x.strengths.iter().zip(&self.strengths) {
                r = r.max(out(*v, b));
            }
        }
        if x.active.inertia {
            r = r.max(out(x.inertia, &self.inertia));
        }
        if let (true, Some(t), Some(b)) = (x.active.temperature, x.temperature, &self.temperature) {
            r = r.max(out(t, b));
        }
        r
    }
}
