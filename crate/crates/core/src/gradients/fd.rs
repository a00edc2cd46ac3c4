use serde::{Deserialize, Serialize};

use super::problem::{ParamBlock, ParameterVector, ReconstructionProblem};
use crate::{Error, Result};

/// Default absolute step for amplitudes, populations and kick strengths.
pub const DEFAULT_STEP: f64 = 1e-6;
/// Default step for the moment of inertia, relative to its value.
pub const DEFAULT_INERTIA_STEP: f64 = 1e-4;
/// Default temperature step, relative to its value.
pub const DEFAULT_TEMPERATURE_STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdGradient {
    pub values: Vec<f64>,
    /// Set when a perturbation vanished in rounding for some component.
    pub underflow: bool,
}

/// Step used for `block` at `x` by default.
pub fn default_step(block: ParamBlock, x: &ParameterVector) -> f64 {
    match block {
        ParamBlock::Inertia => DEFAULT_INERTIA_STEP * x.inertia,
        ParamBlock::Temperature => DEFAULT_TEMPERATURE_STEP * x.temperature.unwrap_or(1.0).abs().max(1e-3),
        _ => DEFAULT_STEP,
    }
}

/// Central differences of `f` on the components of `block`. Frozen blocks
/// return zeros.
pub fn central_difference<F>(x: &ParameterVector, block: ParamBlock, step: f64, f: F) -> Result<FdGradient>
where
    F: Fn(&ParameterVector) -> Result<f64>,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::input(format!("finite-difference step must be > 0, got {step}")));
    }
    let base = x.block(block);
    if !x.active.is_active(block) {
        return Ok(FdGradient {
            values: vec![0.0; base.len()],
            underflow: false,
        });
    }
    let mut values = Vec::with_capacity(base.len());
    let mut underflow = false;
    let mut y = x.clone();
    for i in 0..base.len() {
        let mut v = base.clone();
        let up = base[i] + step;
        let dn = base[i] - step;
        if up == base[i] || dn == base[i] {
            underflow = true;
        }
        v[i] = up;
        y.set_block(block, &v);
        let fu = f(&y)?;
        v[i] = dn;
        y.set_block(block, &v);
        let fd = f(&y)?;
        values.push(if up > dn { (fu - fd) / (up - dn) } else { 0.0 });
    }
    Ok(FdGradient { values, underflow })
}

/// Central-difference gradient of the problem objective.
pub fn finite_difference(
    problem: &ReconstructionProblem,
    x: &ParameterVector,
    block: ParamBlock,
    step: f64,
) -> Result<FdGradient> {
    central_difference(x, block, step, |y| problem.objective(y))
}

/// Relative error `|a − b| / max(|a|, |b|, floor)` over a block.
pub fn relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    let scale = analytic
        .iter()
        .chain(numeric)
        .map(|v| v.abs())
        .fold(floor, f64::max);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
        / scale
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradients::ActiveMask;

    fn params(v: Vec<f64>) -> ParameterVector {
        ParameterVector {
            a: vec![v.clone()],
            b: vec![vec![0.0; v.len()]],
            p: vec![1.0],
            strengths: vec![],
            inertia: 1.0,
            temperature: None,
            active: ActiveMask {
                amplitudes: true,
                ..Default::default()
            },
        }
    }

    #[test]
    fn quadratic_is_exact() {
        let x = params(vec![0.5, -1.25, 2.0]);
        let f = |y: &ParameterVector| Ok(y.a[0].iter().enumerate().map(|(i, v)| (i as f64 + 1.0) * v * v).sum());
        let g = central_difference(&x, ParamBlock::Re, 1e-3, f).unwrap();
        let expect = [1.0, -5.0, 12.0];
        for (a, b) in g.values.iter().zip(expect) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(!g.underflow);
    }

    #[test]
    fn frozen_block_returns_zeros() {
        let mut x = params(vec![1.0, 2.0]);
        x.active.amplitudes = false;
        let g = central_difference(&x, ParamBlock::Re, 1e-6, |_| Ok(1.0)).unwrap();
        assert_eq!(g.values, vec![0.0, 0.0]);
    }

    #[test]
    fn lost_step_is_flagged() {
        let x = params(vec![1e20]);
        let g = central_difference(&x, ParamBlock::Re, 1e-6, |y| Ok(y.a[0][0])).unwrap();
        assert!(g.underflow);
    }

    #[test]
    fn rejects_bad_step() {
        let x = params(vec![1.0]);
        assert!(central_difference(&x, ParamBlock::Re, 0.0, |_| Ok(0.0)).is_err());
    }
}
