use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rotor::ObservableKind;
use crate::{Error, Result};

/// Observable values on a time grid (atomic units).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub kind: ObservableKind,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// Standard deviation of the added noise; 0 for clean data.
    pub noise_sigma: f64,
}

impl Trajectory {
    pub fn new(kind: ObservableKind, times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let t = Trajectory {
            kind,
            times,
            values,
            noise_sigma: 0.0,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.len() != self.values.len() {
            return Err(Error::input(format!(
                "trajectory has {} times but {} values",
                self.times.len(),
                self.values.len()
            )));
        }
        validate_grid(&self.times)?;
        if let Some(v) = self.values.iter().find(|v| !v.is_finite()) {
            return Err(Error::input(format!("non-finite trajectory value {v}")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Writes the `t,value` CSV (17 significant digits).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(fs::File::create(path)?);
        writeln!(out, "t,value")?;
        for (t, v) in self.times.iter().zip(&self.values) {
            writeln!(out, "{t:.16e},{v:.16e}")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path, kind: ObservableKind) -> Result<Self> {
        let file = BufReader::new(fs::File::open(path)?);
        let mut lines = file.lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        if header.trim() != "t,value" {
            return Err(Error::input(format!(
                "{}: expected header 't,value', found '{header}'",
                path.display()
            )));
        }
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let parse = |s: Option<&str>| -> Result<f64> {
                s.map(str::trim)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::input(format!("{}: bad row {}", path.display(), n + 2)))
            };
            times.push(parse(parts.next())?);
            values.push(parse(parts.next())?);
        }
        Trajectory::new(kind, times, values)
    }
}

/// Strictly increasing, finite, non-empty grid.
pub fn validate_grid(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(Error::input("empty time grid"));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::input("non-finite time in grid"));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::input("time grid must be strictly increasing"));
    }
    Ok(())
}

/// `k` uniform samples on `[0, span)`.
pub fn uniform_grid(span: f64, k: usize) -> Vec<f64> {
    (0..k).map(|c| span * c as f64 / k as f64).collect()
}

/// JSON sidecar stored next to each trajectory CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySidecar {
    pub observable_kind: ObservableKind,
    pub noise_level: f64,
    pub noise_sigma: f64,
    pub noise_seed: Option<u64>,
    pub j_max: u32,
    pub parity: crate::rotor::Parity,
    pub samples: usize,
    pub generation: serde_json::Value,
}

/// Writes `<stem>.csv` and `<stem>.json`, returning both paths.
pub fn write_with_sidecar(
    traj: &Trajectory,
    sidecar: &TrajectorySidecar,
    dir: &Path,
    stem: &str,
) -> Result<(PathBuf, PathBuf)> {
    let csv = dir.join(format!("{stem}.csv"));
    let json = dir.join(format!("{stem}.json"));
    traj.write_csv(&csv)?;
    fs::write(&json, serde_json::to_string_pretty(sidecar)? + "\n")?;
    Ok((csv, json))
}

pub fn read_sidecar(path: &Path) -> Result<TrajectorySidecar> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Sample standard deviation (n − 1 denominator).
pub fn sample_std(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (ss / (n - 1) as f64).sqrt()
}

/// Adds i.i.d. Gaussian noise with `σ = level · std(values)`.
pub fn add_noise(traj: &Trajectory, level: f64, seed: u64) -> Result<Trajectory> {
    if !(level >= 0.0 && level.is_finite()) {
        return Err(Error::input(format!("noise level must be >= 0, got {level}")));
    }
    let sigma = level * sample_std(&traj.values);
    let mut out = traj.clone();
    out.noise_sigma = sigma;
    if sigma == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::input(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in &mut out.values {
        *v += normal.sample(&mut rng);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(k: usize) -> Trajectory {
        let times = uniform_grid(10.0, k);
        let values = times.iter().map(|t| (0.7 * t).sin()).collect();
        Trajectory::new(ObservableKind::Cos2Theta, times, values).unwrap()
    }

    #[test]
    fn zero_noise_is_identity() {
        let t = sine(50);
        assert_eq!(add_noise(&t, 0.0, 3).unwrap(), t);
    }

    #[test]
    fn constant_signal_gets_no_noise() {
        let t = Trajectory::new(ObservableKind::Cos2Theta, vec![0.0, 1.0, 2.0], vec![0.3; 3]).unwrap();
        let n = add_noise(&t, 0.03, 1).unwrap();
        assert_eq!(n.values, t.values);
        assert_eq!(n.noise_sigma, 0.0);
    }

    #[test]
    fn noise_std_is_relative_to_signal_std() {
        let t = sine(10_000);
        let n = add_noise(&t, 0.03, 11).unwrap();
        let resid: Vec<f64> = n.values.iter().zip(&t.values).map(|(a, b)| a - b).collect();
        let target = 0.03 * sample_std(&t.values);
        let got = sample_std(&resid);
        assert!((got / target - 1.0).abs() < 0.05, "{got} vs {target}");
    }

    #[test]
    fn grid_validation() {
        assert!(validate_grid(&[0.0, 1.0, 1.0]).is_err());
        assert!(validate_grid(&[]).is_err());
        assert!(Trajectory::new(ObservableKind::Cos2Phi, vec![0.0, 1.0], vec![1.0]).is_err());
        assert!(Trajectory::new(ObservableKind::Cos2Phi, vec![0.0], vec![f64::NAN]).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let t = sine(37);
        let path = dir.path().join("x.csv");
        t.write_csv(&path).unwrap();
        let back = Trajectory::read_csv(&path, t.kind).unwrap();
        assert_eq!(back.values, t.values);
        assert_eq!(back.times, t.times);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("t,value\n"));
    }
}
