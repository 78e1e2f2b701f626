use serde::{Deserialize, Serialize};

use super::systems::{simulate, Trajectory};
use super::SystemSpec;
use crate::{Error, Result};

/// A standardized scalar benchmark series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub system: SystemSpec,
    pub sample_dt: f64,
}

impl Series {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Maps a standardized value back to the system's units.
    pub fn destandardize(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Values with the mean and (population) standard deviation that were removed.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardized {
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

pub fn standardize(values: &[f64]) -> Result<Standardized> {
    if values.len() < 2 {
        return Err(Error::config("standardization needs at least two values"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::config("series contains non-finite values"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if !(std > 0.0) || std <= 1e-300 || std < mean.abs() * 1e-14 {
        return Err(Error::ZeroVariance);
    }
    Ok(Standardized {
        values: values.iter().map(|v| (v - mean) / std).collect(),
        mean,
        std,
    })
}

/// Linearly interpolates the observable at `t_i = i * sample_dt`, `i < n_samples`.
pub fn resample(
    traj: &Trajectory,
    observable: usize,
    n_samples: usize,
    sample_dt: f64,
) -> Result<Vec<f64>> {
    if observable >= traj.dim {
        return Err(Error::config("observable index out of range"));
    }
    if traj.len() < 2 && n_samples > 1 {
        return Err(Error::config("trajectory too short to resample"));
    }
    let t0 = traj.times[0];
    let last = *traj.times.last().unwrap();
    let needed = t0 + (n_samples - 1) as f64 * sample_dt;
    let slack = 1e-9 * (1.0 + last.abs());
    if needed > last + slack {
        return Err(Error::config(format!(
            "trajectory ends at {last}, resampling needs {needed}"
        )));
    }
    let value = |k: usize| traj.data[k * traj.dim + observable];
    let mut out = Vec::with_capacity(n_samples);
    let mut k = 0usize;
    for i in 0..n_samples {
        let t = (t0 + i as f64 * sample_dt).min(last);
        // advance to the segment [times[k], times[k + 1]] containing t
        while k + 2 < traj.len() && traj.times[k + 1] <= t {
            k += 1;
        }
        let (ta, tb) = (traj.times[k], traj.times[k + 1]);
        let f = ((t - ta) / (tb - ta)).clamp(0.0, 1.0);
        out.push((1.0 - f) * value(k) + f * value(k + 1));
    }
    Ok(out)
}

/// Simulates, resamples and standardizes one benchmark system.
pub fn generate(spec: &SystemSpec) -> Result<Series> {
    let traj = simulate(spec)?;
    let sample_dt = spec.sample_dt();
    let raw = resample(&traj, spec.observable_index, spec.n_samples, sample_dt)?;
    let z = standardize(&raw)?;
    Ok(Series {
        values: z.values,
        mean: z.mean,
        std: z.std,
        system: spec.clone(),
        sample_dt,
    })
}
