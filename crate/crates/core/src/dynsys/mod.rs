//! Benchmark chaotic systems and the one-step-ahead dataset built from them.

mod dataset;
pub mod io;
mod lyapunov;
mod series;
mod systems;

use std::collections::BTreeMap;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use dataset::{build_dataset, Dataset, Segment, Split};
pub use lyapunov::{estimate_largest_lyapunov, LyapunovEstimate};
pub use series::{generate, resample, standardize, Series, Standardized};
pub use systems::{
    integrate_flow, integrate_mackey_glass, iterate_map, rk4_step, DiscreteMap, FlowModel,
    Trajectory,
};

/// Number of samples per system after resampling.
pub const DEFAULT_SAMPLES: usize = 7500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum SystemKind {
    Lorenz,
    Rossler,
    VanDerPol,
    Duffing,
    DoublePendulum,
    Logistic,
    Henon,
    MackeyGlass,
}

impl SystemKind {
    /// Canonical concatenation order.
    pub const ALL: [SystemKind; 8] = [
        SystemKind::Lorenz,
        SystemKind::Rossler,
        SystemKind::VanDerPol,
        SystemKind::Duffing,
        SystemKind::DoublePendulum,
        SystemKind::Logistic,
        SystemKind::Henon,
        SystemKind::MackeyGlass,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SystemKind::Lorenz => "lorenz",
            SystemKind::Rossler => "rossler",
            SystemKind::VanDerPol => "van-der-pol",
            SystemKind::Duffing => "duffing",
            SystemKind::DoublePendulum => "double-pendulum",
            SystemKind::Logistic => "logistic",
            SystemKind::Henon => "henon",
            SystemKind::MackeyGlass => "mackey-glass",
        }
    }

    pub fn is_flow(self) -> bool {
        matches!(
            self,
            SystemKind::Lorenz
                | SystemKind::Rossler
                | SystemKind::VanDerPol
                | SystemKind::Duffing
                | SystemKind::DoublePendulum
        )
    }

    pub fn is_map(self) -> bool {
        matches!(self, SystemKind::Logistic | SystemKind::Henon)
    }

    pub fn state_dim(self) -> usize {
        match self {
            SystemKind::Lorenz | SystemKind::Rossler => 3,
            SystemKind::VanDerPol | SystemKind::Duffing | SystemKind::Henon => 2,
            SystemKind::DoublePendulum => 4,
            SystemKind::Logistic | SystemKind::MackeyGlass => 1,
        }
    }

    /// Total simulated time for 7500 samples and the reference largest Lyapunov
    /// exponent, as tabulated for the benchmark suite.
    pub fn reference(self) -> (f64, f64) {
        match self {
            SystemKind::Lorenz => (375.0, 0.905),
            SystemKind::Rossler => (2000.0, 0.071),
            SystemKind::VanDerPol => (1500.0, 0.025),
            SystemKind::Duffing => (825.0, 0.177),
            SystemKind::DoublePendulum => (2000.0, 0.122),
            SystemKind::Logistic => (7500.0, 0.693),
            SystemKind::Henon => (7500.0, 0.419),
            SystemKind::MackeyGlass => (7500.0, 0.006),
        }
    }

    /// Tabulated step size after resampling (two decimals).
    pub fn table_step(self) -> f64 {
        match self {
            SystemKind::Lorenz => 0.05,
            SystemKind::Rossler => 0.27,
            SystemKind::VanDerPol => 0.20,
            SystemKind::Duffing => 0.11,
            SystemKind::DoublePendulum => 0.27,
            SystemKind::Logistic | SystemKind::Henon | SystemKind::MackeyGlass => 1.0,
        }
    }

    fn default_params(self) -> Vec<(&'static str, f64)> {
        match self {
            SystemKind::Lorenz => vec![("sigma", 10.0), ("rho", 28.0), ("beta", 8.0 / 3.0)],
            SystemKind::Rossler => vec![("a", 0.2), ("b", 0.2), ("c", 5.7)],
            SystemKind::VanDerPol => vec![("mu", 5.0)],
            SystemKind::Duffing => vec![
                ("delta", 0.3),
                ("alpha", -1.0),
                ("beta", 1.0),
                ("gamma", 0.5),
                ("omega", 1.2),
            ],
            SystemKind::DoublePendulum => vec![
                ("m1", 1.0),
                ("m2", 1.0),
                ("l1", 1.0),
                ("l2", 1.0),
                ("g", 9.81),
            ],
            SystemKind::Logistic => vec![("r", 4.0)],
            SystemKind::Henon => vec![("a", 1.4), ("b", 0.3)],
            SystemKind::MackeyGlass => {
                vec![("beta", 0.2), ("gamma", 0.1), ("n", 10.0), ("tau", 17.0)]
            }
        }
    }

    fn default_initial_state(self) -> Vec<f64> {
        use std::f64::consts::FRAC_PI_2;
        match self {
            SystemKind::Lorenz | SystemKind::Rossler => vec![1.0, 1.0, 1.0],
            SystemKind::VanDerPol => vec![2.0, 0.0],
            SystemKind::Duffing => vec![0.1, 0.0],
            SystemKind::DoublePendulum => vec![FRAC_PI_2, FRAC_PI_2, 0.0, 0.0],
            SystemKind::Logistic => vec![0.2],
            SystemKind::Henon => vec![0.0, 0.0],
            // constant history level
            SystemKind::MackeyGlass => vec![1.2],
        }
    }
}

impl std::fmt::Display for SystemKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Everything needed to reproduce one benchmark series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub kind: SystemKind,
    pub params: BTreeMap<String, f64>,
    pub initial_state: Vec<f64>,
    /// Coordinate of the state that becomes the scalar series.
    pub observable_index: usize,
    pub total_time: f64,
    pub n_samples: usize,
    /// Internal step: RK4 step for flows, Euler substep for Mackey-Glass, 1 for maps.
    pub integrator_dt: f64,
    /// Extra lead-in, as a fraction of `total_time`, integrated and discarded.
    pub transient_fraction: f64,
}

impl SystemSpec {
    /// Benchmark defaults for `kind` with 7500 samples.
    pub fn standard(kind: SystemKind) -> Self {
        let (total_time, _) = kind.reference();
        let n_samples = DEFAULT_SAMPLES;
        let sample_dt = total_time / n_samples as f64;
        let integrator_dt = match kind {
            k if k.is_flow() => sample_dt / 20.0,
            SystemKind::MackeyGlass => 0.1,
            _ => 1.0,
        };
        SystemSpec {
            kind,
            params: kind
                .default_params()
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            initial_state: kind.default_initial_state(),
            observable_index: 0,
            total_time,
            n_samples,
            integrator_dt,
            transient_fraction: 0.1,
        }
    }

    /// Same sampling step, different length.
    pub fn with_samples(mut self, n_samples: usize) -> Self {
        let sample_dt = self.sample_dt();
        self.n_samples = n_samples;
        self.total_time = sample_dt * n_samples as f64;
        self
    }

    pub fn sample_dt(&self) -> f64 {
        self.total_time / self.n_samples as f64
    }

    pub fn param(&self, name: &str) -> Result<f64> {
        self.params.get(name).copied().ok_or_else(|| {
            Error::config(format!("{}: missing parameter `{name}`", self.kind))
        })
    }

    pub fn validate(&self) -> Result<()> {
        let kind = self.kind;
        if self.n_samples < 2 {
            return Err(Error::config(format!("{kind}: n_samples must exceed 1")));
        }
        if !(self.total_time > 0.0) || !self.total_time.is_finite() {
            return Err(Error::config(format!("{kind}: total_time must be positive")));
        }
        if !kind.is_flow() && (self.total_time - self.n_samples as f64).abs() > 1e-9 {
            return Err(Error::config(format!(
                "{kind}: total_time must equal n_samples (unit sampling step)"
            )));
        }
        if self.initial_state.len() != kind.state_dim() {
            return Err(Error::config(format!(
                "{kind}: initial state has {} entries, expected {}",
                self.initial_state.len(),
                kind.state_dim()
            )));
        }
        if self.observable_index >= kind.state_dim() {
            return Err(Error::config(format!(
                "{kind}: observable index {} out of range",
                self.observable_index
            )));
        }
        if !(self.integrator_dt > 0.0) {
            return Err(Error::config(format!("{kind}: integrator_dt must be positive")));
        }
        if kind.is_flow() && self.integrator_dt > self.sample_dt() / 10.0 * (1.0 + 1e-12) {
            return Err(Error::config(format!(
                "{kind}: integrator_dt {} exceeds a tenth of the sampling step {}",
                self.integrator_dt,
                self.sample_dt()
            )));
        }
        if !(0.0..=10.0).contains(&self.transient_fraction) {
            return Err(Error::config(format!("{kind}: transient_fraction out of range")));
        }
        for (name, _) in kind.default_params() {
            self.param(name)?;
        }
        Ok(())
    }
}
