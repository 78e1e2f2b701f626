//! Declarative experiment configuration. One JSON file fully determines a run.

use std::path::{Path, PathBuf};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::analysis::SweepSpec;
use crate::dynsys::{SystemKind, SystemSpec, DEFAULT_SAMPLES};
use crate::hashing::{self, Hash};
use crate::models::ModelSpec;
use crate::reservoir::{cfl_max_dt, Grid, Injection, ReservoirConfig};
use crate::train::TrainConfig;
use crate::{Error, Result};

/// A benchmark given by name with default parameters, or in full.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(untagged)]
pub enum SystemChoice {
    Kind(SystemKind),
    Spec(SystemSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub systems: Vec<SystemChoice>,
    /// Samples per system for systems given by name.
    pub n_samples: usize,
    /// Trailing fraction of every system held out for testing.
    pub test_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            systems: SystemKind::ALL.iter().map(|&k| SystemChoice::Kind(k)).collect(),
            n_samples: DEFAULT_SAMPLES,
            test_fraction: 0.2,
        }
    }
}

impl DataConfig {
    /// Resolved specs in canonical system order.
    pub fn specs(&self) -> Result<Vec<SystemSpec>> {
        let mut specs: Vec<SystemSpec> = self
            .systems
            .iter()
            .map(|c| match c {
                SystemChoice::Kind(k) => SystemSpec::standard(*k).with_samples(self.n_samples),
                SystemChoice::Spec(s) => s.clone(),
            })
            .collect();
        specs.sort_by_key(|s| s.kind);
        if specs.windows(2).any(|w| w[0].kind == w[1].kind) {
            return Err(Error::config("each system may appear only once"));
        }
        for s in &specs {
            s.validate()?;
        }
        Ok(specs)
    }

    pub fn validate(&self) -> Result<()> {
        if self.systems.is_empty() {
            return Err(Error::config("at least one system is required"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::config("test_fraction must lie in (0, 1)"));
        }
        self.specs().map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct ReservoirSection {
    pub grid: Grid,
    pub nu: f64,
    /// Substep as a fraction of the CFL bound; must be below 1.
    pub dt_fraction: f64,
    pub substeps_per_sample: usize,
    /// Injection sites; the default diamond when absent.
    pub injections: Option<Vec<Injection>>,
    pub t_offset: usize,
}

impl Default for ReservoirSection {
    fn default() -> Self {
        let grid = Grid::default();
        let standard = ReservoirConfig::standard(&grid);
        ReservoirSection {
            grid,
            nu: standard.nu,
            dt_fraction: 0.8,
            substeps_per_sample: standard.substeps_per_sample,
            injections: None,
            t_offset: standard.t_offset,
        }
    }
}

impl ReservoirSection {
    pub fn resolve(&self) -> Result<ReservoirConfig> {
        self.grid.validate()?;
        if !(self.dt_fraction > 0.0 && self.dt_fraction < 1.0) {
            return Err(Error::config("dt_fraction must lie in (0, 1)"));
        }
        let config = ReservoirConfig {
            nu: self.nu,
            dt: self.dt_fraction * cfl_max_dt(self.nu, self.grid.hx(), self.grid.hy()),
            substeps_per_sample: self.substeps_per_sample,
            injections: match &self.injections {
                Some(list) => list.clone(),
                None => ReservoirConfig::standard(&self.grid).injections,
            },
            t_offset: self.t_offset,
        };
        config.validate(&self.grid)?;
        Ok(config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub correlation_bins: usize,
    pub query_bins: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            correlation_bins: 50,
            query_bins: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Root of every artifact; relative paths resolve against the config file.
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("runs/default") }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Seeds model initialization and shuffling; overrides `train.seed`.
    pub seed: u64,
    pub data: DataConfig,
    pub reservoir: ReservoirSection,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub analysis: AnalysisConfig,
    pub sweep: SweepSpec,
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: ExperimentConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    /// Reads and validates a config; a relative output directory is taken
    /// relative to the file.
    pub fn load(path: &Path) -> Result<Self> {
        let mut config = Self::from_json(&std::fs::read_to_string(path)?)?;
        if config.output.dir.is_relative() {
            if let Some(parent) = path.parent() {
                config.output.dir = parent.join(&config.output.dir);
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.reservoir.resolve()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.analysis.correlation_bins == 0 || self.analysis.query_bins == 0 {
            return Err(Error::config("histograms need at least one bin"));
        }
        self.sweep.validate()
    }

    /// The train section with the top-level seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn hash(&self) -> Hash {
        hashing::hash_json(self, &[])
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config types serialize infallibly")
    }

    /// JSON Schema of the config file.
    pub fn schema() -> serde_json::Value {
        serde_json::to_value(schemars::schema_for!(ExperimentConfig)).expect("schema serializes")
    }

    /// A run small enough for a smoke test: two systems, 500 samples, 16
    /// sensors of each kind and 20 epochs on the default reservoir.
    pub fn smoke() -> Self {
        ExperimentConfig {
            data: DataConfig {
                systems: vec![SystemChoice::Kind(SystemKind::Lorenz), SystemChoice::Kind(SystemKind::Logistic)],
                n_samples: 500,
                ..DataConfig::default()
            },
            model: ModelSpec::new(crate::models::ModelKind::Asaerc, 16, 16),
            train: TrainConfig {
                max_epochs: 20,
                batch_size: 128,
                ..TrainConfig::default()
            },
            sweep: SweepSpec {
                n_fix: vec![16],
                n: vec![16],
                seeds: vec![0],
                train: TrainConfig {
                    max_epochs: 5,
                    batch_size: 128,
                    ..TrainConfig::default()
                },
                ..SweepSpec::default()
            },
            ..ExperimentConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelKind;

    #[test]
    fn defaults_round_trip_through_json() {
        let c = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_json(&c.to_json()).unwrap(), c);
        let s = ExperimentConfig::smoke();
        assert_eq!(ExperimentConfig::from_json(&s.to_json()).unwrap(), s);
    }

    #[test]
    fn empty_object_means_defaults() {
        assert_eq!(ExperimentConfig::from_json("{}").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected_at_every_level() {
        for text in [
            r#"{"bogus": 1}"#,
            r#"{"data": {"systems": ["lorenz"], "extra": true}}"#,
            r#"{"reservoir": {"nuu": 0.1}}"#,
            r#"{"model": {"kind": "aerc", "hiden": 3}}"#,
            r#"{"train": {"lr": 0.1, "momentum": 0.9}}"#,
            r#"{"model": {"kernel": {"type": "gaussian", "width": 0.1, "x": 1}}}"#,
        ] {
            assert!(ExperimentConfig::from_json(text).is_err(), "{text}");
        }
    }

    #[test]
    fn invalid_values_are_rejected() {
        for text in [
            r#"{"data": {"test_fraction": 1.0}}"#,
            r#"{"data": {"systems": []}}"#,
            r#"{"data": {"systems": ["lorenz", "lorenz"]}}"#,
            r#"{"reservoir": {"dt_fraction": 1.5}}"#,
            r#"{"reservoir": {"t_offset": 500}}"#,
            r#"{"train": {"batch_size": 0}}"#,
            r#"{"model": {"hidden": 0}}"#,
        ] {
            assert!(ExperimentConfig::from_json(text).is_err(), "{text}");
        }
    }

    #[test]
    fn systems_by_name_or_in_full() {
        let mut spec = SystemSpec::standard(SystemKind::Henon).with_samples(300);
        spec.params.insert("a".into(), 1.3);
        let text = format!(
            r#"{{"data": {{"systems": ["lorenz", {}], "n_samples": 400}}}}"#,
            serde_json::to_string(&spec).unwrap()
        );
        let c = ExperimentConfig::from_json(&text).unwrap();
        let specs = c.data.specs().unwrap();
        assert_eq!(specs[0].n_samples, 400);
        assert_eq!(specs[1], spec);
    }

    #[test]
    fn reservoir_section_resolves_to_the_standard_config() {
        let section = ReservoirSection::default();
        assert_eq!(section.resolve().unwrap(), ReservoirConfig::standard(&Grid::default()));
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.model.kind = ModelKind::Aerc;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn schema_lists_the_sections() {
        let schema = ExperimentConfig::schema();
        let props = schema["properties"].as_object().unwrap();
        let defaults = serde_json::to_value(ExperimentConfig::default()).unwrap();
        let keys: Vec<&String> = defaults.as_object().unwrap().keys().collect();
        assert_eq!(props.keys().collect::<Vec<_>>().len(), keys.len());
        for k in keys {
            assert!(props.contains_key(k), "{k}");
        }
    }
}
