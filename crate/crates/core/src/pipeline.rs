//! Staged experiment runs with content-hash caching.
//!
//! Each stage derives a key from its config subsection and the keys of its
//! inputs, embeds the key in every artifact it writes, and skips work when
//! the artifact on disk already carries the expected key.
//!
//! ```text
//! data -> reservoir -> train -> evaluate -> analyze
//!                   \-> sweep
//! ```

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    contribution_trace, correlation_distributions, query_histogram, run_sweep, CorrelationReport, Quantity,
    SpatialHistogram, SweepResult,
};
use crate::config::ExperimentConfig;
use crate::dynsys::io::{read_data, write_data};
use crate::dynsys::{build_dataset, generate, Dataset, Series};
use crate::hashing::{self, Hash};
use crate::models::{Model, ModelCheckpoint, ModelKind, ModelSpec};
use crate::reservoir::{Reservoir, SnapshotStore};
use crate::train::{evaluate, train, EvalReport, SplitKind, TrainConfig, TrainHistory};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Config,
    Data,
    Reservoir,
    Train,
    Evaluate,
    Analyze,
    Sweep,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Data => "data",
            Stage::Reservoir => "reservoir",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::Analyze => "analyze",
            Stage::Sweep => "sweep",
        }
    }

    /// Process exit code for a failure in this stage. 1 is left for errors
    /// outside any stage and 2 for command-line usage errors.
    pub fn exit_code(self) -> i32 {
        match self {
            Stage::Config => 3,
            Stage::Data => 4,
            Stage::Reservoir => 5,
            Stage::Train => 6,
            Stage::Evaluate => 7,
            Stage::Analyze => 8,
            Stage::Sweep => 9,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("stage `{stage}` failed: {source}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

pub type StageResult<T> = std::result::Result<T, StageError>;

pub trait InStage<T> {
    fn in_stage(self, stage: Stage) -> StageResult<T>;
}

impl<T> InStage<T> for Result<T> {
    fn in_stage(self, stage: Stage) -> StageResult<T> {
        self.map_err(|source| StageError { stage, source })
    }
}

/// Artifact locations under one output directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunLayout { root: root.into() }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn data_manifest(&self) -> PathBuf {
        self.data_dir().join("manifest.json")
    }

    pub fn store(&self) -> PathBuf {
        self.root.join("reservoir").join("snapshots.asrc")
    }

    pub fn model_dir(&self, kind: ModelKind) -> PathBuf {
        self.root.join("models").join(kind.name())
    }

    pub fn analysis_dir(&self, kind: ModelKind) -> PathBuf {
        self.root.join("analysis").join(kind.name())
    }

    pub fn sweep_dir(&self) -> PathBuf {
        self.root.join("sweep")
    }

    pub fn run_manifest(&self) -> PathBuf {
        self.root.join("run_manifest.json")
    }
}

/// File names inside a model directory.
pub const CHECKPOINT_FILE: &str = "model.asmd";
pub const HISTORY_FILE: &str = "history.csv";
pub const EVALUATION_FILE: &str = "evaluation.json";

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

/// Key of the data stage.
pub fn data_key(config: &ExperimentConfig) -> Result<Hash> {
    let specs = config.data.specs()?;
    Ok(hashing::hash_json(&("data", &specs, config.data.test_fraction), &[]))
}

/// Key of the train stage for `spec`, chained onto the store (or, for models
/// that do not read the reservoir, the data) key.
pub fn model_key(spec: &ModelSpec, train: &TrainConfig, input: &Hash) -> Hash {
    hashing::hash_json(&("train", spec, train), &[input])
}

/// Generated or cached benchmark data.
#[derive(Debug, Clone)]
pub struct DataOutcome {
    pub series: Vec<Series>,
    pub dataset: Dataset,
    pub key: Hash,
    pub cache_hit: bool,
}

/// Generates every configured system (in parallel; each is deterministic)
/// unless `dir` already holds data under the same key.
pub fn gen_data(config: &ExperimentConfig, dir: &Path, force: bool) -> Result<DataOutcome> {
    let key = data_key(config)?;
    let manifest = dir.join("manifest.json");
    if !force && manifest.exists() {
        match read_data(&manifest) {
            Ok((m, series)) if m.config_hash == hashing::to_hex(&key) => {
                let dataset = build_dataset(&series, m.test_fraction)?;
                return Ok(DataOutcome {
                    series,
                    dataset,
                    key,
                    cache_hit: true,
                });
            }
            Ok(_) => log::info!("data in {} is stale; regenerating", dir.display()),
            Err(e) => log::warn!("data in {} is unreadable ({e}); regenerating", dir.display()),
        }
    }
    let specs = config.data.specs()?;
    let series = specs.par_iter().map(generate).collect::<Result<Vec<_>>>()?;
    write_data(dir, &series, config.seed, config.data.test_fraction, &key)?;
    let dataset = build_dataset(&series, config.data.test_fraction)?;
    Ok(DataOutcome {
        series,
        dataset,
        key,
        cache_hit: false,
    })
}

/// Reads a data directory written by [`gen_data`].
pub fn load_data(manifest: &Path) -> Result<DataOutcome> {
    let (m, series) = read_data(manifest)?;
    let key = m.config_hash()?;
    let dataset = build_dataset(&series, m.test_fraction)?;
    Ok(DataOutcome {
        series,
        dataset,
        key,
        cache_hit: true,
    })
}

/// Runs the reservoir over the dataset unless `path` already holds snapshots
/// with the same content hash.
pub fn run_reservoir(
    config: &ExperimentConfig,
    dataset: &Dataset,
    path: &Path,
    force: bool,
) -> Result<(SnapshotStore, bool)> {
    let reservoir = Reservoir::new(config.reservoir.grid, config.reservoir.resolve()?)?;
    let expected = reservoir.content_hash(&dataset.inputs);
    if !force && path.exists() {
        match SnapshotStore::peek_hash(path) {
            Ok(h) if h == expected => return Ok((SnapshotStore::load(path, Some(&expected))?, true)),
            Ok(_) => log::info!("snapshots in {} are stale; rerunning", path.display()),
            Err(e) => log::warn!("snapshots in {} are unreadable ({e}); rerunning", path.display()),
        }
    }
    let store = reservoir.run(&dataset.inputs)?;
    ensure_parent(path)?;
    store.persist(path)?;
    Ok((store, false))
}

/// The hash a model trained on these inputs must carry.
pub fn input_hash(kind: ModelKind, data_key: &Hash, store: Option<&SnapshotStore>) -> Result<Hash> {
    if kind.uses_reservoir() {
        store
            .map(|s| *s.hash())
            .ok_or_else(|| Error::config("reservoir models need a snapshot store"))
    } else {
        Ok(*data_key)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: Option<TrainHistory>,
    pub key: Hash,
    pub cache_hit: bool,
}

/// Trains `spec` into `checkpoint` (with `history.csv` beside it) unless the
/// checkpoint already carries the expected key.
pub fn train_model(
    spec: &ModelSpec,
    train_config: &TrainConfig,
    dataset: &Dataset,
    store: Option<&SnapshotStore>,
    input: &Hash,
    checkpoint: &Path,
    force: bool,
) -> Result<TrainOutcome> {
    let key = model_key(spec, train_config, input);
    let history_path = checkpoint.with_file_name(HISTORY_FILE);
    if !force && checkpoint.exists() && history_path.exists() {
        match ModelCheckpoint::load(checkpoint) {
            Ok(ck) if ck.config_hash == Some(key) => {
                return Ok(TrainOutcome {
                    model: ck.model,
                    history: None,
                    key,
                    cache_hit: true,
                })
            }
            Ok(_) => log::info!("checkpoint {} is stale; retraining", checkpoint.display()),
            Err(e) => log::warn!("checkpoint {} is unreadable ({e}); retraining", checkpoint.display()),
        }
    }
    let model = Model::build(spec, &grid_of(spec, store)?, train_config.seed)?;
    let features = model.features(dataset, store)?;
    let (model, history) = train(model, dataset, &features, train_config)?;
    ensure_parent(checkpoint)?;
    history.save_csv(&history_path)?;
    ModelCheckpoint {
        model: model.clone(),
        seed: train_config.seed,
        epoch: history.len() as u32,
        config_hash: Some(key),
        input_hash: Some(*input),
    }
    .save(checkpoint)?;
    Ok(TrainOutcome {
        model,
        history: Some(history),
        key,
        cache_hit: false,
    })
}

fn grid_of(spec: &ModelSpec, store: Option<&SnapshotStore>) -> Result<crate::reservoir::Grid> {
    match (spec.kind.uses_reservoir(), store) {
        (true, Some(s)) => Ok(*s.grid()),
        (true, None) => Err(Error::config("reservoir models need a snapshot store")),
        (false, _) => Ok(crate::reservoir::Grid::default()),
    }
}

/// Loads a checkpoint and checks it was trained on `input`.
pub fn load_model(path: &Path, input: &Hash) -> Result<ModelCheckpoint> {
    let ck = ModelCheckpoint::load(path)?;
    match ck.input_hash {
        Some(h) if h == *input => Ok(ck),
        Some(h) => Err(Error::HashMismatch {
            path: path.to_path_buf(),
            expected: hashing::to_hex(input),
            found: hashing::to_hex(&h),
        }),
        None => Err(Error::format(path, "checkpoint does not record its training inputs")),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub config_hash: String,
    pub model: ModelKind,
    pub parameters: usize,
    pub train: EvalReport,
    pub test: EvalReport,
}

pub fn evaluate_model(model: &Model, dataset: &Dataset, store: Option<&SnapshotStore>, key: &Hash) -> Result<Evaluation> {
    let features = model.features(dataset, store)?;
    Ok(Evaluation {
        config_hash: hashing::to_hex(key),
        model: model.kind(),
        parameters: crate::neural::Parameters::n_params(model),
        train: evaluate(model, dataset, &features, SplitKind::Train)?,
        test: evaluate(model, dataset, &features, SplitKind::Test)?,
    })
}

fn cached<T: for<'de> Deserialize<'de>>(path: &Path, key: &str, get: impl Fn(&T) -> &str, force: bool) -> Option<T> {
    if force || !path.exists() {
        return None;
    }
    match read_json::<T>(path) {
        Ok(v) if get(&v) == key => Some(v),
        _ => None,
    }
}

/// JSON companion of the correlation histograms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationArtifact {
    pub config_hash: String,
    pub report: CorrelationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryArtifact {
    pub config_hash: String,
    pub total_mass: f64,
    pub bins_x: usize,
    pub bins_y: usize,
    pub weighting: String,
}

/// Writes `correlations_<quantity>.csv` and `correlations.json` into `dir`.
pub fn write_correlations(dir: &Path, report: &CorrelationReport, key: &Hash) -> Result<()> {
    fs::create_dir_all(dir)?;
    for h in &report.histograms {
        h.histogram
            .save_csv(&dir.join(format!("correlations_{}.csv", h.quantity.name())))?;
    }
    write_json(
        &dir.join("correlations.json"),
        &CorrelationArtifact {
            config_hash: hashing::to_hex(key),
            report: report.clone(),
        },
    )
}

/// Writes `queries.csv` and `queries.json` into `dir`.
pub fn write_queries(dir: &Path, hist: &SpatialHistogram, key: &Hash) -> Result<()> {
    fs::create_dir_all(dir)?;
    hist.save_csv(&dir.join("queries.csv"))?;
    write_json(
        &dir.join("queries.json"),
        &QueryArtifact {
            config_hash: hashing::to_hex(key),
            total_mass: hist.total(),
            bins_x: hist.bins_x,
            bins_y: hist.bins_y,
            weighting: "each query weighted by |attention weight|, test split".into(),
        },
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepArtifact {
    pub config_hash: String,
    pub result: SweepResult,
}

/// Writes `rows.csv`, `systems.csv`, `summary.csv` and `sweep.json` into `dir`.
pub fn write_sweep(dir: &Path, result: &SweepResult, key: &Hash) -> Result<()> {
    fs::create_dir_all(dir)?;
    result.write_rows_csv(fs::File::create(dir.join("rows.csv"))?)?;
    result.write_systems_csv(fs::File::create(dir.join("systems.csv"))?)?;
    result.write_summary_csv(fs::File::create(dir.join("summary.csv"))?)?;
    write_json(
        &dir.join("sweep.json"),
        &SweepArtifact {
            config_hash: hashing::to_hex(key),
            result: result.clone(),
        },
    )
}

pub fn sweep_key(config: &ExperimentConfig, store_hash: &Hash) -> Hash {
    hashing::hash_json(&("sweep", &config.sweep), &[store_hash])
}

/// Runs the sweep of `config` unless `dir` already holds one under the same key.
pub fn sweep(
    config: &ExperimentConfig,
    dataset: &Dataset,
    store: &SnapshotStore,
    dir: &Path,
    force: bool,
) -> Result<(SweepResult, bool)> {
    let key = sweep_key(config, store.hash());
    let hex = hashing::to_hex(&key);
    if let Some(a) = cached::<SweepArtifact>(&dir.join("sweep.json"), &hex, |a| &a.config_hash, force) {
        return Ok((a.result, true));
    }
    let result = run_sweep(&config.sweep, dataset, store)?;
    write_sweep(dir, &result, &key)?;
    Ok((result, false))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub key: String,
    pub cache_hit: bool,
    pub seconds: f64,
    pub outputs: Vec<PathBuf>,
}

/// Everything needed to tell what produced a run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub seed: u64,
    pub threads: usize,
    pub started_unix: u64,
    pub stages: Vec<StageRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub force: bool,
    pub threads: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { force: false, threads: 1 }
    }
}

struct Recorder {
    stages: Vec<StageRecord>,
}

impl Recorder {
    fn run<T>(
        &mut self,
        stage: Stage,
        f: impl FnOnce() -> Result<(T, Hash, bool, Vec<PathBuf>)>,
    ) -> StageResult<T> {
        let start = Instant::now();
        let (value, key, cache_hit, outputs) = f().in_stage(stage)?;
        let seconds = start.elapsed().as_secs_f64();
        log::info!(
            "{stage}: {} in {seconds:.2} s ({})",
            if cache_hit { "cached" } else { "done" },
            hashing::short_hex(&key)
        );
        self.stages.push(StageRecord {
            stage,
            key: hashing::to_hex(&key),
            cache_hit,
            seconds,
            outputs,
        });
        Ok(value)
    }
}

/// Runs data -> reservoir -> train -> evaluate -> analyze for the configured
/// model, reusing every artifact whose key is unchanged, and writes the run
/// manifest.
pub fn run_pipeline(config: &ExperimentConfig, options: RunOptions) -> StageResult<RunManifest> {
    config.validate().in_stage(Stage::Config)?;
    let layout = RunLayout::new(&config.output.dir);
    let started_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let mut rec = Recorder { stages: Vec::new() };
    let force = options.force;

    let data = rec.run(Stage::Data, || {
        let out = gen_data(config, &layout.data_dir(), force)?;
        let (key, hit) = (out.key, out.cache_hit);
        Ok((out, key, hit, vec![layout.data_manifest()]))
    })?;

    let spec = &config.model;
    let store = if spec.kind.uses_reservoir() {
        Some(rec.run(Stage::Reservoir, || {
            let (store, hit) = run_reservoir(config, &data.dataset, &layout.store(), force)?;
            let key = *store.hash();
            Ok((store, key, hit, vec![layout.store()]))
        })?)
    } else {
        None
    };

    let input = input_hash(spec.kind, &data.key, store.as_ref()).in_stage(Stage::Train)?;
    let model_dir = layout.model_dir(spec.kind);
    let trained = rec.run(Stage::Train, || {
        let out = train_model(
            spec,
            &config.train_config(),
            &data.dataset,
            store.as_ref(),
            &input,
            &model_dir.join(CHECKPOINT_FILE),
            force,
        )?;
        let (key, hit) = (out.key, out.cache_hit);
        Ok((out, key, hit, vec![model_dir.join(CHECKPOINT_FILE), model_dir.join(HISTORY_FILE)]))
    })?;

    rec.run(Stage::Evaluate, || {
        let key = hashing::hash_json(&"evaluate", &[&trained.key]);
        let path = model_dir.join(EVALUATION_FILE);
        let hex = hashing::to_hex(&key);
        if let Some(e) = cached::<Evaluation>(&path, &hex, |e| &e.config_hash, force) {
            return Ok((e, key, true, vec![path]));
        }
        let e = evaluate_model(&trained.model, &data.dataset, store.as_ref(), &key)?;
        write_json(&path, &e)?;
        Ok((e, key, false, vec![path]))
    })?;

    if spec.kind.uses_reservoir() {
        rec.run(Stage::Analyze, || {
            let key = hashing::hash_json(&("analyze", &config.analysis), &[&trained.key]);
            let hex = hashing::to_hex(&key);
            let dir = layout.analysis_dir(spec.kind);
            let mut outputs = vec![dir.join("correlations.json")];
            outputs.extend(Quantity::ALL.iter().map(|q| dir.join(format!("correlations_{}.csv", q.name()))));
            if spec.kind == ModelKind::Asaerc {
                outputs.push(dir.join("queries.json"));
                outputs.push(dir.join("queries.csv"));
            }
            let corr_hit =
                cached::<CorrelationArtifact>(&dir.join("correlations.json"), &hex, |a| &a.config_hash, force).is_some();
            let query_hit = spec.kind != ModelKind::Asaerc
                || cached::<QueryArtifact>(&dir.join("queries.json"), &hex, |a| &a.config_hash, force).is_some();
            if corr_hit && query_hit {
                return Ok(((), key, true, outputs));
            }
            let features = trained.model.features(&data.dataset, store.as_ref())?;
            let trace = contribution_trace(&trained.model, &data.dataset, &features)?;
            let report = correlation_distributions(&trace, config.analysis.correlation_bins)?;
            write_correlations(&dir, &report, &key)?;
            if spec.kind == ModelKind::Asaerc {
                let bins = config.analysis.query_bins;
                let hist = query_histogram(&trained.model, &data.dataset, &features, bins, bins)?;
                write_queries(&dir, &hist, &key)?;
            }
            Ok(((), key, false, outputs))
        })?;
    }

    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash: hashing::to_hex(&config.hash()),
        config: config.clone(),
        seed: config.seed,
        threads: options.threads,
        started_unix,
        stages: rec.stages,
    };
    write_json(&layout.run_manifest(), &manifest).in_stage(Stage::Analyze)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;

    fn tiny(dir: &Path) -> ExperimentConfig {
        let mut c = ExperimentConfig::smoke();
        c.data.n_samples = 120;
        c.reservoir.grid = crate::reservoir::Grid::new(12, 12, 1.0, 1.0).unwrap();
        c.reservoir.substeps_per_sample = 20;
        c.model = ModelSpec {
            hidden: 8,
            ..ModelSpec::new(ModelKind::Asaerc, 4, 4)
        };
        c.train.max_epochs = 2;
        c.train.batch_size = 32;
        c.output.dir = dir.to_path_buf();
        c
    }

    fn hits(m: &RunManifest) -> Vec<(Stage, bool)> {
        m.stages.iter().map(|s| (s.stage, s.cache_hit)).collect()
    }

    #[test]
    fn rerun_hits_every_cache() {
        let dir = tempfile::tempdir().unwrap();
        let c = tiny(dir.path());
        let first = run_pipeline(&c, RunOptions::default()).unwrap();
        assert!(first.stages.iter().all(|s| !s.cache_hit));
        assert_eq!(first.stages.len(), 5);
        let second = run_pipeline(&c, RunOptions::default()).unwrap();
        assert!(second.stages.iter().all(|s| s.cache_hit), "{:?}", hits(&second));
        let keys = |m: &RunManifest| m.stages.iter().map(|s| s.key.clone()).collect::<Vec<_>>();
        assert_eq!(keys(&first), keys(&second));
        let forced = run_pipeline(&c, RunOptions { force: true, threads: 1 }).unwrap();
        assert!(forced.stages.iter().all(|s| !s.cache_hit));
    }

    #[test]
    fn changing_nu_reruns_reservoir_and_downstream_only() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = tiny(dir.path());
        run_pipeline(&c, RunOptions::default()).unwrap();
        c.reservoir.nu *= 2.0;
        let m = run_pipeline(&c, RunOptions::default()).unwrap();
        assert_eq!(
            hits(&m),
            vec![
                (Stage::Data, true),
                (Stage::Reservoir, false),
                (Stage::Train, false),
                (Stage::Evaluate, false),
                (Stage::Analyze, false),
            ]
        );
    }

    #[test]
    fn changing_only_training_keeps_the_reservoir() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = tiny(dir.path());
        run_pipeline(&c, RunOptions::default()).unwrap();
        c.seed = 9;
        let m = run_pipeline(&c, RunOptions::default()).unwrap();
        assert_eq!(&hits(&m)[..3], &[(Stage::Data, true), (Stage::Reservoir, true), (Stage::Train, false)]);
    }

    #[test]
    fn model_trained_elsewhere_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let c = tiny(dir.path());
        run_pipeline(&c, RunOptions::default()).unwrap();
        let layout = RunLayout::new(dir.path());
        let path = layout.model_dir(ModelKind::Asaerc).join(CHECKPOINT_FILE);
        let store_hash = SnapshotStore::peek_hash(&layout.store()).unwrap();
        assert!(load_model(&path, &store_hash).is_ok());
        assert!(matches!(load_model(&path, &[0; 32]), Err(Error::HashMismatch { .. })));
    }

    #[test]
    fn delay_model_skips_the_reservoir() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = tiny(dir.path());
        c.model = ModelSpec::delay_mlp(2, 8);
        let m = run_pipeline(&c, RunOptions::default()).unwrap();
        let stages: Vec<Stage> = m.stages.iter().map(|s| s.stage).collect();
        assert_eq!(stages, vec![Stage::Data, Stage::Train, Stage::Evaluate]);
        assert!(!RunLayout::new(dir.path()).store().exists());
    }

    #[test]
    fn failures_name_their_stage() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = tiny(dir.path());
        c.train.lr = -1.0;
        let err = run_pipeline(&c, RunOptions::default()).unwrap_err();
        assert_eq!(err.stage, Stage::Config);
        assert_eq!(err.stage.exit_code(), 3);
        let mut c = tiny(dir.path());
        c.train.lr = 1e200;
        c.train.max_epochs = 30;
        let err = run_pipeline(&c, RunOptions::default()).unwrap_err();
        assert_eq!(err.stage, Stage::Train);
        assert!(err.to_string().contains("train"));
    }

    #[test]
    fn exit_codes_are_distinct() {
        let stages = [
            Stage::Config,
            Stage::Data,
            Stage::Reservoir,
            Stage::Train,
            Stage::Evaluate,
            Stage::Analyze,
            Stage::Sweep,
        ];
        let mut codes: Vec<i32> = stages.iter().map(|s| s.exit_code()).collect();
        codes.sort();
        codes.dedup();
        assert_eq!(codes.len(), stages.len());
        assert!(codes.iter().all(|&c| c > 2));
    }

    #[test]
    fn corrupted_artifact_forces_regeneration() {
        let dir = tempfile::tempdir().unwrap();
        let c = tiny(dir.path());
        run_pipeline(&c, RunOptions::default()).unwrap();
        let layout = RunLayout::new(dir.path());
        fs::write(layout.store(), b"garbage").unwrap();
        let m = run_pipeline(&c, RunOptions::default()).unwrap();
        assert_eq!(hits(&m)[1], (Stage::Reservoir, false));
        assert_eq!(hits(&m)[2], (Stage::Train, true));
    }
}
