//! Mini-batch training and evaluation over precomputed features.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::dynsys::{Dataset, SystemKind};
use crate::models::{ridge_fit, Features, Model};
use crate::neural::{AdamConfig, AdamState, Parameters};
use crate::reservoir::SnapshotStore;
use crate::{Error, Result};

/// Rows per chunk when evaluating without gradients.
const EVAL_CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub lr: f64,
    /// Per-epoch learning-rate multiplier.
    pub decay: f64,
    pub seed: u64,
    pub shuffle: bool,
    /// Test-set evaluation period in epochs; zero evaluates only after the
    /// last epoch.
    pub eval_every: usize,
    /// Coupled L2 penalty; zero disables it.
    pub weight_decay: f64,
    /// Return the parameters with the lowest evaluated test MSE instead of
    /// the final ones.
    pub keep_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 1024,
            max_epochs: 500,
            lr: 0.002,
            decay: 0.99,
            seed: 0,
            shuffle: true,
            eval_every: 1,
            weight_decay: 0.0,
            keep_best: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        self.adam().validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            decay: self.decay,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub test_mse: Option<f64>,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    /// Everything except wall-clock time, for reproducibility checks.
    pub fn losses(&self) -> Vec<(usize, f64, Option<f64>, f64)> {
        self.records
            .iter()
            .map(|r| (r.epoch, r.train_mse, r.test_mse, r.lr))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "train_mse", "test_mse", "lr", "seconds"])
            .map_err(csv_error)?;
        for r in &self.records {
            w.write_record([
                r.epoch.to_string(),
                r.train_mse.to_string(),
                r.test_mse.map(|v| v.to_string()).unwrap_or_default(),
                r.lr.to_string(),
                format!("{:.3}", r.seconds),
            ])
            .map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitKind {
    Train,
    Test,
}

impl SplitKind {
    pub fn name(self) -> &'static str {
        match self {
            SplitKind::Train => "train",
            SplitKind::Test => "test",
        }
    }
}

/// Indices of `split` that the model can be fed.
pub fn split_indices(dataset: &Dataset, features: &Features<'_>, split: SplitKind) -> Vec<usize> {
    let all = match split {
        SplitKind::Train => dataset.train_indices(),
        SplitKind::Test => dataset.test_indices(),
    };
    all.into_iter().filter(|&n| features.valid[n]).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemMse {
    pub system: SystemKind,
    pub mse: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mse: f64,
    pub count: usize,
    pub per_system: Vec<SystemMse>,
}

/// Predictions for `indices` in order.
pub fn predict(model: &Model, features: &Features<'_>, indices: &[usize]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(EVAL_CHUNK) {
        out.extend(model.predict(&features.batch(chunk))?);
    }
    Ok(out)
}

/// Mean squared one-step error over a split, overall and per system.
pub fn evaluate(model: &Model, dataset: &Dataset, features: &Features<'_>, split: SplitKind) -> Result<EvalReport> {
    let indices = split_indices(dataset, features, split);
    if indices.is_empty() {
        return Err(Error::EmptySplit(split.name().into()));
    }
    let pred = predict(model, features, &indices)?;
    let mut per_system: Vec<SystemMse> = Vec::new();
    let mut total = 0.0;
    for (&n, p) in indices.iter().zip(&pred) {
        let e = (p - dataset.targets[n]).powi(2);
        total += e;
        let system = dataset.segment_of(n).expect("usable index").system;
        match per_system.iter_mut().find(|s| s.system == system) {
            Some(s) => {
                s.mse += e;
                s.count += 1;
            }
            None => per_system.push(SystemMse {
                system,
                mse: e,
                count: 1,
            }),
        }
    }
    for s in &mut per_system {
        s.mse /= s.count as f64;
    }
    Ok(EvalReport {
        mse: total / indices.len() as f64,
        count: indices.len(),
        per_system,
    })
}

/// Trains `model` with Adam on shuffled mini-batches of the train split.
pub fn train(model: Model, dataset: &Dataset, features: &Features<'_>, config: &TrainConfig) -> Result<(Model, TrainHistory)> {
    train_observed(model, dataset, features, config, &mut |_| {})
}

/// [`train`] with `observer` called on the indices of every gradient batch.
pub fn train_observed(
    mut model: Model,
    dataset: &Dataset,
    features: &Features<'_>,
    config: &TrainConfig,
    observer: &mut dyn FnMut(&[usize]),
) -> Result<(Model, TrainHistory)> {
    config.validate()?;
    if features.len() != dataset.len() {
        return Err(Error::shape(format!(
            "{} feature rows for {} samples",
            features.len(),
            dataset.len()
        )));
    }
    let mut order = split_indices(dataset, features, SplitKind::Train);
    if order.is_empty() {
        return Err(Error::EmptySplit("train".into()));
    }
    let has_test = !split_indices(dataset, features, SplitKind::Test).is_empty();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::new(model.n_params(), config.adam())?;
    let mut grad = vec![0.0; model.n_params()];
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, Model)> = None;
    let start = Instant::now();
    for epoch in 0..config.max_epochs {
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        let mut sse = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            observer(chunk);
            let batch = features.batch(chunk);
            let (pred, cache) = model.forward(&batch)?;
            let scale = 2.0 / chunk.len() as f64;
            let mut batch_sse = 0.0;
            let d: Vec<f64> = pred
                .iter()
                .zip(chunk)
                .map(|(p, &n)| {
                    let e = p - dataset.targets[n];
                    batch_sse += e * e;
                    scale * e
                })
                .collect();
            if !batch_sse.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            sse += batch_sse;
            grad.iter_mut().for_each(|g| *g = 0.0);
            model.backward(&cache, &d, &mut grad)?;
            adam.step(&mut model, &grad, epoch)?;
        }
        let last = epoch + 1 == config.max_epochs;
        let due = if config.eval_every == 0 {
            last
        } else {
            (epoch + 1) % config.eval_every == 0 || last
        };
        let test_mse = if due && has_test {
            Some(evaluate(&model, dataset, features, SplitKind::Test)?.mse)
        } else {
            None
        };
        if config.keep_best {
            if let Some(t) = test_mse {
                if best.as_ref().is_none_or(|(b, _)| t < *b) {
                    best = Some((t, model.clone()));
                }
            }
        }
        let record = EpochRecord {
            epoch,
            train_mse: sse / order.len() as f64,
            test_mse,
            lr: adam.config().lr_at(epoch),
            seconds: start.elapsed().as_secs_f64(),
        };
        log::debug!(
            "epoch {epoch}: train {:.4e} test {:?}",
            record.train_mse,
            record.test_mse
        );
        history.records.push(record);
    }
    match best {
        Some((_, m)) => Ok((m, history)),
        None => Ok((model, history)),
    }
}

/// Builds features from the store and trains; see [`train`].
pub fn train_on_store(
    model: Model,
    dataset: &Dataset,
    store: Option<&SnapshotStore>,
    config: &TrainConfig,
) -> Result<(Model, TrainHistory)> {
    let features = model.features(dataset, store)?;
    train(model, dataset, &features, config)
}

/// Closed-form ridge fit of a linear model on the train split.
pub fn fit_ridge(model: &mut Model, dataset: &Dataset, features: &Features<'_>, lambda: f64) -> Result<()> {
    let Model::Linear(linear) = model else {
        return Err(Error::config("ridge regression applies to the linear readout only"));
    };
    let indices = split_indices(dataset, features, SplitKind::Train);
    if indices.is_empty() {
        return Err(Error::EmptySplit("train".into()));
    }
    let r = features.inputs.select(ndarray::Axis(0), &indices);
    let y: Vec<f64> = indices.iter().map(|&n| dataset.targets[n]).collect();
    linear.readout = ridge_fit(r.view(), &y, lambda)?;
    Ok(())
}
