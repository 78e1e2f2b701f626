//! Correlation statistics of readout contributions, weighted query-location
//! histograms and sensor-count sweeps.

use std::io::Write;
use std::ops::Range;
use std::path::Path;

use ndarray::{s, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::dynsys::{Dataset, SystemKind};
use crate::models::{parameter_count, Features, Kernel, Model, ModelKind, ModelSpec};
use crate::reservoir::{Grid, SnapshotStore};
use crate::train::{csv_error, evaluate, predict, split_indices, train, SplitKind, TrainConfig};
use crate::{Error, Result};

/// Rows per forward pass when collecting traces.
const TRACE_CHUNK: usize = 4096;

/// Pearson correlation with population moments; `None` when either series has
/// zero variance or the lengths disagree or are below two.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    pearson_view(ArrayView1::from(a), ArrayView1::from(b))
}

fn pearson_view(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Option<f64> {
    let n = a.len();
    if n < 2 || b.len() != n {
        return None;
    }
    let ma = a.sum() / n as f64;
    let mb = b.sum() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b.iter()) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    let rho = sab / (saa.sqrt() * sbb.sqrt());
    rho.is_finite().then(|| rho.clamp(-1.0, 1.0))
}

/// All `rho(col_i, col_j)` for `i < j`, in row-major pair order.
pub fn pairwise_correlations(columns: ArrayView2<f64>) -> Vec<Option<f64>> {
    let n = columns.ncols();
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            out.push(pearson_view(columns.column(i), columns.column(j)));
        }
    }
    out
}

/// Per-step readout values, weights and their products for one model over
/// the test split, grouped into contiguous per-system blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ContributionTrace {
    pub kind: ModelKind,
    pub values: Array2<f64>,
    pub weights: Array2<f64>,
    pub products: Array2<f64>,
    pub blocks: Vec<(SystemKind, Range<usize>)>,
}

impl ContributionTrace {
    pub fn from_parts(
        kind: ModelKind,
        values: Array2<f64>,
        weights: Array2<f64>,
        blocks: Vec<(SystemKind, Range<usize>)>,
    ) -> Result<Self> {
        if values.dim() != weights.dim() {
            return Err(Error::shape(format!(
                "values {:?} and weights {:?}",
                values.dim(),
                weights.dim()
            )));
        }
        if blocks.iter().any(|(_, r)| r.end > values.nrows() || r.start > r.end) {
            return Err(Error::shape("trace block outside the trace"));
        }
        let products = &values * &weights;
        Ok(ContributionTrace {
            kind,
            values,
            weights,
            products,
            blocks,
        })
    }

    pub fn steps(&self) -> usize {
        self.values.nrows()
    }

    pub fn nodes(&self) -> usize {
        self.values.ncols()
    }

    pub fn quantity(&self, q: Quantity) -> &Array2<f64> {
        match q {
            Quantity::Values => &self.values,
            Quantity::Weights => &self.weights,
            Quantity::Products => &self.products,
        }
    }
}

/// Collects the contribution trace of `model` over the test split.
pub fn contribution_trace(model: &Model, dataset: &Dataset, features: &Features<'_>) -> Result<ContributionTrace> {
    let n = match model {
        Model::Linear(m) => m.readout.weights().len(),
        Model::Aerc(m) => m.readout_points().len(),
        Model::Asaerc(m) => m.readout_points().len(),
        Model::DelayMlp(_) => return Err(Error::config("the delay model has no readout contributions")),
    };
    let mut rows = Vec::new();
    let mut blocks = Vec::new();
    for split in &dataset.splits {
        let start = rows.len();
        rows.extend(split.test.clone().filter(|&i| features.valid[i]));
        if rows.len() > start {
            blocks.push((split.system, start..rows.len()));
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptySplit("test".into()));
    }
    let mut values = Array2::zeros((rows.len(), n));
    let mut weights = Array2::zeros((rows.len(), n));
    for (c, chunk) in rows.chunks(TRACE_CHUNK).enumerate() {
        let contrib = model.contributions(&features.batch(chunk))?;
        let at = c * TRACE_CHUNK;
        values.slice_mut(s![at..at + chunk.len(), ..]).assign(&contrib.values);
        weights.slice_mut(s![at..at + chunk.len(), ..]).assign(&contrib.weights);
    }
    ContributionTrace::from_parts(model.kind(), values, weights, blocks)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Quantity {
    Values,
    Weights,
    Products,
}

impl Quantity {
    pub const ALL: [Quantity; 3] = [Quantity::Values, Quantity::Weights, Quantity::Products];

    pub fn name(self) -> &'static str {
        match self {
            Quantity::Values => "values",
            Quantity::Weights => "weights",
            Quantity::Products => "products",
        }
    }
}

/// Equal-width histogram over `[lo, hi]`; the right edge belongs to the last bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(bins: usize, lo: f64, hi: f64) -> Result<Self> {
        if bins == 0 || !(hi > lo) {
            return Err(Error::config("histogram needs at least one bin and hi > lo"));
        }
        Ok(Histogram {
            lo,
            hi,
            counts: vec![0; bins],
        })
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn bin_of(&self, v: f64) -> Option<usize> {
        if !(v >= self.lo && v <= self.hi) {
            return None;
        }
        let k = ((v - self.lo) / (self.hi - self.lo) * self.bins() as f64) as usize;
        Some(k.min(self.bins() - 1))
    }

    /// Returns false, leaving the counts untouched, for values outside the range.
    pub fn add(&mut self, v: f64) -> bool {
        match self.bin_of(v) {
            Some(k) => {
                self.counts[k] += 1;
                true
            }
            None => false,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn edges(&self, k: usize) -> (f64, f64) {
        let w = (self.hi - self.lo) / self.bins() as f64;
        (self.lo + k as f64 * w, self.lo + (k + 1) as f64 * w)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bin_left", "bin_right", "count"]).map_err(csv_error)?;
        for (k, c) in self.counts.iter().enumerate() {
            let (l, r) = self.edges(k);
            w.write_record([l.to_string(), r.to_string(), c.to_string()])
                .map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationHistogram {
    pub quantity: Quantity,
    pub histogram: Histogram,
    /// Pairs whose correlation is undefined (a zero-variance node).
    pub dropped: usize,
    /// Mean |rho| over the counted pairs; `None` if there are none.
    pub mean_abs: Option<f64>,
}

/// Bookkeeping written next to the histograms so readers know how they were
/// produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationConventions {
    pub covariance: String,
    pub split: String,
    pub pooling: String,
    pub linear_weights: String,
    pub undefined: String,
}

impl Default for CorrelationConventions {
    fn default() -> Self {
        CorrelationConventions {
            covariance: "population (1/T) moments".into(),
            split: "test split only".into(),
            pooling: "rho computed within each system's test block; pairs from all blocks pooled into one histogram".into(),
            linear_weights: "time-constant weights have no defined correlation; weight-weight entries set to 0".into(),
            undefined: "pairs with a zero-variance member are dropped and counted".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub kind: ModelKind,
    pub nodes: usize,
    pub pairs_per_block: usize,
    pub blocks: Vec<SystemKind>,
    pub histograms: Vec<CorrelationHistogram>,
    pub conventions: CorrelationConventions,
}

impl CorrelationReport {
    pub fn histogram(&self, q: Quantity) -> &CorrelationHistogram {
        self.histograms
            .iter()
            .find(|h| h.quantity == q)
            .expect("every quantity is present")
    }
}

/// Pairwise correlation histograms of values, weights and products over `bins`
/// bins of `[-1, 1]`.
pub fn correlation_distributions(trace: &ContributionTrace, bins: usize) -> Result<CorrelationReport> {
    let n = trace.nodes();
    let pairs = n * n.saturating_sub(1) / 2;
    let mut histograms = Vec::new();
    for q in Quantity::ALL {
        let mut histogram = Histogram::new(bins, -1.0, 1.0)?;
        let mut dropped = 0;
        let (mut sum_abs, mut counted) = (0.0, 0usize);
        let constant_weights = q == Quantity::Weights && trace.kind == ModelKind::Linear;
        for (_, range) in &trace.blocks {
            let rhos: Vec<Option<f64>> = if constant_weights {
                vec![Some(0.0); pairs]
            } else {
                pairwise_correlations(trace.quantity(q).slice(s![range.clone(), ..]))
            };
            for rho in rhos {
                match rho {
                    Some(r) => {
                        histogram.add(r);
                        sum_abs += r.abs();
                        counted += 1;
                    }
                    None => dropped += 1,
                }
            }
        }
        histograms.push(CorrelationHistogram {
            quantity: q,
            histogram,
            dropped,
            mean_abs: (counted > 0).then(|| sum_abs / counted as f64),
        });
    }
    Ok(CorrelationReport {
        kind: trace.kind,
        nodes: n,
        pairs_per_block: pairs,
        blocks: trace.blocks.iter().map(|(s, _)| *s).collect(),
        histograms,
        conventions: CorrelationConventions::default(),
    })
}

/// Query mass binned over the domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialHistogram {
    pub lx: f64,
    pub ly: f64,
    pub bins_x: usize,
    pub bins_y: usize,
    /// Row-major over (x bin, y bin).
    pub mass: Vec<f64>,
}

impl SpatialHistogram {
    pub fn new(lx: f64, ly: f64, bins_x: usize, bins_y: usize) -> Result<Self> {
        if bins_x == 0 || bins_y == 0 || !(lx > 0.0 && ly > 0.0) {
            return Err(Error::config("spatial histogram needs bins and a positive domain"));
        }
        Ok(SpatialHistogram {
            lx,
            ly,
            bins_x,
            bins_y,
            mass: vec![0.0; bins_x * bins_y],
        })
    }

    pub fn bin_of(&self, x: f64, y: f64) -> (usize, usize) {
        let bx = ((x / self.lx * self.bins_x as f64) as usize).min(self.bins_x - 1);
        let by = ((y / self.ly * self.bins_y as f64) as usize).min(self.bins_y - 1);
        (bx, by)
    }

    pub fn add(&mut self, x: f64, y: f64, w: f64) {
        let (bx, by) = self.bin_of(x, y);
        self.mass[bx * self.bins_y + by] += w;
    }

    pub fn at(&self, bx: usize, by: usize) -> f64 {
        self.mass[bx * self.bins_y + by]
    }

    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x_left", "x_right", "y_left", "y_right", "mass"])
            .map_err(csv_error)?;
        let (wx, wy) = (self.lx / self.bins_x as f64, self.ly / self.bins_y as f64);
        for bx in 0..self.bins_x {
            for by in 0..self.bins_y {
                w.write_record([
                    (bx as f64 * wx).to_string(),
                    ((bx + 1) as f64 * wx).to_string(),
                    (by as f64 * wy).to_string(),
                    ((by + 1) as f64 * wy).to_string(),
                    self.at(bx, by).to_string(),
                ])
                .map_err(csv_error)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Adaptive query positions over the test split, each weighted by the
/// magnitude of its attention weight.
pub fn query_histogram(
    model: &Model,
    dataset: &Dataset,
    features: &Features<'_>,
    bins_x: usize,
    bins_y: usize,
) -> Result<SpatialHistogram> {
    let Model::Asaerc(m) = model else {
        return Err(Error::config("query histograms need an adaptive-sensing model"));
    };
    let grid = m.grid();
    let mut hist = SpatialHistogram::new(grid.lx, grid.ly, bins_x, bins_y)?;
    let indices = split_indices(dataset, features, SplitKind::Test);
    if indices.is_empty() {
        return Err(Error::EmptySplit("test".into()));
    }
    for chunk in indices.chunks(TRACE_CHUNK) {
        let (queries, weights) = m.queries(&features.batch(chunk))?;
        for (row, qs) in queries.iter().enumerate() {
            for (i, q) in qs.iter().enumerate() {
                hist.add(q[0], q[1], weights[[row, i]].abs());
            }
        }
    }
    Ok(hist)
}

/// Cells and seeds of a sensor-count sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    pub kinds: Vec<ModelKind>,
    pub n_fix: Vec<usize>,
    pub n: Vec<usize>,
    pub seeds: Vec<u64>,
    pub hidden: usize,
    pub margin_cells: f64,
    pub kernel: Kernel,
    pub train: TrainConfig,
    /// Worker threads for independent cells; results do not depend on it.
    pub threads: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        let model = ModelSpec::default();
        SweepSpec {
            kinds: vec![ModelKind::Linear, ModelKind::Aerc, ModelKind::Asaerc],
            n_fix: vec![16, 64, 256],
            n: vec![16, 64, 256],
            seeds: vec![0, 1, 2],
            hidden: model.hidden,
            margin_cells: model.margin_cells,
            kernel: model.kernel,
            train: TrainConfig::default(),
            threads: 1,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.kinds.is_empty() || self.n_fix.is_empty() || self.n.is_empty() || self.seeds.is_empty() {
            return Err(Error::config("sweep needs kinds, sensor counts and seeds"));
        }
        if self.kinds.contains(&ModelKind::DelayMlp) {
            return Err(Error::config("the delay model does not use the reservoir and cannot be swept over sensors"));
        }
        self.train.validate()?;
        for (kind, n_fix, n) in self.cells() {
            self.model_spec(kind, n_fix, n).validate()?;
        }
        Ok(())
    }

    /// Distinct (kind, N_fix, N) cells. The linear readout ignores N, so it
    /// gets one cell per N_fix with N = N_fix.
    pub fn cells(&self) -> Vec<(ModelKind, usize, usize)> {
        let mut cells = Vec::new();
        for &kind in &self.kinds {
            for &nf in &self.n_fix {
                if kind == ModelKind::Linear {
                    cells.push((kind, nf, nf));
                    continue;
                }
                for &n in &self.n {
                    cells.push((kind, nf, n));
                }
            }
        }
        cells.dedup();
        cells
    }

    pub fn model_spec(&self, kind: ModelKind, n_fix: usize, n: usize) -> ModelSpec {
        ModelSpec {
            kind,
            n_fix,
            n,
            hidden: self.hidden,
            margin_cells: self.margin_cells,
            kernel: self.kernel,
            ..ModelSpec::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub kind: ModelKind,
    pub n_fix: usize,
    pub n: usize,
    pub seed: u64,
    pub parameters: usize,
    pub train_mse: Option<f64>,
    pub test_mse: Option<f64>,
    pub per_system: Vec<(SystemKind, f64)>,
    /// Failure message when the cell could not be trained or evaluated.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCellSummary {
    pub kind: ModelKind,
    pub n_fix: usize,
    pub n: usize,
    pub parameters: usize,
    pub seeds: usize,
    pub failures: usize,
    pub mean_test_mse: Option<f64>,
    /// Population standard deviation over successful seeds.
    pub std_test_mse: Option<f64>,
    pub per_system_mean: Vec<(SystemKind, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub summary: Vec<SweepCellSummary>,
}

/// Trains and evaluates every cell for every seed on one shared snapshot
/// store. A failing cell is recorded and the sweep moves on.
pub fn run_sweep(spec: &SweepSpec, dataset: &Dataset, store: &SnapshotStore) -> Result<SweepResult> {
    spec.validate()?;
    let grid = *store.grid();
    let jobs: Vec<(ModelKind, usize, usize, u64)> = spec
        .cells()
        .into_iter()
        .flat_map(|(k, nf, n)| spec.seeds.iter().map(move |&s| (k, nf, n, s)))
        .collect();
    let run = |&(kind, n_fix, n, seed): &(ModelKind, usize, usize, u64)| {
        let parameters = parameter_count(kind, n_fix, n, spec.hidden, 0);
        let outcome = sweep_cell(spec, &grid, dataset, store, kind, n_fix, n, seed);
        match outcome {
            Ok((train_mse, test_mse, per_system)) => SweepRow {
                kind,
                n_fix,
                n,
                seed,
                parameters,
                train_mse: Some(train_mse),
                test_mse: Some(test_mse),
                per_system,
                error: None,
            },
            Err(e) => {
                log::warn!("sweep cell {kind} n_fix={n_fix} n={n} seed={seed} failed: {e}");
                SweepRow {
                    kind,
                    n_fix,
                    n,
                    seed,
                    parameters,
                    train_mse: None,
                    test_mse: None,
                    per_system: Vec::new(),
                    error: Some(e.to_string()),
                }
            }
        }
    };
    let rows: Vec<SweepRow> = if spec.threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(spec.threads)
            .build()
            .map_err(|e| Error::config(format!("thread pool: {e}")))?;
        pool.install(|| jobs.par_iter().map(run).collect())
    } else {
        jobs.iter().map(run).collect()
    };
    let summary = summarize(&rows);
    Ok(SweepResult { rows, summary })
}

#[allow(clippy::too_many_arguments)]
fn sweep_cell(
    spec: &SweepSpec,
    grid: &Grid,
    dataset: &Dataset,
    store: &SnapshotStore,
    kind: ModelKind,
    n_fix: usize,
    n: usize,
    seed: u64,
) -> Result<(f64, f64, Vec<(SystemKind, f64)>)> {
    let model = Model::build(&spec.model_spec(kind, n_fix, n), grid, seed)?;
    let features = model.features(dataset, Some(store))?;
    let config = TrainConfig {
        seed,
        ..spec.train.clone()
    };
    let (model, _) = train(model, dataset, &features, &config)?;
    let train_idx = split_indices(dataset, &features, SplitKind::Train);
    let pred = predict(&model, &features, &train_idx)?;
    let train_mse = train_idx
        .iter()
        .zip(&pred)
        .map(|(&i, p)| (p - dataset.targets[i]).powi(2))
        .sum::<f64>()
        / train_idx.len() as f64;
    let report = evaluate(&model, dataset, &features, SplitKind::Test)?;
    let per_system = report.per_system.iter().map(|s| (s.system, s.mse)).collect();
    Ok((train_mse, report.mse, per_system))
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Mean and spread over seeds for every cell, in first-appearance order.
pub fn summarize(rows: &[SweepRow]) -> Vec<SweepCellSummary> {
    let mut keys: Vec<(ModelKind, usize, usize)> = Vec::new();
    for r in rows {
        if !keys.contains(&(r.kind, r.n_fix, r.n)) {
            keys.push((r.kind, r.n_fix, r.n));
        }
    }
    keys.into_iter()
        .map(|(kind, n_fix, n)| {
            let cell: Vec<&SweepRow> = rows
                .iter()
                .filter(|r| (r.kind, r.n_fix, r.n) == (kind, n_fix, n))
                .collect();
            let ok: Vec<f64> = cell.iter().filter_map(|r| r.test_mse).collect();
            let (mean, std) = if ok.is_empty() {
                (None, None)
            } else {
                let (m, s) = mean_std(&ok);
                (Some(m), Some(s))
            };
            let mut per_system: Vec<(SystemKind, f64, usize)> = Vec::new();
            for r in &cell {
                for &(sys, mse) in &r.per_system {
                    match per_system.iter_mut().find(|p| p.0 == sys) {
                        Some(p) => {
                            p.1 += mse;
                            p.2 += 1;
                        }
                        None => per_system.push((sys, mse, 1)),
                    }
                }
            }
            SweepCellSummary {
                kind,
                n_fix,
                n,
                parameters: cell[0].parameters,
                seeds: cell.len(),
                failures: cell.len() - ok.len(),
                mean_test_mse: mean,
                std_test_mse: std,
                per_system_mean: per_system.into_iter().map(|(s, m, c)| (s, m / c as f64)).collect(),
            }
        })
        .collect()
}

impl SweepResult {
    pub fn summary_for(&self, kind: ModelKind, n_fix: usize, n: usize) -> Option<&SweepCellSummary> {
        self.summary.iter().find(|s| (s.kind, s.n_fix, s.n) == (kind, n_fix, n))
    }

    /// Long format, one row per (cell, seed).
    pub fn write_rows_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["model", "n_fix", "n", "seed", "parameters", "train_mse", "test_mse", "status"])
            .map_err(csv_error)?;
        for r in &self.rows {
            w.write_record([
                r.kind.name().to_string(),
                r.n_fix.to_string(),
                r.n.to_string(),
                r.seed.to_string(),
                r.parameters.to_string(),
                opt(r.train_mse),
                opt(r.test_mse),
                r.error.clone().unwrap_or_else(|| "ok".into()),
            ])
            .map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Long format, one row per (cell, seed, system).
    pub fn write_systems_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["model", "n_fix", "n", "seed", "system", "test_mse"])
            .map_err(csv_error)?;
        for r in &self.rows {
            for (sys, mse) in &r.per_system {
                w.write_record([
                    r.kind.name().to_string(),
                    r.n_fix.to_string(),
                    r.n.to_string(),
                    r.seed.to_string(),
                    sys.name().to_string(),
                    mse.to_string(),
                ])
                .map_err(csv_error)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// One row per cell with mean and spread over seeds.
    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "model",
            "n_fix",
            "n",
            "parameters",
            "seeds",
            "failures",
            "mean_test_mse",
            "std_test_mse",
        ])
        .map_err(csv_error)?;
        for s in &self.summary {
            w.write_record([
                s.kind.name().to_string(),
                s.n_fix.to_string(),
                s.n.to_string(),
                s.parameters.to_string(),
                s.seeds.to_string(),
                s.failures.to_string(),
                opt(s.mean_test_mse),
                opt(s.std_test_mse),
            ])
            .map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;

    #[test]
    fn pearson_examples() {
        let close = |r: Option<f64>, v: f64| (r.unwrap() - v).abs() < 1e-15;
        assert!(close(pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]), 1.0));
        assert!(close(pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), -1.0));
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]), None);
        assert_eq!(pearson(&[1.0], &[1.0]), None);
        assert_eq!(pearson(&[1.0, 2.0], &[1.0, 2.0, 3.0]), None);
    }

    #[test]
    fn pearson_matches_two_pass_oracle() {
        // Independent formula: mean of products of z-scores.
        let a = [0.3, -1.2, 2.5, 0.7, 0.0, 1.1];
        let b = [1.0, 0.4, -0.3, 2.2, -1.5, 0.9];
        let z = |x: &[f64]| {
            let m = x.iter().sum::<f64>() / x.len() as f64;
            let s = (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64).sqrt();
            x.iter().map(|v| (v - m) / s).collect::<Vec<_>>()
        };
        let oracle: f64 = z(&a).iter().zip(z(&b)).map(|(x, y)| x * y).sum::<f64>() / a.len() as f64;
        assert!((pearson(&a, &b).unwrap() - oracle).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn pearson_symmetric_bounded_affine_invariant(
            a in prop::collection::vec(-10.0f64..10.0, 3..40),
            seed in prop::collection::vec(-10.0f64..10.0, 40),
            scale in 0.01f64..100.0,
            shift in -50.0f64..50.0,
        ) {
            let b = &seed[..a.len()];
            if let Some(r) = pearson(&a, b) {
                prop_assert!((-1.0..=1.0).contains(&r));
                prop_assert_eq!(pearson(b, &a), Some(r));
                let a2: Vec<f64> = a.iter().map(|v| scale * v + shift).collect();
                let r2 = pearson(&a2, b).unwrap();
                prop_assert!((r2 - r).abs() < 1e-9, "{} vs {}", r, r2);
            }
        }
    }

    fn trace(kind: ModelKind, values: Array2<f64>, weights: Array2<f64>) -> ContributionTrace {
        let t = values.nrows();
        ContributionTrace::from_parts(kind, values, weights, vec![(SystemKind::Lorenz, 0..t)]).unwrap()
    }

    #[test]
    fn identical_series_give_point_mass_at_one() {
        let col: Vec<f64> = (0..20).map(|t| (t as f64 * 0.7).sin()).collect();
        let values = Array2::from_shape_fn((20, 2), |(t, _)| col[t]);
        let weights = Array2::from_shape_fn((20, 2), |(t, i)| 1.0 + 0.1 * (t * (i + 1)) as f64);
        let report = correlation_distributions(&trace(ModelKind::Aerc, values, weights), 50).unwrap();
        let h = &report.histogram(Quantity::Values).histogram;
        assert_eq!(h.total(), 1);
        assert_eq!(h.counts[49], 1);
    }

    #[test]
    fn linear_weights_are_a_point_mass_at_zero() {
        let values = Array2::from_shape_fn((30, 4), |(t, i)| ((t * (i + 2)) as f64).cos());
        let weights = Array2::from_shape_fn((30, 4), |(_, i)| [0.5, -1.0, 2.0, 0.1][i]);
        let report = correlation_distributions(&trace(ModelKind::Linear, values, weights), 50).unwrap();
        let h = report.histogram(Quantity::Weights);
        assert_eq!(h.histogram.total(), 6);
        let zero_bin = h.histogram.bin_of(0.0).unwrap();
        assert_eq!(h.histogram.counts[zero_bin], 6);
        assert_eq!(h.dropped, 0);
        assert_eq!(h.mean_abs, Some(0.0));
    }

    #[test]
    fn constant_weight_products_flip_sign_with_weight_signs() {
        let values = Array2::from_shape_fn((50, 3), |(t, i)| ((t as f64) * (0.3 + i as f64)).sin() + 0.1 * i as f64);
        let w = [1.5, -0.4, 2.0];
        let weights = Array2::from_shape_fn((50, 3), |(_, i)| w[i]);
        let tr = trace(ModelKind::Linear, values, weights);
        let rv = pairwise_correlations(tr.values.view());
        let rp = pairwise_correlations(tr.products.view());
        let mut k = 0;
        for i in 0..3 {
            for j in i + 1..3 {
                let expect = (w[i] * w[j]).signum() * rv[k].unwrap();
                assert!((rp[k].unwrap() - expect).abs() < 1e-12);
                k += 1;
            }
        }
    }

    #[test]
    fn undefined_pairs_are_dropped_and_counted() {
        let values = Array2::from_shape_fn((10, 3), |(t, i)| if i == 0 { 1.0 } else { (t * i) as f64 });
        let weights = Array2::ones((10, 3));
        let report = correlation_distributions(&trace(ModelKind::Aerc, values, weights), 10).unwrap();
        let v = report.histogram(Quantity::Values);
        assert_eq!(v.dropped, 2);
        assert_eq!(v.histogram.total(), 1);
        // Constant weights in a non-linear model are undefined, not zero.
        assert_eq!(report.histogram(Quantity::Weights).dropped, 3);
    }

    #[test]
    fn blocks_are_correlated_separately_and_pooled() {
        // Within each block the columns are perfectly correlated; across the
        // joined series they would not be.
        let values = Array2::from_shape_fn((20, 2), |(t, i)| {
            let base = t as f64;
            if t < 10 {
                base
            } else if i == 0 {
                base
            } else {
                -base
            }
        });
        let weights = Array2::ones((20, 2));
        let tr = ContributionTrace::from_parts(
            ModelKind::Aerc,
            values,
            weights,
            vec![(SystemKind::Lorenz, 0..10), (SystemKind::Henon, 10..20)],
        )
        .unwrap();
        let h = correlation_distributions(&tr, 4).unwrap();
        let v = &h.histogram(Quantity::Values).histogram;
        assert_eq!(v.counts, vec![1, 0, 0, 1]);
    }

    #[test]
    fn histogram_edges_and_csv() {
        let mut h = Histogram::new(4, -1.0, 1.0).unwrap();
        assert!(h.add(-1.0));
        assert!(h.add(1.0));
        assert!(h.add(0.0));
        assert!(!h.add(1.5));
        assert!(!h.add(f64::NAN));
        assert_eq!(h.counts, vec![1, 0, 1, 1]);
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("bin_left,bin_right,count"));
        assert_eq!(text.lines().nth(1), Some("-1,-0.5,1"));
    }

    #[test]
    fn summary_mean_and_spread() {
        let row = |seed, mse: Option<f64>| SweepRow {
            kind: ModelKind::Aerc,
            n_fix: 4,
            n: 4,
            seed,
            parameters: 10,
            train_mse: mse,
            test_mse: mse,
            per_system: mse.map(|m| vec![(SystemKind::Lorenz, m)]).unwrap_or_default(),
            error: mse.is_none().then(|| "boom".to_string()),
        };
        let s = summarize(&[row(0, Some(1.0)), row(1, Some(3.0)), row(2, None)]);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].mean_test_mse, Some(2.0));
        assert_eq!(s[0].std_test_mse, Some(1.0));
        assert_eq!(s[0].failures, 1);
        assert_eq!(s[0].per_system_mean, vec![(SystemKind::Lorenz, 2.0)]);
    }

    #[test]
    fn linear_cells_ignore_readout_count() {
        let spec = SweepSpec {
            kinds: vec![ModelKind::Linear, ModelKind::Aerc],
            n_fix: vec![16, 64],
            n: vec![16, 64, 256],
            ..SweepSpec::default()
        };
        let cells = spec.cells();
        assert_eq!(cells.iter().filter(|c| c.0 == ModelKind::Linear).count(), 2);
        assert_eq!(cells.iter().filter(|c| c.0 == ModelKind::Aerc).count(), 6);
    }

    mod with_models {
        use super::super::*;
        use crate::dynsys::{build_dataset, generate, SystemSpec};
        use crate::neural::Parameters;
        use crate::reservoir::{Reservoir, ReservoirConfig};

        fn fixture() -> (Dataset, SnapshotStore, Grid) {
            let series: Vec<_> = [SystemKind::Lorenz, SystemKind::Henon]
                .iter()
                .map(|&k| generate(&SystemSpec::standard(k).with_samples(200)).unwrap())
                .collect();
            let data = build_dataset(&series, 0.25).unwrap();
            let grid = Grid::new(16, 16, 1.0, 1.0).unwrap();
            let store = Reservoir::new(grid, ReservoirConfig::standard(&grid))
                .unwrap()
                .run(&data.inputs)
                .unwrap();
            (data, store, grid)
        }

        fn asaerc(grid: &Grid, seed: u64) -> Model {
            let spec = ModelSpec {
                hidden: 8,
                ..ModelSpec::new(ModelKind::Asaerc, 4, 9)
            };
            Model::build(&spec, grid, seed).unwrap()
        }

        #[test]
        fn zero_position_head_puts_all_mass_in_the_centre_bin() {
            let (data, store, grid) = fixture();
            let mut model = asaerc(&grid, 1);
            let Model::Asaerc(m) = &model else { unreachable!() };
            let k = m.position_head().n_params();
            let mut flat = model.flat_params();
            let len = flat.len();
            flat[len - k..].fill(0.0);
            model.set_flat_params(&flat).unwrap();
            let features = model.features(&data, Some(&store)).unwrap();
            let h = query_histogram(&model, &data, &features, 64, 64).unwrap();
            let hot: Vec<usize> = (0..h.mass.len()).filter(|&i| h.mass[i] > 0.0).collect();
            assert_eq!(hot, vec![32 * 64 + 32]);
        }

        #[test]
        fn query_mass_is_conserved_and_avoids_the_margin() {
            let (data, store, grid) = fixture();
            let model = asaerc(&grid, 2);
            let features = model.features(&data, Some(&store)).unwrap();
            let h = query_histogram(&model, &data, &features, 64, 64).unwrap();
            let idx = split_indices(&data, &features, SplitKind::Test);
            let (_, w) = match &model {
                Model::Asaerc(m) => m.queries(&features.batch(&idx)).unwrap(),
                _ => unreachable!(),
            };
            let expect: f64 = w.iter().map(|v| v.abs()).sum();
            assert!((h.total() - expect).abs() <= 1e-12 * expect);
            // Margin is two cells of 1/15; bins narrower than that hug the edge.
            let margin = 2.0 / 15.0;
            for b in 0..64 {
                let right = (b + 1) as f64 / 64.0;
                if right <= margin {
                    for o in 0..64 {
                        assert_eq!(h.at(b, o), 0.0);
                        assert_eq!(h.at(o, b), 0.0);
                        assert_eq!(h.at(63 - b, o), 0.0);
                        assert_eq!(h.at(o, 63 - b), 0.0);
                    }
                }
            }
        }

        #[test]
        fn sweep_is_deterministic_and_counts_match_the_table() {
            let (data, store, _) = fixture();
            let spec = SweepSpec {
                kinds: vec![ModelKind::Linear, ModelKind::Aerc, ModelKind::Asaerc],
                n_fix: vec![4],
                n: vec![4, 9],
                seeds: vec![0, 1],
                hidden: 8,
                train: TrainConfig {
                    batch_size: 64,
                    max_epochs: 2,
                    ..TrainConfig::default()
                },
                ..SweepSpec::default()
            };
            let a = run_sweep(&spec, &data, &store).unwrap();
            let b = run_sweep(&SweepSpec { threads: 2, ..spec.clone() }, &data, &store).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.rows.len(), 5 * 2);
            assert!(a.rows.iter().all(|r| r.error.is_none()));
            for r in &a.rows {
                assert_eq!(r.parameters, parameter_count(r.kind, r.n_fix, r.n, 8, 0));
                assert_eq!(r.per_system.len(), 2);
            }
            assert_eq!(a.summary.len(), 5);
        }

        #[test]
        fn failing_cells_are_recorded() {
            let (data, store, _) = fixture();
            let spec = SweepSpec {
                kinds: vec![ModelKind::Aerc],
                n_fix: vec![4],
                n: vec![4],
                seeds: vec![0],
                hidden: 8,
                // Absurd step size drives the loss to infinity.
                train: TrainConfig {
                    batch_size: 64,
                    max_epochs: 50,
                    lr: 1e150,
                    ..TrainConfig::default()
                },
                ..SweepSpec::default()
            };
            let res = run_sweep(&spec, &data, &store).unwrap();
            assert!(res.rows[0].error.is_some());
            assert_eq!(res.summary[0].failures, 1);
            assert_eq!(res.summary[0].mean_test_mse, None);
        }
    }
}
