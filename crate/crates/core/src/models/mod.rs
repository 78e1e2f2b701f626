//! Readout models over the shared reservoir.
//!
//! Every model maps a [`Batch`] to one scalar prediction per row and
//! back-propagates a prediction gradient into a flat parameter gradient in
//! the order fixed by [`Parameters`].

mod attention;
mod checkpoint;
mod delay;
mod layout;
mod linear;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::dynsys::Dataset;
use crate::neural::{Activation, MlpCache, Parameters};
use crate::reservoir::{
    sample_bilinear_interior, FrameView, Grid, GridField, GridValues, Point, SnapshotStore,
};
use crate::{Error, Result};

pub use attention::{AercCache, AercModel, AsaercCache, AsaercModel};
pub use checkpoint::{ModelCheckpoint, MODEL_MAGIC, MODEL_VERSION};
pub use delay::{delay_windows, DelayMlp};
pub use layout::{halton, lattice, measurement_points};
pub use linear::{ridge_fit, LinearReadout};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Linear,
    Aerc,
    Asaerc,
    DelayMlp,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::Linear,
        ModelKind::Aerc,
        ModelKind::Asaerc,
        ModelKind::DelayMlp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Linear => "linear",
            ModelKind::Aerc => "aerc",
            ModelKind::Asaerc => "asaerc",
            ModelKind::DelayMlp => "delay-mlp",
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            ModelKind::Linear => 0,
            ModelKind::Aerc => 1,
            ModelKind::Asaerc => 2,
            ModelKind::DelayMlp => 3,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.tag() == tag)
    }

    /// Whether the model reads the reservoir at all.
    pub fn uses_reservoir(self) -> bool {
        self != ModelKind::DelayMlp
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config(format!("unknown model kind `{s}`")))
    }
}

/// Measurement kernel of the adaptive queries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Kernel {
    Bilinear,
    Gaussian { width: f64 },
}

impl Kernel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Kernel::Bilinear => Ok(()),
            Kernel::Gaussian { width } if width > 0.0 && width.is_finite() => Ok(()),
            Kernel::Gaussian { width } => Err(Error::config(format!("invalid kernel width {width}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Fixed measurement count (attention input and linear readout).
    pub n_fix: usize,
    /// Readout measurement count of the attention models.
    pub n: usize,
    pub hidden: usize,
    /// Query border, in grid cells.
    pub margin_cells: f64,
    pub kernel: Kernel,
    /// Delay length `k` of the delay-embedding MLP.
    pub delay: usize,
    pub delay_activation: Activation,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            kind: ModelKind::Asaerc,
            n_fix: 64,
            n: 64,
            hidden: 128,
            margin_cells: 2.0,
            kernel: Kernel::Bilinear,
            delay: 0,
            delay_activation: Activation::Relu,
        }
    }
}

impl ModelSpec {
    pub fn new(kind: ModelKind, n_fix: usize, n: usize) -> Self {
        ModelSpec {
            kind,
            n_fix,
            n,
            ..ModelSpec::default()
        }
    }

    pub fn delay_mlp(delay: usize, hidden: usize) -> Self {
        ModelSpec {
            kind: ModelKind::DelayMlp,
            delay,
            hidden,
            ..ModelSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::config("hidden width must be positive"));
        }
        if self.kind.uses_reservoir() && self.n_fix == 0 {
            return Err(Error::config("need at least one fixed measurement"));
        }
        if matches!(self.kind, ModelKind::Aerc | ModelKind::Asaerc) && self.n == 0 {
            return Err(Error::config("need at least one readout measurement"));
        }
        self.kernel.validate()
    }

    pub fn parameter_count(&self) -> usize {
        parameter_count(self.kind, self.n_fix, self.n, self.hidden, self.delay)
    }
}

/// Trainable parameter count by formula.
pub fn parameter_count(kind: ModelKind, n_fix: usize, n: usize, hidden: usize, delay: usize) -> usize {
    let aerc = n_fix * hidden + hidden + hidden * n + n;
    match kind {
        ModelKind::Linear => n_fix,
        ModelKind::Aerc => aerc,
        ModelKind::Asaerc => aerc + hidden * 2 * n + 2 * n,
        ModelKind::DelayMlp => (delay + 1) * hidden + hidden + hidden + 1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterRow {
    pub kind: ModelKind,
    pub n_fix: usize,
    pub n: usize,
    pub parameters: usize,
}

/// Parameter counts over the cross product of kinds and sensor counts.
pub fn model_parameter_table(kinds: &[ModelKind], n_fix: &[usize], n: &[usize], hidden: usize) -> Vec<ParameterRow> {
    let mut rows = Vec::new();
    for &kind in kinds.iter().filter(|k| k.uses_reservoir()) {
        for &nf in n_fix {
            for &nn in n {
                rows.push(ParameterRow {
                    kind,
                    n_fix: nf,
                    n: nn,
                    parameters: parameter_count(kind, nf, nn, hidden, 0),
                });
            }
        }
    }
    rows
}

/// A field the models can measure: a stored frame or an in-memory field.
#[derive(Debug, Clone, Copy)]
pub enum FieldRef<'a> {
    Frame(FrameView<'a>),
    Field(&'a GridField),
}

impl GridValues for FieldRef<'_> {
    fn grid(&self) -> &Grid {
        match self {
            FieldRef::Frame(f) => f.grid(),
            FieldRef::Field(f) => f.grid(),
        }
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        match self {
            FieldRef::Frame(f) => f.at(i, j),
            FieldRef::Field(f) => f.at(i, j),
        }
    }
}

/// Model inputs for a set of samples.
///
/// `inputs` holds the fixed measurements (or delay windows), `readout` the
/// precomputed fixed-point readout values when available, and `fields` the
/// adaptive-measurement snapshots.
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    pub inputs: Array2<f64>,
    pub readout: Option<Array2<f64>>,
    pub fields: Vec<FieldRef<'a>>,
}

impl<'a> Batch<'a> {
    pub fn new(inputs: Array2<f64>) -> Self {
        Batch {
            inputs,
            readout: None,
            fields: Vec::new(),
        }
    }

    pub fn with_fields(mut self, fields: Vec<FieldRef<'a>>) -> Self {
        self.fields = fields;
        self
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }
}

/// Per-sample model inputs for a whole dataset, gathered into batches on demand.
#[derive(Debug, Clone)]
pub struct Features<'a> {
    pub inputs: Array2<f64>,
    pub readout: Option<Array2<f64>>,
    pub store: Option<&'a SnapshotStore>,
    pub valid: Vec<bool>,
}

impl<'a> Features<'a> {
    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    pub fn batch(&self, indices: &[usize]) -> Batch<'a> {
        let inputs = self.inputs.select(ndarray::Axis(0), indices);
        let readout = self.readout.as_ref().map(|r| r.select(ndarray::Axis(0), indices));
        let fields = match self.store {
            Some(store) => indices.iter().map(|&n| FieldRef::Frame(store.frame(n))).collect(),
            None => Vec::new(),
        };
        Batch {
            inputs,
            readout,
            fields,
        }
    }
}

fn sample_points<F: GridValues>(field: &F, points: &[Point], out: &mut [f64]) {
    for (o, &p) in out.iter_mut().zip(points) {
        *o = sample_bilinear_interior(field, p).value;
    }
}

fn frame_measurements(store: &SnapshotStore, points: &[Point], fixed: bool) -> Array2<f64> {
    let mut out = Array2::zeros((store.len(), points.len()));
    for (n, mut row) in out.rows_mut().into_iter().enumerate() {
        let frame = if fixed { store.fixed_frame(n) } else { store.frame(n) };
        sample_points(&frame, points, row.as_slice_mut().expect("standard layout"));
    }
    out
}

/// Linear readout over the fixed measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub points: Vec<Point>,
    pub readout: LinearReadout,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Linear(LinearModel),
    Aerc(AercModel),
    Asaerc(AsaercModel),
    DelayMlp(DelayMlp),
}

#[derive(Debug, Clone)]
pub enum ModelCache {
    Linear(Array2<f64>),
    Aerc(AercCache),
    Asaerc(AsaercCache),
    DelayMlp(MlpCache),
}

/// Per-step readout values and the weights applied to them.
#[derive(Debug, Clone, PartialEq)]
pub struct Contributions {
    pub values: Array2<f64>,
    pub weights: Array2<f64>,
}

impl Model {
    /// Builds a freshly initialized model; all randomness comes from `seed`.
    pub fn build(spec: &ModelSpec, grid: &Grid, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(match spec.kind {
            ModelKind::Linear => Model::Linear(LinearModel {
                points: measurement_points(grid, spec.n_fix)?,
                readout: LinearReadout::zeros(spec.n_fix),
            }),
            ModelKind::Aerc => Model::Aerc(AercModel::init(
                measurement_points(grid, spec.n_fix)?,
                measurement_points(grid, spec.n)?,
                spec.hidden,
                &mut rng,
            )?),
            ModelKind::Asaerc => Model::Asaerc(AsaercModel::init(
                grid,
                measurement_points(grid, spec.n_fix)?,
                measurement_points(grid, spec.n)?,
                spec.hidden,
                spec.margin_cells,
                spec.kernel,
                &mut rng,
            )?),
            ModelKind::DelayMlp => Model::DelayMlp(DelayMlp::init(spec.delay, spec.hidden, spec.delay_activation, &mut rng)?),
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Linear(_) => ModelKind::Linear,
            Model::Aerc(_) => ModelKind::Aerc,
            Model::Asaerc(_) => ModelKind::Asaerc,
            Model::DelayMlp(_) => ModelKind::DelayMlp,
        }
    }

    /// Fixed measurement points, empty for the delay model.
    pub fn psi(&self) -> &[Point] {
        match self {
            Model::Linear(m) => &m.points,
            Model::Aerc(m) => m.psi(),
            Model::Asaerc(m) => m.psi(),
            Model::DelayMlp(_) => &[],
        }
    }

    /// Precomputes per-sample inputs for `dataset`. Reservoir models need the
    /// snapshot store of the same input sequence.
    pub fn features<'a>(&self, dataset: &Dataset, store: Option<&'a SnapshotStore>) -> Result<Features<'a>> {
        let n = dataset.len();
        let store = match (self.kind().uses_reservoir(), store) {
            (true, Some(s)) if s.len() == n => Some(s),
            (true, Some(s)) => {
                return Err(Error::shape(format!(
                    "store holds {} snapshots for {n} samples",
                    s.len()
                )))
            }
            (true, None) => return Err(Error::config("reservoir models need a snapshot store")),
            (false, _) => None,
        };
        let usable: Vec<bool> = (0..n).map(|i| dataset.is_usable(i)).collect();
        match self {
            Model::DelayMlp(m) => {
                let bounds: Vec<(usize, usize)> = dataset.segments.iter().map(|s| (s.start, s.end)).collect();
                let (inputs, valid) = delay_windows(&dataset.inputs, &bounds, m.delay());
                let valid = valid.iter().zip(&usable).map(|(a, b)| *a && *b).collect();
                Ok(Features {
                    inputs,
                    readout: None,
                    store: None,
                    valid,
                })
            }
            _ => {
                let store = store.expect("checked above");
                let inputs = frame_measurements(store, self.psi(), true);
                let (readout, store_ref) = match self {
                    Model::Aerc(m) => {
                        let same = !store.has_lead_frames() && m.readout_points() == m.psi();
                        let r = if same {
                            inputs.clone()
                        } else {
                            frame_measurements(store, m.readout_points(), false)
                        };
                        (Some(r), None)
                    }
                    Model::Asaerc(_) => (None, Some(store)),
                    _ => (None, None),
                };
                Ok(Features {
                    inputs,
                    readout,
                    store: store_ref,
                    valid: usable,
                })
            }
        }
    }

    pub fn forward(&self, batch: &Batch<'_>) -> Result<(Array1<f64>, ModelCache)> {
        match self {
            Model::Linear(m) => {
                let pred = m.readout.forward_batch(batch.inputs.view())?;
                Ok((pred, ModelCache::Linear(batch.inputs.clone())))
            }
            Model::Aerc(m) => m.forward(batch).map(|(p, c)| (p, ModelCache::Aerc(c))),
            Model::Asaerc(m) => m.forward(batch).map(|(p, c)| (p, ModelCache::Asaerc(c))),
            Model::DelayMlp(m) => m
                .forward(batch.inputs.view())
                .map(|(p, c)| (p, ModelCache::DelayMlp(c))),
        }
    }

    pub fn predict(&self, batch: &Batch<'_>) -> Result<Array1<f64>> {
        match self {
            Model::Linear(m) => m.readout.forward_batch(batch.inputs.view()),
            Model::DelayMlp(m) => Ok(m.network().predict(batch.inputs.view())?.column(0).to_owned()),
            _ => self.forward(batch).map(|(p, _)| p),
        }
    }

    /// Adds the gradient of `sum_b d_pred[b] * pred[b]` into `grad`.
    pub fn backward(&self, cache: &ModelCache, d_pred: &[f64], grad: &mut [f64]) -> Result<()> {
        if grad.len() != self.n_params() {
            return Err(Error::shape(format!(
                "gradient buffer has {} slots for {} parameters",
                grad.len(),
                self.n_params()
            )));
        }
        match (self, cache) {
            (Model::Linear(m), ModelCache::Linear(r)) => {
                if r.nrows() != d_pred.len() {
                    return Err(Error::shape("prediction gradient does not match the batch"));
                }
                m.readout.backward_batch(r.view(), d_pred, grad);
                Ok(())
            }
            (Model::Aerc(m), ModelCache::Aerc(c)) => m.backward(c, d_pred, grad),
            (Model::Asaerc(m), ModelCache::Asaerc(c)) => m.backward(c, d_pred, grad),
            (Model::DelayMlp(m), ModelCache::DelayMlp(c)) => m.backward(c, d_pred, grad),
            _ => Err(Error::StaleCache),
        }
    }

    /// Readout values and weights per batch row.
    pub fn contributions(&self, batch: &Batch<'_>) -> Result<Contributions> {
        match self {
            Model::Linear(m) => {
                let values = batch.inputs.clone();
                let w = m.readout.weights();
                let weights = Array2::from_shape_fn(values.dim(), |(_, i)| w[i]);
                Ok(Contributions { values, weights })
            }
            Model::Aerc(m) => {
                let (_, c) = m.forward(batch)?;
                Ok(Contributions {
                    values: c.readout().clone(),
                    weights: c.weights().clone(),
                })
            }
            Model::Asaerc(m) => {
                let (_, c) = m.forward(batch)?;
                Ok(Contributions {
                    values: c.values().clone(),
                    weights: c.weights().clone(),
                })
            }
            Model::DelayMlp(_) => Err(Error::config("the delay model has no readout contributions")),
        }
    }
}

impl Parameters for Model {
    fn n_params(&self) -> usize {
        match self {
            Model::Linear(m) => m.readout.n_params(),
            Model::Aerc(m) => m.n_params(),
            Model::Asaerc(m) => m.n_params(),
            Model::DelayMlp(m) => m.n_params(),
        }
    }

    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        match self {
            Model::Linear(m) => m.readout.visit(f),
            Model::Aerc(m) => m.visit(f),
            Model::Asaerc(m) => m.visit(f),
            Model::DelayMlp(m) => m.visit(f),
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        match self {
            Model::Linear(m) => m.readout.visit_mut(f),
            Model::Aerc(m) => m.visit_mut(f),
            Model::Asaerc(m) => m.visit_mut(f),
            Model::DelayMlp(m) => m.visit_mut(f),
        }
    }
}
