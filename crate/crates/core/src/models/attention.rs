//! Attention readouts: state-dependent weights (AERC) and, additionally,
//! state-dependent measurement positions (ASAERC).

use std::borrow::Cow;

use ndarray::{Array1, Array2};
use rand::Rng;

use super::linear::dot;
use super::{Batch, FieldRef, Kernel};
use crate::neural::{sigmoid, Activation, Mlp, MlpCache, Parameters};
use crate::reservoir::{sample_bilinear_interior, sample_gaussian_kernel, Grid, Point, PointSample};
use crate::{Error, Result};

fn check_rows(name: &str, rows: usize, batch: usize) -> Result<()> {
    if rows != batch {
        return Err(Error::shape(format!("{name} has {rows} rows for a batch of {batch}")));
    }
    Ok(())
}

/// Readout values at fixed points, taken from the batch when precomputed.
fn readout_values(batch: &Batch<'_>, points: &[Point]) -> Result<Array2<f64>> {
    let b = batch.len();
    if let Some(r) = &batch.readout {
        check_rows("readout block", r.nrows(), b)?;
        if r.ncols() != points.len() {
            return Err(Error::shape(format!(
                "readout block has {} columns for {} points",
                r.ncols(),
                points.len()
            )));
        }
        return Ok(r.clone());
    }
    check_rows("field list", batch.fields.len(), b)?;
    let mut out = Array2::zeros((b, points.len()));
    for (row, field) in batch.fields.iter().enumerate() {
        for (i, &p) in points.iter().enumerate() {
            out[[row, i]] = sample_bilinear_interior(field, p).value;
        }
    }
    Ok(out)
}

/// Row-by-row dot products. Rows need not be contiguous (a single-column
/// matmul result may come back column-major); the summation order is the
/// same either way.
fn rowwise_dot(w: &Array2<f64>, r: &Array2<f64>) -> Array1<f64> {
    fn slice(row: ndarray::ArrayView1<'_, f64>) -> Cow<'_, [f64]> {
        match row.to_slice() {
            Some(s) => Cow::Borrowed(s),
            None => Cow::Owned(row.to_vec()),
        }
    }
    w.rows()
        .into_iter()
        .zip(r.rows())
        .map(|(wr, rr)| {
            let (a, b) = (slice(wr), slice(rr));
            dot(&a, &b)
        })
        .collect()
}

/// AERC: `y = F_att(r~) . r` with readout points fixed in space.
#[derive(Debug, Clone, PartialEq)]
pub struct AercModel {
    psi: Vec<Point>,
    readout_points: Vec<Point>,
    backbone: Mlp,
    weight_head: Mlp,
}

#[derive(Debug, Clone)]
pub struct AercCache {
    backbone: MlpCache,
    head: MlpCache,
    readout: Array2<f64>,
}

impl AercCache {
    pub fn weights(&self) -> &Array2<f64> {
        self.head.output()
    }

    pub fn readout(&self) -> &Array2<f64> {
        &self.readout
    }
}

impl AercModel {
    pub fn init<R: Rng + ?Sized>(psi: Vec<Point>, readout_points: Vec<Point>, hidden: usize, rng: &mut R) -> Result<Self> {
        let backbone = Mlp::init(&[psi.len(), hidden], &[Activation::Relu], rng)?;
        let weight_head = Mlp::init(&[hidden, readout_points.len()], &[Activation::Identity], rng)?;
        Self::from_parts(psi, readout_points, backbone, weight_head)
    }

    pub fn from_parts(psi: Vec<Point>, readout_points: Vec<Point>, backbone: Mlp, weight_head: Mlp) -> Result<Self> {
        if backbone.inputs() != psi.len()
            || weight_head.inputs() != backbone.outputs()
            || weight_head.outputs() != readout_points.len()
        {
            return Err(Error::shape("AERC networks do not match the measurement layout"));
        }
        Ok(AercModel {
            psi,
            readout_points,
            backbone,
            weight_head,
        })
    }

    pub fn psi(&self) -> &[Point] {
        &self.psi
    }

    pub fn readout_points(&self) -> &[Point] {
        &self.readout_points
    }

    pub fn backbone(&self) -> &Mlp {
        &self.backbone
    }

    pub fn weight_head(&self) -> &Mlp {
        &self.weight_head
    }

    pub fn into_networks(self) -> (Mlp, Mlp) {
        (self.backbone, self.weight_head)
    }

    pub fn forward(&self, batch: &Batch<'_>) -> Result<(Array1<f64>, AercCache)> {
        let (hidden, backbone) = self.backbone.forward(batch.inputs.view())?;
        let (weights, head) = self.weight_head.forward(hidden.view())?;
        let readout = readout_values(batch, &self.readout_points)?;
        let pred = rowwise_dot(&weights, &readout);
        Ok((pred, AercCache { backbone, head, readout }))
    }

    pub fn backward(&self, cache: &AercCache, d_pred: &[f64], grad: &mut [f64]) -> Result<()> {
        check_rows("prediction gradient", d_pred.len(), cache.readout.nrows())?;
        let nb = self.backbone.n_params();
        let (gb, gh) = grad.split_at_mut(nb);
        let d_weights = scale_rows(&cache.readout, d_pred);
        let d_hidden = self.weight_head.backward(&cache.head, d_weights.view(), gh)?;
        self.backbone.backward(&cache.backbone, d_hidden.view(), gb)?;
        Ok(())
    }
}

fn scale_rows(a: &Array2<f64>, d: &[f64]) -> Array2<f64> {
    let mut out = a.clone();
    for (mut row, &s) in out.rows_mut().into_iter().zip(d) {
        row *= s;
    }
    out
}

impl Parameters for AercModel {
    fn n_params(&self) -> usize {
        self.backbone.n_params() + self.weight_head.n_params()
    }

    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        self.backbone.visit(f);
        self.weight_head.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.backbone.visit_mut(f);
        self.weight_head.visit_mut(f);
    }
}

/// ASAERC: the shared backbone feeds a weight head and a position head whose
/// raw outputs are squashed into `[margin, L - margin]` per coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct AsaercModel {
    psi: Vec<Point>,
    readout_points: Vec<Point>,
    backbone: Mlp,
    weight_head: Mlp,
    position_head: Mlp,
    grid: Grid,
    margin_cells: f64,
    margin: [f64; 2],
    span: [f64; 2],
    kernel: Kernel,
    pinned: bool,
}

#[derive(Debug, Clone)]
pub struct AsaercCache {
    backbone: MlpCache,
    weights: MlpCache,
    positions: MlpCache,
    /// Squashed unit coordinates, interleaved per query.
    unit: Array2<f64>,
    samples: Vec<PointSample>,
    values: Array2<f64>,
    pinned: bool,
}

impl AsaercCache {
    pub fn weights(&self) -> &Array2<f64> {
        self.weights.output()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }
}

impl AsaercModel {
    /// Random networks with the position-head bias set so that, before
    /// training, queries start near `readout_points`.
    pub fn init<R: Rng + ?Sized>(
        grid: &Grid,
        psi: Vec<Point>,
        readout_points: Vec<Point>,
        hidden: usize,
        margin_cells: f64,
        kernel: Kernel,
        rng: &mut R,
    ) -> Result<Self> {
        let n = readout_points.len();
        let backbone = Mlp::init(&[psi.len(), hidden], &[Activation::Relu], rng)?;
        let weight_head = Mlp::init(&[hidden, n], &[Activation::Identity], rng)?;
        let mut position_head = Mlp::init(&[hidden, 2 * n], &[Activation::Identity], rng)?;
        let (margin, span) = squash_bounds(grid, margin_cells)?;
        let logits: Vec<f64> = readout_points
            .iter()
            .flat_map(|p| {
                (0..2).map(move |a| {
                    let s = ((p[a] - margin[a]) / span[a]).clamp(1e-6, 1.0 - 1e-6);
                    (s / (1.0 - s)).ln()
                })
            })
            .collect();
        let weights_len = hidden * 2 * n;
        let mut k = 0;
        position_head.visit_mut(&mut |block| {
            if k == weights_len {
                block.copy_from_slice(&logits);
            }
            k += block.len();
        });
        Self::from_parts(grid, psi, readout_points, backbone, weight_head, position_head, margin_cells, kernel)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        grid: &Grid,
        psi: Vec<Point>,
        readout_points: Vec<Point>,
        backbone: Mlp,
        weight_head: Mlp,
        position_head: Mlp,
        margin_cells: f64,
        kernel: Kernel,
    ) -> Result<Self> {
        let n = readout_points.len();
        if backbone.inputs() != psi.len()
            || weight_head.inputs() != backbone.outputs()
            || position_head.inputs() != backbone.outputs()
            || weight_head.outputs() != n
            || position_head.outputs() != 2 * n
        {
            return Err(Error::shape("ASAERC networks do not match the measurement layout"));
        }
        kernel.validate()?;
        let (margin, span) = squash_bounds(grid, margin_cells)?;
        Ok(AsaercModel {
            psi,
            readout_points,
            backbone,
            weight_head,
            position_head,
            grid: *grid,
            margin_cells,
            margin,
            span,
            kernel,
            pinned: false,
        })
    }

    pub fn psi(&self) -> &[Point] {
        &self.psi
    }

    pub fn readout_points(&self) -> &[Point] {
        &self.readout_points
    }

    pub fn backbone(&self) -> &Mlp {
        &self.backbone
    }

    pub fn weight_head(&self) -> &Mlp {
        &self.weight_head
    }

    pub fn position_head(&self) -> &Mlp {
        &self.position_head
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn margin_cells(&self) -> f64 {
        self.margin_cells
    }

    pub fn margin(&self) -> [f64; 2] {
        self.margin
    }

    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    pub fn is_pinned(&self) -> bool {
        self.pinned
    }

    /// Freezes the queries on the readout lattice; the model then computes
    /// exactly what AERC computes with the same backbone and weight head.
    pub fn set_pinned(&mut self, pinned: bool) {
        self.pinned = pinned;
    }

    pub fn into_networks(self) -> (Mlp, Mlp, Mlp) {
        (self.backbone, self.weight_head, self.position_head)
    }

    #[inline]
    fn query(&self, unit: [f64; 2]) -> Point {
        [
            self.margin[0] + self.span[0] * unit[0],
            self.margin[1] + self.span[1] * unit[1],
        ]
    }

    fn measure(&self, field: &FieldRef<'_>, q: Point) -> Result<PointSample> {
        match self.kernel {
            Kernel::Bilinear => Ok(sample_bilinear_interior(field, q)),
            Kernel::Gaussian { width } => sample_gaussian_kernel(field, q, width),
        }
    }

    pub fn forward(&self, batch: &Batch<'_>) -> Result<(Array1<f64>, AsaercCache)> {
        let b = batch.len();
        let n = self.readout_points.len();
        check_rows("field list", batch.fields.len(), b)?;
        let (hidden, backbone) = self.backbone.forward(batch.inputs.view())?;
        let (weights, wcache) = self.weight_head.forward(hidden.view())?;
        let (raw, pcache) = self.position_head.forward(hidden.view())?;
        let unit = raw.mapv(sigmoid);
        let mut samples = Vec::with_capacity(b * n);
        let mut values = Array2::zeros((b, n));
        for (row, field) in batch.fields.iter().enumerate() {
            for i in 0..n {
                let s = if self.pinned {
                    sample_bilinear_interior(field, self.readout_points[i])
                } else {
                    let q = self.query([unit[[row, 2 * i]], unit[[row, 2 * i + 1]]]);
                    self.measure(field, q)?
                };
                values[[row, i]] = s.value;
                samples.push(s);
            }
        }
        let pred = rowwise_dot(&weights, &values);
        Ok((
            pred,
            AsaercCache {
                backbone,
                weights: wcache,
                positions: pcache,
                unit,
                samples,
                values,
                pinned: self.pinned,
            },
        ))
    }

    /// Query positions and attention weights per batch row, without caches.
    pub fn queries(&self, batch: &Batch<'_>) -> Result<(Vec<Vec<Point>>, Array2<f64>)> {
        let hidden = self.backbone.predict(batch.inputs.view())?;
        let weights = self.weight_head.predict(hidden.view())?;
        let raw = self.position_head.predict(hidden.view())?;
        let n = self.readout_points.len();
        let queries = raw
            .rows()
            .into_iter()
            .map(|row| {
                (0..n)
                    .map(|i| {
                        if self.pinned {
                            self.readout_points[i]
                        } else {
                            self.query([sigmoid(row[2 * i]), sigmoid(row[2 * i + 1])])
                        }
                    })
                    .collect()
            })
            .collect();
        Ok((queries, weights))
    }

    /// Gradient along the weight path and the position path
    /// (value -> kernel position derivative -> squashing -> position head),
    /// both merging in the backbone. The field is a constant.
    pub fn backward(&self, cache: &AsaercCache, d_pred: &[f64], grad: &mut [f64]) -> Result<()> {
        let (b, n) = cache.values.dim();
        check_rows("prediction gradient", d_pred.len(), b)?;
        let nb = self.backbone.n_params();
        let nw = self.weight_head.n_params();
        let (gb, rest) = grad.split_at_mut(nb);
        let (gw, gp) = rest.split_at_mut(nw);
        let d_weights = scale_rows(&cache.values, d_pred);
        let mut d_hidden = self.weight_head.backward(&cache.weights, d_weights.view(), gw)?;
        if !cache.pinned {
            let w = cache.weights.output();
            let mut d_raw = Array2::zeros((b, 2 * n));
            for row in 0..b {
                for i in 0..n {
                    let d_value = d_pred[row] * w[[row, i]];
                    let g = cache.samples[row * n + i].grad;
                    for a in 0..2 {
                        let s = cache.unit[[row, 2 * i + a]];
                        d_raw[[row, 2 * i + a]] = d_value * g[a] * self.span[a] * s * (1.0 - s);
                    }
                }
            }
            d_hidden += &self.position_head.backward(&cache.positions, d_raw.view(), gp)?;
        }
        self.backbone.backward(&cache.backbone, d_hidden.view(), gb)?;
        Ok(())
    }

    /// Same parameters viewed as AERC (position head dropped).
    pub fn as_aerc(&self) -> Result<AercModel> {
        AercModel::from_parts(
            self.psi.clone(),
            self.readout_points.clone(),
            self.backbone.clone(),
            self.weight_head.clone(),
        )
    }
}

fn squash_bounds(grid: &Grid, margin_cells: f64) -> Result<([f64; 2], [f64; 2])> {
    let margin = [margin_cells * grid.hx(), margin_cells * grid.hy()];
    let span = [grid.lx - 2.0 * margin[0], grid.ly - 2.0 * margin[1]];
    if !(margin_cells > 0.0) || !(span[0] > 0.0 && span[1] > 0.0) {
        return Err(Error::config(format!(
            "query margin of {margin_cells} cells leaves no interior"
        )));
    }
    Ok((margin, span))
}

impl Parameters for AsaercModel {
    fn n_params(&self) -> usize {
        self.backbone.n_params() + self.weight_head.n_params() + self.position_head.n_params()
    }

    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        self.backbone.visit(f);
        self.weight_head.visit(f);
        self.position_head.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.backbone.visit_mut(f);
        self.weight_head.visit_mut(f);
        self.position_head.visit_mut(f);
    }
}
