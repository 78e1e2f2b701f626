//! Two-dimensional diffusion reservoir driven through Gaussian sources.
//!
//! The field lives on a uniform `nx x ny` node grid over `[0, lx] x [0, ly]`
//! with homogeneous Dirichlet boundaries. Values are stored row-major with
//! the x index as the row: node `(i, j)` sits at `i * ny + j`.

mod sampling;
mod store;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::hashing::{self, Hash};
use crate::{Error, Result};

pub use sampling::{
    bilinear_weights, fixed_measurements, sample_bilinear, sample_gaussian_kernel,
    BilinearStencil, PointSample,
};
#[allow(unused_imports)]
pub(crate) use sampling::sample_bilinear_interior;
pub use store::{FrameView, SnapshotStore, StoreMeta, SNAPSHOT_MAGIC, SNAPSHOT_VERSION};

pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
}

impl Default for Grid {
    fn default() -> Self {
        Grid {
            nx: 64,
            ny: 64,
            lx: 1.0,
            ly: 1.0,
        }
    }
}

impl Grid {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        let grid = Grid { nx, ny, lx, ly };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 3 || self.ny < 3 {
            return Err(Error::config("grid needs at least 3 nodes per axis"));
        }
        if !(self.lx > 0.0 && self.ly > 0.0) || !self.lx.is_finite() || !self.ly.is_finite() {
            return Err(Error::config("domain lengths must be positive"));
        }
        Ok(())
    }

    pub fn hx(&self) -> f64 {
        self.lx / (self.nx - 1) as f64
    }

    pub fn hy(&self) -> f64 {
        self.ly / (self.ny - 1) as f64
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.ny + j
    }

    pub fn node(&self, i: usize, j: usize) -> Point {
        [i as f64 * self.hx(), j as f64 * self.hy()]
    }

    pub fn is_boundary(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i + 1 == self.nx || j + 1 == self.ny
    }

    /// Strictly inside the open rectangle.
    pub fn contains(&self, p: Point) -> bool {
        p[0] > 0.0 && p[0] < self.lx && p[1] > 0.0 && p[1] < self.ly
    }
}

/// Read access to nodal values, shared by owned fields and stored frames.
pub trait GridValues {
    fn grid(&self) -> &Grid;
    fn at(&self, i: usize, j: usize) -> f64;
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl GridField {
    pub fn zeros(grid: Grid) -> Self {
        GridField {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    /// Samples `f(x, y)` at every node; boundary nodes are left at zero
    /// unless `keep_boundary` is set.
    pub fn from_fn(grid: Grid, keep_boundary: bool, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut field = GridField::zeros(grid);
        for i in 0..grid.nx {
            for j in 0..grid.ny {
                if keep_boundary || !grid.is_boundary(i, j) {
                    let [x, y] = grid.node(i, j);
                    field.values[grid.index(i, j)] = f(x, y);
                }
            }
        }
        field
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn energy(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn zero_boundary(&mut self) {
        let g = self.grid;
        for i in 0..g.nx {
            for j in 0..g.ny {
                if g.is_boundary(i, j) {
                    self.values[g.index(i, j)] = 0.0;
                }
            }
        }
    }

    pub fn boundary_is_zero(&self) -> bool {
        let g = self.grid;
        (0..g.nx).all(|i| {
            (0..g.ny).all(|j| !g.is_boundary(i, j) || self.values[g.index(i, j)] == 0.0)
        })
    }
}

impl GridValues for GridField {
    fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.grid.ny + j]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Injection {
    pub center: Point,
    pub width: f64,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReservoirConfig {
    pub nu: f64,
    pub dt: f64,
    pub substeps_per_sample: usize,
    pub injections: Vec<Injection>,
    /// Substeps between the fixed-measurement snapshot and the adaptive one.
    pub t_offset: usize,
}

impl ReservoirConfig {
    /// Defaults: nu = 0.05, dt at 0.8 of the CFL bound, 200 substeps per
    /// sample and a signed four-site diamond of narrow sources at strength 100.
    ///
    /// With dt tied to the CFL bound, one sample spreads a source over about
    /// `sqrt(0.4 K)` cells whatever nu is, and nu only rescales amplitudes.
    /// Many substeps keep the newest input distinguishable from the smoothed
    /// history; the strength brings fixed measurements to order 0.1 to 1.
    pub fn standard(grid: &Grid) -> Self {
        let nu = 0.05;
        ReservoirConfig {
            nu,
            dt: 0.8 * cfl_max_dt(nu, grid.hx(), grid.hy()),
            substeps_per_sample: 200,
            injections: Self::diamond(grid, 0.25, 0.015, 100.0),
            t_offset: 0,
        }
    }

    /// Four sources at distance `radius` (fraction of the domain) around the
    /// centre with gains `strength` times 1.0, 0.6, -0.35, -0.8. Unequal
    /// magnitudes keep the field free of reflection symmetries, which would
    /// otherwise make mirrored measurements exactly redundant.
    pub fn diamond(grid: &Grid, radius: f64, width: f64, strength: f64) -> Vec<Injection> {
        let (cx, cy) = (0.5 * grid.lx, 0.5 * grid.ly);
        let (dx, dy) = (radius * grid.lx, radius * grid.ly);
        [
            ([cx - dx, cy], 1.0),
            ([cx, cy + dy], 0.6),
            ([cx, cy - dy], -0.35),
            ([cx + dx, cy], -0.8),
        ]
        .into_iter()
        .map(|(center, gain)| Injection {
            center,
            width,
            gain: strength * gain,
        })
        .collect()
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        grid.validate()?;
        if !(self.nu > 0.0) {
            return Err(Error::config("diffusion coefficient must be positive"));
        }
        let bound = cfl_max_dt(self.nu, grid.hx(), grid.hy());
        if !(self.dt > 0.0 && self.dt < bound) {
            return Err(Error::config(format!(
                "time step {} violates the CFL bound {bound}",
                self.dt
            )));
        }
        if self.substeps_per_sample == 0 {
            return Err(Error::config("need at least one substep per sample"));
        }
        if self.t_offset >= self.substeps_per_sample {
            return Err(Error::config(
                "t_offset must be smaller than the substeps per sample",
            ));
        }
        for inj in &self.injections {
            if !grid.contains(inj.center) {
                return Err(Error::config(format!(
                    "injection centre {:?} is not strictly inside the domain",
                    inj.center
                )));
            }
            if !(inj.width > 0.0) {
                return Err(Error::config("injection width must be positive"));
            }
        }
        Ok(())
    }
}

/// Largest stable explicit Euler step for the 5-point diffusion stencil.
pub fn cfl_max_dt(nu: f64, hx: f64, hy: f64) -> f64 {
    1.0 / (2.0 * nu * (1.0 / (hx * hx) + 1.0 / (hy * hy)))
}

/// Five-point Laplacian on interior nodes; boundary entries are zero.
pub fn laplacian(field: &GridField) -> GridField {
    let g = field.grid;
    let (ix2, iy2) = (1.0 / (g.hx() * g.hx()), 1.0 / (g.hy() * g.hy()));
    let u = &field.values;
    let mut out = GridField::zeros(g);
    for i in 1..g.nx - 1 {
        for j in 1..g.ny - 1 {
            let c = u[g.index(i, j)];
            out.values[g.index(i, j)] = (u[g.index(i + 1, j)] - 2.0 * c + u[g.index(i - 1, j)])
                * ix2
                + (u[g.index(i, j + 1)] - 2.0 * c + u[g.index(i, j - 1)]) * iy2;
        }
    }
    out
}

/// Source term for a unit input: sum of the Gaussian sites, boundary masked.
fn injection_pattern(grid: &Grid, injections: &[Injection]) -> GridField {
    GridField::from_fn(*grid, false, |x, y| {
        injections
            .iter()
            .map(|s| {
                let r2 = (x - s.center[0]).powi(2) + (y - s.center[1]).powi(2);
                s.gain * (-r2 / (2.0 * s.width * s.width)).exp()
            })
            .sum()
    })
}

/// `f(x_i, y_j) = input * sum_s gain_s * exp(-|x - c_s|^2 / (2 width_s^2))`.
pub fn injection_field(grid: &Grid, config: &ReservoirConfig, input: f64) -> GridField {
    let mut field = injection_pattern(grid, &config.injections);
    field.values.iter_mut().for_each(|v| *v *= input);
    field
}

/// One explicit Euler substep `u + dt (nu lap u + drive * forcing)` written
/// into `out`. No stability check: callers own the choice of `dt`.
pub fn euler_step(
    grid: &Grid,
    u: &[f64],
    forcing: &[f64],
    drive: f64,
    nu: f64,
    dt: f64,
    out: &mut [f64],
) {
    let (nx, ny) = (grid.nx, grid.ny);
    let cx = dt * nu / (grid.hx() * grid.hx());
    let cy = dt * nu / (grid.hy() * grid.hy());
    let c0 = 1.0 - 2.0 * cx - 2.0 * cy;
    let src = dt * drive;
    out[..ny].fill(0.0);
    out[(nx - 1) * ny..].fill(0.0);
    for i in 1..nx - 1 {
        let up = &u[(i - 1) * ny..i * ny];
        let mid = &u[i * ny..(i + 1) * ny];
        let down = &u[(i + 1) * ny..(i + 2) * ny];
        let f = &forcing[i * ny..(i + 1) * ny];
        let row = &mut out[i * ny..(i + 1) * ny];
        row[0] = 0.0;
        row[ny - 1] = 0.0;
        for j in 1..ny - 1 {
            row[j] = c0 * mid[j] + cx * (up[j] + down[j]) + cy * (mid[j - 1] + mid[j + 1])
                + src * f[j];
        }
    }
}

/// A validated reservoir with its unit injection pattern precomputed.
#[derive(Debug, Clone)]
pub struct Reservoir {
    grid: Grid,
    config: ReservoirConfig,
    pattern: Vec<f64>,
}

impl Reservoir {
    pub fn new(grid: Grid, config: ReservoirConfig) -> Result<Self> {
        config.validate(&grid)?;
        let pattern = injection_pattern(&grid, &config.injections).values;
        Ok(Reservoir {
            grid,
            config,
            pattern,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn config(&self) -> &ReservoirConfig {
        &self.config
    }

    /// Hash identifying snapshots produced from `inputs` by this reservoir.
    pub fn content_hash(&self, inputs: &[f64]) -> Hash {
        let data = hashing::hash_f64s(inputs);
        hashing::hash_json(&(&self.grid, &self.config), &[&data])
    }

    /// One substep with the input held at `input`.
    pub fn step(&self, field: &mut GridField, input: f64) {
        let mut out = vec![0.0; self.grid.len()];
        self.step_into(&field.values, input, &mut out);
        field.values = out;
    }

    fn step_into(&self, u: &[f64], input: f64, out: &mut [f64]) {
        euler_step(
            &self.grid,
            u,
            &self.pattern,
            input,
            self.config.nu,
            self.config.dt,
            out,
        );
    }

    /// Drives the field from rest, holding each input for one sample's worth
    /// of substeps. `visit(n, fixed, adaptive)` sees the snapshot used for
    /// fixed measurements (`t_offset` substeps before the end of sample `n`)
    /// and the end-of-sample snapshot; both coincide when `t_offset == 0`.
    pub fn run_with(&self, inputs: &[f64], mut visit: impl FnMut(usize, &[f64], &[f64])) {
        let k_total = self.config.substeps_per_sample;
        let lead_at = k_total - self.config.t_offset;
        let mut u = vec![0.0; self.grid.len()];
        let mut next = vec![0.0; self.grid.len()];
        let mut lead = Vec::new();
        for (n, &x) in inputs.iter().enumerate() {
            for k in 0..k_total {
                self.step_into(&u, x, &mut next);
                std::mem::swap(&mut u, &mut next);
                if self.config.t_offset > 0 && k + 1 == lead_at {
                    lead.clear();
                    lead.extend_from_slice(&u);
                }
            }
            if self.config.t_offset > 0 {
                visit(n, &lead, &u);
            } else {
                visit(n, &u, &u);
            }
        }
    }

    /// Runs the reservoir over `inputs` and stores every snapshot in 32-bit floats.
    pub fn run(&self, inputs: &[f64]) -> Result<SnapshotStore> {
        let len = self.grid.len();
        let with_lead = self.config.t_offset > 0;
        let mut frames = Vec::with_capacity(inputs.len() * len);
        let mut lead_frames = Vec::with_capacity(if with_lead { inputs.len() * len } else { 0 });
        let mut finite = true;
        self.run_with(inputs, |_, fixed, end| {
            finite &= end.iter().all(|v| v.is_finite());
            frames.extend(end.iter().map(|&v| v as f32));
            if with_lead {
                lead_frames.extend(fixed.iter().map(|&v| v as f32));
            }
        });
        if !finite {
            return Err(Error::BlowUp { time: f64::NAN });
        }
        Ok(SnapshotStore::from_parts(
            self.grid,
            StoreMeta::from_config(&self.config),
            self.content_hash(inputs),
            frames,
            with_lead.then_some(lead_frames),
        ))
    }
}
