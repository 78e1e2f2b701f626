//! Point and kernel measurements of a grid field, with position gradients.

use super::{Grid, GridValues, Point};
use crate::{Error, Result};

/// Measured value and its gradient with respect to the measurement position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointSample {
    pub value: f64,
    pub grad: [f64; 2],
}

/// Cell and interpolation weights `[w00, w10, w01, w11]` for a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BilinearStencil {
    pub i: usize,
    pub j: usize,
    pub tx: f64,
    pub ty: f64,
    pub weights: [f64; 4],
}

/// Lower-index cell on grid lines, so `s` exactly on line `k` maps to cell `k - 1`.
#[inline]
fn cell(s: f64, n: usize) -> (usize, f64) {
    let i = (s.ceil() as isize - 1).clamp(0, n as isize - 2) as usize;
    (i, s - i as f64)
}

#[inline]
fn stencil(grid: &Grid, p: Point) -> BilinearStencil {
    let (i, tx) = cell(p[0] / grid.hx(), grid.nx);
    let (j, ty) = cell(p[1] / grid.hy(), grid.ny);
    BilinearStencil {
        i,
        j,
        tx,
        ty,
        weights: [
            (1.0 - tx) * (1.0 - ty),
            tx * (1.0 - ty),
            (1.0 - tx) * ty,
            tx * ty,
        ],
    }
}

pub fn bilinear_weights(grid: &Grid, p: Point) -> Result<BilinearStencil> {
    if !grid.contains(p) {
        return Err(Error::Domain { x: p[0], y: p[1] });
    }
    Ok(stencil(grid, p))
}

/// Bilinear interpolation from the four surrounding nodes. The caller
/// guarantees `p` lies in the closed domain.
#[inline]
pub(crate) fn sample_bilinear_interior<F: GridValues>(field: &F, p: Point) -> PointSample {
    let grid = field.grid();
    let s = stencil(grid, p);
    let (i, j) = (s.i, s.j);
    let u00 = field.at(i, j);
    let u10 = field.at(i + 1, j);
    let u01 = field.at(i, j + 1);
    let u11 = field.at(i + 1, j + 1);
    let [w00, w10, w01, w11] = s.weights;
    PointSample {
        value: w00 * u00 + w10 * u10 + w01 * u01 + w11 * u11,
        grad: [
            ((1.0 - s.ty) * (u10 - u00) + s.ty * (u11 - u01)) / grid.hx(),
            ((1.0 - s.tx) * (u01 - u00) + s.tx * (u11 - u10)) / grid.hy(),
        ],
    }
}

pub fn sample_bilinear<F: GridValues>(field: &F, p: Point) -> Result<PointSample> {
    if !field.grid().contains(p) {
        return Err(Error::Domain { x: p[0], y: p[1] });
    }
    Ok(sample_bilinear_interior(field, p))
}

/// Values at fixed probe locations.
pub fn fixed_measurements<F: GridValues>(field: &F, points: &[Point]) -> Result<Vec<f64>> {
    points
        .iter()
        .map(|&p| sample_bilinear(field, p).map(|s| s.value))
        .collect()
}

/// Measurement through a Gaussian bump of standard deviation `width`,
/// truncated at radius `4 width` and normalized over the nodes it covers.
pub fn sample_gaussian_kernel<F: GridValues>(
    field: &F,
    center: Point,
    width: f64,
) -> Result<PointSample> {
    if !(width > 0.0) {
        return Err(Error::config("kernel width must be positive"));
    }
    let grid = field.grid();
    let radius = 4.0 * width;
    let (hx, hy) = (grid.hx(), grid.hy());
    let range = |c: f64, h: f64, n: usize| {
        let lo = ((c - radius) / h).ceil().max(0.0);
        let hi = ((c + radius) / h).floor().min((n - 1) as f64);
        (lo as isize, hi as isize)
    };
    let (i0, i1) = range(center[0], hx, grid.nx);
    let (j0, j1) = range(center[1], hy, grid.ny);
    let inv_var = 1.0 / (width * width);
    let (mut mass, mut acc) = (0.0, 0.0);
    let (mut dmass, mut dacc) = ([0.0; 2], [0.0; 2]);
    for i in i0.max(0)..=i1 {
        for j in j0.max(0)..=j1 {
            let (i, j) = (i as usize, j as usize);
            let dx = i as f64 * hx - center[0];
            let dy = j as f64 * hy - center[1];
            let r2 = dx * dx + dy * dy;
            if r2 > radius * radius {
                continue;
            }
            let g = (-0.5 * r2 * inv_var).exp();
            let u = field.at(i, j);
            // d g / d center = g * (x - c) / width^2
            let dg = [g * dx * inv_var, g * dy * inv_var];
            mass += g;
            acc += g * u;
            for a in 0..2 {
                dmass[a] += dg[a];
                dacc[a] += dg[a] * u;
            }
        }
    }
    if mass <= 0.0 {
        return Err(Error::Domain {
            x: center[0],
            y: center[1],
        });
    }
    let value = acc / mass;
    Ok(PointSample {
        value,
        grad: [
            (dacc[0] - value * dmass[0]) / mass,
            (dacc[1] - value * dmass[1]) / mass,
        ],
    })
}
