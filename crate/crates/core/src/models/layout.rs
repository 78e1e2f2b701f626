//! Placement of fixed measurement points.

use crate::reservoir::{Grid, Point};
use crate::{Error, Result};

/// `n` points strictly inside the domain: a `k x k` lattice at
/// `(a + 1) / (k + 1)` of each side when `n = k^2`, otherwise a 2-3 Halton
/// scatter over the central 90% of the domain.
pub fn measurement_points(grid: &Grid, n: usize) -> Result<Vec<Point>> {
    if n == 0 {
        return Err(Error::config("need at least one measurement point"));
    }
    let k = (n as f64).sqrt().round() as usize;
    if k * k == n {
        Ok(lattice(grid, k))
    } else {
        Ok(halton(grid, n))
    }
}

pub fn lattice(grid: &Grid, k: usize) -> Vec<Point> {
    let step = |a: usize, l: f64| (a + 1) as f64 / (k + 1) as f64 * l;
    (0..k)
        .flat_map(|a| (0..k).map(move |b| (a, b)))
        .map(|(a, b)| [step(a, grid.lx), step(b, grid.ly)])
        .collect()
}

fn radical_inverse(mut i: usize, base: usize) -> f64 {
    let mut inv = 1.0 / base as f64;
    let mut out = 0.0;
    while i > 0 {
        out += (i % base) as f64 * inv;
        i /= base;
        inv /= base as f64;
    }
    out
}

pub fn halton(grid: &Grid, n: usize) -> Vec<Point> {
    (1..=n)
        .map(|i| {
            [
                grid.lx * (0.05 + 0.9 * radical_inverse(i, 2)),
                grid.ly * (0.05 + 0.9 * radical_inverse(i, 3)),
            ]
        })
        .collect()
}
