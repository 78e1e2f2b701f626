//! Central finite differences over a [`Parameters`] implementor.

use super::Parameters;

/// Gradients below this magnitude are compared absolutely.
const FLOOR: f64 = 1e-4;

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FLOOR)
}

pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| relative_error(x, y)).fold(0.0, f64::max)
}

/// Numerical gradient of `loss` with step `h`; parameters are restored.
pub fn central_differences<P, F>(params: &mut P, h: f64, mut loss: F) -> Vec<f64>
where
    P: Parameters + ?Sized,
    F: FnMut(&P) -> f64,
{
    let base = params.flat_params();
    let mut probe = base.clone();
    let mut grad = Vec::with_capacity(base.len());
    for k in 0..base.len() {
        probe[k] = base[k] + h;
        params.set_flat_params(&probe).expect("same length");
        let up = loss(params);
        probe[k] = base[k] - h;
        params.set_flat_params(&probe).expect("same length");
        let down = loss(params);
        probe[k] = base[k];
        grad.push((up - down) / (2.0 * h));
    }
    params.set_flat_params(&base).expect("same length");
    grad
}
