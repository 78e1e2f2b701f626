use ndarray::{Array1, ArrayView2};
use rand::Rng;

use crate::neural::{Activation, Mlp, MlpCache, Parameters};
use crate::{Error, Result};

/// MLP on the delay vector `(x_t, x_{t-1}, ..., x_{t-k})`.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayMlp {
    delay: usize,
    net: Mlp,
}

impl DelayMlp {
    pub fn init<R: Rng + ?Sized>(delay: usize, hidden: usize, activation: Activation, rng: &mut R) -> Result<Self> {
        let net = Mlp::init(&[delay + 1, hidden, 1], &[activation, Activation::Identity], rng)?;
        Ok(DelayMlp { delay, net })
    }

    pub fn from_network(delay: usize, net: Mlp) -> Result<Self> {
        if net.inputs() != delay + 1 || net.outputs() != 1 {
            return Err(Error::shape("delay network must map k + 1 inputs to one output"));
        }
        Ok(DelayMlp { delay, net })
    }

    pub fn delay(&self) -> usize {
        self.delay
    }

    pub fn network(&self) -> &Mlp {
        &self.net
    }

    pub fn forward(&self, windows: ArrayView2<f64>) -> Result<(Array1<f64>, MlpCache)> {
        let (out, cache) = self.net.forward(windows)?;
        Ok((out.column(0).to_owned(), cache))
    }

    pub fn backward(&self, cache: &MlpCache, d_pred: &[f64], grad: &mut [f64]) -> Result<()> {
        let d = ArrayView2::from_shape((d_pred.len(), 1), d_pred).map_err(|e| Error::shape(e.to_string()))?;
        self.net.backward(cache, d, grad)?;
        Ok(())
    }
}

impl Parameters for DelayMlp {
    fn n_params(&self) -> usize {
        self.net.n_params()
    }

    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        self.net.visit(f)
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.net.visit_mut(f)
    }
}

/// Delay vectors for every index whose window stays inside one segment.
/// Returns the window matrix (rows in dataset order, invalid rows zero) and
/// the validity mask.
pub fn delay_windows(inputs: &[f64], segment_starts: &[(usize, usize)], delay: usize) -> (ndarray::Array2<f64>, Vec<bool>) {
    let mut windows = ndarray::Array2::zeros((inputs.len(), delay + 1));
    let mut valid = vec![false; inputs.len()];
    for &(start, end) in segment_starts {
        for n in (start + delay)..end {
            valid[n] = true;
            for k in 0..=delay {
                windows[[n, k]] = inputs[n - k];
            }
        }
    }
    (windows, valid)
}
