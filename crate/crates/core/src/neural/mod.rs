//! Dense networks with hand-written reverse mode and Adam.
//!
//! Everything works on row-major batches: one sample per row. Parameters are
//! addressed through [`Parameters`], which fixes a flat ordering (per layer:
//! weights row-major, then bias) shared by gradients, the optimizer and
//! checkpoints.

mod adam;
pub(crate) mod checkpoint;
mod gradcheck;

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::distr::{Distribution, Uniform};
use rand::Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{decode_networks, encode_networks, NetworkCheckpoint, NETWORK_MAGIC, NETWORK_VERSION};
pub use gradcheck::{central_differences, max_relative_error, relative_error};

static REVISION: AtomicU64 = AtomicU64::new(1);

fn next_revision() -> u64 {
    REVISION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Sigmoid => 2,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Sigmoid),
            _ => None,
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Flat view over trainable parameters.
pub trait Parameters {
    fn n_params(&self) -> usize;

    /// Visits parameter blocks in canonical order.
    fn visit(&self, f: &mut dyn FnMut(&[f64]));

    /// Mutable counterpart of [`Parameters::visit`]; invalidates caches.
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64]));

    fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        self.visit(&mut |block| out.extend_from_slice(block));
        out
    }

    fn set_flat_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.n_params() {
            return Err(Error::shape(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                values.len()
            )));
        }
        let mut offset = 0;
        self.visit_mut(&mut |block| {
            block.copy_from_slice(&values[offset..offset + block.len()]);
            offset += block.len();
        });
        Ok(())
    }
}

/// Affine map followed by an elementwise activation: `a = act(W x + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    weights: Array2<f64>,
    bias: Array1<f64>,
    activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Array2<f64>, bias: Array1<f64>, activation: Activation) -> Result<Self> {
        if weights.nrows() != bias.len() {
            return Err(Error::shape(format!(
                "weights have {} rows but bias has {} entries",
                weights.nrows(),
                bias.len()
            )));
        }
        if weights.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::config("layer parameters must be finite"));
        }
        Ok(DenseLayer {
            weights: weights.as_standard_layout().into_owned(),
            bias,
            activation,
        })
    }

    /// Uniform fan-in initialization on `[-1/sqrt(in), 1/sqrt(in)]`.
    pub fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs.max(1) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let weights = Array2::from_shape_simple_fn((outputs, inputs), || dist.sample(rng));
        let bias = Array1::from_shape_simple_fn(outputs, || dist.sample(rng));
        DenseLayer {
            weights,
            bias,
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn bias(&self) -> &Array1<f64> {
        &self.bias
    }

    pub fn n_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Returns `(pre-activation, output)` for a batch.
    fn forward(&self, x: ArrayView2<f64>) -> (Array2<f64>, Array2<f64>) {
        let mut pre = x.dot(&self.weights.t());
        pre += &self.bias;
        let act = self.activation;
        let out = match act {
            Activation::Identity => pre.clone(),
            _ => pre.mapv(|z| act.apply(z)),
        };
        (pre, out)
    }

    /// Accumulates parameter gradients into `grad` and returns the input gradient.
    fn backward(
        &self,
        x: ArrayView2<f64>,
        pre: &Array2<f64>,
        out: &Array2<f64>,
        mut d_out: Array2<f64>,
        grad: &mut [f64],
    ) -> Array2<f64> {
        if self.activation != Activation::Identity {
            let act = self.activation;
            ndarray::Zip::from(&mut d_out)
                .and(pre)
                .and(out)
                .for_each(|d, &z, &a| *d *= act.derivative(z, a));
        }
        let (gw, gb) = grad.split_at_mut(self.weights.len());
        let dw = d_out.t().dot(&x);
        for (g, d) in gw.iter_mut().zip(dw.iter()) {
            *g += d;
        }
        for (g, d) in gb.iter_mut().zip(d_out.sum_axis(Axis(0)).iter()) {
            *g += d;
        }
        d_out.dot(&self.weights)
    }
}

/// Stack of dense layers.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
    revision: u64,
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

/// Activations retained by [`Mlp::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    revision: u64,
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl MlpCache {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    pub fn batch_size(&self) -> usize {
        self.output.nrows()
    }
}

impl Mlp {
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("network needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::shape(format!(
                    "layer output {} does not feed layer input {}",
                    pair[0].outputs(),
                    pair[1].inputs()
                )));
            }
        }
        Ok(Mlp {
            layers,
            revision: next_revision(),
        })
    }

    /// Randomly initialized network with layer widths `sizes` and one
    /// activation per layer.
    pub fn init<R: Rng + ?Sized>(sizes: &[usize], activations: &[Activation], rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 || activations.len() != sizes.len() - 1 {
            return Err(Error::config(format!(
                "{} widths need {} activations, got {}",
                sizes.len(),
                sizes.len().saturating_sub(1),
                activations.len()
            )));
        }
        let layers = sizes
            .windows(2)
            .zip(activations)
            .map(|(w, &act)| DenseLayer::init(w[0], w[1], act, rng))
            .collect();
        Self::from_layers(layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn outputs(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, MlpCache)> {
        if x.ncols() != self.inputs() {
            return Err(Error::shape(format!(
                "network expects {} inputs, got {}",
                self.inputs(),
                x.ncols()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut current = x.to_owned();
        for layer in &self.layers {
            let (z, a) = layer.forward(current.view());
            inputs.push(current);
            pre.push(z);
            current = a;
        }
        let cache = MlpCache {
            revision: self.revision,
            inputs,
            pre,
            output: current.clone(),
        };
        Ok((current, cache))
    }

    /// Output only, without retaining activations.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.inputs() {
            return Err(Error::shape(format!(
                "network expects {} inputs, got {}",
                self.inputs(),
                x.ncols()
            )));
        }
        let mut current = self.layers[0].forward(x).1;
        for layer in &self.layers[1..] {
            current = layer.forward(current.view()).1;
        }
        Ok(current)
    }

    /// Adds the parameter gradient of `sum(d_out * output)` into `grad` and
    /// returns the gradient with respect to the network input.
    pub fn backward(&self, cache: &MlpCache, d_out: ArrayView2<f64>, grad: &mut [f64]) -> Result<Array2<f64>> {
        if cache.revision != self.revision {
            return Err(Error::StaleCache);
        }
        if d_out.dim() != cache.output.dim() {
            return Err(Error::shape(format!(
                "output gradient {:?} does not match output {:?}",
                d_out.dim(),
                cache.output.dim()
            )));
        }
        if grad.len() != self.n_params() {
            return Err(Error::shape(format!(
                "gradient buffer has {} slots for {} parameters",
                grad.len(),
                self.n_params()
            )));
        }
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut offset = 0;
        for layer in &self.layers {
            offsets.push(offset);
            offset += layer.n_params();
        }
        let mut delta = d_out.to_owned();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let out = if l + 1 < self.layers.len() {
                &cache.inputs[l + 1]
            } else {
                &cache.output
            };
            let slot = &mut grad[offsets[l]..offsets[l] + layer.n_params()];
            delta = layer.backward(cache.inputs[l].view(), &cache.pre[l], out, delta, slot);
        }
        Ok(delta)
    }
}

impl Parameters for Mlp {
    fn n_params(&self) -> usize {
        count_parameters(&self.layers)
    }

    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        for layer in &self.layers {
            f(layer.weights.as_slice().expect("standard layout"));
            f(layer.bias.as_slice().expect("contiguous"));
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.revision = next_revision();
        for layer in &mut self.layers {
            f(layer.weights.as_slice_mut().expect("standard layout"));
            f(layer.bias.as_slice_mut().expect("contiguous"));
        }
    }
}

/// Weights plus biases over all layers.
pub fn count_parameters(layers: &[DenseLayer]) -> usize {
    layers.iter().map(|l| l.outputs() * l.inputs() + l.outputs()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let layer = DenseLayer::new(Array2::eye(3), Array1::zeros(3), Activation::Identity).unwrap();
        let net = Mlp::from_layers(vec![layer]).unwrap();
        let x = array![[0.5, -2.0, 3.0]];
        assert_eq!(net.predict(x.view()).unwrap(), x);
    }

    #[test]
    fn activations_at_reference_points() {
        let relu = DenseLayer::new(Array2::eye(2), Array1::zeros(2), Activation::Relu).unwrap();
        let net = Mlp::from_layers(vec![relu]).unwrap();
        assert_eq!(net.predict(array![[-1.0, 2.0]].view()).unwrap(), array![[0.0, 2.0]]);
        assert_eq!(Activation::Sigmoid.apply(0.0), 0.5);
        assert!((sigmoid(-800.0)).is_finite() && sigmoid(800.0) == 1.0);
    }

    #[test]
    fn shape_errors() {
        assert!(DenseLayer::new(Array2::zeros((2, 3)), Array1::zeros(3), Activation::Identity).is_err());
        let a = DenseLayer::init(3, 4, Activation::Relu, &mut rng(0));
        let b = DenseLayer::init(5, 1, Activation::Identity, &mut rng(0));
        assert!(matches!(Mlp::from_layers(vec![a.clone(), b]), Err(Error::Shape(_))));
        let net = Mlp::from_layers(vec![a]).unwrap();
        assert!(matches!(net.forward(Array2::zeros((1, 2)).view()), Err(Error::Shape(_))));
    }

    #[test]
    fn linear_layer_weight_gradient_is_outer_product() {
        let net = Mlp::init(&[3, 2], &[Activation::Identity], &mut rng(1)).unwrap();
        let x = array![[1.0, -2.0, 0.5]];
        let v = array![[3.0, -1.0]];
        let (_, cache) = net.forward(x.view()).unwrap();
        let mut grad = vec![0.0; net.n_params()];
        let dx = net.backward(&cache, v.view(), &mut grad).unwrap();
        let outer = v.t().dot(&x);
        assert_eq!(&grad[..6], outer.as_slice().unwrap());
        assert_eq!(&grad[6..], &[3.0, -1.0]);
        assert_eq!(dx, v.dot(net.layers()[0].weights()));
    }

    #[test]
    fn relu_blocks_gradient_at_negative_preactivation() {
        let layer = DenseLayer::new(array![[1.0], [1.0]], array![-5.0, 5.0], Activation::Relu).unwrap();
        let net = Mlp::from_layers(vec![layer]).unwrap();
        let (_, cache) = net.forward(array![[1.0]].view()).unwrap();
        let mut grad = vec![0.0; 4];
        net.backward(&cache, array![[1.0, 1.0]].view(), &mut grad).unwrap();
        assert_eq!(grad, vec![0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn stale_cache_rejected() {
        let mut net = Mlp::init(&[2, 3, 1], &[Activation::Relu, Activation::Identity], &mut rng(2)).unwrap();
        let (_, cache) = net.forward(array![[0.1, 0.2]].view()).unwrap();
        let p = net.flat_params();
        net.set_flat_params(&p).unwrap();
        let mut grad = vec![0.0; net.n_params()];
        assert!(matches!(
            net.backward(&cache, array![[1.0]].view(), &mut grad),
            Err(Error::StaleCache)
        ));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let acts = [
            [Activation::Relu, Activation::Identity],
            [Activation::Sigmoid, Activation::Sigmoid],
            [Activation::Identity, Activation::Relu],
        ];
        for (seed, act) in acts.iter().enumerate() {
            let mut r = rng(10 + seed as u64);
            let mut net = Mlp::init(&[4, 7, 3], act, &mut r).unwrap();
            let x = Array::from_shape_fn((5, 4), |(i, j)| ((i * 4 + j) as f64 * 0.37).sin());
            let v = Array::from_shape_fn((5, 3), |(i, j)| ((i + 2 * j) as f64 * 0.91).cos());
            let loss = |n: &Mlp| (n.predict(x.view()).unwrap() * &v).sum();
            let (_, cache) = net.forward(x.view()).unwrap();
            let mut grad = vec![0.0; net.n_params()];
            net.backward(&cache, v.view(), &mut grad).unwrap();
            let numeric = central_differences(&mut net, 1e-6, loss);
            assert!(max_relative_error(&grad, &numeric) < 1e-5, "activation set {seed}");
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let net = Mlp::init(&[3, 5, 2], &[Activation::Sigmoid, Activation::Identity], &mut rng(4)).unwrap();
        let x = array![[0.3, -0.7, 1.1]];
        let v = array![[1.0, -2.0]];
        let (_, cache) = net.forward(x.view()).unwrap();
        let dx = net
            .backward(&cache, v.view(), &mut vec![0.0; net.n_params()])
            .unwrap();
        for j in 0..3 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[[0, j]] += 1e-6;
            xm[[0, j]] -= 1e-6;
            let f = |x: &Array2<f64>| (net.predict(x.view()).unwrap() * &v).sum();
            let fd = (f(&xp) - f(&xm)) / 2e-6;
            assert!(relative_error(dx[[0, j]], fd) < 1e-6);
        }
    }

    #[test]
    fn parameter_counts() {
        let mut r = rng(0);
        let backbone = DenseLayer::init(16, 128, Activation::Relu, &mut r);
        let head = DenseLayer::init(128, 16, Activation::Identity, &mut r);
        assert_eq!(count_parameters(&[backbone.clone(), head.clone()]), 4240);
        let second = DenseLayer::init(128, 32, Activation::Identity, &mut r);
        assert_eq!(count_parameters(&[backbone, head, second]), 4240 + 4128);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = Mlp::init(&[9, 4], &[Activation::Relu], &mut rng(3)).unwrap();
        let b = Mlp::init(&[9, 4], &[Activation::Relu], &mut rng(3)).unwrap();
        assert_eq!(a, b);
        assert!(a.flat_params().iter().all(|v| v.abs() <= 1.0 / 3.0));
    }

    #[test]
    fn flat_params_round_trip() {
        let mut net = Mlp::init(&[2, 3, 1], &[Activation::Relu, Activation::Identity], &mut rng(5)).unwrap();
        let p: Vec<f64> = (0..net.n_params()).map(|i| i as f64).collect();
        net.set_flat_params(&p).unwrap();
        assert_eq!(net.flat_params(), p);
        assert_eq!(net.layers()[0].weights()[[1, 0]], 2.0);
        assert_eq!(net.layers()[0].bias()[0], 6.0);
        assert!(net.set_flat_params(&p[1..]).is_err());
    }
}
