use serde::{Deserialize, Serialize};

use super::Parameters;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Per-epoch learning-rate multiplier.
    pub decay: f64,
    /// Coupled L2 penalty added to the gradient; zero disables it.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.002,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay: 0.99,
            weight_decay: 0.0,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.decay > 0.0
            && self.decay <= 1.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid optimizer settings {self:?}")))
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.decay.powi(epoch as i32)
    }
}

/// Bias-corrected Adam moments over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(n_params: usize, config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(AdamState {
            config,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }

    /// One update at learning rate `lr_at(epoch)`.
    pub fn step<P: Parameters + ?Sized>(&mut self, params: &mut P, grad: &[f64], epoch: usize) -> Result<()> {
        if grad.len() != self.m.len() || params.n_params() != self.m.len() {
            return Err(Error::shape(format!(
                "optimizer tracks {} parameters, got {} parameters and {} gradients",
                self.m.len(),
                params.n_params(),
                grad.len()
            )));
        }
        self.step += 1;
        let c = self.config;
        let lr = c.lr_at(epoch);
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (m, v) = (&mut self.m, &mut self.v);
        let mut k = 0;
        params.visit_mut(&mut |block| {
            for w in block.iter_mut() {
                let g = grad[k] + c.weight_decay * *w;
                m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g;
                v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g * g;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + c.eps);
                k += 1;
            }
        });
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Flat(Vec<f64>);

    impl Parameters for Flat {
        fn n_params(&self) -> usize {
            self.0.len()
        }
        fn visit(&self, f: &mut dyn FnMut(&[f64])) {
            f(&self.0)
        }
        fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
            f(&mut self.0)
        }
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Flat(vec![0.0]);
        let mut adam = AdamState::new(1, AdamConfig::default()).unwrap();
        adam.step(&mut p, &[1.0], 0).unwrap();
        let expected = -0.002 * 1.0 / (1.0 + 1e-8);
        assert!((p.0[0] - expected).abs() < 1e-18);
    }

    #[test]
    fn zero_gradient_keeps_parameters_and_decays_moments() {
        let mut p = Flat(vec![1.5, -2.0]);
        let mut adam = AdamState::new(2, AdamConfig::default()).unwrap();
        adam.step(&mut p, &[0.3, -0.1], 0).unwrap();
        let after_first = p.0.clone();
        let (m1, v1) = (adam.m.clone(), adam.v.clone());
        let mut q = Flat(after_first.clone());
        let mut frozen = adam.clone();
        frozen.config.lr = 0.0;
        frozen.step(&mut q, &[0.0, 0.0], 0).unwrap();
        assert_eq!(q.0, after_first);
        for k in 0..2 {
            assert_eq!(frozen.m[k], 0.9 * m1[k]);
            assert_eq!(frozen.v[k], 0.999 * v1[k]);
        }
    }

    #[test]
    fn zero_gradient_from_rest_is_a_fixed_point() {
        let mut p = Flat(vec![0.25]);
        let mut adam = AdamState::new(1, AdamConfig::default()).unwrap();
        for _ in 0..5 {
            adam.step(&mut p, &[0.0], 0).unwrap();
        }
        assert_eq!(p.0, vec![0.25]);
        assert_eq!(adam.steps(), 5);
    }

    #[test]
    fn memoryless_adam_is_sign_sgd() {
        let config = AdamConfig {
            beta1: 0.0,
            beta2: 0.0,
            decay: 1.0,
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut p = Flat(vec![1.0, 1.0, 1.0]);
        let mut adam = AdamState::new(3, config).unwrap();
        let grads = [[2.0, -0.5, 1e-3], [-4.0, 0.25, 7.0]];
        let mut expected = vec![1.0; 3];
        for g in grads {
            adam.step(&mut p, &g, 3).unwrap();
            for k in 0..3 {
                expected[k] -= 0.1 * g[k] / ((g[k] * g[k]).sqrt() + 1e-8);
            }
        }
        for k in 0..3 {
            assert!((p.0[k] - expected[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn learning_rate_decays_per_epoch() {
        let c = AdamConfig::default();
        assert!((c.lr_at(10) - 0.002 * 0.99f64.powi(10)).abs() < 1e-18);
        assert_eq!(c.lr_at(0), 0.002);
    }

    #[test]
    fn identical_runs_are_identical() {
        let run = || {
            let mut p = Flat(vec![0.3, -0.2]);
            let mut adam = AdamState::new(2, AdamConfig::default()).unwrap();
            let mut path = Vec::new();
            for s in 0..50 {
                let g = [p.0[0] - 1.0 + (s as f64).sin(), 2.0 * p.0[1]];
                adam.step(&mut p, &g, s / 10).unwrap();
                path.push(p.0.clone());
            }
            path
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn weight_decay_shrinks_without_gradient() {
        let config = AdamConfig {
            weight_decay: 0.1,
            ..AdamConfig::default()
        };
        let mut p = Flat(vec![2.0]);
        let mut adam = AdamState::new(1, config).unwrap();
        adam.step(&mut p, &[0.0], 0).unwrap();
        assert!(p.0[0] < 2.0);
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let mut p = Flat(vec![0.0; 2]);
        let mut adam = AdamState::new(3, AdamConfig::default()).unwrap();
        assert!(adam.step(&mut p, &[0.0; 3], 0).is_err());
        assert!(AdamState::new(1, AdamConfig { lr: -1.0, ..AdamConfig::default() }).is_err());
    }
}
