use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam with per-parameter first and second moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

impl Adam {
    pub fn new(n: usize, config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn reset(&mut self) {
        self.step = 0;
        self.m.fill(0.0);
        self.v.fill(0.0);
    }

    pub fn update<T: Real>(&mut self, params: &mut [T], grads: &[T], lr: f64) -> Result<()> {
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NumericFailure {
                layer: "gradients".into(),
            });
        }
        assert_eq!(params.len(), self.m.len(), "optimizer sized for a different model");
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let step_size = lr / bc1;
        for i in 0..params.len() {
            let g = grads[i].to_f64().unwrap();
            let m = beta1 * self.m[i] as f64 + (1.0 - beta1) * g;
            let v = beta2 * self.v[i] as f64 + (1.0 - beta2) * g * g;
            self.m[i] = m as f32;
            self.v[i] = v as f32;
            let delta = step_size * m / ((v / bc2).sqrt() + eps);
            params[i] -= T::from_f64(delta).unwrap();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut opt = Adam::new(1, AdamConfig::default());
        let mut w = [0.0f64];
        opt.update(&mut w, &[1.0], 0.1).unwrap();
        // m̂ = 1, v̂ = 1, so the step is lr / (1 + eps)
        assert!((w[0] + 0.1 / (1.0 + 1e-8)).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut opt = Adam::new(3, AdamConfig::default());
        let mut w = [0.5f32, -1.0, 2.0];
        for _ in 0..5 {
            opt.update(&mut w, &[0.0; 3], 0.01).unwrap();
        }
        assert_eq!(w, [0.5, -1.0, 2.0]);
    }

    #[test]
    fn hand_executed_two_steps() {
        let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8, 0.05);
        let mut opt = Adam::new(1, AdamConfig::default());
        let mut w = [1.0f64];
        let grads = [0.4, -0.2];
        let (mut m, mut v, mut x) = (0.0f64, 0.0f64, 1.0f64);
        for (t, g) in grads.iter().enumerate() {
            opt.update(&mut w, &[*g], lr).unwrap();
            let t = t as i32 + 1;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            x -= lr * mh / (vh.sqrt() + eps);
            assert!((w[0] - x).abs() < 1e-6);
        }
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut opt = Adam::new(1, AdamConfig::default());
        let mut w = [0.0f32];
        assert!(opt.update(&mut w, &[f32::NAN], 0.1).is_err());
    }
}
