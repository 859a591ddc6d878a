//! Adam optimizer with bias-corrected first and second moments.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 0.0005, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArg(format!("learning rate {} must be positive", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidArg(format!("{name} {b} outside 0..1")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidArg(format!("eps {} must be positive", self.eps)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(n_params: usize, cfg: AdamConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0 })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    /// Completed update count.
    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }

    /// Rebuild saved state; used when restoring a checkpoint.
    pub fn restore(cfg: AdamConfig, m: Vec<f64>, v: Vec<f64>, t: u64) -> Result<Self> {
        cfg.validate()?;
        if m.len() != v.len() {
            return Err(Error::ShapeMismatch(format!(
                "moment vectors disagree: {} vs {}",
                m.len(),
                v.len()
            )));
        }
        Ok(Self { cfg, m, v, t })
    }

    /// One Adam step applied in place.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::ShapeMismatch(format!(
                "optimizer tracks {} parameters, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.cfg.lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_matches_closed_form() {
        // After one update m_hat = g and v_hat = g^2, so the step is
        // exactly lr * g / (|g| + eps).
        let cfg = AdamConfig { lr: 0.01, ..AdamConfig::default() };
        let mut adam = AdamState::new(3, cfg).unwrap();
        let mut params = vec![1.0, -2.0, 0.5];
        let grads = vec![0.3, -0.7, 0.0];
        adam.update(&mut params, &grads).unwrap();
        for ((p, p0), g) in params.iter().zip([1.0, -2.0, 0.5]).zip(&grads) {
            let expected = p0 - 0.01 * g / (g.abs() + 1e-8);
            assert!((p - expected).abs() < 1e-15, "{p} vs {expected}");
        }
        assert_eq!(adam.t(), 1);
    }

    #[test]
    fn zero_gradients_leave_parameters_bit_identical() {
        let mut adam = AdamState::new(2, AdamConfig::default()).unwrap();
        let mut params = vec![0.123456789, -9.87654321];
        let before = params.clone();
        adam.update(&mut params, &[0.0, 0.0]).unwrap();
        adam.update(&mut params, &[0.0, 0.0]).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn minimizes_a_parabola() {
        let cfg = AdamConfig { lr: 0.02, ..AdamConfig::default() };
        let mut adam = AdamState::new(1, cfg).unwrap();
        let mut x = vec![1.0];
        for _ in 0..100 {
            let g = vec![2.0 * x[0]];
            adam.update(&mut x, &g).unwrap();
        }
        assert!(x[0].abs() < 0.2, "ended at {}", x[0]);
    }

    #[test]
    fn rejects_mismatched_shapes_and_bad_config() {
        let mut adam = AdamState::new(2, AdamConfig::default()).unwrap();
        let mut params = vec![0.0; 3];
        assert!(adam.update(&mut params, &[0.0; 3]).is_err());
        let mut params = vec![0.0; 2];
        assert!(adam.update(&mut params, &[0.0; 3]).is_err());
        assert!(AdamState::new(2, AdamConfig { lr: 0.0, ..AdamConfig::default() }).is_err());
        assert!(AdamState::new(2, AdamConfig { beta1: 1.0, ..AdamConfig::default() }).is_err());
        assert!(AdamState::new(2, AdamConfig { eps: 0.0, ..AdamConfig::default() }).is_err());
    }
}
