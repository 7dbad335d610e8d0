use serde::{Deserialize, Serialize};

use super::param::{Module, Param};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Learning-rate factor applied at each schedule boundary.
    pub gamma: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 2e-4, beta1: 0.8, beta2: 0.99, eps: 1e-8, weight_decay: 0.01, gamma: 0.999 }
    }
}

/// Adam with decoupled weight decay and bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    cfg: AdamWConfig,
    lr: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig) -> Self {
        Self { cfg, lr: cfg.lr, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn config(&self) -> &AdamWConfig {
        &self.cfg
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Multiply the learning rate by γ.
    pub fn decay_lr(&mut self) {
        self.lr *= self.cfg.gamma;
    }

    /// Apply one update. Parameters must arrive in the same order every call.
    pub fn step(&mut self, params: &mut [&mut Param]) -> Result<()> {
        self.begin(params.iter().map(|p| p.len()).collect())?;
        for (i, p) in params.iter_mut().enumerate() {
            self.update(i, p);
        }
        Ok(())
    }

    /// [`AdamW::step`] over every parameter of `module`, in visiting order.
    pub fn step_module(&mut self, module: &mut dyn Module) -> Result<()> {
        let mut lens = Vec::new();
        module.visit_params(&mut |_, p| lens.push(p.len()));
        self.begin(lens)?;
        let mut i = 0;
        module.visit_params_mut(&mut |_, p| {
            self.update(i, p);
            i += 1;
        });
        Ok(())
    }

    fn begin(&mut self, lens: Vec<usize>) -> Result<()> {
        if self.m.is_empty() {
            self.m = lens.iter().map(|&n| vec![0.0; n]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != lens.len() || self.m.iter().zip(&lens).any(|(m, &n)| m.len() != n) {
            return Err(Error::shape("parameter set changed between optimizer steps"));
        }
        self.step += 1;
        Ok(())
    }

    fn update(&mut self, i: usize, p: &mut Param) {
        let c = &self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let (m, v) = (&mut self.m[i], &mut self.v[i]);
        for j in 0..p.value.len() {
            let g = p.grad[j];
            m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g;
            v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g * g;
            let update = (m[j] / bc1) / ((v[j] / bc2).sqrt() + c.eps);
            p.value[j] -= self.lr * (update + c.weight_decay * p.value[j]);
        }
    }

    /// Moments and counters, for checkpointing.
    pub fn state(&self) -> (u64, f64, &[Vec<f64>], &[Vec<f64>]) {
        (self.step, self.lr, &self.m, &self.v)
    }

    pub fn restore(&mut self, step: u64, lr: f64, m: Vec<Vec<f64>>, v: Vec<Vec<f64>>) -> Result<()> {
        if m.len() != v.len() || m.iter().zip(&v).any(|(a, b)| a.len() != b.len()) {
            return Err(Error::shape("first and second moments disagree"));
        }
        self.step = step;
        self.lr = lr;
        self.m = m;
        self.v = v;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut p = Param::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let mut opt = AdamW::new(AdamWConfig { weight_decay: 0.0, ..AdamWConfig::default() });
        opt.step(&mut [&mut p]).unwrap();
        assert_eq!(p.value, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Param::new(vec![1], vec![0.0]).unwrap();
        p.grad[0] = 1.0;
        let cfg = AdamWConfig { weight_decay: 0.0, ..AdamWConfig::default() };
        let mut opt = AdamW::new(cfg);
        opt.step(&mut [&mut p]).unwrap();
        assert!((p.value[0] + cfg.lr / (1.0 + cfg.eps)).abs() < 1e-18);
    }

    #[test]
    fn decoupled_decay_shrinks_weights() {
        let mut p = Param::new(vec![1], vec![2.0]).unwrap();
        let mut opt = AdamW::new(AdamWConfig::default());
        opt.step(&mut [&mut p]).unwrap();
        assert!((p.value[0] - (2.0 - 2e-4 * 0.01 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn gamma_schedule() {
        let mut opt = AdamW::new(AdamWConfig::default());
        opt.decay_lr();
        opt.decay_lr();
        assert!((opt.lr() - 2e-4 * 0.999 * 0.999).abs() < 1e-18);
    }

    #[test]
    fn changing_parameter_set_is_rejected() {
        let mut a = Param::zeros(vec![2]);
        let mut b = Param::zeros(vec![3]);
        let mut opt = AdamW::new(AdamWConfig::default());
        opt.step(&mut [&mut a]).unwrap();
        assert!(matches!(opt.step(&mut [&mut b]), Err(Error::Shape(_))));
    }
}
