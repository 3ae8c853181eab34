use serde::{Deserialize, Serialize};

use super::Network;
use crate::linalg::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Length of the cosine schedule.
    pub total_steps: usize,
}

impl AdamWConfig {
    pub fn with_steps(total_steps: usize) -> Self {
        AdamWConfig { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-4, total_steps }
    }
}

/// `base · ½(1 + cos(π t / T))`, reaching 0 at `t = T` and staying there.
pub fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    if total == 0 || step >= total {
        return 0.0;
    }
    base * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos())
}

/// Adam with decoupled weight decay on every parameter.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub step: usize,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl AdamW {
    pub fn new(net: &Network, config: AdamWConfig) -> Self {
        AdamW { config, step: 0, m: net.zero_grads(), v: net.zero_grads() }
    }

    pub fn current_lr(&self) -> f64 {
        cosine_lr(self.config.learning_rate, self.step, self.config.total_steps)
    }

    pub fn update(&mut self, net: &mut Network, grads: &[Mat]) {
        assert_eq!(grads.len(), net.params.len(), "gradient count must match parameters");
        let c = self.config;
        let lr = self.current_lr();
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for ((p, g), (m, v)) in net.params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            assert_eq!(p.shape(), g.shape(), "gradient shape must match parameter");
            for (((pv, &gv), mv), vv) in p.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mv = c.beta1 * *mv + (1.0 - c.beta1) * gv;
                *vv = c.beta2 * *vv + (1.0 - c.beta2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv -= lr * (mhat / (vhat.sqrt() + c.eps) + c.weight_decay * *pv);
            }
        }
    }
}
