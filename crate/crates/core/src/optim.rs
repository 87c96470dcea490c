//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 2e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Optimiser state for one ordered parameter list.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<Tensor<f32>>,
    pub v: Vec<Tensor<f32>>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[Tensor<f32>]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self { config, t: 0, m: zeros(), v: zeros() }
    }

    /// One update. Parameters without a gradient are left untouched but
    /// still count towards the shared step counter.
    pub fn step(&mut self, params: &mut [Tensor<f32>], grads: &[Option<Tensor<f32>>]) -> Result<()> {
        contract!(
            params.len() == self.m.len() && grads.len() == params.len(),
            "optimiser holds {} slots, got {} parameters and {} gradients",
            self.m.len(),
            params.len(),
            grads.len()
        );
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let Some(g) = g else { continue };
            contract!(g.shape() == p.shape(), "gradient shape {:?} != parameter shape {:?}", g.shape(), p.shape());
            let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
            for (((pi, &gi), mi), vi) in pd.iter_mut().zip(g.data()).zip(md.iter_mut()).zip(vd.iter_mut()) {
                let gi = gi as f64;
                let mn = beta1 * *mi as f64 + (1.0 - beta1) * gi;
                let vn = beta2 * *vi as f64 + (1.0 - beta2) * gi * gi;
                *mi = mn as f32;
                *vi = vn as f32;
                let update = lr * (mn / bc1) / ((vn / bc2).sqrt() + eps);
                *pi = (*pi as f64 - update) as f32;
            }
        }
        Ok(())
    }
}
