//! Adam with a step-decayed learning rate.

use crate::error::{Error, Result};
use crate::tensor::Param;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// `lr0 / factor^⌊iter / every⌋`.
pub fn step_decay(lr0: f64, factor: f64, every: usize, iter: usize) -> f64 {
    if every == 0 {
        return lr0;
    }
    lr0 / factor.powi((iter / every) as i32)
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    /// Moments sized for `params`, which must be passed in the same order to every step.
    pub fn new(params: &[&Param]) -> Self {
        Adam {
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
        }
    }

    pub fn steps(&self) -> u32 {
        self.step
    }

    /// One bias-corrected update. Parameters without a gradient are left alone.
    pub fn step(&mut self, params: &[&Param], lr: f64) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::arg("optimizer was built for a different parameter list"));
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, m), v) in params.iter().zip(&mut self.m).zip(&mut self.v) {
            let Some(g) = p.tensor.grad() else { continue };
            if g.len() != m.len() {
                return Err(Error::shape(format!("{} changed size", p.name)));
            }
            p.tensor.update_values(|w| {
                for i in 0..w.len() {
                    let gi = g[i] as f64;
                    m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                    v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                    let update = lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
                    w[i] = (w[i] as f64 - update) as f32;
                }
            });
        }
        Ok(())
    }
}
