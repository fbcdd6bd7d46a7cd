use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::tensor::{Matrix, ParamStore, Real};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// AdamW moments for every parameter of one store.
#[derive(Clone, Debug)]
pub struct AdamW<T = f32> {
    pub config: AdamWConfig,
    m: Vec<Matrix<T>>,
    v: Vec<Matrix<T>>,
    step: u64,
}

impl<T: Real> AdamW<T> {
    pub fn new(store: &ParamStore<T>, config: AdamWConfig) -> Self {
        let zeros = |p: &crate::tensor::Parameter<T>| Matrix::zeros(p.value.rows(), p.value.cols());
        Self {
            config,
            m: store.iter().map(|(_, p)| zeros(p)).collect(),
            v: store.iter().map(|(_, p)| zeros(p)).collect(),
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update from the gradients held in `store`. Decoupled decay
    /// `θ ← θ − lr·λ·θ` is applied before the adaptive step, only to
    /// parameters flagged for decay. Nothing is modified when any gradient
    /// is non-finite.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<(), TrainError> {
        if let Some((_, p)) = store.iter().find(|(_, p)| !p.grad.is_finite()) {
            return Err(TrainError::NonFiniteGradient(p.name.clone()));
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (one_b1, one_b2) = (T::of(1.0 - c.beta1), T::of(1.0 - c.beta2));
        let step_size = T::of(lr / bc1);
        let inv_sqrt_bc2 = T::of(1.0 / bc2.sqrt());
        let eps = T::of(c.eps);
        let decay = T::of(lr * c.weight_decay);

        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let apply_decay = p.decay && c.weight_decay != 0.0;
            let g = p.grad.as_slice();
            let theta = p.value.as_mut_slice();
            for (((w, &gi), mi), vi) in theta
                .iter_mut()
                .zip(g)
                .zip(m.as_mut_slice())
                .zip(v.as_mut_slice())
            {
                *mi = b1 * *mi + one_b1 * gi;
                *vi = b2 * *vi + one_b2 * gi * gi;
                if apply_decay {
                    *w -= decay * *w;
                }
                *w -= step_size * *mi / (vi.sqrt() * inv_sqrt_bc2 + eps);
            }
        }
        Ok(())
    }
}
