//! Adam with decoupled weight decay.

use crate::nn::ParamStore;
use crate::tensor::{Element, Gradients};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamWConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamWConfig {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 9.6e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Optimizer state: one first/second moment buffer per parameter.
#[derive(Debug, Clone)]
pub struct OptimizerState<T: Element> {
    pub config: AdamWConfig,
    pub step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Element> OptimizerState<T> {
    pub fn new(config: AdamWConfig, params: &ParamStore<T>) -> Self {
        let zeros = || params.tensors().iter().map(|t| vec![T::zero(); t.numel()]).collect();
        OptimizerState {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One update; parameters the loss never reached see a zero gradient.
    pub fn update(&mut self, params: &mut ParamStore<T>, grads: &Gradients<T>) {
        let c = self.config;
        self.step += 1;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (lr, eps, wd) = (T::of(c.lr), T::of(c.eps), T::of(c.weight_decay));
        let (bc1, bc2) = (T::of(bc1), T::of(bc2));
        let grads = params.gradients(grads);
        for (i, g) in grads.iter().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let next: Vec<T> = params.tensors()[i]
                .data()
                .iter()
                .zip(g.data())
                .zip(m.iter_mut().zip(v.iter_mut()))
                .map(|((&p, &g), (m, v))| {
                    *m = b1 * *m + (T::one() - b1) * g;
                    *v = b2 * *v + (T::one() - b2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    p - lr * (mhat / (vhat.sqrt() + eps) + wd * p)
                })
                .collect();
            params
                .set_index(i, next)
                .expect("update keeps parameter shape");
        }
    }
}
