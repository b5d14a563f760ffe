//! Adam over a list of flat tensors.

use crate::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay, applied as `p -= lr * weight_decay * p`.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    steps: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Adam { config, steps: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps(&self) -> i32 {
        self.steps
    }

    /// One update. `params` and `grads` must list tensors in the same order
    /// on every call.
    pub fn step(&mut self, params: Vec<&mut [T]>, grads: Vec<&[T]>) {
        assert_eq!(params.len(), grads.len());
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![T::zero(); g.len()]).collect();
            self.v = self.m.clone();
        }
        self.steps += 1;
        let c = |x: f64| T::from_f64(x).unwrap();
        let (b1, b2) = (self.config.beta1, self.config.beta2);
        let step = c(self.config.lr * (1.0 - b2.powi(self.steps)).sqrt() / (1.0 - b1.powi(self.steps)));
        let eps_hat = c(self.config.eps * (1.0 - b2.powi(self.steps)).sqrt());
        let (b1, b2, one) = (c(b1), c(b2), T::one());
        let decay = one - c(self.config.lr * self.config.weight_decay);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            assert_eq!(p.len(), g.len());
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                p[i] = p[i] * decay - step * m[i] / (v[i].sqrt() + eps_hat);
            }
        }
    }
}
