//! First-order update rules used by the training loop.

use crate::error::Result;
use crate::registry::Registry;

use super::params::{check_same_shape, Tensors};

/// A stateful update rule. Implementations keep per-coordinate state keyed by
/// flat position, so one instance must only ever see one parameter layout.
pub trait Optimizer: Send {
    fn name(&self) -> &'static str;

    /// Applies one update in place, using `grads` of the same layout.
    fn step_flat(&mut self, params: &mut [f64], grads: &[f64], lr: f64);

    /// Drops internal state, e.g. after the parameter layout changes.
    fn reset(&mut self);
}

pub fn apply<P: Tensors>(opt: &mut dyn Optimizer, params: &mut P, grads: &P, lr: f64) -> Result<()> {
    check_same_shape("optimizer step", params, grads)?;
    let mut flat = params.flatten();
    opt.step_flat(&mut flat, &grads.flatten(), lr);
    params.load_flat(&flat)
}

#[derive(Debug, Default, Clone)]
pub struct Sgd;

impl Optimizer for Sgd {
    fn name(&self) -> &'static str {
        "sgd"
    }

    fn step_flat(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        for (p, g) in params.iter_mut().zip(grads) {
            *p -= lr * g;
        }
    }

    fn reset(&mut self) {}
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }
}

impl Optimizer for Adam {
    fn name(&self) -> &'static str {
        "adam"
    }

    fn step_flat(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        if self.m.len() != params.len() {
            self.m = vec![0.0; params.len()];
            self.v = vec![0.0; params.len()];
            self.t = 0;
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }

    fn reset(&mut self) {
        self.m.clear();
        self.v.clear();
        self.t = 0;
    }
}

pub fn optimizers() -> Registry<dyn Optimizer> {
    let mut r: Registry<dyn Optimizer> = Registry::new("optimizer");
    r.register("sgd", || Box::new(Sgd));
    r.register("adam", || Box::new(Adam::default()));
    r
}
