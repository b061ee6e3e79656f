use super::{ParameterStore, Real};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            weight_decay: 1e-6,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam update with decoupled weight decay. Every parameter needs a
/// gradient; gradients are cleared afterwards.
pub fn adam_step<T: Real>(store: &mut ParameterStore<T>, cfg: &AdamConfig) -> Result<()> {
    if let Some((name, _)) = store.iter().find(|(_, p)| p.grad.is_none()) {
        return Err(Error::MissingGradient(name.to_string()));
    }
    for (_, p) in store.iter_mut() {
        let grad = p.grad.take().expect("checked above");
        p.step += 1;
        let t = p.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let decay = 1.0 - cfg.lr * cfg.weight_decay;
        for (((w, m), v), g) in p.value.data_mut().iter_mut().zip(&mut p.m).zip(&mut p.v).zip(grad) {
            let g = g.as_f64();
            let m1 = cfg.beta1 * m.as_f64() + (1.0 - cfg.beta1) * g;
            let v1 = cfg.beta2 * v.as_f64() + (1.0 - cfg.beta2) * g * g;
            *m = T::of(m1);
            *v = T::of(v1);
            let update = cfg.lr * (m1 / bc1) / ((v1 / bc2).sqrt() + cfg.eps);
            *w = T::of(w.as_f64() * decay - update);
        }
    }
    Ok(())
}
