use super::{Grads, ParamStore};
use crate::error::{Error, Result};

/// Scales `grads` so their global 2-norm is at most `max_norm`.
///
/// Returns the norm before clipping. Gradients already within the limit are
/// left untouched.
pub fn clip_global_norm(grads: &mut Grads, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub grad_norm: f64,
    pub clipped: bool,
}

/// Adam with global-norm clipping applied before every update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: 2.0 }
    }
}

impl Adam {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }

    /// Clips, then applies one update to every parameter that has a gradient.
    pub fn step(&self, store: &mut ParamStore, mut grads: Grads) -> Result<StepReport> {
        if self.lr.is_nan() || self.lr <= 0.0 {
            return Err(Error::Config { key: "lr".into(), message: format!("must be positive, got {}", self.lr) });
        }
        if grads.g.len() != store.len() {
            return Err(Error::invalid("gradients belong to a different parameter store"));
        }
        if !grads.all_finite() {
            return Err(Error::NonFinite { context: format!("gradients at optimizer step {}", store.step + 1) });
        }
        let grad_norm = clip_global_norm(&mut grads, self.clip_norm);
        store.step += 1;
        let t = store.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (p, g) in store.params.iter_mut().zip(&grads.g) {
            let Some(g) = g else { continue };
            let data = p.value.data_mut();
            for i in 0..g.len() {
                p.m[i] = self.beta1 * p.m[i] + (1.0 - self.beta1) * g[i];
                p.v[i] = self.beta2 * p.v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = p.m[i] / c1;
                let vhat = p.v[i] / c2;
                data[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(StepReport { step: store.step, grad_norm, clipped: grad_norm > self.clip_norm })
    }
}
