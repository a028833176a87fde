use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Optimizer and schedule hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub epochs: u64,
    pub batch_size: usize,
    pub seed: u64,
    /// Global gradient-norm ceiling.
    pub grad_clip: Option<f64>,
    /// Cosine decay of the learning rate to zero over the run.
    pub cosine: bool,
    /// Random rotations and flips of training pairs.
    pub augment: bool,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
            weight_decay: 1e-4,
            epochs: 200,
            batch_size: 1,
            seed: 0,
            grad_clip: None,
            cosine: false,
            augment: true,
        }
    }
}

impl OptimConfig {
    /// Desk-scale schedule: 100 epochs at a higher learning rate.
    pub fn desk() -> Self {
        Self {
            lr: 2e-3,
            epochs: 100,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be ≥ 0, got {}", self.weight_decay));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be at least 1".into());
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad(format!("grad_clip must be positive, got {c}"));
            }
        }
        Ok(())
    }

    /// Learning rate for optimizer step `t` (1-based) of `total`.
    pub fn lr_at(&self, t: u64, total: u64) -> f64 {
        if !self.cosine || total == 0 {
            return self.lr;
        }
        let frac = (t.saturating_sub(1)) as f64 / total as f64;
        0.5 * self.lr * (1.0 + (std::f64::consts::PI * frac).cos())
    }
}

/// Scales `grads` in place so their global L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut BTreeMap<String, Tensor<f32>>, max_norm: f64) -> f64 {
    let norm = grads
        .values()
        .flat_map(|g| g.data().iter())
        .map(|&v| (v as f64) * (v as f64))
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = (max_norm / norm) as f32;
        for g in grads.values_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// One AdamW update with decoupled weight decay and bias correction. The
/// step counter in `store` advances to `t`; every parameter needs a
/// gradient.
pub fn adamw_step(store: &mut ParamStore<f32>, grads: &BTreeMap<String, Tensor<f32>>, cfg: &OptimConfig, lr: f64) -> Result<()> {
    if let Some(missing) = store.names().find(|n| !grads.contains_key(*n)) {
        return Err(Error::State(format!("no gradient for parameter `{missing}`")));
    }
    if let Some(extra) = grads.keys().find(|n| store.get(n).is_none()) {
        return Err(Error::State(format!("gradient for unknown parameter `{extra}`")));
    }
    let t = store.step + 1;
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for (name, p) in store.iter_mut() {
        let g = &grads[name];
        if g.dims() != p.value.dims() {
            return Err(Error::shape("adamw_step", format!("{name}: {:?} vs {:?}", g.dims(), p.value.dims())));
        }
        let decay = 1.0 - lr * cfg.weight_decay;
        let (value, m, v) = (p.value.data_mut(), p.m.data_mut(), p.v.data_mut());
        for i in 0..value.len() {
            let gi = g.data()[i] as f64;
            let mi = cfg.beta1 * m[i] as f64 + (1.0 - cfg.beta1) * gi;
            let vi = cfg.beta2 * v[i] as f64 + (1.0 - cfg.beta2) * gi * gi;
            m[i] = mi as f32;
            v[i] = vi as f32;
            let update = (mi / bc1) / ((vi / bc2).sqrt() + cfg.eps);
            value[i] = (value[i] as f64 * decay - lr * update) as f32;
        }
        p.grad = g.clone();
    }
    store.step = t;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f32) -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::from_vec(&[1], vec![v]).unwrap()).unwrap();
        s
    }

    fn grad(v: f32) -> BTreeMap<String, Tensor<f32>> {
        BTreeMap::from([("w".to_string(), Tensor::from_vec(&[1], vec![v]).unwrap())])
    }

    #[test]
    fn first_step_moves_by_lr() {
        let cfg = OptimConfig {
            weight_decay: 0.0,
            ..OptimConfig::default()
        };
        let mut s = scalar_store(1.0);
        adamw_step(&mut s, &grad(0.3), &cfg, 0.01).unwrap();
        let moved = 1.0 - s.value("w").unwrap().data()[0] as f64;
        assert!((moved - 0.01).abs() < 1e-6, "{moved}");
        assert_eq!(s.step, 1);
    }

    #[test]
    fn zero_grad_zero_decay_is_identity() {
        let cfg = OptimConfig {
            weight_decay: 0.0,
            ..OptimConfig::default()
        };
        let mut s = scalar_store(0.7);
        for _ in 0..3 {
            adamw_step(&mut s, &grad(0.0), &cfg, 0.1).unwrap();
        }
        assert_eq!(s.value("w").unwrap().data()[0], 0.7);
    }

    #[test]
    fn decoupled_decay() {
        let cfg = OptimConfig {
            weight_decay: 0.5,
            ..OptimConfig::default()
        };
        let mut s = scalar_store(2.0);
        adamw_step(&mut s, &grad(0.0), &cfg, 0.1).unwrap();
        assert_eq!(s.value("w").unwrap().data()[0], (2.0f64 * (1.0 - 0.1 * 0.5)) as f32);
    }

    #[test]
    fn missing_gradient_is_state_error() {
        let mut s = scalar_store(1.0);
        let err = adamw_step(&mut s, &BTreeMap::new(), &OptimConfig::default(), 0.1).unwrap_err();
        assert!(matches!(err, Error::State(_)));
    }

    #[test]
    fn clipping_and_schedule() {
        let mut g = grad(4.0);
        g.insert("b".into(), Tensor::from_vec(&[1], vec![3.0]).unwrap());
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g["w"].data()[0] - 0.8).abs() < 1e-6);
        let cfg = OptimConfig {
            cosine: true,
            ..OptimConfig::default()
        };
        assert_eq!(cfg.lr_at(1, 10), cfg.lr);
        assert!(cfg.lr_at(10, 10) < 0.05 * cfg.lr);
    }
}
