use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::params::ModelParams;

/// Decoupled-weight-decay Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// One AdamW update at step `t` (1-based) using the gradients stored in
/// `params`. Frozen parameters are skipped entirely, moments included.
pub fn adamw_step(params: &mut ModelParams, cfg: &AdamWConfig, t: u64) -> Result<()> {
    if !(cfg.lr > 0.0) {
        return Err(Error::invalid(format!("learning rate must be positive, got {}", cfg.lr)));
    }
    if t == 0 {
        return Err(Error::invalid("optimizer step counter starts at 1"));
    }
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for (_, p) in params.iter_mut() {
        if p.frozen {
            continue;
        }
        let grad = p.tensor.grad.as_ref().expect("grad buffer").clone();
        let data = p.tensor.data_mut();
        for i in 0..data.len() {
            let g = grad[i];
            p.m[i] = cfg.beta1 * p.m[i] + (1.0 - cfg.beta1) * g;
            p.v[i] = cfg.beta2 * p.v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = p.m[i] / bc1;
            let v_hat = p.v[i] / bc2;
            data[i] -= cfg.lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * data[i]);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn single(value: f64, grad: f64) -> ModelParams {
        let mut p = ModelParams::new();
        p.insert("x", Tensor::scalar(value));
        p.get_mut("x").unwrap().tensor.grad = Some(vec![grad]);
        p
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut p = single(0.7, 0.0);
        let cfg = AdamWConfig { weight_decay: 0.0, ..Default::default() };
        adamw_step(&mut p, &cfg, 1).unwrap();
        assert_eq!(p.tensor("x").unwrap().data(), &[0.7]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = single(0.0, 1.0);
        let cfg = AdamWConfig { lr: 1e-3, weight_decay: 0.0, ..Default::default() };
        adamw_step(&mut p, &cfg, 1).unwrap();
        // m_hat = 1, v_hat = 1 after bias correction, so the step is lr / (1 + eps).
        let moved = -p.tensor("x").unwrap().data()[0];
        assert!((moved - 1e-3 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn frozen_parameter_is_untouched() {
        let mut p = single(0.3, 5.0);
        p.get_mut("x").unwrap().frozen = true;
        adamw_step(&mut p, &AdamWConfig::default(), 1).unwrap();
        assert_eq!(p.tensor("x").unwrap().data(), &[0.3]);
    }

    #[test]
    fn non_positive_lr_is_rejected() {
        let mut p = single(0.0, 1.0);
        let cfg = AdamWConfig { lr: 0.0, ..Default::default() };
        assert!(adamw_step(&mut p, &cfg, 1).is_err());
    }
}
