use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ParamSet, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Decoupled weight decay, applied as `p -= lr * wd * p` before the moment update.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Moment estimates and step counter for [`adam_step`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn with_step(mut self, step: u64) -> Self {
        self.step = step;
        self
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One Adam update with bias correction over every parameter in `params`.
pub fn adam_step(params: &mut ParamSet, state: &mut AdamState) -> Result<()> {
    let (values, grads) = params.split_mut();
    for name in values.keys() {
        if !grads.contains_key(name) {
            return Err(Error::Lookup(format!("missing gradient for parameter {name:?}")));
        }
    }
    let cfg = state.config;
    let t = state.step + 1;
    let bias1 = 1.0 - cfg.beta1.powi(t as i32);
    let bias2 = 1.0 - cfg.beta2.powi(t as i32);

    for (name, p) in values.iter_mut() {
        let g = &grads[name];
        p.check_same_shape(g)?;
        let m = state
            .first
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(p.shape()));
        let v = state
            .second
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(p.shape()));
        let decay = cfg.learning_rate * cfg.weight_decay;
        for (((pi, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *pi -= decay * *pi;
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = *mi / bias1;
            if m_hat == 0.0 {
                continue;
            }
            let v_hat = *vi / bias2;
            *pi -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    state.step = t;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(p: f64, g: f64) -> ParamSet {
        let mut ps = ParamSet::new();
        ps.insert("p", Tensor::scalar(p));
        ps.set_grad("p", Tensor::scalar(g)).unwrap();
        ps
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut ps = ParamSet::new();
        ps.insert("w", Tensor::matrix(2, 2, vec![1.0, -2.0, 3.0, 0.5]).unwrap());
        let before = ps.clone();
        let mut st = AdamState::new(AdamConfig::default());
        for _ in 0..3 {
            adam_step(&mut ps, &mut st).unwrap();
        }
        assert_eq!(ps.get("w").unwrap(), before.get("w").unwrap());
    }

    #[test]
    fn zero_betas_hand_value() {
        let mut ps = single(1.0, 1.0);
        let mut st = AdamState::new(AdamConfig {
            learning_rate: 0.1,
            beta1: 0.0,
            beta2: 0.0,
            epsilon: 0.0,
            weight_decay: 0.0,
        });
        adam_step(&mut ps, &mut st).unwrap();
        assert!((ps.get("p").unwrap().data()[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn step_counter_increments_by_one() {
        let mut ps = single(1.0, 0.5);
        let mut st = AdamState::new(AdamConfig::default()).with_step(5);
        adam_step(&mut ps, &mut st).unwrap();
        assert_eq!(st.step(), 6);
    }

    #[test]
    fn decoupled_weight_decay_shrinks_without_gradient() {
        let mut ps = single(2.0, 0.0);
        let mut st = AdamState::new(AdamConfig {
            learning_rate: 0.1,
            weight_decay: 0.5,
            ..AdamConfig::default()
        });
        adam_step(&mut ps, &mut st).unwrap();
        assert!((ps.get("p").unwrap().data()[0] - 1.9).abs() < 1e-15);
    }

    #[test]
    fn missing_gradient_is_error() {
        let mut ps = single(1.0, 1.0);
        ps.clear_grad("p");
        let mut st = AdamState::new(AdamConfig::default());
        assert!(adam_step(&mut ps, &mut st).is_err());
    }

    #[test]
    fn deterministic_bitwise() {
        let run = || {
            let mut ps = single(0.3, -0.7);
            let mut st = AdamState::new(AdamConfig::default());
            for _ in 0..10 {
                adam_step(&mut ps, &mut st).unwrap();
            }
            ps.get("p").unwrap().data()[0].to_bits()
        };
        assert_eq!(run(), run());
    }
}
