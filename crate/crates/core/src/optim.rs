//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One trainable tensor paired with its gradient.
pub struct ParamSlot<'a> {
    pub name: String,
    pub values: &'a mut [f64],
    pub grads: &'a [f64],
}

impl<'a> ParamSlot<'a> {
    pub fn new(name: impl Into<String>, values: &'a mut [f64], grads: &'a [f64]) -> Self {
        Self {
            name: name.into(),
            values,
            grads,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

/// Optimizer state. Moment buffers are sized on the first step and must
/// keep the same slot layout afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    pub fn step(&mut self, slots: &mut [ParamSlot<'_>]) -> Result<()> {
        for slot in slots.iter() {
            if slot.values.len() != slot.grads.len() {
                return Err(Error::validation(format!(
                    "{}: {} values but {} gradients",
                    slot.name,
                    slot.values.len(),
                    slot.grads.len()
                )));
            }
            if let Some(i) = slot.grads.iter().position(|g| !g.is_finite()) {
                return Err(Error::numeric(format!("non-finite gradient at {}[{i}]", slot.name)));
            }
        }

        if self.step == 0 && self.first_moment.is_empty() {
            self.first_moment = slots.iter().map(|s| vec![0.0; s.values.len()]).collect();
            self.second_moment = self.first_moment.clone();
        } else if self.first_moment.len() != slots.len()
            || self
                .first_moment
                .iter()
                .zip(slots.iter())
                .any(|(m, s)| m.len() != s.values.len())
        {
            return Err(Error::validation("parameter layout changed between optimizer steps"));
        }

        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let correction1 = 1.0 - beta1.powi(t);
        let correction2 = 1.0 - beta2.powi(t);

        for ((slot, m), v) in slots
            .iter_mut()
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            for (((p, &g), m), v) in slot
                .values
                .iter_mut()
                .zip(slot.grads)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / correction1;
                let v_hat = *v / correction2;
                *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_from_fresh_state_changes_nothing() {
        let mut state = AdamState::new(AdamConfig::default());
        let mut p = vec![1.5, -2.0];
        let g = vec![0.0, 0.0];
        state.step(&mut [ParamSlot::new("p", &mut p, &g)]).unwrap();
        assert_eq!(p, vec![1.5, -2.0]);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn moments_decay_under_zero_gradient() {
        let mut state = AdamState::new(AdamConfig::default());
        let mut p = vec![0.0];
        state.step(&mut [ParamSlot::new("p", &mut p, &[2.0])]).unwrap();
        let (m1, v1) = (state.first_moment[0][0], state.second_moment[0][0]);
        state.step(&mut [ParamSlot::new("p", &mut p, &[0.0])]).unwrap();
        assert_eq!(state.first_moment[0][0], 0.9 * m1);
        assert_eq!(state.second_moment[0][0], 0.999 * v1);
        assert_eq!(state.step, 2);
    }

    #[test]
    fn first_step_with_unit_gradient() {
        // m = 0.1, v = 0.001; bias-corrected both become 1, so the step is
        // lr / (1 + eps).
        let mut state = AdamState::new(AdamConfig::default());
        let mut p = vec![0.0];
        state.step(&mut [ParamSlot::new("p", &mut p, &[1.0])]).unwrap();
        assert!((p[0] - (-0.01 / (1.0 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn identical_tensors_get_identical_updates() {
        let mut state = AdamState::new(AdamConfig::default());
        let mut a = vec![0.3, -0.7, 2.0];
        let mut b = a.clone();
        let g = vec![0.5, -1.25, 3.0];
        for _ in 0..5 {
            state
                .step(&mut [ParamSlot::new("a", &mut a, &g), ParamSlot::new("b", &mut b, &g)])
                .unwrap();
        }
        assert_eq!(a, b);
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut state = AdamState::new(AdamConfig::default());
        let mut p = vec![0.0, 0.0];
        let err = state
            .step(&mut [ParamSlot::new("head.means", &mut p, &[0.0, f64::NAN])])
            .unwrap_err();
        assert!(err.to_string().contains("head.means[1]"), "{err}");
        assert_eq!(state.step, 0);
        assert_eq!(p, vec![0.0, 0.0]);
    }

    #[test]
    fn layout_change_is_rejected() {
        let mut state = AdamState::new(AdamConfig::default());
        let mut p = vec![0.0];
        state.step(&mut [ParamSlot::new("p", &mut p, &[1.0])]).unwrap();
        let mut q = vec![0.0, 0.0];
        assert!(state.step(&mut [ParamSlot::new("q", &mut q, &[1.0, 1.0])]).is_err());
    }
}
