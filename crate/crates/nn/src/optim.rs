use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::params::ParameterStore;

/// RMSProp with velocity-style momentum and decoupled weight decay:
///
/// ```text
/// a ← ρ·a + (1 − ρ)·g²
/// v ← μ·v + lr·g / √(a + eps)
/// w ← w − v − lr·weight_decay·w
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmsPropConfig {
    pub lr: f64,
    pub momentum: f64,
    pub decay: f64,
    pub weight_decay: f64,
    pub eps: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            momentum: 0.98,
            decay: 0.95,
            weight_decay: 0.0,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RmsProp {
    pub config: RmsPropConfig,
    state: HashMap<String, (Vec<f64>, Vec<f64>)>,
}

impl RmsProp {
    pub fn new(config: RmsPropConfig) -> Self {
        Self {
            config,
            state: HashMap::new(),
        }
    }

    /// Applies one update to every unfrozen parameter and zeroes all gradients.
    /// A non-finite gradient aborts before anything is modified.
    pub fn step(&mut self, store: &mut ParameterStore) -> Result<()> {
        for (name, p) in store.iter() {
            if !p.frozen && !p.grad.is_finite() {
                return Err(NnError::Training {
                    param: name.to_string(),
                    reason: "non-finite gradient".into(),
                });
            }
        }
        let c = self.config;
        for (name, p) in store.iter_mut() {
            if p.frozen {
                continue;
            }
            let n = p.value.len();
            let (acc, vel) = self
                .state
                .entry(name.to_string())
                .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            let grads = p.grad.values();
            let values = p.value.values_mut();
            for i in 0..n {
                let g = grads[i];
                acc[i] = c.decay * acc[i] + (1.0 - c.decay) * g * g;
                vel[i] = c.momentum * vel[i] + c.lr * g / (acc[i] + c.eps).sqrt();
                values[i] -= vel[i] + c.lr * c.weight_decay * values[i];
            }
        }
        store.zero_grad();
        Ok(())
    }
}

/// Update rule recorded alongside checkpoints.
pub const RMSPROP_VARIANT: &str =
    "a <- decay*a + (1-decay)*g^2; v <- momentum*v + lr*g/sqrt(a+eps); w <- w - v - lr*weight_decay*w";
