use std::collections::BTreeMap;

use super::{EngineError, ParamStore};

/// Adam optimizer state with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One Adam update of every parameter in `params`; gradients are zeroed
    /// afterwards. Fails before touching anything if a parameter has never
    /// received a gradient.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<(), EngineError> {
        self.step_except(params, &[])
    }

    /// Like [`AdamState::step`], leaving parameters under `frozen_prefixes`
    /// untouched.
    pub fn step_except(&mut self, params: &mut ParamStore, frozen_prefixes: &[&str]) -> Result<(), EngineError> {
        let frozen = |path: &str| frozen_prefixes.iter().any(|f| path.starts_with(f));
        if let Some((path, _)) = params.iter().find(|(path, p)| !frozen(path) && p.grad.is_none()) {
            return Err(EngineError::MissingGradient(path.clone()));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (path, p) in params.iter_mut() {
            if frozen(path) {
                continue;
            }
            let n = p.value.numel();
            let (m, v) = self
                .moments
                .entry(path.clone())
                .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            let grad = p.grad.as_mut().expect("checked above");
            for (i, (w, g)) in p.value.data_mut().iter_mut().zip(grad.data()).enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
        Ok(())
    }
}

/// Free-function form of [`AdamState::step`].
pub fn adam_step(params: &mut ParamStore, state: &mut AdamState) -> Result<(), EngineError> {
    state.step(params)
}
