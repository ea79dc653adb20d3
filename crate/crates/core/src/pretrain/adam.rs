use std::collections::HashMap;

use crate::autograd::Scalar;
use crate::error::{Error, Result};
use crate::model::ParamStore;

/// Adam moments and step counter. Moments are lazily allocated per parameter
/// on first update and always shaped like the parameter.
#[derive(Debug, Clone)]
pub struct AdamState<S> {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay applied to parameters flagged `decay` (weight
    /// matrices; never layer-norm affines or biases).
    pub weight_decay: f64,
    m: HashMap<String, Vec<S>>,
    v: HashMap<String, Vec<S>>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(weight_decay: f64) -> Self {
        AdamState {
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: HashMap::new(),
            v: HashMap::new(),
        }
    }
}

/// One bias-corrected Adam step with decoupled weight decay. Parameters
/// absent from `grads` (untouched by the loss) stay as they are.
pub fn adam_step<S: Scalar>(
    store: &mut ParamStore<S>,
    grads: &HashMap<String, Vec<S>>,
    state: &mut AdamState<S>,
    lr: f64,
) -> Result<()> {
    state.step += 1;
    let bias1 = 1.0 - state.beta1.powi(state.step as i32);
    let bias2 = 1.0 - state.beta2.powi(state.step as i32);
    let b1 = S::from_f64(state.beta1);
    let b1c = S::from_f64(1.0 - state.beta1);
    let b2 = S::from_f64(state.beta2);
    let b2c = S::from_f64(1.0 - state.beta2);
    let eps = S::from_f64(state.eps);
    let lr_s = S::from_f64(lr);
    let inv_bias1 = S::from_f64(1.0 / bias1);
    let inv_bias2 = S::from_f64(1.0 / bias2);

    let names: Vec<String> = store.names().map(str::to_string).collect();
    for name in names {
        let Some(grad) = grads.get(&name) else {
            continue;
        };
        if let Some(bad) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGrad {
                name: format!("{name}[{bad}]"),
            });
        }
        let param = store.get_mut(&name);
        if grad.len() != param.values.len() {
            return Err(Error::Train(format!(
                "gradient length {} for parameter {name} of {} values",
                grad.len(),
                param.values.len()
            )));
        }
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| vec![S::ZERO; grad.len()]);
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| vec![S::ZERO; grad.len()]);
        let decay = if param.decay {
            S::from_f64(lr * state.weight_decay)
        } else {
            S::ZERO
        };
        for i in 0..grad.len() {
            let g = grad[i];
            m[i] = b1 * m[i] + b1c * g;
            v[i] = b2 * v[i] + b2c * g * g;
            let m_hat = m[i] * inv_bias1;
            let v_hat = v[i] * inv_bias2;
            let mut p = param.values[i];
            p = p - p * decay;
            p = p - lr_s * m_hat / (v_hat.sqrt() + eps);
            param.values[i] = p;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(values: Vec<f64>, decay: bool) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        let n = values.len();
        s.insert("w", vec![n], values, decay);
        s
    }

    #[test]
    fn first_step_update_magnitude_is_lr() {
        // g = 1 everywhere: m_hat = 1, v_hat = 1, update = lr / (1 + eps)
        let mut store = store_with(vec![0.5, -0.25, 3.0], false);
        let mut state = AdamState::new(0.0);
        let before = store.get("w").values.clone();
        let mut grads = HashMap::new();
        grads.insert("w".to_string(), vec![1.0, 1.0, 1.0]);
        adam_step(&mut store, &grads, &mut state, 1e-3).unwrap();
        for (b, a) in before.iter().zip(&store.get("w").values) {
            let delta = b - a;
            assert!((delta - 1e-3).abs() < 1e-9, "delta {delta}");
        }
    }

    #[test]
    fn zero_gradients_zero_decay_leave_params_unchanged() {
        let mut store = store_with(vec![1.0, 2.0], false);
        let mut state = AdamState::new(0.0);
        let before = store.get("w").values.clone();
        let mut grads = HashMap::new();
        grads.insert("w".to_string(), vec![0.0, 0.0]);
        adam_step(&mut store, &grads, &mut state, 1e-3).unwrap();
        assert_eq!(store.get("w").values, before);
    }

    #[test]
    fn decay_applies_only_to_flagged_params() {
        let mut store = ParamStore::new();
        store.insert("w", vec![1], vec![1.0], true);
        store.insert("b", vec![1], vec![1.0], false);
        let mut state = AdamState::new(0.01);
        let mut grads = HashMap::new();
        grads.insert("w".to_string(), vec![0.0]);
        grads.insert("b".to_string(), vec![0.0]);
        adam_step(&mut store, &grads, &mut state, 0.1).unwrap();
        assert!((store.get("w").values[0] - 0.999).abs() < 1e-12);
        assert_eq!(store.get("b").values[0], 1.0);
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut store = store_with(vec![1.0], false);
        let mut state = AdamState::new(0.0);
        let mut grads = HashMap::new();
        grads.insert("w".to_string(), vec![f64::NAN]);
        let err = adam_step(&mut store, &grads, &mut state, 1e-3).unwrap_err();
        assert!(err.to_string().contains('w'), "{err}");
    }

    #[test]
    fn repeated_runs_are_bit_identical() {
        let run = || {
            let mut store = store_with(vec![0.3, -0.7, 0.1, 0.9], true);
            let mut state = AdamState::new(0.01);
            for step in 0..100u64 {
                let g: Vec<f64> = (0..4)
                    .map(|i| ((step as f64 + 1.3) * (i as f64 - 1.5)).sin())
                    .collect();
                let mut grads = HashMap::new();
                grads.insert("w".to_string(), g);
                adam_step(&mut store, &grads, &mut state, 1e-3).unwrap();
            }
            store.get("w").values.clone()
        };
        assert_eq!(run(), run());
    }
}
