//! Adam optimizer over a parameter store.
//!
//! The first and second moment estimates mirror the parameter layout
//! path for path, so a shared Block 2 entry has exactly one moment pair
//! and one update per step regardless of how many bands feed it.

use crate::arch::{GradStore, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    /// Completed step count; bias correction uses `t` after increment.
    pub t: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub m: ParamStore,
    pub v: ParamStore,
}

impl AdamState {
    /// Fresh state with the customary defaults (beta1 0.9, beta2 0.999,
    /// epsilon 1e-8).
    pub fn new(params: &ParamStore, learning_rate: f64) -> Result<AdamState> {
        AdamState::with_hyperparams(params, learning_rate, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyperparams(
        params: &ParamStore,
        learning_rate: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    ) -> Result<AdamState> {
        if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
            return Err(Error::config(format!(
                "learning rate must be finite and >= 0, got {}",
                learning_rate
            )));
        }
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
            return Err(Error::config(format!(
                "betas must be in [0, 1), got {} and {}",
                beta1, beta2
            )));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::config(format!(
                "epsilon must be finite and > 0, got {}",
                epsilon
            )));
        }
        Ok(AdamState {
            t: 0,
            learning_rate,
            beta1,
            beta2,
            epsilon,
            m: params.zeros_like(),
            v: params.zeros_like(),
        })
    }
}

/// One Adam update in place. Gradients must mirror the parameter layout
/// exactly; a non-finite gradient aborts with the offending layer path.
pub fn adam_step(params: &mut ParamStore, grads: &GradStore, state: &mut AdamState) -> Result<()> {
    let paths = params.paths();
    if paths != grads.paths() || paths != state.m.paths() || paths != state.v.paths() {
        return Err(Error::config(
            "gradient or moment store does not mirror the parameters",
        ));
    }
    for (path, g) in grads.iter() {
        if !g.is_finite() {
            return Err(Error::numeric(format!("non-finite gradient at {}", path)));
        }
    }

    state.t += 1;
    let bc1 = 1.0 - state.beta1.powi(state.t as i32);
    let bc2 = 1.0 - state.beta2.powi(state.t as i32);
    let lr = state.learning_rate;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);

    for path in &paths {
        let grad = grads.get(path)?;
        let g_slices = grad.slices();
        let mut p_slices = params.get_mut(path)?.slices_mut();
        let mut m_entry = state.m.get_mut(path)?.slices_mut();
        let mut v_entry = state.v.get_mut(path)?.slices_mut();
        for t_idx in 0..g_slices.len() {
            let g = g_slices[t_idx];
            let p = &mut p_slices[t_idx];
            let m = &mut m_entry[t_idx];
            let v = &mut v_entry[t_idx];
            for i in 0..g.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{LayerParams, ParamStore};
    use crate::layers::{FcParams, FcSpec};
    use crate::testutil::rel_err;

    fn scalar_store(w: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert(
            "block3/layer00",
            LayerParams::Fc(FcParams {
                weights: vec![w],
                bias: vec![0.0],
            }),
        )
        .unwrap();
        s
    }

    fn scalar_grad(g: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert(
            "block3/layer00",
            LayerParams::Fc(FcParams {
                weights: vec![g],
                bias: vec![0.0],
            }),
        )
        .unwrap();
        s
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut params = scalar_store(1.5);
        let before = params.clone();
        let mut state = AdamState::new(&params, 1e-3).unwrap();
        for _ in 0..3 {
            adam_step(&mut params, &scalar_grad(0.0), &mut state).unwrap();
        }
        assert_eq!(params, before);
        assert_eq!(state.t, 3);
    }

    #[test]
    fn first_step_moves_by_almost_lr() {
        // with bias correction the first update is -lr * g / (|g| + eps)
        let mut params = scalar_store(0.0);
        let mut state = AdamState::new(&params, 5e-4).unwrap();
        adam_step(&mut params, &scalar_grad(0.5), &mut state).unwrap();
        let w = params.to_flat()[0];
        assert!(rel_err(w, -5e-4) < 1e-6, "got {}", w);
    }

    #[test]
    fn two_steps_match_hand_computation() {
        let (lr, b1, b2, eps): (f64, f64, f64, f64) = (0.01, 0.9, 0.999, 1e-8);
        let (g1, g2) = (0.3, -0.2);
        let mut w: f64 = 1.0;
        let (mut m, mut v) = (0.0, 0.0);
        for (t, g) in [(1, g1), (2, g2)] {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1.powi(t));
            let v_hat: f64 = v / (1.0 - b2.powi(t));
            w -= lr * m_hat / (v_hat.sqrt() + eps);
        }

        let mut params = scalar_store(1.0);
        let mut state = AdamState::with_hyperparams(&params, lr, b1, b2, eps).unwrap();
        adam_step(&mut params, &scalar_grad(g1), &mut state).unwrap();
        adam_step(&mut params, &scalar_grad(g2), &mut state).unwrap();
        assert!(rel_err(params.to_flat()[0], w) < 1e-12);
    }

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        let mut params = scalar_store(0.25);
        let before = params.clone();
        let mut state = AdamState::new(&params, 0.0).unwrap();
        adam_step(&mut params, &scalar_grad(0.7), &mut state).unwrap();
        assert_eq!(params, before);
        // moments still advance
        assert!(state.m.to_flat()[0] != 0.0);
    }

    #[test]
    fn non_finite_gradient_names_the_layer() {
        let mut params = scalar_store(0.0);
        let mut state = AdamState::new(&params, 1e-3).unwrap();
        let err = adam_step(&mut params, &scalar_grad(f64::NAN), &mut state)
            .unwrap_err()
            .to_string();
        assert!(err.contains("block3/layer00"), "{}", err);
    }

    #[test]
    fn mismatched_layout_is_rejected() {
        let mut params = scalar_store(0.0);
        let mut state = AdamState::new(&params, 1e-3).unwrap();
        let mut other = ParamStore::new();
        other
            .insert(
                "block3/layer01",
                LayerParams::Fc(FcParams::zeros(FcSpec::new(1, 1).unwrap())),
            )
            .unwrap();
        assert!(adam_step(&mut params, &other, &mut state).is_err());
    }

    #[test]
    fn invalid_hyperparams_are_rejected() {
        let params = scalar_store(0.0);
        assert!(AdamState::with_hyperparams(&params, -1.0, 0.9, 0.999, 1e-8).is_err());
        assert!(AdamState::with_hyperparams(&params, 1e-3, 1.0, 0.999, 1e-8).is_err());
        assert!(AdamState::with_hyperparams(&params, 1e-3, 0.9, 0.999, 0.0).is_err());
    }
}
