//! Non-centered RMSProp with epsilon added outside the square root.

use crate::{ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RmsPropConfig {
    pub lr: f64,
    pub alpha: f64,
    pub eps: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        RmsPropConfig {
            lr: 1e-4,
            alpha: 0.99,
            eps: 1e-5,
        }
    }
}

/// Running second-moment accumulators, one per parameter in store order.
#[derive(Clone, Debug, PartialEq)]
pub struct RmsPropState {
    pub square_avg: Vec<Tensor>,
    pub steps: u64,
}

impl RmsPropState {
    pub fn new(store: &ParamStore) -> Self {
        RmsPropState {
            square_avg: store
                .iter()
                .map(|p| Tensor::zeros(p.value.shape()))
                .collect(),
            steps: 0,
        }
    }
}

/// Update one parameter slice in place:
/// `v ← αv + (1−α)g²`, `θ ← θ − lr·g/(√v + ε)`.
pub fn rmsprop_update(theta: &mut [f64], grad: &[f64], v: &mut [f64], cfg: &RmsPropConfig) {
    assert!(
        theta.len() == grad.len() && grad.len() == v.len(),
        "rmsprop: parameter, gradient and accumulator lengths differ"
    );
    for ((t, g), s) in theta.iter_mut().zip(grad).zip(v.iter_mut()) {
        *s = cfg.alpha * *s + (1.0 - cfg.alpha) * g * g;
        *t -= cfg.lr * g / (s.sqrt() + cfg.eps);
    }
}

/// Apply one RMSProp step to every parameter using its stored gradient.
pub fn rmsprop_step(store: &mut ParamStore, state: &mut RmsPropState, cfg: &RmsPropConfig) {
    assert_eq!(
        store.len(),
        state.square_avg.len(),
        "optimizer state does not match parameters"
    );
    for (id, v) in store
        .ids()
        .collect::<Vec<_>>()
        .into_iter()
        .zip(&mut state.square_avg)
    {
        let p = store.get_mut(id);
        assert_eq!(
            p.value.shape(),
            v.shape(),
            "optimizer state shape mismatch for {}",
            p.name
        );
        rmsprop_update(p.value.data_mut(), p.grad.data(), v.data_mut(), cfg);
    }
    state.steps += 1;
}
