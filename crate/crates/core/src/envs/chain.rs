//! Single-state MDP with unit reward, for checking Bellman fixed points.

use super::EnvState;

/// Exact action value `1 / (1 − γ)` of the unit-reward single-state MDP.
pub fn chain_oracle_q(gamma: f64) -> f64 {
    assert!((0.0..1.0).contains(&gamma), "gamma must lie in [0, 1)");
    1.0 / (1.0 - gamma)
}

pub(super) fn observations(_state: &EnvState) -> Vec<Vec<f64>> {
    vec![vec![1.0]]
}

pub(super) fn step(_state: &mut EnvState) -> f64 {
    1.0
}
