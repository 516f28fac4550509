//! Cooperative navigation: agents spread out to cover landmarks.
//!
//! Observation of agent `i`: own velocity, own position, every landmark
//! relative to the agent, every other agent relative to the agent (index order).

use super::{dist, integrate_agents, steer, EnvState};

pub(super) const EXPERT_KP: f64 = 2.0;
pub(super) const EXPERT_KD: f64 = 0.76;

pub(super) fn observations(state: &EnvState) -> Vec<Vec<f64>> {
    let n = state.agent_pos.len();
    (0..n)
        .map(|i| {
            let p = state.agent_pos[i];
            let v = state.agent_vel[i];
            let mut o = Vec::with_capacity(state.spec.obs_dim());
            o.extend_from_slice(&v);
            o.extend_from_slice(&p);
            for l in &state.target_pos {
                o.extend_from_slice(&[l[0] - p[0], l[1] - p[1]]);
            }
            for (j, q) in state.agent_pos.iter().enumerate() {
                if j != i {
                    o.extend_from_slice(&[q[0] - p[0], q[1] - p[1]]);
                }
            }
            o
        })
        .collect()
}

/// `−Σ_l min_i ‖p_i − l‖ − penalty · #(pairs closer than two radii)`.
pub(crate) fn reward(state: &EnvState) -> f64 {
    let cover: f64 = state
        .target_pos
        .iter()
        .map(|&l| {
            state
                .agent_pos
                .iter()
                .map(|&p| dist(p, l))
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    let n = state.agent_pos.len();
    let mut overlaps = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            if dist(state.agent_pos[i], state.agent_pos[j]) < 2.0 * state.spec.agent_radius {
                overlaps += 1;
            }
        }
    }
    -cover - state.spec.collision_penalty * overlaps as f64
}

pub(super) fn step(state: &mut EnvState, actions: &[Vec<f64>]) -> f64 {
    integrate_agents(state, actions);
    reward(state)
}

/// Landmark claimed by each agent: agents in index order take the nearest
/// landmark not yet claimed. Agents beyond the landmark count get `None`.
pub(crate) fn greedy_assignment(state: &EnvState) -> Vec<Option<usize>> {
    let mut claimed = vec![false; state.target_pos.len()];
    state
        .agent_pos
        .iter()
        .map(|&p| {
            let pick = state
                .target_pos
                .iter()
                .enumerate()
                .filter(|(l, _)| !claimed[*l])
                .min_by(|a, b| dist(p, *a.1).total_cmp(&dist(p, *b.1)))
                .map(|(l, _)| l);
            if let Some(l) = pick {
                claimed[l] = true;
            }
            pick
        })
        .collect()
}

pub(super) fn expert_action(state: &EnvState, i: usize) -> Vec<f64> {
    let p = state.agent_pos[i];
    let v = state.agent_vel[i];
    let goal = greedy_assignment(state)[i].map_or(p, |l| state.target_pos[l]);
    steer(p, v, goal, EXPERT_KP, EXPERT_KD)
}
