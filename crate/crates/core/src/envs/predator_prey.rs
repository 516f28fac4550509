//! Predator-prey: predators chase a scripted prey that flees the nearest one.
//!
//! Observation of predator `i`: own velocity, own position, prey position and
//! velocity relative to the predator, other predators relative to the
//! predator (index order).

use super::{clamp_norm, dist, integrate_agents, steer, EnvState};

pub(super) const EXPERT_KP: f64 = 3.0;
pub(super) const EXPERT_KD: f64 = 0.5;
/// Seconds of prey motion the pursuit aims ahead by.
pub(super) const EXPERT_LEAD: f64 = 0.3;

pub(super) fn observations(state: &EnvState) -> Vec<Vec<f64>> {
    let prey = state.target_pos[0];
    let prey_v = state.target_vel[0];
    (0..state.agent_pos.len())
        .map(|i| {
            let p = state.agent_pos[i];
            let v = state.agent_vel[i];
            let mut o = Vec::with_capacity(state.spec.obs_dim());
            o.extend_from_slice(&v);
            o.extend_from_slice(&p);
            o.extend_from_slice(&[prey[0] - p[0], prey[1] - p[1]]);
            o.extend_from_slice(&[prey_v[0] - v[0], prey_v[1] - v[1]]);
            for (j, q) in state.agent_pos.iter().enumerate() {
                if j != i {
                    o.extend_from_slice(&[q[0] - p[0], q[1] - p[1]]);
                }
            }
            o
        })
        .collect()
}

/// Moves the prey at full speed directly away from the nearest predator.
fn move_prey(state: &mut EnvState) {
    let s = &state.spec;
    let prey = state.target_pos[0];
    let nearest = state
        .agent_pos
        .iter()
        .min_by(|a, b| dist(**a, prey).total_cmp(&dist(**b, prey)))
        .copied()
        .expect("at least one predator");
    let away = [prey[0] - nearest[0], prey[1] - nearest[1]];
    let norm = away[0].hypot(away[1]);
    let vel = if norm > 0.0 {
        clamp_norm(
            [away[0] / norm * s.prey_speed, away[1] / norm * s.prey_speed],
            s.prey_speed,
        )
    } else {
        [0.0, 0.0]
    };
    let half = s.arena_half_width;
    let next = [
        (prey[0] + s.dt * vel[0]).clamp(-half, half),
        (prey[1] + s.dt * vel[1]).clamp(-half, half),
    ];
    state.target_vel[0] = [(next[0] - prey[0]) / s.dt, (next[1] - prey[1]) / s.dt];
    state.target_pos[0] = next;
}

pub(crate) fn reward(state: &EnvState) -> f64 {
    let prey = state.target_pos[0];
    let captures = state
        .agent_pos
        .iter()
        .filter(|&&p| dist(p, prey) < state.spec.capture_radius)
        .count();
    state.spec.capture_bonus * captures as f64 - state.spec.time_penalty
}

pub(super) fn step(state: &mut EnvState, actions: &[Vec<f64>]) -> f64 {
    integrate_agents(state, actions);
    move_prey(state);
    reward(state)
}

pub(super) fn expert_action(state: &EnvState, i: usize) -> Vec<f64> {
    let prey = state.target_pos[0];
    let pv = state.target_vel[0];
    let goal = [prey[0] + EXPERT_LEAD * pv[0], prey[1] + EXPERT_LEAD * pv[1]];
    steer(
        state.agent_pos[i],
        state.agent_vel[i],
        goal,
        EXPERT_KP,
        EXPERT_KD,
    )
}
