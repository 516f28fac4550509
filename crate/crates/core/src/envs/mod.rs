//! Desk-scale cooperative particle tasks and a single-state oracle MDP.
//!
//! Particle entities are damped point masses in a square arena. Every agent
//! receives its own observation and the shared team reward; episodes end
//! exactly at the horizon.

mod chain;
mod coop_nav;
mod predator_prey;

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::rng::StreamRng;
use crate::{Error, Result};

pub use chain::chain_oracle_q;

pub type Vec2 = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EnvKind {
    CoopNavLite,
    PredatorPreyLite,
    ChainOracle,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::CoopNavLite => "coop_nav_lite",
            EnvKind::PredatorPreyLite => "predator_prey_lite",
            EnvKind::ChainOracle => "chain_oracle",
        }
    }

    pub fn is_particle(self) -> bool {
        !matches!(self, EnvKind::ChainOracle)
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "coop_nav_lite" => Ok(EnvKind::CoopNavLite),
            "predator_prey_lite" => Ok(EnvKind::PredatorPreyLite),
            "chain_oracle" => Ok(EnvKind::ChainOracle),
            other => Err(Error::Config(format!(
                "unknown env {other:?} (expected coop_nav_lite, predator_prey_lite or chain_oracle)"
            ))),
        }
    }
}

/// Static description of a task.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub n_agents: usize,
    /// Landmarks (coop_nav_lite); ignored elsewhere.
    pub n_landmarks: usize,
    pub horizon: usize,
    pub dt: f64,
    pub damping: f64,
    pub max_accel: f64,
    pub max_speed: f64,
    pub arena_half_width: f64,
    pub agent_radius: f64,
    pub collision_penalty: f64,
    pub capture_radius: f64,
    pub capture_bonus: f64,
    pub time_penalty: f64,
    pub prey_speed: f64,
}

impl EnvSpec {
    pub fn coop_nav_lite() -> Self {
        Self {
            kind: EnvKind::CoopNavLite,
            n_agents: 3,
            n_landmarks: 3,
            horizon: 25,
            dt: 0.1,
            damping: 0.75,
            max_accel: 5.0,
            max_speed: 1.5,
            arena_half_width: 1.0,
            agent_radius: 0.05,
            collision_penalty: 0.5,
            capture_radius: 0.0,
            capture_bonus: 0.0,
            time_penalty: 0.0,
            prey_speed: 0.0,
        }
    }

    pub fn predator_prey_lite() -> Self {
        Self {
            kind: EnvKind::PredatorPreyLite,
            n_agents: 3,
            n_landmarks: 0,
            capture_radius: 0.2,
            capture_bonus: 1.0,
            time_penalty: 0.01,
            prey_speed: 1.0,
            collision_penalty: 0.0,
            ..Self::coop_nav_lite()
        }
    }

    pub fn chain_oracle() -> Self {
        Self {
            kind: EnvKind::ChainOracle,
            n_agents: 1,
            n_landmarks: 0,
            ..Self::coop_nav_lite()
        }
    }

    pub fn for_kind(kind: EnvKind) -> Self {
        match kind {
            EnvKind::CoopNavLite => Self::coop_nav_lite(),
            EnvKind::PredatorPreyLite => Self::predator_prey_lite(),
            EnvKind::ChainOracle => Self::chain_oracle(),
        }
    }

    pub fn obs_dim(&self) -> usize {
        match self.kind {
            EnvKind::CoopNavLite => 4 + 2 * self.n_landmarks + 2 * (self.n_agents - 1),
            EnvKind::PredatorPreyLite => 8 + 2 * (self.n_agents - 1),
            EnvKind::ChainOracle => 1,
        }
    }

    pub fn act_dim(&self) -> usize {
        match self.kind {
            EnvKind::ChainOracle => 1,
            _ => 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_agents == 0 || self.horizon == 0 {
            return Err(Error::Config("n_agents and horizon must be >= 1".into()));
        }
        if self.kind == EnvKind::CoopNavLite && self.n_landmarks == 0 {
            return Err(Error::Config(
                "coop_nav_lite needs at least one landmark".into(),
            ));
        }
        if self.kind == EnvKind::ChainOracle && self.n_agents != 1 {
            return Err(Error::Config("chain_oracle has exactly one agent".into()));
        }
        let positive = [
            self.dt,
            self.max_accel,
            self.max_speed,
            self.arena_half_width,
        ];
        if positive.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
            return Err(Error::Config(
                "dt, max_accel, max_speed and arena must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.damping) {
            return Err(Error::Config("damping must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Dynamic state of one episode.
#[derive(Debug, Clone)]
pub struct EnvState {
    pub spec: EnvSpec,
    pub agent_pos: Vec<Vec2>,
    pub agent_vel: Vec<Vec2>,
    /// Landmarks (coop_nav_lite) or the single prey (predator_prey_lite).
    pub target_pos: Vec<Vec2>,
    pub target_vel: Vec<Vec2>,
    pub step: usize,
    pub rng: StreamRng,
}

/// Outcome of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub obs: Vec<Vec<f64>>,
    /// The team reward, repeated once per agent.
    pub rewards: Vec<f64>,
    pub done: bool,
}

impl StepResult {
    pub fn team_reward(&self) -> f64 {
        self.rewards[0]
    }
}

pub(crate) fn uniform_point(rng: &mut StreamRng, half: f64) -> Vec2 {
    [
        rng.random_range(-half..=half),
        rng.random_range(-half..=half),
    ]
}

pub(crate) fn dist(a: Vec2, b: Vec2) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

pub(crate) fn clamp_norm(v: Vec2, max: f64) -> Vec2 {
    let n = v[0].hypot(v[1]);
    if n > max {
        [v[0] * max / n, v[1] * max / n]
    } else {
        v
    }
}

/// Starts an episode with every entity placed uniformly in the arena.
pub fn env_reset(spec: &EnvSpec, seed: u64) -> Result<(EnvState, Vec<Vec<f64>>)> {
    spec.validate()?;
    let mut rng = crate::rng::stream(
        seed,
        &[crate::rng::tag("env"), crate::rng::tag(spec.kind.name())],
    );
    let half = spec.arena_half_width;
    let n_targets = match spec.kind {
        EnvKind::CoopNavLite => spec.n_landmarks,
        EnvKind::PredatorPreyLite => 1,
        EnvKind::ChainOracle => 0,
    };
    let n_agents = if spec.kind.is_particle() {
        spec.n_agents
    } else {
        0
    };
    let agent_pos = (0..n_agents)
        .map(|_| uniform_point(&mut rng, half))
        .collect();
    let target_pos = (0..n_targets)
        .map(|_| uniform_point(&mut rng, half))
        .collect();
    let state = EnvState {
        spec: spec.clone(),
        agent_pos,
        agent_vel: vec![[0.0; 2]; n_agents],
        target_pos,
        target_vel: vec![[0.0; 2]; n_targets],
        step: 0,
        rng,
    };
    let obs = observations(&state);
    Ok((state, obs))
}

/// Per-agent observations of the current state.
pub fn observations(state: &EnvState) -> Vec<Vec<f64>> {
    match state.spec.kind {
        EnvKind::CoopNavLite => coop_nav::observations(state),
        EnvKind::PredatorPreyLite => predator_prey::observations(state),
        EnvKind::ChainOracle => chain::observations(state),
    }
}

/// Integrates one damped point-mass step for every agent.
pub(crate) fn integrate_agents(state: &mut EnvState, actions: &[Vec<f64>]) {
    let s = &state.spec;
    let half = s.arena_half_width;
    for ((p, v), a) in state
        .agent_pos
        .iter_mut()
        .zip(&mut state.agent_vel)
        .zip(actions)
    {
        let ax = a[0].clamp(-1.0, 1.0);
        let ay = a[1].clamp(-1.0, 1.0);
        *v = clamp_norm(
            [
                s.damping * v[0] + s.dt * ax * s.max_accel,
                s.damping * v[1] + s.dt * ay * s.max_accel,
            ],
            s.max_speed,
        );
        for k in 0..2 {
            p[k] = (p[k] + s.dt * v[k]).clamp(-half, half);
        }
    }
}

/// Advances the episode by one step with one action per agent.
pub fn env_step(state: &mut EnvState, actions: &[Vec<f64>]) -> Result<StepResult> {
    let spec = &state.spec;
    if actions.len() != spec.n_agents || actions.iter().any(|a| a.len() != spec.act_dim()) {
        return Err(Error::Shape(format!(
            "expected {} actions of dim {}, got {:?}",
            spec.n_agents,
            spec.act_dim(),
            actions.iter().map(Vec::len).collect::<Vec<_>>()
        )));
    }
    if state.step >= spec.horizon {
        return Err(Error::Usage("episode already finished".into()));
    }
    let reward = match spec.kind {
        EnvKind::CoopNavLite => coop_nav::step(state, actions),
        EnvKind::PredatorPreyLite => predator_prey::step(state, actions),
        EnvKind::ChainOracle => chain::step(state),
    };
    state.step += 1;
    Ok(StepResult {
        obs: observations(state),
        rewards: vec![reward; state.spec.n_agents],
        done: state.step == state.spec.horizon,
    })
}

/// Scripted expert action for one agent.
pub fn expert_action(state: &EnvState, agent_index: usize) -> Result<Vec<f64>> {
    if agent_index >= state.spec.n_agents {
        return Err(Error::Usage(format!(
            "agent index {agent_index} out of range"
        )));
    }
    match state.spec.kind {
        EnvKind::CoopNavLite => Ok(coop_nav::expert_action(state, agent_index)),
        EnvKind::PredatorPreyLite => Ok(predator_prey::expert_action(state, agent_index)),
        EnvKind::ChainOracle => Err(Error::Unsupported(
            "chain_oracle has no scripted expert".into(),
        )),
    }
}

/// PD steering toward `goal` with velocity damping, clipped to the unit box.
pub(crate) fn steer(pos: Vec2, vel: Vec2, goal: Vec2, kp: f64, kd: f64) -> Vec<f64> {
    (0..2)
        .map(|k| (kp * (goal[k] - pos[k]) - kd * vel[k]).clamp(-1.0, 1.0))
        .collect()
}

/// Uniform random action in `[−1, 1]^act_dim`.
pub fn random_action<R: Rng>(spec: &EnvSpec, rng: &mut R) -> Vec<f64> {
    (0..spec.act_dim())
        .map(|_| rng.random_range(-1.0..=1.0))
        .collect()
}

/// Team return of one episode driven by `policy(state, rng)`.
pub fn rollout_return<F>(spec: &EnvSpec, seed: u64, mut policy: F) -> Result<f64>
where
    F: FnMut(&EnvState, &[Vec<f64>]) -> Result<Vec<Vec<f64>>>,
{
    let (mut state, mut obs) = env_reset(spec, seed)?;
    let mut total = 0.0;
    loop {
        let actions = policy(&state, &obs)?;
        let res = env_step(&mut state, &actions)?;
        total += res.team_reward();
        obs = res.obs;
        if res.done {
            return Ok(total);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims_and_parsing() {
        assert_eq!(EnvSpec::coop_nav_lite().obs_dim(), 14);
        assert_eq!(EnvSpec::predator_prey_lite().obs_dim(), 12);
        assert_eq!(EnvSpec::chain_oracle().obs_dim(), 1);
        for k in [
            EnvKind::CoopNavLite,
            EnvKind::PredatorPreyLite,
            EnvKind::ChainOracle,
        ] {
            assert_eq!(k.name().parse::<EnvKind>().unwrap(), k);
        }
        assert!("mpe".parse::<EnvKind>().is_err());
    }

    #[test]
    fn reset_is_seeded() {
        for spec in [
            EnvSpec::coop_nav_lite(),
            EnvSpec::predator_prey_lite(),
            EnvSpec::chain_oracle(),
        ] {
            let (_, a) = env_reset(&spec, 9).unwrap();
            let (_, b) = env_reset(&spec, 9).unwrap();
            let (_, c) = env_reset(&spec, 10).unwrap();
            assert_eq!(a, b);
            assert!(spec.kind == EnvKind::ChainOracle || a != c);
            assert!(a.iter().all(|o| o.len() == spec.obs_dim()));
        }
    }

    #[test]
    fn statics_and_horizon() {
        let spec = EnvSpec::coop_nav_lite();
        let (mut state, _) = env_reset(&spec, 1).unwrap();
        let start = state.agent_pos.clone();
        let zero = vec![vec![0.0; 2]; 3];
        for k in 1..=spec.horizon {
            let res = env_step(&mut state, &zero).unwrap();
            assert_eq!(res.done, k == spec.horizon);
        }
        assert_eq!(state.agent_pos, start);
        assert!(matches!(env_step(&mut state, &zero), Err(Error::Usage(_))));
    }

    #[test]
    fn action_shape_checked() {
        let (mut state, _) = env_reset(&EnvSpec::coop_nav_lite(), 1).unwrap();
        assert!(matches!(
            env_step(&mut state, &[vec![0.0; 2]]),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            env_step(&mut state, &vec![vec![0.0; 3]; 3]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn chain_has_no_expert() {
        let (state, _) = env_reset(&EnvSpec::chain_oracle(), 1).unwrap();
        assert!(matches!(
            expert_action(&state, 0),
            Err(Error::Unsupported(_))
        ));
    }
}
