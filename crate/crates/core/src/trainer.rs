//! Decentralized actor-critic training with mean-flow policies.
//!
//! Every agent owns an [`AgentLearner`] trained only on its own shard. One
//! training step updates, in order, the critics, the policy (regression loss
//! plus Q-guidance), and all target networks.

use std::fmt::Write as _;
use std::time::Instant;

use crate::critic::{
    critic_loss, critic_update, q_guidance_forward, soft_update, CriticPair, QScale,
};
use crate::dataset::{sample_minibatch, DatasetShard, Minibatch};
use crate::envs::{expert_action, random_action, EnvSpec};
use crate::meanflow::{bc_forward, one_step_action, DeltaR, DerivativeMode, FlowBatch, PolicyNet};
use crate::nn::{
    adam_step, alloc_meter_reset_peak, alloc_meter_snapshot, AdamState, MlpParams, Tensor,
};
use crate::rng::{derive_seed, normal_tensor, stream, tag, StreamRng};
use crate::timestep::{TimestepTable, XiVector};
use crate::{Error, Result};

/// Number of trailing evaluation rows averaged into the reported score.
pub const SCORE_WINDOW: usize = 5;
/// Episodes used to measure the expert and random anchors.
pub const ANCHOR_EPISODES: usize = 100;
/// Seed of the anchor rollouts.
pub const ANCHOR_SEED: u64 = 0xA11C_4025;

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub eta: f64,
    pub xi: XiVector,
    pub batch_size: usize,
    pub gamma: f64,
    pub rho: f64,
    pub delta_r: DeltaR,
    pub derivative_mode: DerivativeMode,
    pub learning_rate: f64,
    pub total_steps: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub q_scale: QScale,
    /// Whether the regression term enters the policy loss.
    pub bc_term: bool,
    /// Worker threads across agents; results do not depend on it.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            eta: 1.0,
            xi: XiVector::UNIFORM,
            batch_size: 256,
            gamma: 0.99,
            rho: 0.005,
            delta_r: DeltaR::default(),
            derivative_mode: DerivativeMode::Fd,
            learning_rate: 3e-4,
            total_steps: 10_000,
            eval_every: 100,
            eval_episodes: 10,
            seed: 0,
            hidden: vec![64, 64],
            q_scale: QScale::Raw,
            bc_term: true,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return bad(format!("eta must be finite and >= 0, got {}", self.eta));
        }
        self.xi.validate()?;
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return bad(format!("rho must lie in [0, 1], got {}", self.rho));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if self.eval_every == 0 || self.eval_episodes == 0 {
            return bad("eval_every and eval_episodes must be >= 1".into());
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad(format!(
                "hidden widths must be non-empty and >= 1, got {:?}",
                self.hidden
            ));
        }
        if !self.bc_term && self.eta == 0.0 {
            return bad("a policy loss without the regression term needs eta > 0".into());
        }
        if self.threads == 0 {
            return bad("threads must be >= 1".into());
        }
        Ok(())
    }
}

/// Expert and random reference returns of an environment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreAnchors {
    pub random: f64,
    pub expert: f64,
}

impl ScoreAnchors {
    pub fn score(&self, raw: f64) -> Result<f64> {
        normalized_score(raw, self.random, self.expert)
    }
}

/// `100 · (raw − random_ref) / (expert_ref − random_ref)`.
pub fn normalized_score(raw: f64, random_ref: f64, expert_ref: f64) -> Result<f64> {
    if expert_ref == random_ref {
        return Err(Error::Domain(format!(
            "expert and random references are both {expert_ref}"
        )));
    }
    Ok(100.0 * (raw - random_ref) / (expert_ref - random_ref))
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn episode_seed(seed: u64, episode: usize) -> u64 {
    derive_seed(seed, &[tag("eval_episode"), episode as u64])
}

/// Returns of `episodes` scripted-expert and uniform-random episodes.
pub fn anchor_returns(spec: &EnvSpec, episodes: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut expert = Vec::with_capacity(episodes);
    let mut random = Vec::with_capacity(episodes);
    let mut rng = stream(seed, &[tag("anchor_random")]);
    for ep in 0..episodes {
        let s = episode_seed(seed, ep);
        expert.push(crate::envs::rollout_return(spec, s, |state, _| {
            (0..spec.n_agents)
                .map(|i| expert_action(state, i))
                .collect()
        })?);
        random.push(crate::envs::rollout_return(spec, s, |_, _| {
            Ok((0..spec.n_agents)
                .map(|_| random_action(spec, &mut rng))
                .collect())
        })?);
    }
    Ok((expert, random))
}

/// Mean expert and random returns over [`ANCHOR_EPISODES`] fixed episodes.
pub fn measure_anchors(spec: &EnvSpec) -> Result<ScoreAnchors> {
    let (expert, random) = anchor_returns(spec, ANCHOR_EPISODES, ANCHOR_SEED)?;
    Ok(ScoreAnchors {
        random: mean_std(&random).0,
        expert: mean_std(&expert).0,
    })
}

/// Episodic team returns of the one-step policies, fresh noise per action.
pub fn evaluate_returns(
    policies: &[PolicyNet],
    spec: &EnvSpec,
    episodes: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if episodes == 0 {
        return Err(Error::Config(
            "evaluation needs at least one episode".into(),
        ));
    }
    if policies.len() != spec.n_agents {
        return Err(Error::Config(format!(
            "{} policies for {} agents",
            policies.len(),
            spec.n_agents
        )));
    }
    let mut rng = stream(seed, &[tag("eval_noise")]);
    (0..episodes)
        .map(|ep| {
            crate::envs::rollout_return(spec, episode_seed(seed, ep), |_, obs| {
                policies
                    .iter()
                    .zip(obs)
                    .map(|(p, o)| {
                        let o = Tensor::wrap(vec![1, o.len()], o.clone());
                        let eps = normal_tensor(&mut rng, 1, p.act_dim());
                        Ok(one_step_action(p, &o, &eps)?.data().to_vec())
                    })
                    .collect()
            })
        })
        .collect()
}

/// Mean and standard deviation of [`evaluate_returns`].
pub fn evaluate(
    policies: &[PolicyNet],
    spec: &EnvSpec,
    episodes: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    Ok(mean_std(&evaluate_returns(policies, spec, episodes, seed)?))
}

/// One agent's networks, optimizer states and random stream.
#[derive(Debug, Clone)]
pub struct AgentLearner {
    pub agent_index: usize,
    pub policy: PolicyNet,
    pub policy_target: PolicyNet,
    pub policy_adam: AdamState,
    pub critics: CriticPair,
    pub table: TimestepTable,
    rng: StreamRng,
}

impl AgentLearner {
    /// All randomness derives from `(config.seed, agent_index)`.
    pub fn new(
        agent_index: usize,
        obs_dim: usize,
        act_dim: usize,
        config: &TrainConfig,
    ) -> Result<Self> {
        config.validate()?;
        let base = derive_seed(config.seed, &[tag("agent"), agent_index as u64]);
        let policy = PolicyNet::new(
            obs_dim,
            act_dim,
            &config.hidden,
            derive_seed(base, &[tag("policy")]),
        )?;
        let critics = CriticPair::new(
            obs_dim,
            act_dim,
            &config.hidden,
            derive_seed(base, &[tag("critic")]),
        )?;
        Ok(Self {
            agent_index,
            policy_target: policy.clone(),
            policy_adam: AdamState::new(policy.params()),
            policy,
            critics,
            table: TimestepTable::new(config.xi)?,
            rng: stream(base, &[tag("updates")]),
        })
    }

    pub fn rng_mut(&mut self) -> &mut StreamRng {
        &mut self.rng
    }
}

/// Losses of one training step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub critic_loss: f64,
    pub bc_loss: f64,
    pub q_loss: f64,
    pub mean_q: f64,
    /// Critic version the actor update read (see [`CriticPair::version`]).
    pub critic_version_seen_by_actor: u64,
}

/// Policy gradient of the combined loss: regression gradient plus guidance.
#[derive(Debug, Clone)]
pub struct ActorGradient {
    pub grads: MlpParams,
    pub bc_loss: f64,
    pub q_loss: f64,
    pub mean_q: f64,
}

/// Gradient of `bc_loss + (−η·mean Q¹(o, ã))` for a frozen flow batch and
/// guidance noise `q_eps`.
pub fn actor_gradient(
    policy: &PolicyNet,
    critics: &CriticPair,
    flow: &FlowBatch,
    q_eps: &Tensor,
    config: &TrainConfig,
) -> Result<ActorGradient> {
    let bc = if config.bc_term {
        Some(bc_forward(
            policy,
            flow,
            config.delta_r,
            config.derivative_mode,
        )?)
    } else {
        None
    };
    let q = q_guidance_forward(
        critics,
        policy,
        &flow.obs,
        q_eps,
        config.eta,
        config.q_scale,
    )?;
    let (bc_loss, q_loss, mean_q) = (bc.as_ref().map_or(0.0, |b| b.loss), q.loss, q.mean_q);
    let mut grads = match bc {
        Some(bc) => bc.backward()?,
        None => policy.params().zeros_like(),
    };
    if config.eta > 0.0 {
        grads.axpy(1.0, &q.backward()?)?;
    }
    Ok(ActorGradient {
        grads,
        bc_loss,
        q_loss,
        mean_q,
    })
}

fn batch_diagnostics(batch: &Minibatch) -> String {
    let max_r = batch.rewards.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    format!(
        "batch of {} rows: max |obs| {:.3e}, max |action| {:.3e}, max |reward| {:.3e}, terminal rows {}",
        batch.len(),
        batch.obs.max_abs(),
        batch.actions.max_abs(),
        max_r,
        batch.dones.iter().filter(|&&d| d != 0.0).count()
    )
}

/// Critic update, then actor update, then target updates.
pub fn train_step(
    learner: &mut AgentLearner,
    batch: &Minibatch,
    config: &TrainConfig,
) -> Result<StepMetrics> {
    let with_dump = |e: Error| match e {
        Error::Numeric(m) => Error::Numeric(format!("{m}; {}", batch_diagnostics(batch))),
        other => other,
    };
    let critic = critic_loss(
        &learner.critics,
        &learner.policy_target,
        batch,
        config.gamma,
        &mut learner.rng,
    )
    .map_err(with_dump)?;
    critic_update(&mut learner.critics, &critic, config.learning_rate).map_err(with_dump)?;

    let flow = FlowBatch::sample(
        batch.obs.clone(),
        batch.actions.clone(),
        &learner.table,
        &mut learner.rng,
    )?;
    let q_eps = if config.eta > 0.0 {
        normal_tensor(&mut learner.rng, batch.len(), learner.policy.act_dim())
    } else {
        Tensor::zeros(&[batch.len(), learner.policy.act_dim()])
    };
    let version = learner.critics.version();
    let actor = actor_gradient(&learner.policy, &learner.critics, &flow, &q_eps, config)
        .map_err(with_dump)?;
    adam_step(
        &mut learner.policy_adam,
        learner.policy.params_mut(),
        &actor.grads,
        config.learning_rate,
    )
    .map_err(with_dump)?;

    soft_update(
        &mut learner.critics,
        &mut learner.policy_target,
        &learner.policy,
        config.rho,
    )?;
    Ok(StepMetrics {
        critic_loss: critic.loss,
        bc_loss: actor.bc_loss,
        q_loss: actor.q_loss,
        mean_q: actor.mean_q,
        critic_version_seen_by_actor: version,
    })
}

/// Regression-only training of `policy` on `(obs, actions)` rows for
/// `steps` Adam steps, using the batch size, timestep weights, derivative
/// mode, `Δr` and learning rate of `config`. Returns the last loss.
pub fn behavior_clone(
    policy: &mut PolicyNet,
    obs: &Tensor,
    actions: &Tensor,
    config: &TrainConfig,
    steps: usize,
) -> Result<f64> {
    config.validate()?;
    if obs.rows() != actions.rows() || obs.rows() == 0 {
        return Err(Error::Shape(format!(
            "behavior cloning needs matching non-empty rows, got {} / {}",
            obs.rows(),
            actions.rows()
        )));
    }
    let table = TimestepTable::new(config.xi)?;
    let mut adam = AdamState::new(policy.params());
    let mut rng = stream(config.seed, &[tag("behavior_clone")]);
    let mut loss = f64::NAN;
    for _ in 0..steps {
        let idx = crate::dataset::sample_indices(obs.rows(), config.batch_size, &mut rng);
        let flow = FlowBatch::sample(
            obs.gather_rows(&idx),
            actions.gather_rows(&idx),
            &table,
            &mut rng,
        )?;
        let out = crate::meanflow::bc_loss(policy, &flow, config.delta_r, config.derivative_mode)?;
        adam_step(
            &mut adam,
            policy.params_mut(),
            &out.grads,
            config.learning_rate,
        )?;
        loss = out.loss;
    }
    Ok(loss)
}

/// One row of the metrics log, written at every evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    pub bc_loss: Vec<f64>,
    pub q_loss: Vec<f64>,
    pub critic_loss: Vec<f64>,
    pub eval_mean: f64,
    pub eval_std: f64,
    pub normalized_score: f64,
    /// Mean wall time of the training steps since the previous row.
    pub step_wall_time_s: f64,
    /// Peak live tensor bytes since the previous row.
    pub peak_live_bytes: usize,
}

/// Append-only evaluation log.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub n_agents: usize,
    /// `# key: value` lines written above the CSV header.
    pub notes: Vec<(String, String)>,
    pub rows: Vec<MetricsRow>,
}

impl MetricsLog {
    pub fn header(n_agents: usize) -> String {
        let mut cols = vec!["step".to_string()];
        for name in ["bc_loss", "q_loss", "critic_loss"] {
            cols.extend((0..n_agents).map(|i| format!("{name}_{i}")));
        }
        cols.extend(
            [
                "eval_mean",
                "eval_std",
                "normalized_score",
                "step_wall_time_s",
                "peak_live_bytes",
            ]
            .map(String::from),
        );
        cols.join(",")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.notes {
            let _ = writeln!(out, "# {k}: {v}");
        }
        out.push_str(&Self::header(self.n_agents));
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{}", r.step);
            for v in r.bc_loss.iter().chain(&r.q_loss).chain(&r.critic_loss) {
                let _ = write!(out, ",{v:?}");
            }
            let _ = writeln!(
                out,
                ",{:?},{:?},{:?},{:?},{}",
                r.eval_mean, r.eval_std, r.normalized_score, r.step_wall_time_s, r.peak_live_bytes
            );
        }
        out
    }

    /// Mean normalized score of the last [`SCORE_WINDOW`] rows.
    pub fn final_score(&self) -> Option<f64> {
        if self.rows.is_empty() {
            return None;
        }
        let tail = &self.rows[self.rows.len().saturating_sub(SCORE_WINDOW)..];
        Some(tail.iter().map(|r| r.normalized_score).sum::<f64>() / tail.len() as f64)
    }

    /// Mean raw return of the last [`SCORE_WINDOW`] rows.
    pub fn final_return(&self) -> Option<f64> {
        if self.rows.is_empty() {
            return None;
        }
        let tail = &self.rows[self.rows.len().saturating_sub(SCORE_WINDOW)..];
        Some(tail.iter().map(|r| r.eval_mean).sum::<f64>() / tail.len() as f64)
    }
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub log: MetricsLog,
    pub learners: Vec<AgentLearner>,
    pub wall_time_s: f64,
    /// Peak live tensor bytes over the whole run.
    pub peak_live_bytes: usize,
}

impl TrainOutput {
    pub fn policies(&self) -> Vec<PolicyNet> {
        self.learners.iter().map(|l| l.policy.clone()).collect()
    }
}

fn check_shards(shards: &[DatasetShard], spec: &EnvSpec) -> Result<()> {
    if shards.len() != spec.n_agents {
        return Err(Error::Config(format!(
            "{} shards for {} agents",
            shards.len(),
            spec.n_agents
        )));
    }
    for s in shards {
        if s.is_empty() {
            return Err(Error::Config(format!("shard {} is empty", s.agent_index)));
        }
        if s.obs_dim() != spec.obs_dim() || s.act_dim() != spec.act_dim() {
            return Err(Error::Config(format!(
                "shard {} dims {}/{} do not match env {}/{}",
                s.agent_index,
                s.obs_dim(),
                s.act_dim(),
                spec.obs_dim(),
                spec.act_dim()
            )));
        }
    }
    Ok(())
}

fn step_all(
    learners: &mut [AgentLearner],
    shards: &[DatasetShard],
    config: &TrainConfig,
) -> Result<Vec<StepMetrics>> {
    let run = |l: &mut AgentLearner, s: &DatasetShard| -> Result<StepMetrics> {
        let batch = sample_minibatch(s, config.batch_size, &mut l.rng)?;
        train_step(l, &batch, config).map_err(|e| match e {
            Error::Numeric(m) => Error::Numeric(format!("agent {}: {m}", l.agent_index)),
            other => other,
        })
    };
    if config.threads <= 1 || learners.len() <= 1 {
        return learners
            .iter_mut()
            .zip(shards)
            .map(|(l, s)| run(l, s))
            .collect();
    }
    let chunk = learners.len().div_ceil(config.threads);
    std::thread::scope(|scope| {
        let handles: Vec<_> = learners
            .chunks_mut(chunk)
            .zip(shards.chunks(chunk))
            .map(|(ls, ss)| {
                scope.spawn(move || {
                    ls.iter_mut()
                        .zip(ss)
                        .map(|(l, s)| run(l, s))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        let mut out = Vec::new();
        for h in handles {
            out.extend(h.join().expect("training thread panicked")?);
        }
        Ok(out)
    })
}

/// Runs `total_steps` steps for every agent, evaluating every `eval_every`.
///
/// Learner `k` is seeded from `shards[k].agent_index`, so reordering shards
/// reorders the trained learners and nothing else. `on_row` sees every row as
/// it is appended.
pub fn train(
    config: &TrainConfig,
    shards: &[DatasetShard],
    spec: &EnvSpec,
    anchors: ScoreAnchors,
    mut on_row: impl FnMut(&MetricsRow),
) -> Result<TrainOutput> {
    config.validate()?;
    check_shards(shards, spec)?;
    let started = Instant::now();
    let mut learners = shards
        .iter()
        .map(|s| AgentLearner::new(s.agent_index, spec.obs_dim(), spec.act_dim(), config))
        .collect::<Result<Vec<_>>>()?;
    let n = learners.len();
    let mut log = MetricsLog {
        n_agents: n,
        notes: Vec::new(),
        rows: Vec::new(),
    };
    let mut sums = vec![[0.0f64; 3]; n];
    let mut interval_steps = 0usize;
    let mut interval_time = 0.0f64;
    let mut run_peak = 0usize;
    alloc_meter_reset_peak();

    for step in 1..=config.total_steps {
        let t0 = Instant::now();
        let metrics = step_all(&mut learners, shards, config)?;
        interval_time += t0.elapsed().as_secs_f64();
        interval_steps += 1;
        for (acc, m) in sums.iter_mut().zip(&metrics) {
            acc[0] += m.bc_loss;
            acc[1] += m.q_loss;
            acc[2] += m.critic_loss;
        }
        if step % config.eval_every == 0 {
            let peak = alloc_meter_snapshot().peak_bytes;
            run_peak = run_peak.max(peak);
            let policies: Vec<PolicyNet> = learners.iter().map(|l| l.policy.clone()).collect();
            let eval_seed = derive_seed(config.seed, &[tag("eval"), step as u64]);
            let (mean, std) = evaluate(&policies, spec, config.eval_episodes, eval_seed)?;
            let k = interval_steps as f64;
            let row = MetricsRow {
                step,
                bc_loss: sums.iter().map(|s| s[0] / k).collect(),
                q_loss: sums.iter().map(|s| s[1] / k).collect(),
                critic_loss: sums.iter().map(|s| s[2] / k).collect(),
                eval_mean: mean,
                eval_std: std,
                normalized_score: anchors.score(mean)?,
                step_wall_time_s: interval_time / k,
                peak_live_bytes: peak,
            };
            on_row(&row);
            log.rows.push(row);
            sums.iter_mut().for_each(|s| *s = [0.0; 3]);
            interval_steps = 0;
            interval_time = 0.0;
            alloc_meter_reset_peak();
        }
    }
    run_peak = run_peak.max(alloc_meter_snapshot().peak_bytes);
    Ok(TrainOutput {
        log,
        learners,
        wall_time_s: started.elapsed().as_secs_f64(),
        peak_live_bytes: run_peak,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_constants_normalize() {
        for (expert, random) in [(516.8, 159.8), (185.6, -4.1), (79.5, -6.8)] {
            assert_eq!(normalized_score(expert, random, expert).unwrap(), 100.0);
            assert_eq!(normalized_score(random, random, expert).unwrap(), 0.0);
        }
        assert!(matches!(
            normalized_score(1.0, 2.0, 2.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn mean_std_basics() {
        assert_eq!(mean_std(&[3.0]), (3.0, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn defaults_match_reference_hyperparameters() {
        let c = TrainConfig::default();
        assert_eq!(c.batch_size, 256);
        assert_eq!(c.gamma, 0.99);
        assert_eq!(c.rho, 0.005);
        assert_eq!(c.delta_r.get(), 1e-12);
        assert_eq!(c.learning_rate, 3e-4);
        assert_eq!(c.eval_every, 100);
        assert_eq!(c.eval_episodes, 10);
        assert_eq!(c.total_steps, 10_000);
        c.validate().unwrap();
    }

    #[test]
    fn config_validation() {
        let bad = [
            TrainConfig {
                eta: -1.0,
                ..Default::default()
            },
            TrainConfig {
                gamma: 1.0,
                ..Default::default()
            },
            TrainConfig {
                rho: 1.5,
                ..Default::default()
            },
            TrainConfig {
                batch_size: 0,
                ..Default::default()
            },
            TrainConfig {
                hidden: vec![],
                ..Default::default()
            },
            TrainConfig {
                eval_every: 0,
                ..Default::default()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }
}
