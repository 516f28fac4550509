//! Double critics with target copies.
//!
//! Both online critics regress onto `y = reward + γ(1 − done)·mean_j Q'_j(o', ã')`
//! where `ã'` is a one-step sample of the target policy. The policy is guided
//! by `−η·mean Q¹(o, ã)` differentiated through the sampled action.

use rand::Rng;

use crate::dataset::Minibatch;
use crate::meanflow::{one_step_action, OneStepTape, PolicyNet};
use crate::nn::{
    adam_step, mlp_forward, mlp_init, soft_update_params, AdamState, MlpParams, MlpSpec, Tensor,
};
use crate::rng::normal_tensor;
use crate::{Error, Result};

/// Two online critics `[o, a] → Q`, their targets and optimizer states.
#[derive(Debug, Clone)]
pub struct CriticPair {
    pub q1: MlpParams,
    pub q2: MlpParams,
    pub q1_target: MlpParams,
    pub q2_target: MlpParams,
    pub adam1: AdamState,
    pub adam2: AdamState,
    obs_dim: usize,
    act_dim: usize,
    version: u64,
}

impl CriticPair {
    /// Fresh critics from two derived seeds; targets start as exact copies.
    pub fn new(obs_dim: usize, act_dim: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let spec = MlpSpec::new(obs_dim + act_dim, hidden, 1);
        let q1 = mlp_init(&spec, crate::rng::derive_seed(seed, &[1]))?;
        let q2 = mlp_init(&spec, crate::rng::derive_seed(seed, &[2]))?;
        Self::from_params(obs_dim, act_dim, q1, q2)
    }

    pub fn from_params(
        obs_dim: usize,
        act_dim: usize,
        q1: MlpParams,
        q2: MlpParams,
    ) -> Result<Self> {
        let spec = q1.spec();
        if spec != q2.spec() || spec.input_dim != obs_dim + act_dim || spec.output_dim != 1 {
            return Err(Error::Config(
                "critic specs do not fit [obs, action] → 1".into(),
            ));
        }
        Ok(Self {
            adam1: AdamState::new(&q1),
            adam2: AdamState::new(&q2),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            q1,
            q2,
            obs_dim,
            act_dim,
            version: 0,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    /// Number of optimizer updates applied to the online critics.
    pub fn version(&self) -> u64 {
        self.version
    }

    fn input(&self, o: &Tensor, a: &Tensor) -> Result<Tensor> {
        if o.cols() != self.obs_dim || a.cols() != self.act_dim || o.rows() != a.rows() {
            return Err(Error::Shape(format!(
                "critic expects [B, {}] and [B, {}], got {:?} and {:?}",
                self.obs_dim,
                self.act_dim,
                o.shape(),
                a.shape()
            )));
        }
        Tensor::concat_cols(&[o, a])
    }

    /// Detached `Q(o, a)` of one network, as a flat vector.
    pub fn q_values(&self, net: &MlpParams, o: &Tensor, a: &Tensor) -> Result<Vec<f64>> {
        let x = self.input(o, a)?;
        Ok(mlp_forward(net, &x, false)?.0.data().to_vec())
    }
}

/// Bellman targets for a batch, given next-state actions `next_actions`.
pub fn bellman_targets(
    pair: &CriticPair,
    batch: &Minibatch,
    next_actions: &Tensor,
    gamma: f64,
) -> Result<Vec<f64>> {
    let q1 = pair.q_values(&pair.q1_target, &batch.next_obs, next_actions)?;
    let q2 = pair.q_values(&pair.q2_target, &batch.next_obs, next_actions)?;
    let y: Vec<f64> = (0..batch.len())
        .map(|i| {
            let boot = 0.5 * (q1[i] + q2[i]);
            batch.rewards[i] + gamma * (1.0 - batch.dones[i]) * boot
        })
        .collect();
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite Bellman target at row {i} (reward {}, Q' {} / {})",
            batch.rewards[i], q1[i], q2[i]
        )));
    }
    Ok(y)
}

/// Loss value and gradients of both online critics.
#[derive(Debug, Clone)]
pub struct CriticLossOutput {
    pub loss: f64,
    pub grads_q1: MlpParams,
    pub grads_q2: MlpParams,
    pub targets: Vec<f64>,
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::Config(format!(
            "gamma must lie in [0, 1), got {gamma}"
        )));
    }
    Ok(())
}

/// Mean over the batch and both critics of `(y − Q_j(o, a))²`, with `ã'`
/// drawn by the target policy from fresh noise.
pub fn critic_loss<R: Rng>(
    pair: &CriticPair,
    policy_target: &PolicyNet,
    batch: &Minibatch,
    gamma: f64,
    rng: &mut R,
) -> Result<CriticLossOutput> {
    check_gamma(gamma)?;
    if batch.is_empty() {
        return Err(Error::Usage("critic loss on an empty batch".into()));
    }
    let eps = normal_tensor(rng, batch.len(), pair.act_dim);
    let next_actions = one_step_action(policy_target, &batch.next_obs, &eps)?;
    let targets = bellman_targets(pair, batch, &next_actions, gamma)?;
    critic_loss_with_targets(pair, batch, targets)
}

/// [`critic_loss`] against precomputed (detached) targets.
pub fn critic_loss_with_targets(
    pair: &CriticPair,
    batch: &Minibatch,
    targets: Vec<f64>,
) -> Result<CriticLossOutput> {
    let x = pair.input(&batch.obs, &batch.actions)?;
    let n = batch.len() as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(2);
    for net in [&pair.q1, &pair.q2] {
        let (q, tape) = mlp_forward(net, &x, true)?;
        let resid: Vec<f64> = q.data().iter().zip(&targets).map(|(q, y)| q - y).collect();
        loss += resid.iter().map(|d| d * d).sum::<f64>() / (2.0 * n);
        let g = Tensor::column(&resid).scale(1.0 / n);
        grads.push(tape.expect("recorded").backward_params(&g)?);
    }
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("critic loss is {loss}")));
    }
    let grads_q2 = grads.pop().expect("two critics");
    let grads_q1 = grads.pop().expect("two critics");
    Ok(CriticLossOutput {
        loss,
        grads_q1,
        grads_q2,
        targets,
    })
}

/// Applies one Adam step to both online critics.
pub fn critic_update(pair: &mut CriticPair, out: &CriticLossOutput, lr: f64) -> Result<()> {
    adam_step(&mut pair.adam1, &mut pair.q1, &out.grads_q1, lr)?;
    adam_step(&mut pair.adam2, &mut pair.q2, &out.grads_q2, lr)?;
    pair.version += 1;
    Ok(())
}

/// `target ← ρ·online + (1 − ρ)·target` for both critics and the policy.
pub fn soft_update(
    pair: &mut CriticPair,
    policy_target: &mut PolicyNet,
    policy: &PolicyNet,
    rho: f64,
) -> Result<()> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::Config(format!("rho must lie in [0, 1], got {rho}")));
    }
    soft_update_params(&mut pair.q1_target, &pair.q1, rho)?;
    soft_update_params(&mut pair.q2_target, &pair.q2, rho)?;
    soft_update_params(policy_target.params_mut(), policy.params(), rho)
}

/// Scaling applied to the guidance term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QScale {
    /// `−η·mean Q¹`.
    #[default]
    Raw,
    /// `−η·mean Q¹ / mean |Q¹|`, the divisor held constant.
    MeanAbs,
}

impl QScale {
    pub fn name(self) -> &'static str {
        match self {
            QScale::Raw => "raw",
            QScale::MeanAbs => "mean_abs",
        }
    }
}

impl std::str::FromStr for QScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "raw" => Ok(QScale::Raw),
            "mean_abs" => Ok(QScale::MeanAbs),
            other => Err(Error::Config(format!(
                "unknown q scale {other:?} (expected raw or mean_abs)"
            ))),
        }
    }
}

/// Guidance loss value and policy gradient.
#[derive(Debug, Clone)]
pub struct QGuidanceOutput {
    /// `−η·mean Q¹(o, ã)` (after optional scaling).
    pub loss: f64,
    pub mean_q: f64,
    pub grads: MlpParams,
}

/// Guidance forward pass with the policy backward still pending.
pub struct QGuidancePass<'a> {
    pub loss: f64,
    pub mean_q: f64,
    pending: Option<(OneStepTape<'a>, Tensor)>,
    policy: &'a PolicyNet,
}

impl QGuidancePass<'_> {
    /// Policy parameter gradient of the recorded guidance loss.
    pub fn backward(self) -> Result<MlpParams> {
        match self.pending {
            Some((sample, d_action)) => sample.backward(&d_action),
            None => Ok(self.policy.params().zeros_like()),
        }
    }
}

/// Forward half of [`q_guidance_grad_with_noise`]. The critic backward to the
/// action is done here; the policy tape stays recorded.
pub fn q_guidance_forward<'a>(
    pair: &CriticPair,
    policy: &'a PolicyNet,
    obs: &Tensor,
    eps: &Tensor,
    eta: f64,
    scale: QScale,
) -> Result<QGuidancePass<'a>> {
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::Config(format!(
            "eta must be finite and >= 0, got {eta}"
        )));
    }
    if eta == 0.0 {
        return Ok(QGuidancePass {
            loss: 0.0,
            mean_q: 0.0,
            pending: None,
            policy,
        });
    }
    let sample = OneStepTape::record(policy, obs, eps)?;
    let x = pair.input(obs, &sample.action)?;
    let (q, tape) = mlp_forward(&pair.q1, &x, true)?;
    let n = obs.rows() as f64;
    let mean_q = q.sum() / n;
    let divisor = match scale {
        QScale::Raw => 1.0,
        QScale::MeanAbs => (q.data().iter().map(|v| v.abs()).sum::<f64>() / n).max(1e-8),
    };
    let coef = -eta / (n * divisor);
    let dx = tape
        .expect("recorded")
        .backward_input(&Tensor::full(&[obs.rows(), 1], coef))?;
    let d_action = dx.slice_cols(pair.obs_dim, pair.act_dim)?;
    Ok(QGuidancePass {
        loss: -eta * mean_q / divisor,
        mean_q,
        pending: Some((sample, d_action)),
        policy,
    })
}

/// Gradient of `−η·mean_b Q¹(o, ã)` with respect to the policy parameters,
/// `ã` the clipped one-step action from noise `eps`.
pub fn q_guidance_grad_with_noise(
    pair: &CriticPair,
    policy: &PolicyNet,
    obs: &Tensor,
    eps: &Tensor,
    eta: f64,
    scale: QScale,
) -> Result<QGuidanceOutput> {
    let pass = q_guidance_forward(pair, policy, obs, eps, eta, scale)?;
    let (loss, mean_q) = (pass.loss, pass.mean_q);
    Ok(QGuidanceOutput {
        loss,
        mean_q,
        grads: pass.backward()?,
    })
}

/// [`q_guidance_grad_with_noise`] with fresh noise from `rng`.
pub fn q_guidance_grad<R: Rng>(
    pair: &CriticPair,
    policy: &PolicyNet,
    obs: &Tensor,
    eta: f64,
    scale: QScale,
    rng: &mut R,
) -> Result<QGuidanceOutput> {
    let eps = normal_tensor(rng, obs.rows(), policy.act_dim());
    q_guidance_grad_with_noise(pair, policy, obs, &eps, eta, scale)
}

/// Settings for fitting a critic pair on the unit-reward single-state MDP.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleFit {
    pub gamma: f64,
    pub updates: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub rho: f64,
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for OracleFit {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            updates: 20_000,
            batch_size: 256,
            learning_rate: 3e-4,
            rho: 1.0,
            hidden: vec![64, 64],
            seed: 0,
        }
    }
}

/// Actions at which [`fit_unit_reward_critic`] reports `Q¹`.
pub const ORACLE_PROBE_ACTIONS: [f64; 5] = [-1.0, -0.5, 0.0, 0.5, 1.0];

/// Trains a critic pair on transitions of the chain oracle and returns `Q¹`
/// at [`ORACLE_PROBE_ACTIONS`].
///
/// Every action earns reward 1 and returns to the same state, so the exact
/// value is `1 / (1 − γ)` for every action. Dataset actions are uniform on
/// `[−1, 1]`; no transition is terminal.
pub fn fit_unit_reward_critic(fit: &OracleFit) -> Result<Vec<f64>> {
    use crate::envs::{env_reset, env_step, EnvSpec};
    use crate::rng::{stream, tag};

    check_gamma(fit.gamma)?;
    if fit.batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    let spec = EnvSpec::chain_oracle();
    let (obs_dim, act_dim) = (spec.obs_dim(), spec.act_dim());
    let (mut state, obs) = env_reset(&spec, fit.seed)?;
    let step = env_step(&mut state, &[vec![0.0; act_dim]])?;
    let (o, reward, o_next) = (obs[0].clone(), step.rewards[0], step.obs[0].clone());

    let mut pair = CriticPair::new(obs_dim, act_dim, &fit.hidden, fit.seed)?;
    let policy_target = PolicyNet::new(obs_dim, act_dim, &fit.hidden, fit.seed ^ 1)?;
    let mut rng = stream(fit.seed, &[tag("oracle")]);
    let n = fit.batch_size;
    let tile = |row: &[f64]| Tensor::from_fn(n, row.len(), |_, j| row[j]);
    for _ in 0..fit.updates {
        let actions = Tensor::from_fn(n, act_dim, |_, _| rng.random_range(-1.0..=1.0));
        let batch = Minibatch {
            obs: tile(&o),
            actions,
            rewards: vec![reward; n],
            next_obs: tile(&o_next),
            dones: vec![0.0; n],
        };
        let out = critic_loss(&pair, &policy_target, &batch, fit.gamma, &mut rng)?;
        critic_update(&mut pair, &out, fit.learning_rate)?;
        soft_update_params(&mut pair.q1_target, &pair.q1, fit.rho)?;
        soft_update_params(&mut pair.q2_target, &pair.q2, fit.rho)?;
    }
    let probes = ORACLE_PROBE_ACTIONS.len();
    let a = Tensor::from_fn(probes, act_dim, |i, _| ORACLE_PROBE_ACTIONS[i]);
    pair.q_values(&pair.q1, &Tensor::from_fn(probes, obs_dim, |_, j| o[j]), &a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn batch(rewards: Vec<f64>, dones: Vec<f64>) -> Minibatch {
        let n = rewards.len();
        Minibatch {
            obs: Tensor::full(&[n, 2], 0.5),
            actions: Tensor::full(&[n, 1], 0.1),
            rewards,
            next_obs: Tensor::full(&[n, 2], -0.5),
            dones,
        }
    }

    fn zero_pair() -> CriticPair {
        let spec = MlpSpec::new(3, &[4], 1);
        let z = MlpParams::zeros(&spec).unwrap();
        CriticPair::from_params(2, 1, z.clone(), z).unwrap()
    }

    fn zero_policy() -> PolicyNet {
        let spec = MlpSpec::new(5, &[4], 1);
        PolicyNet::from_params(2, 1, MlpParams::zeros(&spec).unwrap()).unwrap()
    }

    #[test]
    fn zero_networks_give_unit_loss() {
        let out = critic_loss(
            &zero_pair(),
            &zero_policy(),
            &batch(vec![1.0; 4], vec![0.0; 4]),
            0.99,
            &mut stream(0, &[]),
        )
        .unwrap();
        assert_eq!(out.targets, vec![1.0; 4]);
        assert_eq!(out.loss, 1.0);
    }

    #[test]
    fn terminal_rows_target_reward() {
        let mut pair = CriticPair::new(2, 1, &[8], 3).unwrap();
        let last = pair.q1_target.layers().len() - 1;
        pair.q1_target.layers_mut()[last].bias = Tensor::full(&[1], 7.0);
        let b = batch(vec![0.25, -1.5], vec![1.0, 1.0]);
        let out = critic_loss(&pair, &zero_policy(), &b, 0.99, &mut stream(0, &[])).unwrap();
        assert_eq!(out.targets, vec![0.25, -1.5]);
    }

    #[test]
    fn soft_update_rules() {
        let mut pair = CriticPair::new(2, 1, &[4], 1).unwrap();
        let mut pt = zero_policy();
        let mut p = zero_policy();
        for t in p.params_mut().tensors_mut() {
            t.fill(1.0);
        }
        for t in pair.q1.tensors_mut() {
            t.fill(1.0);
        }
        for t in pair.q1_target.tensors_mut() {
            t.fill(0.0);
        }
        let online = pair.q1.clone();
        soft_update(&mut pair, &mut pt, &p, 0.005).unwrap();
        assert!(pair.q1_target.flatten().iter().all(|&x| x == 0.005));
        assert!(pt.params().flatten().iter().all(|&x| x == 0.005));
        assert_eq!(pair.q1, online);
        soft_update(&mut pair, &mut pt, &p, 1.0).unwrap();
        assert_eq!(pair.q1_target, pair.q1);
        assert_eq!(pair.q2_target, pair.q2);
        assert!(soft_update(&mut pair, &mut pt, &p, 1.5).is_err());
    }

    #[test]
    fn guidance_with_zero_eta_is_zero() {
        let pair = CriticPair::new(2, 1, &[4], 1).unwrap();
        let policy = PolicyNet::new(2, 1, &[4], 2).unwrap();
        let out = q_guidance_grad(
            &pair,
            &policy,
            &Tensor::full(&[3, 2], 0.2),
            0.0,
            QScale::Raw,
            &mut stream(1, &[]),
        )
        .unwrap();
        assert!(out.grads.flatten().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn guidance_sign_flips_with_critic_sign() {
        let pair = CriticPair::new(2, 1, &[6], 1).unwrap();
        let mut flipped = pair.clone();
        let last = flipped.q1.layers().len() - 1;
        let layer = &mut flipped.q1.layers_mut()[last];
        layer.weight = layer.weight.scale(-1.0);
        layer.bias = layer.bias.scale(-1.0);
        let policy = PolicyNet::new(2, 1, &[6], 2).unwrap();
        let obs = Tensor::from_fn(4, 2, |i, j| 0.1 * (i as f64) - 0.2 * j as f64);
        let eps = Tensor::from_fn(4, 1, |i, _| 0.3 - 0.15 * i as f64);
        let a = q_guidance_grad_with_noise(&pair, &policy, &obs, &eps, 1.5, QScale::Raw).unwrap();
        let b =
            q_guidance_grad_with_noise(&flipped, &policy, &obs, &eps, 1.5, QScale::Raw).unwrap();
        for (x, y) in a.grads.flatten().iter().zip(b.grads.flatten()) {
            assert_eq!(*x, -y);
        }
    }
}
