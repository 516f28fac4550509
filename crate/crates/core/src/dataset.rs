//! Offline datasets: quality-tiered generation, episode-level mixing, the
//! `OM2PDS1` file format and minibatch sampling.
//!
//! A dataset is one [`DatasetShard`] per agent. Shards are columnar and
//! aligned: row `k` of every shard comes from the same environment step.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::envs::{env_reset, env_step, expert_action, random_action, EnvKind, EnvSpec};
use crate::nn::Tensor;
use crate::rng::{derive_seed, stream, tag};
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"OM2PDS1\n";

/// Noise scale of the medium behavior policy around the expert action.
pub const MEDIUM_SIGMA: f64 = 0.6;
/// Probability that the medium behavior policy acts uniformly at random.
pub const MEDIUM_RANDOM_EPS: f64 = 0.6;
/// Noise scale of the high-noise third of medium-replay data.
pub const REPLAY_HIGH_SIGMA: f64 = 0.8;
/// Expert share of medium-expert data, by transition count.
pub const MEDIUM_EXPERT_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Quality {
    MediumReplay,
    Medium,
    MediumExpert,
    Expert,
}

impl Quality {
    pub const ALL: [Quality; 4] = [
        Quality::MediumReplay,
        Quality::Medium,
        Quality::MediumExpert,
        Quality::Expert,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Quality::MediumReplay => "medium_replay",
            Quality::Medium => "medium",
            Quality::MediumExpert => "medium_expert",
            Quality::Expert => "expert",
        }
    }
}

impl fmt::Display for Quality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Quality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Quality::ALL
            .into_iter()
            .find(|q| q.name() == s.trim())
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown quality {s:?} (expected medium_replay, medium, medium_expert or expert)"
                ))
            })
    }
}

/// Noisy expert: with probability `random_eps` a uniform action, otherwise
/// the expert action plus `N(0, sigma²)` noise, clipped to the unit box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BehaviorPolicy {
    pub sigma: f64,
    pub random_eps: f64,
}

impl BehaviorPolicy {
    pub const EXPERT: BehaviorPolicy = BehaviorPolicy {
        sigma: 0.0,
        random_eps: 0.0,
    };
    pub const MEDIUM: BehaviorPolicy = BehaviorPolicy {
        sigma: MEDIUM_SIGMA,
        random_eps: MEDIUM_RANDOM_EPS,
    };
    pub const HIGH_NOISE: BehaviorPolicy = BehaviorPolicy {
        sigma: REPLAY_HIGH_SIGMA,
        random_eps: 0.0,
    };
    pub const RANDOM: BehaviorPolicy = BehaviorPolicy {
        sigma: 0.0,
        random_eps: 1.0,
    };

    pub fn act<R: Rng>(
        &self,
        state: &crate::envs::EnvState,
        agent: usize,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        if self.random_eps > 0.0 && rng.random::<f64>() < self.random_eps {
            return Ok(random_action(&state.spec, rng));
        }
        let mut a = expert_action(state, agent)?;
        if self.sigma > 0.0 {
            let noise = Normal::new(0.0, self.sigma).expect("positive sigma");
            for x in &mut a {
                *x = (*x + noise.sample(rng)).clamp(-1.0, 1.0);
            }
        }
        Ok(a)
    }
}

/// Provenance recorded alongside every shard.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorMeta {
    pub env: EnvKind,
    pub n_agents: usize,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub quality: Quality,
    pub seed: u64,
    pub noise_sigma: f64,
    pub random_eps: f64,
    pub expert_fraction: f64,
}

/// One offline tuple.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
}

/// All transitions of one agent, stored column by column.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetShard {
    pub agent_index: usize,
    pub meta: GeneratorMeta,
    pub obs: Vec<f64>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub next_obs: Vec<f64>,
    pub dones: Vec<f64>,
}

impl DatasetShard {
    fn empty(agent_index: usize, meta: GeneratorMeta) -> Self {
        Self {
            agent_index,
            meta,
            obs: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            next_obs: Vec::new(),
            dones: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn obs_dim(&self) -> usize {
        self.meta.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.meta.act_dim
    }

    pub fn push(&mut self, t: &Transition) {
        self.obs.extend_from_slice(&t.obs);
        self.actions.extend_from_slice(&t.action);
        self.rewards.push(t.reward);
        self.next_obs.extend_from_slice(&t.next_obs);
        self.dones.push(if t.done { 1.0 } else { 0.0 });
    }

    pub fn transition(&self, k: usize) -> Transition {
        let (od, ad) = (self.obs_dim(), self.act_dim());
        Transition {
            obs: self.obs[k * od..(k + 1) * od].to_vec(),
            action: self.actions[k * ad..(k + 1) * ad].to_vec(),
            reward: self.rewards[k],
            next_obs: self.next_obs[k * od..(k + 1) * od].to_vec(),
            done: self.dones[k] != 0.0,
        }
    }

    fn copy_rows(&mut self, from: &DatasetShard, start: usize, end: usize) {
        let (od, ad) = (self.obs_dim(), self.act_dim());
        self.obs.extend_from_slice(&from.obs[start * od..end * od]);
        self.actions
            .extend_from_slice(&from.actions[start * ad..end * ad]);
        self.rewards.extend_from_slice(&from.rewards[start..end]);
        self.next_obs
            .extend_from_slice(&from.next_obs[start * od..end * od]);
        self.dones.extend_from_slice(&from.dones[start..end]);
    }

    /// Half-open row ranges of the episodes, split after every done flag.
    pub fn episodes(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut start = 0;
        for (k, &d) in self.dones.iter().enumerate() {
            if d != 0.0 {
                out.push((start, k + 1));
                start = k + 1;
            }
        }
        if start < self.len() {
            out.push((start, self.len()));
        }
        out
    }

    /// Mean summed reward per episode.
    pub fn mean_episode_return(&self) -> f64 {
        let eps = self.episodes();
        let total: f64 = eps
            .iter()
            .map(|&(s, e)| self.rewards[s..e].iter().sum::<f64>())
            .sum();
        total / eps.len().max(1) as f64
    }

    fn check(&self) -> Result<()> {
        let n = self.len();
        let (od, ad) = (self.obs_dim(), self.act_dim());
        if n == 0 {
            return Err(Error::Config(format!(
                "shard {} is empty",
                self.agent_index
            )));
        }
        if self.obs.len() != n * od
            || self.next_obs.len() != n * od
            || self.actions.len() != n * ad
            || self.dones.len() != n
        {
            return Err(Error::Config(format!(
                "shard {} columns are not homogeneous",
                self.agent_index
            )));
        }
        Ok(())
    }
}

/// Rolls out `episodes` episodes of `behavior` and appends them to `shards`.
fn rollout_into(
    spec: &EnvSpec,
    behavior: BehaviorPolicy,
    episodes: usize,
    seed: u64,
    shards: &mut [DatasetShard],
) -> Result<()> {
    for ep in 0..episodes {
        let env_seed = derive_seed(seed, &[tag("episode"), ep as u64]);
        let mut rng = stream(seed, &[tag("behavior"), ep as u64]);
        let (mut state, mut obs) = env_reset(spec, env_seed)?;
        loop {
            let actions = (0..spec.n_agents)
                .map(|i| behavior.act(&state, i, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let res = env_step(&mut state, &actions)?;
            for (i, shard) in shards.iter_mut().enumerate() {
                shard.push(&Transition {
                    obs: obs[i].clone(),
                    action: actions[i].clone(),
                    reward: res.rewards[i],
                    next_obs: res.obs[i].clone(),
                    done: res.done,
                });
            }
            obs = res.obs;
            if res.done {
                break;
            }
        }
    }
    Ok(())
}

fn new_shards(
    spec: &EnvSpec,
    quality: Quality,
    seed: u64,
    behavior: BehaviorPolicy,
) -> Vec<DatasetShard> {
    let meta = GeneratorMeta {
        env: spec.kind,
        n_agents: spec.n_agents,
        obs_dim: spec.obs_dim(),
        act_dim: spec.act_dim(),
        quality,
        seed,
        noise_sigma: behavior.sigma,
        random_eps: behavior.random_eps,
        expert_fraction: match quality {
            Quality::Expert => 1.0,
            Quality::MediumExpert => MEDIUM_EXPERT_FRACTION,
            _ => 0.0,
        },
    };
    (0..spec.n_agents)
        .map(|i| DatasetShard::empty(i, meta.clone()))
        .collect()
}

fn truncate(shards: &mut [DatasetShard], n: usize) {
    for s in shards {
        let (od, ad) = (s.obs_dim(), s.act_dim());
        s.obs.truncate(n * od);
        s.actions.truncate(n * ad);
        s.rewards.truncate(n);
        s.next_obs.truncate(n * od);
        s.dones.truncate(n);
    }
}

/// Generates `n_transitions` aligned transitions per agent at `quality`.
pub fn generate(
    spec: &EnvSpec,
    quality: Quality,
    n_transitions: usize,
    seed: u64,
) -> Result<Vec<DatasetShard>> {
    spec.validate()?;
    if !spec.kind.is_particle() {
        return Err(Error::Config(format!(
            "dataset generation needs a particle env, got {}",
            spec.kind
        )));
    }
    if n_transitions < spec.horizon {
        return Err(Error::Config(format!(
            "n_transitions {n_transitions} is shorter than one episode ({})",
            spec.horizon
        )));
    }
    let episodes = n_transitions.div_ceil(spec.horizon);
    let mut shards = match quality {
        Quality::Expert | Quality::Medium => {
            let behavior = if quality == Quality::Expert {
                BehaviorPolicy::EXPERT
            } else {
                BehaviorPolicy::MEDIUM
            };
            let mut shards = new_shards(spec, quality, seed, behavior);
            rollout_into(spec, behavior, episodes, seed, &mut shards)?;
            shards
        }
        Quality::MediumReplay => {
            let mut shards = new_shards(spec, quality, seed, BehaviorPolicy::MEDIUM);
            let third = episodes / 3;
            let parts = [
                (BehaviorPolicy::RANDOM, third),
                (BehaviorPolicy::HIGH_NOISE, third),
                (BehaviorPolicy::MEDIUM, episodes - 2 * third),
            ];
            for (k, (behavior, count)) in parts.into_iter().enumerate() {
                let sub = derive_seed(seed, &[tag("replay_part"), k as u64]);
                rollout_into(spec, behavior, count, sub, &mut shards)?;
            }
            shards
        }
        Quality::MediumExpert => {
            let medium = generate(
                spec,
                Quality::Medium,
                n_transitions,
                derive_seed(seed, &[tag("medium")]),
            )?;
            let expert = generate(
                spec,
                Quality::Expert,
                n_transitions,
                derive_seed(seed, &[tag("expert")]),
            )?;
            let mut mixed = mix(&medium, &expert, MEDIUM_EXPERT_FRACTION, seed)?;
            for s in &mut mixed {
                s.meta.seed = seed;
            }
            mixed
        }
    };
    truncate(&mut shards, n_transitions);
    Ok(shards)
}

/// Episode-level mixture with `expert_fraction` of the transitions taken from
/// `expert`. The result has as many transitions as `medium` (up to episode
/// granularity); episodes are drawn without replacement and shuffled.
pub fn mix(
    medium: &[DatasetShard],
    expert: &[DatasetShard],
    expert_fraction: f64,
    seed: u64,
) -> Result<Vec<DatasetShard>> {
    if !(expert_fraction > 0.0 && expert_fraction < 1.0) {
        return Err(Error::Config(format!(
            "expert fraction must lie in (0, 1), got {expert_fraction}"
        )));
    }
    if medium.is_empty() || medium.len() != expert.len() {
        return Err(Error::Config(
            "mix needs the same agent count on both sides".into(),
        ));
    }
    let (m0, e0) = (&medium[0], &expert[0]);
    if m0.meta.env != e0.meta.env || m0.obs_dim() != e0.obs_dim() || m0.act_dim() != e0.act_dim() {
        return Err(Error::Config(
            "mix inputs have incompatible dimensions".into(),
        ));
    }
    let total = m0.len();
    let want = expert_fraction * total as f64;
    let mut rng = stream(seed, &[tag("mix")]);

    let mut expert_eps = e0.episodes();
    expert_eps.shuffle(&mut rng);
    let mut medium_eps = m0.episodes();
    medium_eps.shuffle(&mut rng);

    let mut picked: Vec<(bool, (usize, usize))> = Vec::new();
    let mut n_expert = 0usize;
    for ep in expert_eps {
        let len = ep.1 - ep.0;
        if (n_expert as f64 - want).abs() <= ((n_expert + len) as f64 - want).abs() {
            break;
        }
        n_expert += len;
        picked.push((true, ep));
    }
    let mut n = n_expert;
    for ep in medium_eps {
        if n >= total {
            break;
        }
        n += ep.1 - ep.0;
        picked.push((false, ep));
    }
    picked.shuffle(&mut rng);

    let mut out: Vec<DatasetShard> = medium
        .iter()
        .map(|s| {
            let mut meta = s.meta.clone();
            meta.quality = Quality::MediumExpert;
            meta.expert_fraction = expert_fraction;
            DatasetShard::empty(s.agent_index, meta)
        })
        .collect();
    for (is_expert, (s, e)) in picked {
        let source = if is_expert { expert } else { medium };
        for (dst, src) in out.iter_mut().zip(source) {
            dst.copy_rows(src, s, e);
        }
    }
    Ok(out)
}

/// A uniformly sampled batch in columnar form.
#[derive(Debug, Clone, PartialEq)]
pub struct Minibatch {
    pub obs: Tensor,
    pub actions: Tensor,
    pub rewards: Vec<f64>,
    pub next_obs: Tensor,
    pub dones: Vec<f64>,
}

impl Minibatch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// Gathers rows `indices` of `shard`.
    pub fn gather(shard: &DatasetShard, indices: &[usize]) -> Self {
        let (od, ad) = (shard.obs_dim(), shard.act_dim());
        let take = |col: &[f64], w: usize| -> Vec<f64> {
            indices
                .iter()
                .flat_map(|&k| col[k * w..(k + 1) * w].iter().copied())
                .collect()
        };
        let n = indices.len();
        Self {
            obs: Tensor::wrap(vec![n, od], take(&shard.obs, od)),
            actions: Tensor::wrap(vec![n, ad], take(&shard.actions, ad)),
            rewards: take(&shard.rewards, 1),
            next_obs: Tensor::wrap(vec![n, od], take(&shard.next_obs, od)),
            dones: take(&shard.dones, 1),
        }
    }
}

/// `batch_size` row indices drawn uniformly with replacement.
pub fn sample_indices<R: Rng>(len: usize, batch_size: usize, rng: &mut R) -> Vec<usize> {
    (0..batch_size).map(|_| rng.random_range(0..len)).collect()
}

/// Uniform minibatch with replacement.
pub fn sample_minibatch<R: Rng>(
    shard: &DatasetShard,
    batch_size: usize,
    rng: &mut R,
) -> Result<Minibatch> {
    if shard.is_empty() {
        return Err(Error::Usage("cannot sample from an empty shard".into()));
    }
    if batch_size == 0 {
        return Err(Error::Usage("batch size must be >= 1".into()));
    }
    Ok(Minibatch::gather(
        shard,
        &sample_indices(shard.len(), batch_size, rng),
    ))
}

fn format_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        msg: msg.into(),
    }
}

fn meta_text(shards: &[DatasetShard]) -> String {
    let m = &shards[0].meta;
    format!(
        "env={}\nn_agents={}\nobs_dim={}\nact_dim={}\nquality={}\nseed={}\ntransitions={}\nnoise_sigma={:?}\nrandom_eps={:?}\nexpert_fraction={:?}\n",
        m.env,
        shards.len(),
        m.obs_dim,
        m.act_dim,
        m.quality,
        m.seed,
        shards[0].len(),
        m.noise_sigma,
        m.random_eps,
        m.expert_fraction
    )
}

/// Serializes aligned shards into `OM2PDS1` bytes.
pub fn encode(shards: &[DatasetShard]) -> Result<Vec<u8>> {
    if shards.is_empty() {
        return Err(Error::Config("no shards to save".into()));
    }
    for s in shards {
        s.check()?;
        if s.len() != shards[0].len() {
            return Err(Error::Config("shards disagree on transition count".into()));
        }
    }
    let text = meta_text(shards);
    let mut out = Vec::with_capacity(16 + text.len() + 8 * scalar_count(shards));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(text.len() as u64).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    for s in shards {
        for col in [&s.obs, &s.actions, &s.rewards, &s.next_obs, &s.dones] {
            for v in col.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

fn scalar_count(shards: &[DatasetShard]) -> usize {
    shards
        .iter()
        .map(|s| s.obs.len() + s.actions.len() + s.rewards.len() + s.next_obs.len() + s.dones.len())
        .sum()
}

/// Parses `OM2PDS1` bytes. Nothing is returned unless the whole file is valid.
pub fn decode(bytes: &[u8]) -> Result<Vec<DatasetShard>> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(format_err(0, "bad magic, expected OM2PDS1"));
    }
    let mut off = MAGIC.len();
    if bytes.len() < off + 8 {
        return Err(format_err(off, "truncated metadata length"));
    }
    let meta_len = u64::from_le_bytes(bytes[off..off + 8].try_into().expect("8 bytes")) as usize;
    off += 8;
    if bytes.len() - off < meta_len {
        return Err(format_err(off, "truncated metadata record"));
    }
    let text = std::str::from_utf8(&bytes[off..off + meta_len])
        .map_err(|_| format_err(off, "metadata is not UTF-8"))?;
    let meta_off = off;
    let get = |key: &str| -> Result<&str> {
        text.lines()
            .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
            .ok_or_else(|| format_err(meta_off, format!("metadata lacks {key}")))
    };
    let parse_num = |key: &str| -> Result<f64> {
        get(key)?
            .parse::<f64>()
            .map_err(|_| format_err(meta_off, format!("metadata {key} is not a number")))
    };
    let parse_usize = |key: &str| -> Result<usize> {
        get(key)?
            .parse::<usize>()
            .map_err(|_| format_err(meta_off, format!("metadata {key} is not a count")))
    };
    let env: EnvKind = get("env")?
        .parse()
        .map_err(|_| format_err(meta_off, "unknown env in metadata"))?;
    let quality: Quality = get("quality")?
        .parse()
        .map_err(|_| format_err(meta_off, "unknown quality in metadata"))?;
    let meta = GeneratorMeta {
        env,
        n_agents: parse_usize("n_agents")?,
        obs_dim: parse_usize("obs_dim")?,
        act_dim: parse_usize("act_dim")?,
        quality,
        seed: get("seed")?
            .parse()
            .map_err(|_| format_err(meta_off, "metadata seed is not an integer"))?,
        noise_sigma: parse_num("noise_sigma")?,
        random_eps: parse_num("random_eps")?,
        expert_fraction: parse_num("expert_fraction")?,
    };
    let n = parse_usize("transitions")?;
    off += meta_len;

    let (od, ad) = (meta.obs_dim, meta.act_dim);
    let per_agent = n * (2 * od + ad + 2);
    let expected = per_agent
        .checked_mul(meta.n_agents)
        .and_then(|c| c.checked_mul(8))
        .ok_or_else(|| format_err(meta_off, "header sizes overflow"))?;
    if bytes.len() - off != expected {
        return Err(format_err(
            off,
            format!(
                "payload is {} bytes, header implies {expected}",
                bytes.len() - off
            ),
        ));
    }
    let mut read_col = |count: usize| -> Result<Vec<f64>> {
        let col: Vec<f64> = bytes[off..off + 8 * count]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if let Some(k) = col.iter().position(|v| !v.is_finite()) {
            return Err(format_err(off + 8 * k, "non-finite value"));
        }
        off += 8 * count;
        Ok(col)
    };
    let mut shards = Vec::with_capacity(meta.n_agents);
    for agent_index in 0..meta.n_agents {
        let obs = read_col(n * od)?;
        let actions = read_col(n * ad)?;
        let rewards = read_col(n)?;
        let next_obs = read_col(n * od)?;
        let dones = read_col(n)?;
        shards.push(DatasetShard {
            agent_index,
            meta: meta.clone(),
            obs,
            actions,
            rewards,
            next_obs,
            dones,
        });
    }
    Ok(shards)
}

pub fn write<W: Write>(shards: &[DatasetShard], mut w: W) -> Result<()> {
    w.write_all(&encode(shards)?)?;
    Ok(())
}

pub fn read<R: Read>(mut r: R) -> Result<Vec<DatasetShard>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode(&bytes)
}

pub fn save(shards: &[DatasetShard], path: &std::path::Path) -> Result<()> {
    std::fs::write(path, encode(shards)?)?;
    Ok(())
}

pub fn load(path: &std::path::Path) -> Result<Vec<DatasetShard>> {
    decode(&std::fs::read(path)?)
}

/// Size in bytes of the encoded file.
pub fn encoded_len(shards: &[DatasetShard]) -> usize {
    16 + meta_text(shards).len() + 8 * scalar_count(shards)
}
