//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::PathBuf;

use om2p::dataset::Quality;
use om2p::envs::EnvKind;
use om2p::meanflow::DeltaR;
use om2p::trainer::TrainConfig;

use crate::CliError;

/// Default dataset size per agent.
pub const DEFAULT_TRANSITIONS: usize = 25_000;

/// Every key accepted by a config file.
pub const KEYS: [&str; 21] = [
    "env",
    "quality",
    "n",
    "data",
    "data_seed",
    "eta",
    "xi",
    "delta_r",
    "derivative_mode",
    "seed",
    "steps",
    "eval_every",
    "episodes",
    "batch_size",
    "gamma",
    "rho",
    "learning_rate",
    "hidden",
    "q_scale",
    "bc_term",
    "seeds",
];

/// Resolved configuration of one run or sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub env: Option<EnvKind>,
    pub quality: Quality,
    /// Transitions per agent when the dataset is generated.
    pub n: usize,
    /// Dataset file; generated from `(env, quality, n, data_seed)` when absent.
    pub data: Option<PathBuf>,
    /// Seed of the generated dataset; the run seed when absent.
    pub data_seed: Option<u64>,
    /// Seeds of an ablation sweep; the run seed when empty.
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: None,
            quality: Quality::Expert,
            n: DEFAULT_TRANSITIONS,
            data: None,
            data_seed: None,
            seeds: Vec::new(),
            train: TrainConfig::default(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| CliError::Config(format!("{key} = {value:?}: {e}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse(key, s))
        .collect()
}

impl RunConfig {
    pub fn env(&self) -> Result<EnvKind, CliError> {
        self.env
            .ok_or_else(|| CliError::Config("missing required --env".into()))
    }

    pub fn data_seed(&self) -> u64 {
        self.data_seed.unwrap_or(self.train.seed)
    }

    pub fn seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.train.seed]
        } else {
            self.seeds.clone()
        }
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let t = &mut self.train;
        match key {
            "env" => self.env = Some(parse(key, value)?),
            "quality" => self.quality = parse(key, value)?,
            "n" => self.n = parse(key, value)?,
            "data" => self.data = (!value.trim().is_empty()).then(|| PathBuf::from(value.trim())),
            "data_seed" => self.data_seed = Some(parse(key, value)?),
            "seeds" => self.seeds = parse_list(key, value)?,
            "eta" => t.eta = parse(key, value)?,
            "xi" => t.xi = parse(key, value)?,
            "delta_r" => t.delta_r = DeltaR::new(parse(key, value)?)?,
            "derivative_mode" => t.derivative_mode = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "steps" => t.total_steps = parse(key, value)?,
            "eval_every" => t.eval_every = parse(key, value)?,
            "episodes" => t.eval_episodes = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "gamma" => t.gamma = parse(key, value)?,
            "rho" => t.rho = parse(key, value)?,
            "learning_rate" => t.learning_rate = parse(key, value)?,
            "hidden" => t.hidden = parse_list(key, value)?,
            "q_scale" => t.q_scale = parse(key, value)?,
            "bc_term" => t.bc_term = parse(key, value)?,
            other => return Err(CliError::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies a config file: one `key = value` per line, `#` starts a comment.
    pub fn apply_file_text(&mut self, text: &str) -> Result<(), CliError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("config line {}: expected `key = value`", i + 1))
            })?;
            self.set(key.trim(), value.trim())
                .map_err(|e| CliError::Config(format!("config line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    /// Every setting with defaults materialized, as config-file text.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        if let Some(env) = self.env {
            kv("env", env.name().into());
        }
        kv("quality", self.quality.name().into());
        kv("n", self.n.to_string());
        if let Some(d) = &self.data {
            kv("data", d.display().to_string());
        }
        kv("data_seed", self.data_seed().to_string());
        kv("eta", format!("{:?}", t.eta));
        kv("xi", t.xi.to_string());
        kv("delta_r", format!("{:e}", t.delta_r.get()));
        kv("derivative_mode", t.derivative_mode.name().into());
        kv("seed", t.seed.to_string());
        kv("steps", t.total_steps.to_string());
        kv("eval_every", t.eval_every.to_string());
        kv("episodes", t.eval_episodes.to_string());
        kv("batch_size", t.batch_size.to_string());
        kv("gamma", format!("{:?}", t.gamma));
        kv("rho", format!("{:?}", t.rho));
        kv("learning_rate", format!("{:?}", t.learning_rate));
        kv(
            "hidden",
            t.hidden
                .iter()
                .map(|h| h.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        kv("q_scale", t.q_scale.name().into());
        kv("bc_term", t.bc_term.to_string());
        if !self.seeds.is_empty() {
            kv(
                "seeds",
                self.seeds
                    .iter()
                    .map(|s| s.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            );
        }
        out
    }
}
