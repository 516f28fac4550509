//! Dataset generation, training, evaluation, ablation sweeps and benchmarks.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use om2p::dataset::{self, DatasetShard};
use om2p::envs::EnvSpec;
use om2p::meanflow::{DerivativeMode, PolicyNet};
use om2p::nn::{decode_checkpoint, encode_checkpoint};
use om2p::timestep::XiVector;
use om2p::trainer::{evaluate, mean_std, measure_anchors, train, MetricsRow, TrainOutput};

use crate::config::RunConfig;
use crate::manifest::{blob_hash, RunManifest};
use crate::CliError;

/// Worker-thread cap from `OM2P_THREADS`, else the available parallelism.
pub fn thread_cap() -> Result<usize, CliError> {
    match std::env::var("OM2P_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(CliError::Config(format!(
                "OM2P_THREADS must be a positive integer, got {v:?}"
            ))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// File name `gen-data` writes for a config.
pub fn dataset_file_name(cfg: &RunConfig) -> Result<String, CliError> {
    Ok(format!(
        "{}_{}_n{}_s{}.om2pds",
        cfg.env()?.name(),
        cfg.quality.name(),
        cfg.n,
        cfg.data_seed()
    ))
}

/// The dataset of a run with the hash of its encoded bytes.
pub fn load_dataset(cfg: &RunConfig) -> Result<(Vec<DatasetShard>, String), CliError> {
    match &cfg.data {
        Some(path) => {
            let bytes = std::fs::read(path).map_err(|e| {
                CliError::Config(format!("cannot read dataset {}: {e}", path.display()))
            })?;
            let shards = dataset::decode(&bytes)?;
            Ok((shards, blob_hash(&bytes)))
        }
        None => {
            let spec = EnvSpec::for_kind(cfg.env()?);
            let shards = dataset::generate(&spec, cfg.quality, cfg.n, cfg.data_seed())?;
            let hash = blob_hash(&dataset::encode(&shards)?);
            Ok((shards, hash))
        }
    }
}

/// Writes the generated dataset into `dir` and returns its path.
pub fn gen_data(cfg: &RunConfig, dir: &Path) -> Result<PathBuf, CliError> {
    let spec = EnvSpec::for_kind(cfg.env()?);
    let shards = dataset::generate(&spec, cfg.quality, cfg.n, cfg.data_seed())?;
    std::fs::create_dir_all(dir)?;
    let path = dir.join(dataset_file_name(cfg)?);
    dataset::save(&shards, &path)?;
    Ok(path)
}

/// A finished training run.
#[derive(Debug)]
pub struct RunResult {
    pub manifest: RunManifest,
    pub output: TrainOutput,
}

impl RunResult {
    pub fn final_score(&self) -> f64 {
        self.output.log.final_score().unwrap_or(f64::NAN)
    }
}

const CHECKPOINT_ROLES: [&str; 6] = [
    "policy",
    "policy_target",
    "q1",
    "q2",
    "q1_target",
    "q2_target",
];

fn checkpoint_name(agent: usize, role: &str) -> String {
    format!("agent{agent}_{role}.ckpt")
}

/// Trains one configuration. With `out`, the manifest is written before
/// training starts, then the metrics CSV and final checkpoints.
pub fn run_training(
    cfg: &RunConfig,
    out: Option<&Path>,
    threads: usize,
    mut on_row: impl FnMut(&MetricsRow),
) -> Result<RunResult, CliError> {
    let spec = EnvSpec::for_kind(cfg.env()?);
    cfg.train.validate()?;
    let (shards, dataset_hash) = load_dataset(cfg)?;
    let mut outputs = Vec::new();
    if let Some(dir) = out {
        outputs.push(dir.join("metrics.csv"));
        for a in 0..shards.len() {
            outputs.extend(CHECKPOINT_ROLES.map(|r| dir.join(checkpoint_name(a, r))));
        }
    }
    let manifest = RunManifest::new(cfg, dataset_hash, outputs);
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        manifest.write(&dir.join("manifest.txt"))?;
    }

    let anchors = measure_anchors(&spec)?;
    let mut config = cfg.train.clone();
    config.threads = threads.clamp(1, spec.n_agents);
    let mut output = train(&config, &shards, &spec, anchors, &mut on_row)?;
    output.log.notes = vec![
        ("env".into(), spec.kind.name().into()),
        ("quality".into(), cfg.quality.name().into()),
        ("total_steps".into(), config.total_steps.to_string()),
        ("input_hash".into(), manifest.input_hash.clone()),
        ("expert_anchor".into(), format!("{:?}", anchors.expert)),
        ("random_anchor".into(), format!("{:?}", anchors.random)),
    ];

    if let Some(dir) = out {
        std::fs::write(dir.join("metrics.csv"), output.log.to_csv())?;
        let seed = cfg.train.seed;
        for l in &output.learners {
            let nets = [
                l.policy.params(),
                l.policy_target.params(),
                &l.critics.q1,
                &l.critics.q2,
                &l.critics.q1_target,
                &l.critics.q2_target,
            ];
            for (role, params) in CHECKPOINT_ROLES.iter().zip(nets) {
                std::fs::write(
                    dir.join(checkpoint_name(l.agent_index, role)),
                    encode_checkpoint(params, seed, role),
                )?;
            }
        }
    }
    Ok(RunResult { manifest, output })
}

/// Evaluation of a finished run directory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub mean: f64,
    pub std: f64,
    pub normalized_score: f64,
}

/// Loads the policies of `run_dir` and evaluates them.
pub fn eval_run(run_dir: &Path, episodes: usize, seed: u64) -> Result<EvalReport, CliError> {
    let manifest = RunManifest::read(&run_dir.join("manifest.txt"))?;
    let spec = EnvSpec::for_kind(manifest.config.env()?);
    let policies = (0..spec.n_agents)
        .map(|a| {
            let path = run_dir.join(checkpoint_name(a, "policy"));
            let bytes = std::fs::read(&path).map_err(|e| {
                CliError::Config(format!("cannot read checkpoint {}: {e}", path.display()))
            })?;
            let (params, _) = decode_checkpoint(&bytes)?;
            Ok(PolicyNet::from_params(
                spec.obs_dim(),
                spec.act_dim(),
                params,
            )?)
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let (mean, std) = evaluate(&policies, &spec, episodes, seed)?;
    let anchors = measure_anchors(&spec)?;
    Ok(EvalReport {
        mean,
        std,
        normalized_score: anchors.score(mean)?,
    })
}

/// The swept hyperparameter of an ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Xi,
    DeltaR,
    Eta,
    Component,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Xi => "xi_set",
            Axis::DeltaR => "delta_r_set",
            Axis::Eta => "eta_set",
            Axis::Component => "component_set",
        }
    }
}

/// One axis and its values, e.g. `delta_r_set=1e-12,1e-8` or
/// `xi_set=0,0,0,0;5,5,0,0` (ξ vectors separated by `;`).
#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub axis: Axis,
    pub values: Vec<String>,
}

impl std::str::FromStr for Sweep {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        let (axis, values) = s
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--sweep {s:?}: expected axis=values")))?;
        let axis = match axis.trim() {
            "xi_set" => Axis::Xi,
            "delta_r_set" => Axis::DeltaR,
            "eta_set" => Axis::Eta,
            "component_set" => Axis::Component,
            other => {
                return Err(CliError::Config(format!(
                    "--sweep: unknown axis {other:?} (expected xi_set, delta_r_set, eta_set or component_set)"
                )))
            }
        };
        let sep = if axis == Axis::Xi { ';' } else { ',' };
        let values: Vec<String> = values
            .split(sep)
            .map(|v| v.trim().to_string())
            .filter(|v| !v.is_empty())
            .collect();
        if values.is_empty() {
            return Err(CliError::Config("--sweep: no values".into()));
        }
        Ok(Self { axis, values })
    }
}

/// `base` with the swept setting replaced by `value`.
pub fn variant_config(base: &RunConfig, axis: Axis, value: &str) -> Result<RunConfig, CliError> {
    let mut cfg = base.clone();
    match axis {
        Axis::Xi => cfg.set("xi", value)?,
        Axis::DeltaR => cfg.set("delta_r", value)?,
        Axis::Eta => cfg.set("eta", value)?,
        Axis::Component => match value {
            "full" => {}
            "q_only" => cfg.train.bc_term = false,
            "bc_only" => cfg.train.eta = 0.0,
            "uniform_t" => cfg.train.xi = XiVector::UNIFORM,
            other => {
                return Err(CliError::Config(format!(
                "unknown component variant {other:?} (expected full, q_only, bc_only or uniform_t)"
            )))
            }
        },
    }
    cfg.train.validate()?;
    Ok(cfg)
}

/// Final scores of one variant across seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantSummary {
    pub label: String,
    pub scores: Vec<f64>,
}

impl VariantSummary {
    pub fn mean(&self) -> f64 {
        mean_std(&self.scores).0
    }

    /// Sample standard deviation (0 for one seed).
    pub fn std(&self) -> f64 {
        mean_std(&self.scores).1
    }

    pub fn sem(&self) -> f64 {
        self.std() / (self.scores.len() as f64).sqrt()
    }
}

/// Runs every variant for every seed through `run`, which receives the
/// variant label and its config for one seed and returns the final score.
pub fn ablate_with(
    base: &RunConfig,
    sweep: &Sweep,
    mut run: impl FnMut(&str, &RunConfig) -> Result<f64, CliError>,
) -> Result<Vec<VariantSummary>, CliError> {
    let configs = sweep
        .values
        .iter()
        .map(|v| variant_config(base, sweep.axis, v).map(|c| (v.clone(), c)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = Vec::new();
    for (label, cfg) in configs {
        let mut scores = Vec::new();
        for seed in base.seeds() {
            let mut c = cfg.clone();
            c.train.seed = seed;
            c.seeds.clear();
            scores.push(run(&label, &c)?);
        }
        out.push(VariantSummary { label, scores });
    }
    Ok(out)
}

pub fn summary_csv(axis: Axis, rows: &[VariantSummary]) -> String {
    let mut out = format!(
        "{},n_seeds,mean_score,std_score,sem_score,scores\n",
        axis.name()
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:?},{:?},{:?},{}",
            r.label,
            r.scores.len(),
            r.mean(),
            r.std(),
            r.sem(),
            r.scores
                .iter()
                .map(|s| format!("{s:?}"))
                .collect::<Vec<_>>()
                .join(";")
        );
    }
    out
}

/// Directory-safe form of a variant label.
pub fn variant_dir_name(label: &str) -> String {
    label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// One measured mode of the efficiency benchmark.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchMode {
    pub mode: DerivativeMode,
    pub steps: usize,
    pub wall_time_s: f64,
    pub peak_live_bytes: usize,
    pub final_score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchReport {
    pub fd: BenchMode,
    pub exact: BenchMode,
}

impl BenchReport {
    pub fn peak_ratio(&self) -> f64 {
        self.exact.peak_live_bytes as f64 / self.fd.peak_live_bytes as f64
    }

    pub fn wall_ratio(&self) -> f64 {
        self.exact.wall_time_s / self.fd.wall_time_s
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("mode,steps,wall_time_s,peak_live_bytes,final_score\n");
        for m in [self.fd, self.exact] {
            let _ = writeln!(
                out,
                "{},{},{:?},{},{:?}",
                m.mode.name(),
                m.steps,
                m.wall_time_s,
                m.peak_live_bytes,
                m.final_score
            );
        }
        let _ = writeln!(out, "# exact/fd peak_live_bytes: {:.4}", self.peak_ratio());
        let _ = writeln!(out, "# exact/fd wall_time_s: {:.4}", self.wall_ratio());
        out
    }
}

/// Trains `cfg` once per derivative mode and compares cost.
pub fn bench(cfg: &RunConfig, out: Option<&Path>, threads: usize) -> Result<BenchReport, CliError> {
    let run = |mode: DerivativeMode| -> Result<BenchMode, CliError> {
        let mut c = cfg.clone();
        c.train.derivative_mode = mode;
        let dir = out.map(|d| d.join(mode.name()));
        let r = run_training(&c, dir.as_deref(), threads, |_| {})?;
        Ok(BenchMode {
            mode,
            steps: c.train.total_steps,
            wall_time_s: r.output.wall_time_s,
            peak_live_bytes: r.output.peak_live_bytes,
            final_score: r.final_score(),
        })
    };
    let fd = run(DerivativeMode::Fd)?;
    let exact = run(DerivativeMode::Exact)?;
    let report = BenchReport { fd, exact };
    if let Some(d) = out {
        std::fs::write(d.join("bench.csv"), report.to_csv())?;
    }
    Ok(report)
}
