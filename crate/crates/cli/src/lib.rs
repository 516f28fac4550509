//! Command-line driver for offline multi-agent training with one-step
//! mean-flow policies.
//!
//! `parse_and_dispatch` returns the process exit code: 0 on success, 1 on a
//! configuration error, 2 on a runtime or numeric error.

pub mod config;
pub mod manifest;
pub mod plot;
pub mod run;

use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand};

use config::RunConfig;
use run::{Axis, Sweep};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Format(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<om2p::Error> for CliError {
    fn from(e: om2p::Error) -> Self {
        match e {
            om2p::Error::Format { .. } => CliError::Format(e.to_string()),
            e if e.is_configuration() => CliError::Config(e.to_string()),
            e => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "om2p",
    version,
    about = "Offline multi-agent RL with one-step mean-flow policies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate an offline dataset file.
    GenData(RunArgs),
    /// Train all agents, writing a manifest, metrics CSV and checkpoints.
    Train(RunArgs),
    /// Evaluate the policies of a finished run directory (--out).
    Eval(RunArgs),
    /// Sweep one axis over shared seeds and datasets.
    Ablate(RunArgs),
    /// Compare finite-difference and exact derivative modes.
    Bench(RunArgs),
    /// Render metrics CSVs as an SVG line chart.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Config file of `key = value` lines; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    quality: Option<String>,
    /// Transitions per agent.
    #[arg(long)]
    n: Option<String>,
    /// Dataset file written by gen-data.
    #[arg(long)]
    data: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    eta: Option<String>,
    /// Four comma-separated coefficients, e.g. 0,0,0.1,0.
    #[arg(long, allow_hyphen_values = true)]
    xi: Option<String>,
    #[arg(long)]
    delta_r: Option<String>,
    /// fd or exact.
    #[arg(long)]
    derivative_mode: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Comma-separated seeds of an ablation.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    steps: Option<String>,
    #[arg(long)]
    eval_every: Option<String>,
    #[arg(long)]
    episodes: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Ablation axis and values, e.g. delta_r_set=1e-12,1e-8.
    #[arg(long)]
    sweep: Option<String>,
}

#[derive(Debug, Args)]
struct PlotArgs {
    /// Metrics CSVs; each becomes one labeled series.
    #[arg(required = true)]
    csv: Vec<PathBuf>,
    /// Output SVG file.
    #[arg(long)]
    out: PathBuf,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("--config {}: {e}", path.display())))?;
            cfg.apply_file_text(&text)
                .map_err(|e| CliError::Config(format!("--config {}: {e}", path.display())))?;
        }
        let flags = [
            ("env", &self.env),
            ("quality", &self.quality),
            ("n", &self.n),
            ("data", &self.data),
            ("eta", &self.eta),
            ("xi", &self.xi),
            ("delta_r", &self.delta_r),
            ("derivative_mode", &self.derivative_mode),
            ("seed", &self.seed),
            ("seeds", &self.seeds),
            ("steps", &self.steps),
            ("eval_every", &self.eval_every),
            ("episodes", &self.episodes),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)
                    .map_err(|e| CliError::Config(format!("--{}: {e}", key.replace('_', "-"))))?;
            }
        }
        Ok(cfg)
    }

    fn out(&self) -> Result<&Path, CliError> {
        self.out
            .as_deref()
            .ok_or_else(|| CliError::Config("missing required --out".into()))
    }
}

fn usage(sub: &str) -> String {
    let mut cmd = Cli::command();
    cmd.find_subcommand_mut(sub)
        .map(|c| c.render_usage().to_string())
        .unwrap_or_default()
}

fn require_env(cfg: &RunConfig, sub: &str) -> Result<(), CliError> {
    if cfg.env.is_none() {
        return Err(CliError::Config(format!(
            "missing required --env\n{}",
            usage(sub)
        )));
    }
    Ok(())
}

fn label_for(path: &Path) -> String {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
    match (
        stem,
        path.parent()
            .and_then(|p| p.file_name())
            .and_then(|s| s.to_str()),
    ) {
        ("metrics", Some(dir)) => dir.to_string(),
        _ => stem.to_string(),
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let mut stdout = std::io::stdout();
    match cli.command {
        Command::GenData(a) => {
            let cfg = a.resolve()?;
            require_env(&cfg, "gen-data")?;
            let path = run::gen_data(&cfg, a.out()?)?;
            writeln!(stdout, "{}", path.display())?;
        }
        Command::Train(a) => {
            let cfg = a.resolve()?;
            require_env(&cfg, "train")?;
            let out = a.out()?;
            let threads = run::thread_cap()?;
            let r = run::run_training(&cfg, Some(out), threads, |row| {
                eprintln!(
                    "step {} return {:.3} score {:.2}",
                    row.step, row.eval_mean, row.normalized_score
                );
            })?;
            writeln!(
                stdout,
                "final_score {:.4}\ninput_hash {}\nout {}",
                r.final_score(),
                r.manifest.input_hash,
                out.display()
            )?;
        }
        Command::Eval(a) => {
            let cfg = a.resolve()?;
            let r = run::eval_run(a.out()?, cfg.train.eval_episodes, cfg.train.seed)?;
            writeln!(
                stdout,
                "mean_return {:.6}\nstd_return {:.6}\nnormalized_score {:.4}",
                r.mean, r.std, r.normalized_score
            )?;
        }
        Command::Ablate(a) => {
            let cfg = a.resolve()?;
            require_env(&cfg, "ablate")?;
            let sweep: Sweep = a
                .sweep
                .as_deref()
                .ok_or_else(|| {
                    CliError::Config(format!("missing required --sweep\n{}", usage("ablate")))
                })?
                .parse()?;
            let out = a.out()?;
            let threads = run::thread_cap()?;
            let rows = run::ablate_with(&cfg, &sweep, |label, c| {
                let dir = out
                    .join(run::variant_dir_name(label))
                    .join(format!("seed{}", c.train.seed));
                let r = run::run_training(c, Some(&dir), threads, |_| {})?;
                eprintln!("{label} seed {}: {:.2}", c.train.seed, r.final_score());
                Ok(r.final_score())
            })?;
            std::fs::write(out.join("summary.csv"), run::summary_csv(sweep.axis, &rows))?;
            if sweep.axis == Axis::Eta {
                let points: Vec<(f64, f64, f64)> = rows
                    .iter()
                    .filter_map(|r| {
                        let eta: f64 = r.label.parse().ok()?;
                        (eta > 0.0).then(|| (eta, r.mean(), r.std()))
                    })
                    .collect();
                if !points.is_empty() {
                    let s = plot::Series {
                        label: "final score".into(),
                        points,
                    };
                    let svg = plot::render_svg(&[s], "eta", "normalized score", true)?;
                    std::fs::write(out.join("summary.svg"), svg)?;
                }
            }
            write!(stdout, "{}", run::summary_csv(sweep.axis, &rows))?;
        }
        Command::Bench(a) => {
            let cfg = a.resolve()?;
            require_env(&cfg, "bench")?;
            let report = run::bench(&cfg, a.out.as_deref(), run::thread_cap()?)?;
            write!(stdout, "{}", report.to_csv())?;
        }
        Command::Plot(a) => {
            let series = a
                .csv
                .iter()
                .map(|p| {
                    let text = std::fs::read_to_string(p).map_err(|e| {
                        CliError::Config(format!("cannot read {}: {e}", p.display()))
                    })?;
                    plot::parse_metrics_csv(&text, &label_for(p))
                        .map_err(|e| CliError::Format(format!("{}: {e}", p.display())))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let svg = plot::render_svg(&series, "step", "eval mean return", false)?;
            std::fs::write(&a.out, svg)?;
            writeln!(stdout, "{}", a.out.display())?;
        }
    }
    Ok(())
}

/// Parses `argv` (program name first), runs the command and returns the
/// exit code.
pub fn parse_and_dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
