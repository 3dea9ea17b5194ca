//! Command-line front end: parses an experiment config, runs one subcommand,
//! and writes CSV/JSON artifacts plus `manifest.json` and a config echo into
//! the output directory.

mod commands;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use wsnfilter::config::ExperimentConfig;
use wsnfilter::scheduler::SchedulerKind;

#[derive(Debug, Parser)]
#[command(name = "wsnfilter", version, about = "Graph filtering over random wireless sensor networks")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Overrides the worker thread count.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

/// Link probabilities to design and filter against.
#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
struct LinkSource {
    /// Uniform link probability on every edge.
    #[arg(long)]
    q: Option<f64>,
    /// Schedule file (`slot,node_id,sinr_min,pdr_min`); rows of Q are the
    /// per-node `pdr_min`.
    #[arg(long)]
    schedule: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Writes the replicate's topology as `topology.csv`.
    Topology {
        #[arg(long, default_value_t = 0)]
        replicate: u64,
    },
    /// Runs one scheduler and writes the schedule, acceptance map and trace.
    Schedule {
        #[arg(long, value_parser = parse_scheduler, default_value = "cdsa")]
        scheduler: SchedulerKind,
        #[arg(long, default_value_t = 0)]
        replicate: u64,
    },
    /// Optimizes filter coefficients for the given link probabilities.
    Optimize {
        #[command(flatten)]
        links: LinkSource,
        #[arg(long, default_value_t = 0)]
        replicate: u64,
    },
    /// Optimizes and runs time-varying filtering trials.
    Filter {
        #[command(flatten)]
        links: LinkSource,
        #[arg(long, default_value_t = 0)]
        replicate: u64,
    },
    /// Accuracy over uniform link probabilities, for every replicate.
    Sweep,
    /// Scheduler comparison, for every replicate.
    Compare,
    /// Tikhonov denoising of a noisy smooth field under each scheduler.
    Denoise {
        #[arg(long, default_value_t = 0)]
        replicate: u64,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Topology { .. } => "topology",
            Command::Schedule { .. } => "schedule",
            Command::Optimize { .. } => "optimize",
            Command::Filter { .. } => "filter",
            Command::Sweep => "sweep",
            Command::Compare => "compare",
            Command::Denoise { .. } => "denoise",
        }
    }
}

fn parse_scheduler(s: &str) -> Result<SchedulerKind, String> {
    SchedulerKind::ALL
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| format!("unknown scheduler `{s}` (cdsa, lbpim, rlba, coloring)"))
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] wsnfilter::Error),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Usage(_) => "usage",
            CliError::Io { .. } => "io",
            CliError::Json(_) => "json",
        }
    }
}

#[derive(Serialize)]
struct ErrorRecord<'a> {
    error: &'a str,
    message: String,
}

#[derive(Debug, Serialize)]
struct Manifest {
    subcommand: &'static str,
    config_path: Option<PathBuf>,
    config_echo: &'static str,
    master_seed: u64,
    version: &'static str,
    out_dir: PathBuf,
    files: Vec<String>,
}

/// Output directory that records every file written to it.
pub struct OutDir {
    root: PathBuf,
    files: Vec<String>,
}

impl OutDir {
    fn create(root: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(root).map_err(|source| CliError::Io {
            path: root.to_path_buf(),
            source,
        })?;
        Ok(OutDir {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.root.join(name);
        std::fs::write(&path, contents).map_err(|source| CliError::Io { path, source })?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, &text)
    }
}

pub fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn load_config(common: &Common) -> Result<(ExperimentConfig, PathBuf), CliError> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| CliError::Usage("--config is required".into()))?;
    let mut config = ExperimentConfig::from_toml(&read_file(path)?)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(threads) = common.threads {
        config.threads = threads;
    }
    config.validate()?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((config, base))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (config, base_dir) = load_config(&cli.common)?;
    let mut out = OutDir::create(&cli.common.out_dir)?;
    let ctx = commands::Context {
        config: &config,
        base_dir: &base_dir,
    };
    match &cli.command {
        Command::Topology { replicate } => commands::topology(&ctx, *replicate, &mut out)?,
        Command::Schedule { scheduler, replicate } => commands::schedule(&ctx, *scheduler, *replicate, &mut out)?,
        Command::Optimize { links, replicate } => {
            commands::optimize(&ctx, links.q, links.schedule.as_deref(), *replicate, &mut out)?
        }
        Command::Filter { links, replicate } => {
            commands::filter(&ctx, links.q, links.schedule.as_deref(), *replicate, &mut out)?
        }
        Command::Sweep => commands::sweep(&ctx, &mut out)?,
        Command::Compare => commands::compare(&ctx, &mut out)?,
        Command::Denoise { replicate } => commands::denoise(&ctx, *replicate, &mut out)?,
    }

    out.write("config.toml", &config.to_toml())?;
    let mut files = out.files.clone();
    files.push("manifest.json".into());
    let manifest = Manifest {
        subcommand: cli.command.name(),
        config_path: cli.common.config.clone(),
        config_echo: "config.toml",
        master_seed: config.seed,
        version: env!("CARGO_PKG_VERSION"),
        out_dir: cli.common.out_dir.clone(),
        files,
    };
    out.write_json("manifest.json", &manifest)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = ErrorRecord {
                error: e.kind(),
                message: e.to_string(),
            };
            eprintln!("{}", serde_json::to_string(&record).expect("error record serializes"));
            ExitCode::FAILURE
        }
    }
}
