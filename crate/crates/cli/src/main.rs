//! `entroscope`: paths, curvature and projected dynamics on small networks,
//! plus the two-dimensional Langevin toy model.
//!
//! Every command writes into one output directory and finishes by writing
//! `manifest.json` there. Passing that manifest back as `--config` re-runs the
//! command with the exact resolved configuration.

mod commands;
mod config;
mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use crate::config::{ConfigError, ExperimentConfig, LangevinMode};
use crate::manifest::{RunManifest, MANIFEST_FILE};

#[derive(Parser, Debug)]
#[command(name = "entroscope", version, about, propagate_version = true)]
struct Cli {
    /// TOML config file, or a `manifest.json` from an earlier run to replay it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Root seed for every section seed the config leaves unset.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory. Defaults to `$ENTROSCOPE_OUT/<command>`, else `runs/<command>`.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Worker threads; 0 uses every core. `--jobs 1` gives byte-identical replays.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a network; writes `model.ckpt` and `metrics.csv`.
    Train,
    /// Find a minimum-energy path between two checkpoints.
    Neb { a: Option<PathBuf>, b: Option<PathBuf> },
    /// Loss (and optionally curvature) along the straight line between two checkpoints.
    Interp { a: Option<PathBuf>, b: Option<PathBuf> },
    /// Curvature estimators along a path or at one checkpoint.
    Curvature {
        /// Polyline directory written by `neb`.
        #[arg(long, value_name = "DIR", conflicts_with = "at")]
        along: Option<PathBuf>,
        /// Single checkpoint.
        #[arg(long, value_name = "FILE")]
        at: Option<PathBuf>,
    },
    /// Projected SGD along a path, one run per noise seed.
    Project {
        /// Polyline directory written by `neb`.
        path: Option<PathBuf>,
    },
    /// Simulate the two-dimensional Langevin toy model.
    Langevin {
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Use the reduced one-dimensional equation.
        #[arg(long)]
        reduced: bool,
    },
    /// Split training at several epochs and measure sibling instability.
    Lmc,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Trajectory,
    Marginal,
    Compare,
    Drift,
}

impl From<ModeArg> for LangevinMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Trajectory => LangevinMode::Trajectory,
            ModeArg::Marginal => LangevinMode::Marginal,
            ModeArg::Compare => LangevinMode::Compare,
            ModeArg::Drift => LangevinMode::Drift,
        }
    }
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Neb { .. } => "neb",
            Command::Interp { .. } => "interp",
            Command::Curvature { .. } => "curvature",
            Command::Project { .. } => "project",
            Command::Langevin { .. } => "langevin",
            Command::Lmc => "lmc",
        }
    }

    fn apply(&self, cfg: &mut ExperimentConfig) {
        let set = |slot: &mut Option<PathBuf>, v: &Option<PathBuf>| {
            if v.is_some() {
                slot.clone_from(v);
            }
        };
        match self {
            Command::Neb { a, b } | Command::Interp { a, b } => {
                set(&mut cfg.inputs.a, a);
                set(&mut cfg.inputs.b, b);
            }
            Command::Curvature { along, at } => {
                if along.is_some() || at.is_some() {
                    cfg.inputs.path.clone_from(along);
                    cfg.inputs.checkpoint.clone_from(at);
                }
            }
            Command::Project { path } => set(&mut cfg.inputs.path, path),
            Command::Langevin { mode, reduced } => {
                if let Some(m) = mode {
                    cfg.langevin.mode = (*m).into();
                }
                if *reduced {
                    cfg.langevin.reduced = true;
                }
            }
            Command::Train | Command::Lmc => {}
        }
    }
}

fn output_dir(cli: &Cli) -> PathBuf {
    if let Some(out) = &cli.out {
        return out.clone();
    }
    let root = std::env::var_os("ENTROSCOPE_OUT").map_or_else(|| PathBuf::from("runs"), PathBuf::from);
    root.join(cli.command.name())
}

/// Creates `dir`, clearing it first if it holds an earlier run.
fn prepare(dir: &Path) -> Result<()> {
    if dir.exists() {
        if dir.join(MANIFEST_FILE).exists() {
            fs::remove_dir_all(dir).with_context(|| format!("clearing {}", dir.display()))?;
        } else if fs::read_dir(dir)?.next().is_some() {
            bail!(ConfigError(format!(
                "output directory {} is not empty and holds no earlier run",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if cli.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global()
            .context("starting the worker pool")?;
    }
    let name = cli.command.name();
    let (cfg, source) = config::load(cli.config.as_deref(), name)?;
    let mut cfg = cfg;
    cli.command.apply(&mut cfg);
    let cfg = config::resolve(cfg, &source, cli.seed)?;
    let out = output_dir(cli);
    prepare(&out)?;

    let started = Instant::now();
    match cli.command {
        Command::Train => commands::train(&cfg, &out)?,
        Command::Neb { .. } => commands::neb(&cfg, &out)?,
        Command::Interp { .. } => commands::interp(&cfg, &out)?,
        Command::Curvature { .. } => commands::curvature(&cfg, &out)?,
        Command::Project { .. } => commands::project(&cfg, &out)?,
        Command::Langevin { .. } => commands::langevin(&cfg, &out)?,
        Command::Lmc => commands::lmc(&cfg, &out)?,
    }
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: name.into(),
        jobs: rayon::current_num_threads(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        outputs: manifest::inventory(&out)?,
        config: cfg,
    };
    manifest::write(&out, &manifest)?;
    eprintln!("wrote {}", out.join(MANIFEST_FILE).display());
    Ok(())
}

/// 3 for numerical failures, 2 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err.chain().any(|c| {
        c.downcast_ref::<entroscope::Error>()
            .is_some_and(entroscope::Error::is_numerical)
    });
    if numerical {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
