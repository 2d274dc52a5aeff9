//! The experiment configuration document and its resolution.
//!
//! A config file is TOML. Every table and field is optional; omitted values
//! take the defaults below. Section seeds that the file leaves unset are
//! derived from the top-level `seed`, and the resolved document (with every
//! seed spelled out) is what gets echoed into the run manifest.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use entroscope::curvature::{CurvatureOptions, PowerConfig};
use entroscope::datasets::{self, Dataset};
use entroscope::experiments::{ProjectedRunConfig, SweepConfig};
use entroscope::langevin::{DriftProbe, LangevinConfig, Potential, Profile};
use entroscope::optim::{LrSchedule, OptimConfig, OptimKind};
use entroscope::paths::NebConfig;
use entroscope::rng;
use entroscope::{Activation, NetSpec};

use crate::manifest::RunManifest;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Root seed for every section seed not given explicitly.
    pub seed: u64,
    pub inputs: Inputs,
    pub dataset: DatasetConfig,
    pub net: NetConfig,
    /// Training optimizer for `train` and `lmc`.
    pub optim: OptimConfig,
    pub schedule: LrSchedule,
    pub train: TrainSection,
    pub neb: NebConfig,
    pub profile: ProfileSection,
    pub interp: InterpSection,
    pub curvature: CurvatureOptions,
    pub project: ProjectSection,
    pub langevin: LangevinSection,
    pub lmc: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            inputs: Inputs::default(),
            dataset: DatasetConfig::default(),
            net: NetConfig::default(),
            optim: OptimConfig {
                kind: OptimKind::Momentum,
                lr: 0.1,
                momentum: 0.9,
                weight_decay: 5e-4,
                ..OptimConfig::default()
            },
            schedule: LrSchedule::default(),
            train: TrainSection::default(),
            neb: NebConfig::default(),
            profile: ProfileSection::default(),
            interp: InterpSection::default(),
            curvature: CurvatureOptions::default(),
            project: ProjectSection::default(),
            langevin: LangevinSection::default(),
            lmc: SweepConfig::default(),
        }
    }
}

/// Files a command reads. Command-line arguments override these.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Inputs {
    /// First endpoint checkpoint (`neb`, `interp`).
    pub a: Option<PathBuf>,
    /// Second endpoint checkpoint (`neb`, `interp`).
    pub b: Option<PathBuf>,
    /// Single checkpoint (`curvature --at`).
    pub checkpoint: Option<PathBuf>,
    /// Polyline directory written by `neb` (`curvature --along`, `project`).
    pub path: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Blobs,
    Moons,
    Idx,
    /// A dataset container written by [`Dataset::save`].
    File,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    pub n: usize,
    /// Blobs only.
    pub dim: usize,
    /// Blobs only.
    pub classes: usize,
    /// Blobs cluster standard deviation.
    pub spread: f64,
    /// Moons noise standard deviation.
    pub noise: f64,
    pub seed: u64,
    /// IDX images, or the container for `kind = "file"`.
    pub images: Option<PathBuf>,
    pub labels: Option<PathBuf>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            kind: DatasetKind::Blobs,
            n: 300,
            dim: 2,
            classes: 3,
            spread: 0.15,
            noise: 0.2,
            seed: 0,
            images: None,
            labels: None,
        }
    }
}

impl DatasetConfig {
    pub fn build(&self) -> Result<Dataset> {
        let ds = match self.kind {
            DatasetKind::Blobs => datasets::make_blobs(self.n, self.dim, self.classes, self.spread, self.seed)?,
            DatasetKind::Moons => datasets::make_moons(self.n, self.noise, self.seed)?,
            DatasetKind::Idx => {
                let (Some(images), Some(labels)) = (&self.images, &self.labels) else {
                    bail!(ConfigError(
                        "dataset.kind = \"idx\" needs dataset.images and dataset.labels".into()
                    ));
                };
                datasets::load_idx(images, labels)?
            }
            DatasetKind::File => {
                let Some(file) = &self.images else {
                    bail!(ConfigError("dataset.kind = \"file\" needs dataset.images".into()));
                };
                Dataset::load(file)?
            }
        };
        Ok(ds)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    /// Hidden widths; input and output widths come from the dataset.
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub init_seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            hidden: vec![16],
            activation: Activation::Relu,
            init_seed: 0,
        }
    }
}

impl NetConfig {
    pub fn spec_for(&self, ds: &Dataset) -> Result<NetSpec> {
        let mut widths = vec![ds.dim()];
        widths.extend(&self.hidden);
        widths.push(ds.classes());
        Ok(NetSpec::new(widths, self.activation, self.init_seed)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub order_seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            epochs: 50,
            batch_size: 32,
            order_seed: 0,
        }
    }
}

/// Sampling density for path profiles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProfileSection {
    /// Interior points per segment, pivots excluded.
    pub samples_per_segment: usize,
}

impl Default for ProfileSection {
    fn default() -> Self {
        ProfileSection { samples_per_segment: 4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InterpSection {
    pub points: usize,
    pub with_curvature: bool,
    pub power: PowerConfig,
}

impl Default for InterpSection {
    fn default() -> Self {
        InterpSection {
            points: 11,
            with_curvature: false,
            power: PowerConfig {
                iters: 100,
                tol: 1e-6,
                seed: 0,
            },
        }
    }
}

/// Projected runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProjectSection {
    /// Runs with batch-order seeds `seed, seed + 1, ...`.
    pub replicas: usize,
    pub start: f64,
    pub k_steps: usize,
    pub batch_size: usize,
    pub total_updates: usize,
    pub seed: u64,
    pub curvature_every: usize,
    pub power: PowerConfig,
    pub optimizer: OptimConfig,
}

impl Default for ProjectSection {
    fn default() -> Self {
        let d = ProjectedRunConfig::default();
        ProjectSection {
            replicas: 5,
            start: d.start,
            k_steps: d.k_steps,
            batch_size: d.batch_size,
            total_updates: d.total_updates,
            seed: d.seed,
            curvature_every: d.curvature_every,
            power: d.power,
            optimizer: d.optimizer,
        }
    }
}

impl ProjectSection {
    pub fn run_config(&self, replica: usize) -> ProjectedRunConfig {
        ProjectedRunConfig {
            start: self.start,
            k_steps: self.k_steps,
            optimizer: self.optimizer.clone(),
            batch_size: self.batch_size,
            total_updates: self.total_updates,
            seed: self.seed.wrapping_add(replica as u64),
            curvature_every: self.curvature_every,
            power: self.power.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LangevinMode {
    /// One trajectory from `x0` (full) or `y0` (reduced).
    Trajectory,
    /// Histogram of the stationary `y` marginal.
    Marginal,
    /// Full and reduced marginals side by side, with KS distances to both laws.
    Compare,
    /// Mean `y` velocity at `drift.y` for each of `drift_temperatures`.
    Drift,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LangevinSection {
    pub mode: LangevinMode,
    /// Use the reduced one-dimensional equation instead of the full dynamics.
    pub reduced: bool,
    pub potential: Potential,
    pub x0: (f64, f64),
    pub y0: f64,
    pub bins: usize,
    pub run: LangevinConfig,
    pub drift: DriftProbe,
    pub drift_temperatures: Vec<f64>,
}

impl Default for LangevinSection {
    fn default() -> Self {
        LangevinSection {
            mode: LangevinMode::Marginal,
            reduced: false,
            potential: Potential::channel(Profile::Quadratic { a: 4.0 }),
            x0: (0.0, 0.0),
            y0: 0.0,
            bins: 40,
            run: LangevinConfig::default(),
            drift: DriftProbe::default(),
            drift_temperatures: vec![0.05, 0.1, 0.2],
        }
    }
}

/// Invalid configuration or inputs; reported with exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

/// Seeds derived from the root seed when the file leaves them out. The dataset
/// seed is not among them, so runs with different root seeds share their data.
const DERIVED_SEEDS: &[&str] = &[
    "net.init_seed",
    "train.order_seed",
    "neb.seed",
    "interp.power.seed",
    "curvature.power.seed",
    "curvature.fisher.seed",
    "project.seed",
    "project.power.seed",
    "langevin.run.seed",
    "langevin.drift.seed",
    "lmc.seed",
    "lmc.power.seed",
];

fn seed_slot<'a>(cfg: &'a mut ExperimentConfig, key: &str) -> &'a mut u64 {
    match key {
        "net.init_seed" => &mut cfg.net.init_seed,
        "train.order_seed" => &mut cfg.train.order_seed,
        "neb.seed" => &mut cfg.neb.seed,
        "interp.power.seed" => &mut cfg.interp.power.seed,
        "curvature.power.seed" => &mut cfg.curvature.power.seed,
        "curvature.fisher.seed" => &mut cfg.curvature.fisher.seed,
        "project.seed" => &mut cfg.project.seed,
        "project.power.seed" => &mut cfg.project.power.seed,
        "langevin.run.seed" => &mut cfg.langevin.run.seed,
        "langevin.drift.seed" => &mut cfg.langevin.drift.seed,
        "lmc.seed" => &mut cfg.lmc.seed,
        "lmc.power.seed" => &mut cfg.lmc.power.seed,
        other => unreachable!("unknown seed slot {other}"),
    }
}

fn key_domain(key: &str) -> u64 {
    key.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x100_0000_01b3)
    })
}

fn present(table: &toml::Table, key: &str) -> bool {
    let mut parts = key.split('.').peekable();
    let mut cur = table;
    while let Some(p) = parts.next() {
        match cur.get(p) {
            None => return false,
            Some(_) if parts.peek().is_none() => return true,
            Some(toml::Value::Table(t)) => cur = t,
            Some(_) => return false,
        }
    }
    false
}

/// Where a configuration came from.
pub enum Source {
    Defaults,
    File(toml::Table),
    Manifest,
}

/// Reads `path` as a TOML config file, or as a run manifest when it ends in `.json`.
pub fn load(path: Option<&Path>, command: &str) -> Result<(ExperimentConfig, Source)> {
    let Some(path) = path else {
        return Ok((ExperimentConfig::default(), Source::Defaults));
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
    if path.extension().is_some_and(|e| e == "json") {
        let m: RunManifest = serde_json::from_str(&text)
            .map_err(|e| ConfigError(format!("{}: not a run manifest: {e}", path.display())))?;
        if m.command != command {
            bail!(ConfigError(format!(
                "manifest {} records command `{}`, not `{command}`",
                path.display(),
                m.command
            )));
        }
        return Ok((m.config, Source::Manifest));
    }
    let cfg: ExperimentConfig =
        toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {}", path.display(), e.message())))?;
    let table: toml::Table = toml::from_str(&text).context("re-reading config as a table")?;
    Ok((cfg, Source::File(table)))
}

/// Fills unset section seeds from the root seed and makes input paths absolute.
pub fn resolve(mut cfg: ExperimentConfig, source: &Source, root_seed: Option<u64>) -> Result<ExperimentConfig> {
    if let Some(s) = root_seed {
        cfg.seed = s;
    }
    let explicit = |key: &str| match source {
        Source::Defaults => false,
        Source::File(t) => present(t, key),
        Source::Manifest => true,
    };
    for key in DERIVED_SEEDS {
        if !explicit(key) {
            *seed_slot(&mut cfg, key) = rng::derive(cfg.seed, key_domain(key));
        }
    }
    let cwd = std::env::current_dir()?;
    for p in [
        &mut cfg.inputs.a,
        &mut cfg.inputs.b,
        &mut cfg.inputs.checkpoint,
        &mut cfg.inputs.path,
        &mut cfg.dataset.images,
        &mut cfg.dataset.labels,
    ]
    .into_iter()
    .flatten()
    {
        if p.is_relative() {
            *p = cwd.join(&*p);
        }
    }
    Ok(cfg)
}
