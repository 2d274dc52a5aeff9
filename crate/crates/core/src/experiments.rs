//! Path-constrained SGD, relaxation times and the linear-mode-connectivity
//! splitting harness.

use serde::{Deserialize, Serialize};

use crate::curvature::{self, PowerConfig};
use crate::datasets::{BatchStream, Dataset, OrderSeed};
use crate::error::{Error, Result};
use crate::linalg;
use crate::optim::{LrSchedule, OptimConfig, OptimizerState};
use crate::par;
use crate::paths::{self, Polyline};
use crate::rng;
use crate::tensornet::{self, NetSpec, ParamVector};
use crate::training::{run_epochs, TrainPlan};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProjectedRunConfig {
    /// Starting arclength fraction along the path.
    pub start: f64,
    /// Optimizer updates between projections.
    pub k_steps: usize,
    pub optimizer: OptimConfig,
    pub batch_size: usize,
    pub total_updates: usize,
    /// Batch-order seed; the only source of noise in a run.
    pub seed: u64,
    /// Probe `lambda_max` every this many projections; 0 disables probes.
    pub curvature_every: usize,
    pub power: PowerConfig,
}

impl Default for ProjectedRunConfig {
    fn default() -> Self {
        ProjectedRunConfig {
            start: 0.3,
            k_steps: 15,
            optimizer: OptimConfig::default(),
            batch_size: 16,
            total_updates: 3000,
            seed: 0,
            curvature_every: 0,
            power: PowerConfig {
                iters: 100,
                tol: 1e-6,
                seed: 0,
            },
        }
    }
}

impl ProjectedRunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_steps == 0 {
            return Err(Error::Config("k_steps must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.start) {
            return Err(Error::Config(format!("start position {} outside [0, 1]", self.start)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        self.optimizer.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunRecord {
    /// Optimizer updates so far.
    pub u: u64,
    /// `u * lr`.
    pub t_eff: f64,
    pub rel_euclid: f64,
    pub pivot_norm: f64,
    pub loss: f64,
    pub grad_norm: f64,
    pub lambda_max: Option<f64>,
    /// How far the optimizer had left the path before this projection.
    pub excursion: f64,
    /// Distance from the projected parameters back to the path.
    pub path_distance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectedRun {
    pub records: Vec<RunRecord>,
    /// Set when the loss stopped being finite; records up to that point are kept.
    pub diverged: bool,
}

/// Alternates `k_steps` minibatch updates with a projection onto the path.
/// A record is emitted at the projected start and after every projection.
pub fn projected_run(spec: &NetSpec, path: &Polyline, ds: &Dataset, cfg: &ProjectedRunConfig) -> Result<ProjectedRun> {
    cfg.validate()?;
    if path.dim() != spec.param_count() {
        return Err(Error::Shape(format!(
            "path of dimension {} for a network with {} parameters",
            path.dim(),
            spec.param_count()
        )));
    }
    let pos = path.position_at_relative(cfg.start)?;
    let mut theta = path.point(pos.segment, pos.lambda);
    let mut opt = OptimizerState::new(cfg.optimizer.clone());
    let mut stream = BatchStream::new(ds.len(), cfg.batch_size.min(ds.len()), OrderSeed(cfg.seed))?;
    let lr = cfg.optimizer.lr;
    let mut records = Vec::new();
    let mut projections = 0usize;
    let mut u = 0u64;
    loop {
        let (at, on_path) = paths::project_to_polyline(&theta, path)?;
        let excursion = linalg::dist(&theta, &on_path);
        theta = on_path;
        let (_, again) = paths::project_to_polyline(&theta, path)?;
        let path_distance = linalg::dist(&theta, &again);
        let (loss, g) = tensornet::loss_and_gradient(spec, &theta, ds.full())?;
        if !loss.is_finite() {
            return Ok(ProjectedRun {
                records,
                diverged: true,
            });
        }
        let lambda_max = if cfg.curvature_every > 0 && projections.is_multiple_of(cfg.curvature_every) {
            Some(curvature::lambda_max_power(spec, &theta, ds.full(), &cfg.power)?.lambda)
        } else {
            None
        };
        records.push(RunRecord {
            u,
            t_eff: u as f64 * lr,
            rel_euclid: at.relative_euclidean,
            pivot_norm: at.pivot_norm,
            loss,
            grad_norm: g.norm(),
            lambda_max,
            excursion,
            path_distance,
        });
        if u as usize >= cfg.total_updates {
            break;
        }
        let steps = cfg.k_steps.min(cfg.total_updates - u as usize);
        let mut v = theta.into_vec();
        for _ in 0..steps {
            let idx = stream.next().expect("batch stream is endless");
            let grad = tensornet::gradient(spec, &ParamVector::new(v.clone()), &ds.batch(&idx))?;
            if !grad.is_finite() {
                return Ok(ProjectedRun {
                    records,
                    diverged: true,
                });
            }
            opt.step(&mut v, &grad)?;
            u += 1;
        }
        theta = ParamVector::new(v);
        projections += 1;
    }
    Ok(ProjectedRun {
        records,
        diverged: false,
    })
}

/// Relative distance to the nearest path endpoint.
pub fn endpoint_distance(rel: f64) -> f64 {
    rel.min(1.0 - rel)
}

/// First `t_eff` at which the distance to the nearest endpoint has dropped to
/// `1/e` of its initial value. `None` if that never happens.
pub fn relaxation_time(records: &[RunRecord]) -> Result<Option<f64>> {
    let first = records
        .first()
        .ok_or_else(|| Error::InvalidArgument("relaxation time of an empty run".into()))?;
    let d0 = endpoint_distance(first.rel_euclid);
    if !(d0 > 0.0) {
        return Err(Error::InvalidArgument("run starts on an endpoint".into()));
    }
    let target = d0 / std::f64::consts::E;
    Ok(records
        .iter()
        .find(|r| endpoint_distance(r.rel_euclid) <= target)
        .map(|r| r.t_eff))
}

/// Median of the finite values, with never-relaxed runs counted as +∞.
pub fn median_time(times: &[Option<f64>]) -> Option<f64> {
    let mut v: Vec<f64> = times.iter().map(|t| t.unwrap_or(f64::INFINITY)).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let m = if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    };
    m.is_finite().then_some(m)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub split_epoch: usize,
    pub siblings: usize,
    pub shared_order: u64,
    pub sibling_orders: Vec<u64>,
    pub total_epochs: usize,
}

impl SplitSpec {
    /// Sibling orders derived from the shared one.
    pub fn derived(split_epoch: usize, siblings: usize, shared_order: u64, total_epochs: usize) -> Self {
        SplitSpec {
            split_epoch,
            siblings,
            shared_order,
            sibling_orders: (0..siblings as u64)
                .map(|i| rng::derive(shared_order, rng::DOMAIN_ORDER ^ (i + 1)))
                .collect(),
            total_epochs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.split_epoch > self.total_epochs {
            return Err(Error::Config(format!(
                "split epoch {} exceeds total epochs {}",
                self.split_epoch, self.total_epochs
            )));
        }
        if self.siblings < 2 {
            return Err(Error::Config(format!(
                "need at least 2 siblings, got {}",
                self.siblings
            )));
        }
        if self.sibling_orders.len() != self.siblings {
            return Err(Error::Config(format!(
                "{} sibling orders for {} siblings",
                self.sibling_orders.len(),
                self.siblings
            )));
        }
        for (i, a) in self.sibling_orders.iter().enumerate() {
            if self.sibling_orders[..i].contains(a) {
                return Err(Error::Config(format!("sibling order seed {a} is repeated")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitOutcome {
    /// Each sibling's parameters at the splitting epoch.
    pub at_split: Vec<ParamVector>,
    pub finals: Vec<ParamVector>,
}

/// Every sibling trains epochs `[0, k)` on the shared order, then `[k, total)`
/// on its own order. Siblings run independently, so equality at the split
/// checks the shared prefix rather than assuming it.
pub fn split_train(
    split: &SplitSpec,
    net: &NetSpec,
    opt: &OptimConfig,
    ds: &Dataset,
    batch_size: usize,
    schedule: &LrSchedule,
) -> Result<SplitOutcome> {
    split.validate()?;
    opt.validate()?;
    let plan = TrainPlan {
        total_epochs: split.total_epochs,
        batch_size,
        schedule: schedule.clone(),
    };
    let runs = par::map_indexed(split.siblings, |i| -> Result<(ParamVector, ParamVector)> {
        let mut theta = net.init();
        let mut state = OptimizerState::new(opt.clone());
        run_epochs(
            net,
            ds,
            &mut theta,
            &mut state,
            &plan,
            0..split.split_epoch,
            OrderSeed(split.shared_order),
        )?;
        let at_split = theta.clone();
        run_epochs(
            net,
            ds,
            &mut theta,
            &mut state,
            &plan,
            split.split_epoch..split.total_epochs,
            OrderSeed(split.sibling_orders[i]),
        )?;
        Ok((at_split, theta))
    });
    let mut out = SplitOutcome {
        at_split: Vec::new(),
        finals: Vec::new(),
    };
    for r in runs {
        let (a, f) = r?;
        out.at_split.push(a);
        out.finals.push(f);
    }
    Ok(out)
}

/// `max / min` of a profile, or `None` unless every value is positive and finite.
pub fn ratio_instability(profile: &[f64]) -> Option<f64> {
    if profile.is_empty() || profile.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return None;
    }
    let max = profile.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = profile.iter().copied().fold(f64::INFINITY, f64::min);
    Some(max / min)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InstabilityResult {
    pub ts: Vec<f64>,
    pub loss_profile: Vec<f64>,
    pub curvature_profile: Option<Vec<f64>>,
    /// `None` when some loss value is not positive.
    pub loss_instability: Option<f64>,
    /// `None` when curvature was not requested or some value is not positive.
    pub curvature_instability: Option<f64>,
    pub mean_loss: f64,
}

/// Loss (and optionally `lambda_max`) at `points` evenly spaced points of the segment from `a` to `b`.
pub fn instability(
    spec: &NetSpec,
    a: &ParamVector,
    b: &ParamVector,
    ds: &Dataset,
    points: usize,
    with_curvature: Option<&PowerConfig>,
) -> Result<InstabilityResult> {
    if points < 3 {
        return Err(Error::InvalidArgument(format!("need at least 3 points, got {points}")));
    }
    let ts: Vec<f64> = (0..points).map(|i| i as f64 / (points - 1) as f64).collect();
    let evals = par::map_indexed(points, |i| -> Result<(f64, Option<f64>)> {
        let theta = paths::interpolate(a, b, ts[i])?;
        let loss = tensornet::loss(spec, &theta, ds.full())?;
        let curv = match with_curvature {
            Some(cfg) => Some(curvature::lambda_max_power(spec, &theta, ds.full(), cfg)?.lambda),
            None => None,
        };
        Ok((loss, curv))
    });
    let mut loss_profile = Vec::with_capacity(points);
    let mut curv_profile = Vec::with_capacity(points);
    for e in evals {
        let (l, c) = e?;
        loss_profile.push(l);
        if let Some(c) = c {
            curv_profile.push(c);
        }
    }
    let curvature_profile = with_curvature.map(|_| curv_profile);
    Ok(InstabilityResult {
        loss_instability: ratio_instability(&loss_profile),
        curvature_instability: curvature_profile.as_deref().and_then(ratio_instability),
        mean_loss: loss_profile.iter().sum::<f64>() / points as f64,
        ts,
        loss_profile,
        curvature_profile,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub ks: Vec<usize>,
    pub replicas: usize,
    pub siblings: usize,
    pub total_epochs: usize,
    pub batch_size: usize,
    pub points: usize,
    pub with_curvature: bool,
    pub power: PowerConfig,
    /// Replica `r` uses init seed `net.init_seed + r` and shared order `seed + r`.
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            ks: vec![0, 2, 5, 10, 15, 19],
            replicas: 3,
            siblings: 2,
            total_epochs: 20,
            batch_size: 16,
            points: 11,
            with_curvature: false,
            power: PowerConfig {
                iters: 100,
                tol: 1e-6,
                seed: 0,
            },
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub k: usize,
    pub mean_path_loss: f64,
    pub loss_instability: Option<f64>,
    pub curvature_instability: Option<f64>,
    pub replicas: usize,
}

/// Mean path loss, loss instability and curvature instability of one replica.
type Cell = (f64, Option<f64>, Option<f64>);

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Replica-median path metrics for each splitting epoch. Within a replica the
/// metrics are averaged over all sibling pairs; a metric is reported only if
/// it is defined for every pair of every replica.
pub fn instability_sweep(
    cfg: &SweepConfig,
    net: &NetSpec,
    opt: &OptimConfig,
    ds: &Dataset,
    schedule: &LrSchedule,
) -> Result<Vec<SweepRow>> {
    if cfg.replicas == 0 {
        return Err(Error::Config("sweep needs at least one replica".into()));
    }
    if let Some(k) = cfg.ks.iter().find(|&&k| k > cfg.total_epochs) {
        return Err(Error::Config(format!(
            "k = {k} exceeds total epochs {}",
            cfg.total_epochs
        )));
    }
    let power = cfg.with_curvature.then_some(&cfg.power);
    let cells = par::map_indexed(cfg.ks.len() * cfg.replicas, |cell| -> Result<Cell> {
        let (ki, r) = (cell / cfg.replicas, cell % cfg.replicas);
        let split = SplitSpec::derived(
            cfg.ks[ki],
            cfg.siblings,
            cfg.seed.wrapping_add(r as u64),
            cfg.total_epochs,
        );
        let replica_net = net.with_init_seed(net.init_seed().wrapping_add(r as u64));
        let out = split_train(&split, &replica_net, opt, ds, cfg.batch_size, schedule)?;
        let mut loss = 0.0;
        let mut li = Some(0.0);
        let mut ci = Some(0.0);
        let mut pairs = 0.0;
        for i in 0..out.finals.len() {
            for j in i + 1..out.finals.len() {
                let res = instability(net, &out.finals[i], &out.finals[j], ds, cfg.points, power)?;
                loss += res.mean_loss;
                li = li.zip(res.loss_instability).map(|(a, b)| a + b);
                ci = ci.zip(res.curvature_instability).map(|(a, b)| a + b);
                pairs += 1.0;
            }
        }
        Ok((loss / pairs, li.map(|v| v / pairs), ci.map(|v| v / pairs)))
    });
    let cells: Vec<_> = cells.into_iter().collect::<Result<_>>()?;
    Ok(cfg
        .ks
        .iter()
        .enumerate()
        .map(|(ki, &k)| {
            let mine = &cells[ki * cfg.replicas..(ki + 1) * cfg.replicas];
            let collect = |f: &dyn Fn(&Cell) -> Option<f64>| {
                let mut v: Option<Vec<f64>> = mine.iter().map(f).collect();
                v.as_mut().and_then(|v| median(v))
            };
            SweepRow {
                k,
                mean_path_loss: collect(&|c| Some(c.0)).unwrap_or(f64::NAN),
                loss_instability: collect(&|c| c.1),
                curvature_instability: collect(&|c| c.2),
                replicas: cfg.replicas,
            }
        })
        .collect())
}

/// Smallest `k` whose curvature instability exceeds its loss instability.
pub fn crossover(rows: &[SweepRow]) -> Option<usize> {
    rows.iter()
        .find(|r| matches!((r.curvature_instability, r.loss_instability), (Some(c), Some(l)) if c > l))
        .map(|r| r.k)
}

/// Number of adjacent pairs where `values` increases.
pub fn inversions(values: &[f64]) -> usize {
    values.windows(2).filter(|w| w[1] > w[0]).count()
}
