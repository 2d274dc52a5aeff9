use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use serde::Serialize;

use entroscope::checkpoint::{load_checkpoint, save_checkpoint};
use entroscope::curvature::{curvature_along, curvature_header, report_at};
use entroscope::datasets::{Dataset, OrderSeed};
use entroscope::experiments::{
    crossover, instability, instability_sweep, inversions, median_time, projected_run, relaxation_time,
};
use entroscope::langevin::{
    compare_marginals, drift_velocity, effective_dynamics, effective_stationary_marginal, integrate, law_distances,
    stationary_marginal, DriftProbe, StationaryEstimate, Trajectory,
};
use entroscope::optim::OptimizerState;
use entroscope::paths::{self, autoneb_net, load_polyline, save_polyline, Polyline, ProfileRow};
use entroscope::training::{run_epochs, TrainPlan};
use entroscope::{par, tensornet, NetSpec, ParamVector};

use crate::config::{ConfigError, ExperimentConfig, LangevinMode};

/// Formats a float so that it parses back to the same value.
pub fn num(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-4..1e15).contains(&a) || !v.is_finite() {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn require(p: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    match p {
        Some(p) => Ok(p.clone()),
        None => bail!(ConfigError(format!("missing input: {what}"))),
    }
}

fn check_fits(spec: &NetSpec, ds: &Dataset) -> Result<()> {
    if spec.input_dim() != ds.dim() || spec.classes() != ds.classes() {
        bail!(ConfigError(format!(
            "network {:?} does not fit the dataset ({} features, {} classes)",
            spec.widths(),
            ds.dim(),
            ds.classes()
        )));
    }
    Ok(())
}

fn load_endpoints(cfg: &ExperimentConfig, ds: &Dataset) -> Result<(NetSpec, ParamVector, ParamVector)> {
    let (sa, a) = load_checkpoint(&require(&cfg.inputs.a, "first endpoint checkpoint")?)?;
    let (sb, b) = load_checkpoint(&require(&cfg.inputs.b, "second endpoint checkpoint")?)?;
    if !sa.same_shape(&sb) {
        bail!(ConfigError(format!(
            "endpoint networks differ\n  a: {:?} {}\n  b: {:?} {}",
            sa.widths(),
            sa.activation().name(),
            sb.widths(),
            sb.activation().name()
        )));
    }
    check_fits(&sa, ds)?;
    Ok((sa, a, b))
}

fn load_path(cfg: &ExperimentConfig, ds: &Dataset) -> Result<(NetSpec, Polyline)> {
    let (spec, path, _) = load_polyline(&require(&cfg.inputs.path, "polyline directory")?)?;
    check_fits(&spec, ds)?;
    Ok((spec, path))
}

pub fn train(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let ds = cfg.dataset.build()?;
    let spec = cfg.net.spec_for(&ds)?;
    cfg.optim.validate()?;
    cfg.schedule.validate()?;
    let plan = TrainPlan {
        total_epochs: cfg.train.epochs,
        batch_size: cfg.train.batch_size,
        schedule: cfg.schedule.clone(),
    };
    let mut theta = spec.init();
    let mut opt = OptimizerState::new(cfg.optim.clone());
    let stats = run_epochs(
        &spec,
        &ds,
        &mut theta,
        &mut opt,
        &plan,
        0..plan.total_epochs,
        OrderSeed(cfg.train.order_seed),
    )?;
    save_checkpoint(&out.join("model.ckpt"), &spec, &theta)?;
    write_csv(
        &out.join("metrics.csv"),
        &["epoch", "lr", "train_loss", "train_acc"],
        stats
            .iter()
            .map(|s| vec![s.epoch.to_string(), num(s.lr), num(s.train_loss), num(s.train_acc)]),
    )?;
    if let Some(last) = stats.last() {
        eprintln!("final loss {:.6}, accuracy {:.4}", last.train_loss, last.train_acc);
    }
    Ok(())
}

fn profile_rows(rows: &[ProfileRow]) -> impl Iterator<Item = Vec<String>> + '_ {
    rows.iter().map(|r| {
        vec![
            r.position.segment.to_string(),
            num(r.position.lambda),
            num(r.position.relative_euclidean),
            num(r.position.pivot_norm),
            u8::from(r.is_pivot).to_string(),
            num(r.value),
        ]
    })
}

const PROFILE_HEADER: [&str; 6] = ["segment", "lambda", "rel_euclid", "pivot_norm", "is_pivot", "loss"];

#[derive(Serialize)]
struct NebSummary {
    pivots: usize,
    capped: bool,
    total_length: f64,
    max_loss: f64,
    straight_max_loss: f64,
}

pub fn neb(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let ds = cfg.dataset.build()?;
    let (spec, a, b) = load_endpoints(cfg, &ds)?;
    let result = autoneb_net(&spec, &ds, &a, &b, &cfg.neb)?;
    save_polyline(&out.join("path"), &spec, &result.path, &result.log, result.capped)?;
    write_csv(
        &out.join("cycles.csv"),
        &[
            "cycle",
            "lr",
            "epochs",
            "updates",
            "pivots",
            "max_loss",
            "inserted",
            "length_drift",
            "fraction_drift",
        ],
        result.log.iter().map(|c| {
            vec![
                c.cycle.to_string(),
                num(c.lr),
                c.epochs.to_string(),
                c.updates.to_string(),
                c.pivots.to_string(),
                num(c.max_loss),
                c.inserted.to_string(),
                num(c.length_drift),
                num(c.fraction_drift),
            ]
        }),
    )?;
    write_csv(
        &out.join("geometry.csv"),
        &["index", "segment_length", "cumulative"],
        paths::pivot_geometry(&result.path)
            .iter()
            .map(|r| vec![r.index.to_string(), opt_num(r.segment_length), num(r.cumulative)]),
    )?;
    let sps = cfg.profile.samples_per_segment;
    let loss = |t: &ParamVector| tensornet::loss(&spec, t, ds.full());
    let mep = paths::profile(&result.path, loss, sps)?;
    let straight_path = Polyline::straight(&a, &b, result.path.pivots().len() - 2)?;
    let straight = paths::profile(&straight_path, loss, sps)?;
    write_csv(&out.join("profile.csv"), &PROFILE_HEADER, profile_rows(&mep))?;
    write_csv(&out.join("straight.csv"), &PROFILE_HEADER, profile_rows(&straight))?;
    let peak = |rows: &[ProfileRow]| rows.iter().map(|r| r.value).fold(f64::NEG_INFINITY, f64::max);
    let summary = NebSummary {
        pivots: result.path.pivots().len(),
        capped: result.capped,
        total_length: result.path.total_length(),
        max_loss: peak(&mep),
        straight_max_loss: peak(&straight),
    };
    eprintln!(
        "{} pivots, max loss {:.6} (straight line {:.6})",
        summary.pivots, summary.max_loss, summary.straight_max_loss
    );
    write_json(&out.join("summary.json"), &summary)
}

pub fn interp(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let ds = cfg.dataset.build()?;
    let (spec, a, b) = load_endpoints(cfg, &ds)?;
    let power = cfg.interp.with_curvature.then_some(&cfg.interp.power);
    let res = instability(&spec, &a, &b, &ds, cfg.interp.points, power)?;
    let mut header = vec!["t", "loss"];
    if res.curvature_profile.is_some() {
        header.push("lambda_max");
    }
    write_csv(
        &out.join("interp.csv"),
        &header,
        res.ts.iter().enumerate().map(|(i, &t)| {
            let mut row = vec![num(t), num(res.loss_profile[i])];
            if let Some(c) = &res.curvature_profile {
                row.push(num(c[i]));
            }
            row
        }),
    )?;
    #[derive(Serialize)]
    struct Summary {
        loss_instability: Option<f64>,
        curvature_instability: Option<f64>,
        mean_loss: f64,
    }
    write_json(
        &out.join("summary.json"),
        &Summary {
            loss_instability: res.loss_instability,
            curvature_instability: res.curvature_instability,
            mean_loss: res.mean_loss,
        },
    )
}

pub fn curvature(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let ds = cfg.dataset.build()?;
    let opts = &cfg.curvature;
    match (&cfg.inputs.path, &cfg.inputs.checkpoint) {
        (Some(_), Some(_)) => bail!(ConfigError("give either a path or a checkpoint, not both".into())),
        (None, None) => bail!(ConfigError(
            "missing input: --along <path dir> or --at <checkpoint>".into()
        )),
        (Some(_), None) => {
            let (spec, path) = load_path(cfg, &ds)?;
            let rows = curvature_along(&spec, &path, &ds, cfg.profile.samples_per_segment, opts)?;
            let header = curvature_header(opts.sigma_count);
            let header: Vec<&str> = header.iter().map(String::as_str).collect();
            write_csv(
                &out.join("curvature.csv"),
                &header,
                rows.iter().map(|r| r.values().into_iter().map(num).collect()),
            )
        }
        (None, Some(ckpt)) => {
            let (spec, theta) = load_checkpoint(ckpt)?;
            check_fits(&spec, &ds)?;
            let report = report_at(&spec, &theta, &ds, opts)?;
            eprintln!(
                "lambda_max {:.6}, fisher trace {:.6}",
                report.lambda_max, report.fisher_trace
            );
            write_json(&out.join("report.json"), &report)
        }
    }
}

pub fn project(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let ds = cfg.dataset.build()?;
    let (spec, path) = load_path(cfg, &ds)?;
    let p = &cfg.project;
    if p.replicas == 0 {
        bail!(ConfigError("project.replicas must be >= 1".into()));
    }
    let runs = par::map_indexed(p.replicas, |r| projected_run(&spec, &path, &ds, &p.run_config(r)));
    let mut times = Vec::with_capacity(runs.len());
    let mut diverged = Vec::with_capacity(runs.len());
    let mut max_path_distance = 0.0f64;
    for (r, run) in runs.into_iter().enumerate() {
        let run = run?;
        let probes = p.curvature_every > 0;
        let mut header = vec!["u", "t_eff", "rel_euclid", "pivot_norm", "loss", "grad_norm"];
        if probes {
            header.push("lambda_max");
        }
        write_csv(
            &out.join(format!("run_{r:03}.csv")),
            &header,
            run.records.iter().map(|rec| {
                let mut row = vec![
                    rec.u.to_string(),
                    num(rec.t_eff),
                    num(rec.rel_euclid),
                    num(rec.pivot_norm),
                    num(rec.loss),
                    num(rec.grad_norm),
                ];
                if probes {
                    row.push(opt_num(rec.lambda_max));
                }
                row
            }),
        )?;
        max_path_distance = run
            .records
            .iter()
            .map(|rec| rec.path_distance)
            .fold(max_path_distance, f64::max);
        times.push(relaxation_time(&run.records)?);
        diverged.push(run.diverged);
    }
    #[derive(Serialize)]
    struct Summary {
        relaxation_times: Vec<Option<f64>>,
        median_relaxation_time: Option<f64>,
        diverged: Vec<bool>,
        max_path_distance: f64,
    }
    let median = median_time(&times);
    eprintln!(
        "median relaxation time {}",
        median.map_or("never".into(), |t| format!("{t:.3}"))
    );
    write_json(
        &out.join("summary.json"),
        &Summary {
            relaxation_times: times,
            median_relaxation_time: median,
            diverged,
            max_path_distance,
        },
    )
}

fn write_trajectory(path: &Path, tr: &Trajectory) -> Result<()> {
    write_csv(
        path,
        &["t", "x", "y"],
        (0..tr.len()).map(|i| vec![num(tr.t[i]), num(tr.x[i]), num(tr.y[i])]),
    )
}

fn write_marginal(path: &Path, est: &StationaryEstimate) -> Result<()> {
    write_csv(
        path,
        &["bin_center", "density"],
        est.centers()
            .into_iter()
            .zip(est.density())
            .map(|(c, d)| vec![num(c), num(d)]),
    )
}

/// Slope and centred R² of a least-squares line through the origin.
pub fn fit_through_origin(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let slope = sxy / sxx;
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - slope * x).powi(2)).sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - mean).powi(2)).sum();
    (slope, 1.0 - ss_res / ss_tot)
}

pub fn langevin(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let l = &cfg.langevin;
    let pot = &l.potential;
    match l.mode {
        LangevinMode::Trajectory => {
            let tr = if l.reduced {
                effective_dynamics(pot, &l.run, l.y0)?
            } else {
                integrate(pot, &l.run, l.x0)?
            };
            write_trajectory(&out.join("trajectory.csv"), &tr)
        }
        LangevinMode::Marginal => {
            let est = if l.reduced {
                effective_stationary_marginal(pot, &l.run, l.bins)?
            } else {
                stationary_marginal(pot, &l.run, l.bins)?
            };
            write_marginal(&out.join("marginal.csv"), &est)?;
            if let Some(profile) = pot.profile() {
                let d = law_distances(profile, l.run.y_domain, &est.samples);
                eprintln!(
                    "{} samples, KS to g^-1/2 {:.4}, to 1/g {:.4}",
                    est.samples.len(),
                    d.ks_sqrt_law,
                    d.ks_inverse_law
                );
                write_json(&out.join("summary.json"), &d)?;
            }
            Ok(())
        }
        LangevinMode::Compare => {
            let cmp = compare_marginals(pot, &l.run, l.bins)?;
            write_marginal(&out.join("marginal_full.csv"), &cmp.full)?;
            write_marginal(&out.join("marginal_reduced.csv"), &cmp.reduced)?;
            #[derive(Serialize)]
            struct Summary {
                samples: usize,
                full: entroscope::langevin::LawDistances,
                reduced: entroscope::langevin::LawDistances,
            }
            eprintln!(
                "full dynamics: KS {:.4} / {:.4}; reduced: KS {:.4} / {:.4} (to g^-1/2 / 1/g)",
                cmp.full_distances.ks_sqrt_law,
                cmp.full_distances.ks_inverse_law,
                cmp.reduced_distances.ks_sqrt_law,
                cmp.reduced_distances.ks_inverse_law
            );
            write_json(
                &out.join("summary.json"),
                &Summary {
                    samples: cmp.full.samples.len(),
                    full: cmp.full_distances,
                    reduced: cmp.reduced_distances,
                },
            )
        }
        LangevinMode::Drift => {
            if l.drift_temperatures.is_empty() {
                bail!(ConfigError("langevin.drift_temperatures is empty".into()));
            }
            let mut means = Vec::new();
            let mut rows = Vec::new();
            for (i, &t) in l.drift_temperatures.iter().enumerate() {
                let probe = DriftProbe {
                    temperature: t,
                    seed: l.drift.seed.wrapping_add(i as u64),
                    ..l.drift.clone()
                };
                let d = drift_velocity(pot, &probe)?;
                means.push(d.mean);
                rows.push(vec![num(t), num(d.mean), num(d.stderr)]);
            }
            write_csv(&out.join("drift.csv"), &["temperature", "mean", "stderr"], rows)?;
            #[derive(Serialize)]
            struct Summary {
                slope: f64,
                r_squared: f64,
            }
            let (slope, r_squared) = fit_through_origin(&l.drift_temperatures, &means);
            write_json(&out.join("summary.json"), &Summary { slope, r_squared })
        }
    }
}

pub fn lmc(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let ds = cfg.dataset.build()?;
    let spec = cfg.net.spec_for(&ds)?;
    cfg.schedule.validate()?;
    let rows = instability_sweep(&cfg.lmc, &spec, &cfg.optim, &ds, &cfg.schedule)?;
    write_csv(
        &out.join("sweep.csv"),
        &[
            "k",
            "mean_path_loss",
            "loss_instability",
            "curvature_instability",
            "replicas",
        ],
        rows.iter().map(|r| {
            vec![
                r.k.to_string(),
                num(r.mean_path_loss),
                opt_num(r.loss_instability),
                opt_num(r.curvature_instability),
                r.replicas.to_string(),
            ]
        }),
    )?;
    #[derive(Serialize)]
    struct Summary {
        crossover_k: Option<usize>,
        mean_path_loss_inversions: usize,
    }
    let losses: Vec<f64> = rows.iter().map(|r| r.mean_path_loss).collect();
    write_json(
        &out.join("summary.json"),
        &Summary {
            crossover_k: crossover(&rows),
            mean_path_loss_inversions: inversions(&losses),
        },
    )
}
