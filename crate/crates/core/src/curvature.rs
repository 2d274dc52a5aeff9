//! Hessian spectrum estimators: power iteration on exact HVPs, Fisher traces,
//! the score-matrix SVD, Hutchinson probes and a dense oracle for small nets.
//!
//! Two Fisher conventions are exposed under distinct names:
//!
//! * [`fisher_trace`] is the empirical Fisher: `(1/E) Σ |s(x, y)|²` with the
//!   dataset's own labels `y`.
//! * [`fisher_trace_model`] and [`fisher_spectrum`] use the model's expectation
//!   over labels, `(1/E) Σ_x Σ_c p(c|x) |s(x, c)|²`, which is the exact Fisher
//!   information of the predictive distribution.
//!
//! At a minimum of a well-specified model both approach the Hessian of the
//! mean loss. Away from minima the Hessian picks up a term proportional to the
//! gradient, so reports carry the gradient norm alongside.

use nalgebra::DMatrix;
use rand::seq::index;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::linalg;
use crate::par;
use crate::paths::{self, PathPosition, Polyline};
use crate::rng;
use crate::tensornet::{self, Batch, NetSpec, ParamVector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PowerConfig {
    pub iters: usize,
    /// Stop once successive Rayleigh quotients differ by less than `tol * |estimate|`.
    pub tol: f64,
    pub seed: u64,
}

impl Default for PowerConfig {
    fn default() -> Self {
        PowerConfig {
            iters: 500,
            tol: 1e-10,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PowerResult {
    pub lambda: f64,
    pub vector: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Dominant eigenvalue (largest in magnitude) of a symmetric operator.
pub fn power_iteration<F>(op: F, n: usize, cfg: &PowerConfig) -> Result<PowerResult>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if cfg.iters == 0 {
        return Err(Error::InvalidArgument(
            "power iteration needs at least one iteration".into(),
        ));
    }
    if n == 0 {
        return Err(Error::Degenerate("operator of dimension zero".into()));
    }
    let mut r = rng::stream(cfg.seed, rng::DOMAIN_PROBE, 0);
    let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut r)).collect();
    linalg::scale(1.0 / linalg::norm(&v), &mut v);
    let mut estimate = f64::NAN;
    for it in 1..=cfg.iters {
        let hv = op(&v)?;
        if !linalg::all_finite(&hv) {
            return Err(Error::NonFinite("Hessian-vector product is not finite".into()));
        }
        let q = linalg::dot(&v, &hv);
        let size = linalg::norm(&hv);
        if size == 0.0 {
            return Ok(PowerResult {
                lambda: 0.0,
                vector: v,
                iterations: it,
                converged: true,
            });
        }
        let done = (q - estimate).abs() <= cfg.tol * q.abs();
        estimate = q;
        v = hv;
        linalg::scale(1.0 / size, &mut v);
        if done {
            return Ok(PowerResult {
                lambda: estimate,
                vector: v,
                iterations: it,
                converged: true,
            });
        }
    }
    Ok(PowerResult {
        lambda: estimate,
        vector: v,
        iterations: cfg.iters,
        converged: false,
    })
}

/// Power iteration on exact Hessian-vector products over a fixed batch.
pub fn lambda_max_power(spec: &NetSpec, theta: &ParamVector, batch: &Batch, cfg: &PowerConfig) -> Result<PowerResult> {
    power_iteration(
        |v| tensornet::hvp(spec, theta, batch, v).map(ParamVector::into_vec),
        theta.len(),
        cfg,
    )
}

/// `count` distinct example indices in ascending order; all of them when `count == n`.
pub fn sample_indices(n: usize, count: usize, seed: u64) -> Result<Vec<usize>> {
    if count == 0 || count > n {
        return Err(Error::InvalidArgument(format!(
            "cannot draw {count} samples from {n} examples"
        )));
    }
    if count == n {
        return Ok((0..n).collect());
    }
    let mut r = rng::stream(seed, rng::DOMAIN_FISHER, 0);
    let mut idx = index::sample(&mut r, n, count).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Empirical Fisher trace `(1/E) Σ |s(x_i, y_i)|²` over `samples` examples drawn with `seed`.
pub fn fisher_trace(spec: &NetSpec, theta: &ParamVector, ds: &Dataset, samples: usize, seed: u64) -> Result<f64> {
    let idx = sample_indices(ds.len(), samples, seed)?;
    fisher_trace_on(spec, theta, ds, &idx)
}

pub fn fisher_trace_on(spec: &NetSpec, theta: &ParamVector, ds: &Dataset, idx: &[usize]) -> Result<f64> {
    let terms = par::map_indexed(idx.len(), |k| -> Result<f64> {
        let s = tensornet::score(spec, theta, ds.input(idx[k]), ds.label(idx[k]))?;
        Ok(linalg::dot(&s, &s))
    });
    let mut total = 0.0;
    for t in terms {
        total += t?;
    }
    Ok(total / idx.len() as f64)
}

/// Model-expectation Fisher trace `(1/E) Σ_x Σ_c p(c|x) |s(x, c)|²` on the given examples.
pub fn fisher_trace_model(spec: &NetSpec, theta: &ParamVector, ds: &Dataset, idx: &[usize]) -> Result<f64> {
    let terms = par::map_indexed(idx.len(), |k| -> Result<f64> {
        let (p, scores) = tensornet::scores_all_classes(spec, theta, ds.input(idx[k]))?;
        Ok(p.iter().zip(&scores).map(|(pc, s)| pc * linalg::dot(s, s)).sum())
    });
    let mut total = 0.0;
    for t in terms {
        total += t?;
    }
    Ok(total / idx.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FisherConfig {
    /// Number of examples E.
    pub samples: usize,
    pub seed: u64,
    /// Largest allowed score-matrix size `N * C * E`.
    pub max_entries: usize,
}

impl Default for FisherConfig {
    fn default() -> Self {
        FisherConfig {
            samples: 256,
            seed: 0,
            max_entries: 50_000_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FisherSpectrum {
    /// Singular values of the weighted score matrix, descending.
    pub singular_values: Vec<f64>,
    /// `σ² / E`, the leading Fisher eigenvalue estimates.
    pub eigenvalues: Vec<f64>,
    /// Model-convention Fisher trace on the same examples.
    pub trace_model: f64,
    pub samples: Vec<usize>,
}

/// SVD of the `N × (C E)` matrix with columns `s(x, c) √p(c|x)`.
pub fn fisher_spectrum(
    spec: &NetSpec,
    theta: &ParamVector,
    ds: &Dataset,
    cfg: &FisherConfig,
) -> Result<FisherSpectrum> {
    let n = theta.len();
    let c = spec.classes();
    let entries = n.saturating_mul(c).saturating_mul(cfg.samples);
    if entries > cfg.max_entries {
        return Err(Error::MemoryGuard {
            entries,
            cap: cfg.max_entries,
        });
    }
    let idx = sample_indices(ds.len(), cfg.samples, cfg.seed)?;
    let blocks = par::map_indexed(idx.len(), |k| -> Result<Vec<Vec<f64>>> {
        let (p, scores) = tensornet::scores_all_classes(spec, theta, ds.input(idx[k]))?;
        Ok(p.iter()
            .zip(scores)
            .map(|(pc, s)| {
                let w = pc.sqrt();
                s.iter().map(|v| v * w).collect()
            })
            .collect())
    });
    let mut m = DMatrix::<f64>::zeros(n, c * idx.len());
    let mut frob = 0.0;
    for (k, block) in blocks.into_iter().enumerate() {
        for (j, col) in block?.into_iter().enumerate() {
            frob += linalg::dot(&col, &col);
            m.set_column(k * c + j, &nalgebra::DVector::from_vec(col));
        }
    }
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let e = idx.len() as f64;
    Ok(FisherSpectrum {
        eigenvalues: sv.iter().map(|s| s * s / e).collect(),
        singular_values: sv,
        trace_model: frob / e,
        samples: idx,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseHessian {
    /// Symmetrized `(H + Hᵀ) / 2`.
    pub matrix: DMatrix<f64>,
    /// Largest `|H_ij - H_ji|` before symmetrization.
    pub asymmetry: f64,
}

impl DenseHessian {
    pub fn trace(&self) -> f64 {
        self.matrix.trace()
    }

    /// Eigenvalues in descending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self.matrix.clone().symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        ev
    }
}

pub const DENSE_HESSIAN_CAP: usize = 1500;

/// Full Hessian from HVPs on basis vectors. Refused above `cap` parameters.
pub fn dense_hessian(spec: &NetSpec, theta: &ParamVector, batch: &Batch, cap: usize) -> Result<DenseHessian> {
    let n = theta.len();
    if n > cap {
        return Err(Error::InvalidArgument(format!(
            "dense Hessian refused: {n} parameters exceed the cap of {cap}"
        )));
    }
    let cols = par::map_indexed(n, |j| {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        tensornet::hvp(spec, theta, batch, &e)
    });
    let mut h = DMatrix::<f64>::zeros(n, n);
    for (j, col) in cols.into_iter().enumerate() {
        h.set_column(j, &nalgebra::DVector::from_vec(col?.into_vec()));
    }
    let mut asymmetry: f64 = 0.0;
    for i in 0..n {
        for j in 0..i {
            asymmetry = asymmetry.max((h[(i, j)] - h[(j, i)]).abs());
        }
    }
    let matrix = (&h + h.transpose()) * 0.5;
    Ok(DenseHessian { matrix, asymmetry })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TraceEstimate {
    pub mean: f64,
    pub stderr: f64,
}

/// Hutchinson trace estimate `E[zᵀ H z]` with Rademacher probes `z`.
pub fn hutchinson_trace(
    spec: &NetSpec,
    theta: &ParamVector,
    batch: &Batch,
    probes: usize,
    seed: u64,
) -> Result<TraceEstimate> {
    if probes < 2 {
        return Err(Error::InvalidArgument("Hutchinson needs at least 2 probes".into()));
    }
    let n = theta.len();
    let samples = par::map_indexed(probes, |k| -> Result<f64> {
        let mut r = rng::stream(seed, rng::DOMAIN_PROBE, k as u64 + 1);
        let z: Vec<f64> = (0..n).map(|_| if r.random::<bool>() { 1.0 } else { -1.0 }).collect();
        Ok(linalg::dot(&z, &tensornet::hvp(spec, theta, batch, &z)?))
    });
    let samples: Vec<f64> = samples.into_iter().collect::<Result<_>>()?;
    let m = probes as f64;
    let mean = samples.iter().sum::<f64>() / m;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (m - 1.0);
    Ok(TraceEstimate {
        mean,
        stderr: (var / m).sqrt(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurvatureOptions {
    pub power: PowerConfig,
    pub fisher: FisherConfig,
    /// Number of leading singular values reported; 0 skips the SVD.
    pub sigma_count: usize,
}

impl Default for CurvatureOptions {
    fn default() -> Self {
        CurvatureOptions {
            power: PowerConfig::default(),
            fisher: FisherConfig::default(),
            sigma_count: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurvatureReport {
    pub loss: f64,
    pub grad_norm: f64,
    /// Power iteration on the full-data Hessian.
    pub lambda_max: f64,
    pub lambda_converged: bool,
    pub power_iterations: usize,
    /// Empirical Fisher trace.
    pub fisher_trace: f64,
    pub fisher_samples: usize,
    /// Leading singular values of the model-convention score matrix.
    pub sigmas: Vec<f64>,
}

/// All estimators at one point. The Fisher samples are the same for every call with the same options.
pub fn report_at(
    spec: &NetSpec,
    theta: &ParamVector,
    ds: &Dataset,
    opts: &CurvatureOptions,
) -> Result<CurvatureReport> {
    let (loss, g) = tensornet::loss_and_gradient(spec, theta, ds.full())?;
    let power = lambda_max_power(spec, theta, ds.full(), &opts.power)?;
    let samples = opts.fisher.samples.min(ds.len());
    let fisher = fisher_trace(spec, theta, ds, samples, opts.fisher.seed)?;
    let sigmas = if opts.sigma_count > 0 {
        let cfg = FisherConfig {
            samples,
            ..opts.fisher.clone()
        };
        let mut s = fisher_spectrum(spec, theta, ds, &cfg)?.singular_values;
        s.resize(opts.sigma_count, 0.0);
        s
    } else {
        Vec::new()
    };
    Ok(CurvatureReport {
        loss,
        grad_norm: g.norm(),
        lambda_max: power.lambda,
        lambda_converged: power.converged,
        power_iterations: power.iterations,
        fisher_trace: fisher,
        fisher_samples: samples,
        sigmas,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurvatureRow {
    pub position: PathPosition,
    pub is_pivot: bool,
    pub report: CurvatureReport,
}

/// CSV column names for rows with `m` singular values.
pub fn curvature_header(m: usize) -> Vec<String> {
    let mut h: Vec<String> = ["position", "loss", "grad_norm", "lambda_max", "fisher_trace"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend((1..=m).map(|j| format!("sigma_{j}")));
    h
}

impl CurvatureRow {
    /// Values in [`curvature_header`] order; `position` is the relative Euclidean one.
    pub fn values(&self) -> Vec<f64> {
        let r = &self.report;
        let mut v = vec![
            self.position.relative_euclidean,
            r.loss,
            r.grad_norm,
            r.lambda_max,
            r.fisher_trace,
        ];
        v.extend(&r.sigmas);
        v
    }
}

/// Curvature reports at every pivot and `samples_per_segment` interior points.
pub fn curvature_along(
    spec: &NetSpec,
    path: &Polyline,
    ds: &Dataset,
    samples_per_segment: usize,
    opts: &CurvatureOptions,
) -> Result<Vec<CurvatureRow>> {
    paths::sample_points(path, samples_per_segment)
        .into_iter()
        .map(|(position, is_pivot, theta)| {
            Ok(CurvatureRow {
                position,
                is_pivot,
                report: report_at(spec, &theta, ds, opts)?,
            })
        })
        .collect()
}
