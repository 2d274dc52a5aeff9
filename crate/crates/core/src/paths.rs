//! Polylines in parameter space: interpolation, projection, profiles and the
//! AutoNEB minimum-energy-path search.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, CheckpointHeader};
use crate::datasets::{batch_indices, Dataset, OrderSeed};
use crate::error::{Error, Result};
use crate::linalg;
use crate::par;
use crate::rng;
use crate::tensornet::{self, NetSpec, ParamVector};

/// `(1 - t) a + t b`.
pub fn interpolate(a: &[f64], b: &[f64], t: f64) -> Result<ParamVector> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "cannot interpolate vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!(
            "interpolation parameter {t} outside [0, 1]"
        )));
    }
    Ok(ParamVector::new(linalg::lerp(a, b, t)))
}

/// A location on a polyline in both parameterizations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PathPosition {
    pub segment: usize,
    pub lambda: f64,
    /// Arclength from the first pivot over total arclength.
    pub relative_euclidean: f64,
    /// `(segment + lambda) / segments`.
    pub pivot_norm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Polyline {
    pivots: Vec<ParamVector>,
    lengths: Vec<f64>,
}

impl Polyline {
    pub fn new(pivots: Vec<ParamVector>) -> Result<Self> {
        if pivots.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "a polyline needs at least 2 pivots, got {}",
                pivots.len()
            )));
        }
        let n = pivots[0].len();
        if let Some(p) = pivots.iter().find(|p| p.len() != n) {
            return Err(Error::Shape(format!(
                "pivot of length {} in a polyline of dimension {n}",
                p.len()
            )));
        }
        let lengths: Vec<f64> = pivots.windows(2).map(|w| linalg::dist(&w[0], &w[1])).collect();
        if let Some(i) = lengths.iter().position(|&l| !(l > 0.0)) {
            return Err(Error::Degenerate(format!("segment {i} has zero length")));
        }
        Ok(Polyline { pivots, lengths })
    }

    /// Straight line from `a` to `b` with `interior` evenly spaced pivots between them.
    pub fn straight(a: &ParamVector, b: &ParamVector, interior: usize) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::Shape(format!("endpoints of length {} and {}", a.len(), b.len())));
        }
        if linalg::dist(a, b) == 0.0 {
            return Err(Error::InvalidArgument(
                "endpoints coincide; the path would have zero extent".into(),
            ));
        }
        let p = interior + 1;
        let mut pivots = vec![a.clone()];
        for j in 1..p {
            pivots.push(ParamVector::new(linalg::lerp(a, b, j as f64 / p as f64)));
        }
        pivots.push(b.clone());
        Polyline::new(pivots)
    }

    pub fn pivots(&self) -> &[ParamVector] {
        &self.pivots
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    pub fn segments(&self) -> usize {
        self.lengths.len()
    }

    pub fn dim(&self) -> usize {
        self.pivots[0].len()
    }

    pub fn total_length(&self) -> f64 {
        self.lengths.iter().sum()
    }

    /// Cumulative arclength at each pivot divided by the total.
    pub fn cumulative_fractions(&self) -> Vec<f64> {
        let total = self.total_length();
        let mut acc = 0.0;
        let mut out = vec![0.0];
        for (i, l) in self.lengths.iter().enumerate() {
            acc += l;
            out.push(if i + 1 == self.lengths.len() { 1.0 } else { acc / total });
        }
        out
    }

    pub fn position(&self, segment: usize, lambda: f64) -> PathPosition {
        let before: f64 = self.lengths[..segment].iter().sum();
        let rel = if segment + 1 == self.segments() && lambda == 1.0 {
            1.0
        } else {
            (before + lambda * self.lengths[segment]) / self.total_length()
        };
        PathPosition {
            segment,
            lambda,
            relative_euclidean: rel,
            pivot_norm: (segment as f64 + lambda) / self.segments() as f64,
        }
    }

    pub fn point(&self, segment: usize, lambda: f64) -> ParamVector {
        ParamVector::new(linalg::lerp(&self.pivots[segment], &self.pivots[segment + 1], lambda))
    }

    /// Position at arclength fraction `s` of the total.
    pub fn position_at_relative(&self, s: f64) -> Result<PathPosition> {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::InvalidArgument(format!("relative position {s} outside [0, 1]")));
        }
        let target = s * self.total_length();
        let mut acc = 0.0;
        for (i, &l) in self.lengths.iter().enumerate() {
            if target <= acc + l || i + 1 == self.segments() {
                let lambda = ((target - acc) / l).clamp(0.0, 1.0);
                return Ok(self.position(i, lambda));
            }
            acc += l;
        }
        unreachable!("polyline has at least one segment")
    }

    fn insert_midpoint(&mut self, segment: usize) {
        let mid = self.point(segment, 0.5);
        let half = self.lengths[segment] / 2.0;
        self.pivots.insert(segment + 1, mid);
        self.lengths[segment] = linalg::dist(&self.pivots[segment], &self.pivots[segment + 1]);
        self.lengths.insert(
            segment + 1,
            linalg::dist(&self.pivots[segment + 1], &self.pivots[segment + 2]),
        );
        debug_assert!((self.lengths[segment] - half).abs() <= 1e-12 * half.max(1.0));
    }

    fn refresh_lengths(&mut self) {
        self.lengths = self.pivots.windows(2).map(|w| linalg::dist(&w[0], &w[1])).collect();
    }
}

/// Nearest point on the polyline to `p`. Ties go to the lower segment index.
pub fn project_to_polyline(p: &[f64], path: &Polyline) -> Result<(PathPosition, ParamVector)> {
    if p.len() != path.dim() {
        return Err(Error::Shape(format!(
            "point of length {} for a path of dimension {}",
            p.len(),
            path.dim()
        )));
    }
    let mut best = (f64::INFINITY, 0usize, 0.0f64);
    for i in 0..path.segments() {
        let a = &path.pivots[i];
        let b = &path.pivots[i + 1];
        let d = linalg::sub(b, a);
        let lambda = (linalg::dot(&linalg::sub(p, a), &d) / linalg::dot(&d, &d)).clamp(0.0, 1.0);
        let dist2: f64 = p
            .iter()
            .zip(a.iter().zip(&d))
            .map(|(pi, (ai, di))| {
                let r = pi - (ai + lambda * di);
                r * r
            })
            .sum();
        if dist2 < best.0 {
            best = (dist2, i, lambda);
        }
    }
    let (_, seg, lambda) = best;
    Ok((path.position(seg, lambda), path.point(seg, lambda)))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProfileRow {
    #[serde(flatten)]
    pub position: PathPosition,
    pub is_pivot: bool,
    pub value: f64,
}

/// Pivots plus `samples_per_segment` evenly spaced interior points of each
/// segment, in path order, with a flag marking pivots.
pub fn sample_points(path: &Polyline, samples_per_segment: usize) -> Vec<(PathPosition, bool, ParamVector)> {
    let mut out = Vec::with_capacity(path.pivots.len() + path.segments() * samples_per_segment);
    for i in 0..path.segments() {
        out.push((path.position(i, 0.0), true, path.pivots[i].clone()));
        for j in 1..=samples_per_segment {
            let lambda = j as f64 / (samples_per_segment + 1) as f64;
            out.push((path.position(i, lambda), false, path.point(i, lambda)));
        }
    }
    let last = path.segments() - 1;
    out.push((path.position(last, 1.0), true, path.pivots[last + 1].clone()));
    out
}

/// Evaluates `f` at the points of [`sample_points`].
pub fn profile<F>(path: &Polyline, f: F, samples_per_segment: usize) -> Result<Vec<ProfileRow>>
where
    F: Fn(&ParamVector) -> Result<f64> + Sync,
{
    let spots = sample_points(path, samples_per_segment);
    let values = par::map_indexed(spots.len(), |k| f(&spots[k].2));
    spots
        .into_iter()
        .zip(values)
        .map(|((position, is_pivot, _), v)| {
            Ok(ProfileRow {
                position,
                is_pivot,
                value: v?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PivotRow {
    pub index: usize,
    /// Length of the segment leaving this pivot; absent for the last pivot.
    pub segment_length: Option<f64>,
    pub cumulative: f64,
}

pub fn pivot_geometry(path: &Polyline) -> Vec<PivotRow> {
    path.cumulative_fractions()
        .into_iter()
        .enumerate()
        .map(|(i, c)| PivotRow {
            index: i,
            segment_length: path.lengths.get(i).copied(),
            cumulative: c,
        })
        .collect()
}

/// A loss surface that can be sampled in minibatches.
pub trait Landscape: Sync {
    fn dim(&self) -> usize;
    /// Minibatch index lists for one pass over the data.
    fn epoch_batches(&self, epoch: u64) -> Result<Vec<Vec<usize>>>;
    fn batch_gradient(&self, theta: &[f64], batch: &[usize]) -> Result<Vec<f64>>;
    /// Loss on the full data.
    fn loss(&self, theta: &[f64]) -> Result<f64>;
}

pub struct NetLandscape<'a> {
    pub spec: &'a NetSpec,
    pub data: &'a Dataset,
    pub batch_size: usize,
    pub order: OrderSeed,
}

impl Landscape for NetLandscape<'_> {
    fn dim(&self) -> usize {
        self.spec.param_count()
    }

    fn epoch_batches(&self, epoch: u64) -> Result<Vec<Vec<usize>>> {
        batch_indices(self.data.len(), self.batch_size.min(self.data.len()), epoch, self.order)
    }

    fn batch_gradient(&self, theta: &[f64], batch: &[usize]) -> Result<Vec<f64>> {
        let g = tensornet::gradient(self.spec, &ParamVector::new(theta.to_vec()), &self.data.batch(batch))?;
        Ok(g.into_vec())
    }

    fn loss(&self, theta: &[f64]) -> Result<f64> {
        tensornet::loss(self.spec, &ParamVector::new(theta.to_vec()), self.data.full())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NebCycle {
    pub lr: f64,
    pub epochs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NebConfig {
    /// Interior pivots placed on the initial straight line.
    pub initial_pivots: usize,
    pub cycles: Vec<NebCycle>,
    /// A segment is split when its midpoint loss exceeds `(1 + tau)` times
    /// the larger of its two pivot losses.
    pub insertion_threshold: f64,
    /// Total pivot budget, endpoints included.
    pub max_pivots: usize,
    pub batch_size: usize,
    /// Pivots move without spring forces. Only `true` is supported.
    pub spring_free: bool,
    /// Feeds the minibatch order of every refinement epoch.
    pub seed: u64,
}

impl Default for NebConfig {
    fn default() -> Self {
        NebConfig {
            initial_pivots: 4,
            cycles: vec![
                NebCycle { lr: 0.1, epochs: 10 },
                NebCycle { lr: 0.05, epochs: 5 },
                NebCycle { lr: 0.01, epochs: 5 },
                NebCycle { lr: 0.001, epochs: 5 },
            ],
            insertion_threshold: 0.25,
            max_pivots: 32,
            batch_size: 64,
            spring_free: true,
            seed: 0,
        }
    }
}

impl NebConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cycles.is_empty() {
            return Err(Error::Config("neb needs at least one refinement cycle".into()));
        }
        if let Some(c) = self.cycles.iter().find(|c| !(c.lr > 0.0 && c.lr.is_finite())) {
            return Err(Error::Config(format!(
                "cycle learning rate must be positive, got {}",
                c.lr
            )));
        }
        if self.max_pivots < self.initial_pivots + 2 {
            return Err(Error::Config(format!(
                "max_pivots {} is below the {} pivots of the initial path",
                self.max_pivots,
                self.initial_pivots + 2
            )));
        }
        if !(self.insertion_threshold >= 0.0) {
            return Err(Error::Config(format!(
                "insertion threshold must be >= 0, got {}",
                self.insertion_threshold
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !self.spring_free {
            return Err(Error::Unsupported(
                "spring forces are not implemented; set spring_free = true".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleLog {
    pub cycle: usize,
    pub lr: f64,
    pub epochs: usize,
    pub updates: usize,
    pub pivots: usize,
    /// Largest pivot or midpoint loss at the end of the cycle.
    pub max_loss: f64,
    pub inserted: usize,
    /// Largest change of any absolute segment length within the cycle.
    pub length_drift: f64,
    /// Largest change of any cumulative arclength fraction within the cycle.
    pub fraction_drift: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NebOutcome {
    pub path: Polyline,
    pub log: Vec<CycleLog>,
    /// Set when an insertion was skipped because `max_pivots` was reached.
    pub capped: bool,
}

/// Moves interior pivots along the current polyline until their cumulative
/// arclength fractions equal `targets`. Returns the remaining residual.
fn reparameterize(path: &mut Polyline, targets: &[f64]) -> f64 {
    let mut residual = f64::INFINITY;
    for _ in 0..200 {
        let moved: Vec<ParamVector> = targets
            .iter()
            .enumerate()
            .map(|(j, &s)| {
                if j == 0 || j + 1 == targets.len() {
                    return path.pivots[j].clone();
                }
                let pos = path.position_at_relative(s).expect("target fractions lie in [0, 1]");
                path.point(pos.segment, pos.lambda)
            })
            .collect();
        path.pivots = moved;
        path.refresh_lengths();
        residual = path
            .cumulative_fractions()
            .iter()
            .zip(targets)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if residual < 1e-13 {
            break;
        }
    }
    residual
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// AutoNEB between frozen endpoints `a` and `b`.
///
/// Interior pivots start on the straight line. Each update takes one
/// minibatch, removes the component of every pivot's gradient along its
/// central-difference tangent, steps, and then slides the pivots back along
/// the new polyline so their arclength fractions are unchanged. At the end of
/// each cycle every segment whose midpoint loss exceeds the threshold is split.
pub fn autoneb<L: Landscape>(land: &L, a: &ParamVector, b: &ParamVector, cfg: &NebConfig) -> Result<NebOutcome> {
    cfg.validate()?;
    if a.len() != land.dim() || b.len() != land.dim() {
        return Err(Error::Shape(format!(
            "endpoints of length {} and {} for a landscape of dimension {}",
            a.len(),
            b.len(),
            land.dim()
        )));
    }
    let mut path = Polyline::straight(a, b, cfg.initial_pivots)?;
    let mut log = Vec::new();
    let mut capped = false;
    let mut epoch_counter = 0u64;
    for (ci, cycle) in cfg.cycles.iter().enumerate() {
        let start_lengths = path.lengths.clone();
        let fractions = path.cumulative_fractions();
        let mut length_drift: f64 = 0.0;
        let mut fraction_drift: f64 = 0.0;
        let mut updates = 0;
        for _ in 0..cycle.epochs {
            for batch in land.epoch_batches(epoch_counter)? {
                let p = path.pivots.len();
                let snapshot = &path.pivots;
                let steps = par::map_indexed(p - 2, |k| -> Result<Vec<f64>> {
                    let i = k + 1;
                    let mut g = land.batch_gradient(&snapshot[i], &batch)?;
                    if !linalg::all_finite(&g) {
                        return Err(Error::NonFinite(format!("gradient at pivot {i} is not finite")));
                    }
                    let mut tau = linalg::sub(&snapshot[i + 1], &snapshot[i - 1]);
                    let tn = linalg::norm(&tau);
                    if tn > 0.0 {
                        linalg::scale(1.0 / tn, &mut tau);
                        let along = linalg::dot(&g, &tau);
                        linalg::axpy(-along, &tau, &mut g);
                    }
                    Ok(g)
                });
                for (k, g) in steps.into_iter().enumerate() {
                    let g = g?;
                    let mut v = path.pivots[k + 1].clone().into_vec();
                    linalg::axpy(-cycle.lr, &g, &mut v);
                    path.pivots[k + 1] = ParamVector::new(v);
                }
                path.refresh_lengths();
                if let Some(i) = path.lengths.iter().position(|&l| !(l > 0.0)) {
                    return Err(Error::Degenerate(format!("segment {i} collapsed during refinement")));
                }
                reparameterize(&mut path, &fractions);
                length_drift = length_drift.max(max_abs_diff(&path.lengths, &start_lengths));
                fraction_drift = fraction_drift.max(max_abs_diff(&path.cumulative_fractions(), &fractions));
                updates += 1;
            }
            epoch_counter += 1;
        }

        let pivot_losses: Vec<f64> = par::map_indexed(path.pivots.len(), |i| land.loss(&path.pivots[i]))
            .into_iter()
            .collect::<Result<_>>()?;
        let mid_losses: Vec<f64> = par::map_indexed(path.segments(), |i| land.loss(&path.point(i, 0.5)))
            .into_iter()
            .collect::<Result<_>>()?;
        if let Some(bad) = pivot_losses.iter().chain(&mid_losses).find(|l| !l.is_finite()) {
            return Err(Error::NonFinite(format!("loss {bad} on the path after cycle {ci}")));
        }
        let max_loss = pivot_losses
            .iter()
            .chain(&mid_losses)
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let mut violating: Vec<(usize, f64)> = mid_losses
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| {
                let bound = pivot_losses[i].max(pivot_losses[i + 1]) * (1.0 + cfg.insertion_threshold);
                (m > bound).then_some((i, m - bound))
            })
            .collect();
        let room = cfg.max_pivots.saturating_sub(path.pivots.len());
        if violating.len() > room {
            capped = true;
            violating.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
            violating.truncate(room);
        }
        let mut chosen: Vec<usize> = violating.iter().map(|v| v.0).collect();
        chosen.sort_unstable_by(|x, y| y.cmp(x));
        for &seg in &chosen {
            path.insert_midpoint(seg);
        }
        log.push(CycleLog {
            cycle: ci,
            lr: cycle.lr,
            epochs: cycle.epochs,
            updates,
            pivots: path.pivots.len(),
            max_loss,
            inserted: chosen.len(),
            length_drift,
            fraction_drift,
        });
    }
    debug_assert!(path.pivots[0] == *a && path.pivots[path.pivots.len() - 1] == *b);
    Ok(NebOutcome { path, log, capped })
}

/// AutoNEB on a network's loss with minibatch order drawn from `cfg.seed`.
pub fn autoneb_net(
    spec: &NetSpec,
    data: &Dataset,
    a: &ParamVector,
    b: &ParamVector,
    cfg: &NebConfig,
) -> Result<NebOutcome> {
    let land = NetLandscape {
        spec,
        data,
        batch_size: cfg.batch_size,
        order: OrderSeed(rng::derive(cfg.seed, rng::DOMAIN_ORDER)),
    };
    autoneb(&land, a, b, cfg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolylineManifest {
    pub pivot_count: usize,
    pub n_params: usize,
    pub net: CheckpointHeader,
    pub capped: bool,
    pub cycles: Vec<CycleLog>,
}

pub const POLYLINE_MANIFEST: &str = "path.json";

fn pivot_file(i: usize) -> String {
    format!("pivot_{i:04}.ckpt")
}

/// Writes `path.json` plus one checkpoint per pivot into `dir`; returns the written file names.
pub fn save_polyline(
    dir: &Path,
    spec: &NetSpec,
    path: &Polyline,
    cycles: &[CycleLog],
    capped: bool,
) -> Result<Vec<String>> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    for (i, p) in path.pivots.iter().enumerate() {
        let name = pivot_file(i);
        checkpoint::save_checkpoint(&dir.join(&name), spec, p)?;
        files.push(name);
    }
    let manifest = PolylineManifest {
        pivot_count: path.pivots.len(),
        n_params: spec.param_count(),
        net: CheckpointHeader::for_spec(spec),
        capped,
        cycles: cycles.to_vec(),
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(dir.join(POLYLINE_MANIFEST), text)?;
    files.push(POLYLINE_MANIFEST.to_string());
    Ok(files)
}

pub fn load_polyline(dir: &Path) -> Result<(NetSpec, Polyline, PolylineManifest)> {
    let manifest: PolylineManifest = serde_json::from_str(&fs::read_to_string(dir.join(POLYLINE_MANIFEST))?)?;
    let mut spec = None;
    let mut pivots = Vec::with_capacity(manifest.pivot_count);
    for i in 0..manifest.pivot_count {
        let (s, p) = checkpoint::load_checkpoint(&dir.join(pivot_file(i)))?;
        if !s.same_shape(spec.get_or_insert_with(|| s.clone())) {
            return Err(Error::Container(format!("pivot {i} has a different network shape")));
        }
        pivots.push(p);
    }
    let spec = spec.ok_or_else(|| Error::Container("polyline directory holds no pivots".into()))?;
    if spec.param_count() != manifest.n_params {
        return Err(Error::Container(format!(
            "manifest declares {} parameters, pivots hold {}",
            manifest.n_params,
            spec.param_count()
        )));
    }
    Ok((spec, Polyline::new(pivots)?, manifest))
}
