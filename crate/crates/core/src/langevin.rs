//! Overdamped Langevin toy model with coordinate-dependent curvature.
//!
//! A particle obeys `dX = -grad V(X) dt + sqrt(2T) dW` in two dimensions,
//! integrated with Euler-Maruyama. Two potential families are provided:
//!
//! * channel: `V(x, y) = g(y) x^2 / 2` with reflecting walls on `y`;
//! * ring: `V(r, phi) = g(phi) (r - r0)^2 / 2` with `g(phi) = 1 + a cos(phi)`.
//!
//! For the channel, integrating `exp(-V/T)` over `x` gives the exact stationary
//! marginal `P(y) ∝ g(y)^(-1/2)`. The reduced one-dimensional equation
//! `dy = -T g'(y)/g(y) dt + sqrt(2T) dW` (effective potential `T ln g`) has the
//! stationary law `P(y) ∝ 1/g(y)` instead: its drift is twice the one obtained by
//! averaging `-g'(y) x^2 / 2` over the conditional Gaussian `x ~ N(0, T/g(y))`.
//! Both dynamics are available so the two laws can be compared side by side.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::rng;

/// Catalog of positive curvature profiles `g(y)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Profile {
    /// `g(y) = exp(beta * y)`
    Exp { beta: f64 },
    /// `g(y) = 1 + a * y^2`
    Quadratic { a: f64 },
    /// `g(y) = c`
    Constant { c: f64 },
}

impl Profile {
    pub fn g(&self, y: f64) -> f64 {
        match *self {
            Profile::Exp { beta } => (beta * y).exp(),
            Profile::Quadratic { a } => 1.0 + a * y * y,
            Profile::Constant { c } => c,
        }
    }

    pub fn dg(&self, y: f64) -> f64 {
        match *self {
            Profile::Exp { beta } => beta * (beta * y).exp(),
            Profile::Quadratic { a } => 2.0 * a * y,
            Profile::Constant { .. } => 0.0,
        }
    }

    /// Largest and smallest value of `g` on `[lo, hi]`.
    fn range(&self, lo: f64, hi: f64) -> (f64, f64) {
        let mut candidates = vec![self.g(lo), self.g(hi)];
        if lo < 0.0 && hi > 0.0 {
            candidates.push(self.g(0.0));
        }
        let max = candidates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = candidates.iter().copied().fold(f64::INFINITY, f64::min);
        (min, max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "potential", rename_all = "snake_case", deny_unknown_fields)]
pub enum Potential {
    Channel { profile: Profile },
    Ring { r0: f64, a: f64 },
}

impl Potential {
    pub fn channel(profile: Profile) -> Self {
        Potential::Channel { profile }
    }

    pub fn energy(&self, x: f64, y: f64) -> f64 {
        match *self {
            Potential::Channel { profile } => 0.5 * profile.g(y) * x * x,
            Potential::Ring { r0, a } => {
                let r = x.hypot(y);
                let phi = y.atan2(x);
                0.5 * (1.0 + a * phi.cos()) * (r - r0).powi(2)
            }
        }
    }

    pub fn gradient(&self, x: f64, y: f64) -> (f64, f64) {
        match *self {
            Potential::Channel { profile } => (profile.g(y) * x, 0.5 * profile.dg(y) * x * x),
            Potential::Ring { r0, a } => {
                let r = x.hypot(y);
                if r == 0.0 {
                    return (0.0, 0.0);
                }
                let (c, s) = (x / r, y / r);
                let g = 1.0 + a * c;
                let dg = -a * s;
                let radial = g * (r - r0);
                let angular = 0.5 * dg * (r - r0).powi(2) / r;
                (radial * c - angular * s, radial * s + angular * c)
            }
        }
    }

    pub fn profile(&self) -> Option<Profile> {
        match *self {
            Potential::Channel { profile } => Some(profile),
            Potential::Ring { .. } => None,
        }
    }

    /// Largest stiffness of the fast coordinate over the simulation domain.
    fn max_stiffness(&self, domain: (f64, f64)) -> f64 {
        match *self {
            Potential::Channel { profile } => profile.range(domain.0, domain.1).1,
            Potential::Ring { a, .. } => 1.0 + a.abs(),
        }
    }

    fn validate(&self, domain: (f64, f64)) -> Result<()> {
        match *self {
            Potential::Channel { profile } => {
                let (min, _) = profile.range(domain.0, domain.1);
                if !(min > 0.0) {
                    return Err(Error::Config(format!(
                        "g(y) must stay positive on the domain, minimum is {min}"
                    )));
                }
            }
            Potential::Ring { r0, a } => {
                if !(r0 > 0.0) || !(a.abs() < 1.0) {
                    return Err(Error::Config(format!(
                        "ring needs r0 > 0 and |a| < 1, got r0={r0}, a={a}"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LangevinConfig {
    pub temperature: f64,
    pub dt: f64,
    pub n_steps: usize,
    pub n_replicas: usize,
    /// Reflecting walls for the channel's `y`. Ignored by the ring.
    pub y_domain: (f64, f64),
    pub seed: u64,
    /// Leading fraction of each replica discarded before sampling.
    pub burn_in: f64,
    /// Steps between retained samples.
    pub thin: usize,
    /// Steps between recorded trajectory points.
    pub record_every: usize,
}

impl Default for LangevinConfig {
    fn default() -> Self {
        LangevinConfig {
            temperature: 0.2,
            dt: 1e-3,
            n_steps: 50_000,
            n_replicas: 200,
            y_domain: (-1.0, 1.0),
            seed: 0,
            burn_in: 0.2,
            thin: 80,
            record_every: 10,
        }
    }
}

impl LangevinConfig {
    /// Checks everything except the explicit-step stability bound, which only
    /// the two-dimensional dynamics need.
    pub fn validate(&self, pot: &Potential) -> Result<()> {
        let (lo, hi) = self.y_domain;
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "temperature must be finite and >= 0, got {}",
                self.temperature
            )));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(lo < hi) {
            return Err(Error::Config(format!("empty y domain [{lo}, {hi}]")));
        }
        if !(0.0..1.0).contains(&self.burn_in) {
            return Err(Error::Config(format!(
                "burn-in fraction must lie in [0, 1), got {}",
                self.burn_in
            )));
        }
        if self.thin == 0 || self.record_every == 0 || self.n_replicas == 0 {
            return Err(Error::Config("thin, record_every and n_replicas must be >= 1".into()));
        }
        pot.validate(self.y_domain)?;
        Ok(())
    }

    fn validate_full(&self, pot: &Potential) -> Result<()> {
        self.validate(pot)?;
        let stiff = self.dt * pot.max_stiffness(self.y_domain);
        if !(stiff < 0.5) {
            return Err(Error::Config(format!(
                "unstable step: dt * max g = {stiff:.4} must be below 0.5"
            )));
        }
        Ok(())
    }

    fn first_sample(&self) -> usize {
        (self.burn_in * self.n_steps as f64).ceil() as usize
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Trajectory {
    fn push(&mut self, t: f64, x: f64, y: f64) {
        self.t.push(t);
        self.x.push(x);
        self.y.push(y);
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

fn reflect(mut y: f64, lo: f64, hi: f64) -> f64 {
    loop {
        if y > hi {
            y = 2.0 * hi - y;
        } else if y < lo {
            y = 2.0 * lo - y;
        } else {
            return y;
        }
    }
}

/// Advances the full two-dimensional dynamics, calling `visit(step, x, y)`
/// after every step (step counts from 1).
fn run_full(
    pot: &Potential,
    cfg: &LangevinConfig,
    start: (f64, f64),
    replica: u64,
    mut visit: impl FnMut(usize, f64, f64),
) {
    let mut rng = rng::stream(cfg.seed, rng::DOMAIN_LANGEVIN, replica);
    let amp = (2.0 * cfg.temperature * cfg.dt).sqrt();
    let (lo, hi) = cfg.y_domain;
    let walls = matches!(pot, Potential::Channel { .. });
    let (mut x, mut y) = start;
    for step in 1..=cfg.n_steps {
        let (gx, gy) = pot.gradient(x, y);
        let (nx, ny): (f64, f64) = if amp > 0.0 {
            (StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng))
        } else {
            (0.0, 0.0)
        };
        x += -gx * cfg.dt + amp * nx;
        y += -gy * cfg.dt + amp * ny;
        if walls {
            y = reflect(y, lo, hi);
        }
        visit(step, x, y);
    }
}

/// Reduced dynamics on `y` alone with drift `-T g'/g`.
fn run_reduced(profile: Profile, cfg: &LangevinConfig, y0: f64, replica: u64, mut visit: impl FnMut(usize, f64)) {
    let mut rng = rng::stream(cfg.seed, rng::DOMAIN_LANGEVIN, replica);
    let t = cfg.temperature;
    let amp = (2.0 * t * cfg.dt).sqrt();
    let (lo, hi) = cfg.y_domain;
    let mut y = y0;
    for step in 1..=cfg.n_steps {
        let drift = -t * profile.dg(y) / profile.g(y);
        let n: f64 = if amp > 0.0 {
            StandardNormal.sample(&mut rng)
        } else {
            0.0
        };
        y = reflect(y + drift * cfg.dt + amp * n, lo, hi);
        visit(step, y);
    }
}

fn check_start(pot: &Potential, cfg: &LangevinConfig, y: f64) -> Result<()> {
    let (lo, hi) = cfg.y_domain;
    if matches!(pot, Potential::Channel { .. }) && !(lo..=hi).contains(&y) {
        return Err(Error::InvalidArgument(format!("start y={y} lies outside [{lo}, {hi}]")));
    }
    Ok(())
}

/// Euler-Maruyama trajectory of replica 0 starting at `x0`.
pub fn integrate(pot: &Potential, cfg: &LangevinConfig, x0: (f64, f64)) -> Result<Trajectory> {
    cfg.validate_full(pot)?;
    check_start(pot, cfg, x0.1)?;
    let mut tr = Trajectory::default();
    tr.push(0.0, x0.0, x0.1);
    run_full(pot, cfg, x0, 0, |step, x, y| {
        if step.is_multiple_of(cfg.record_every) {
            tr.push(step as f64 * cfg.dt, x, y);
        }
    });
    Ok(tr)
}

/// Trajectory of the reduced equation `dy = -T g'/g dt + sqrt(2T) dW`; the `x` column is zero.
pub fn effective_dynamics(pot: &Potential, cfg: &LangevinConfig, y0: f64) -> Result<Trajectory> {
    let profile = pot
        .profile()
        .ok_or_else(|| Error::Unsupported("effective dynamics are defined for the channel potential only".into()))?;
    cfg.validate(pot)?;
    check_start(pot, cfg, y0)?;
    let mut tr = Trajectory::default();
    tr.push(0.0, 0.0, y0);
    run_reduced(profile, cfg, y0, 0, |step, y| {
        if step.is_multiple_of(cfg.record_every) {
            tr.push(step as f64 * cfg.dt, 0.0, y);
        }
    });
    Ok(tr)
}

/// Histogram of the slow coordinate (`y` for the channel, the angle for the ring).
#[derive(Clone, Debug, PartialEq)]
pub struct StationaryEstimate {
    pub edges: Vec<f64>,
    /// Probability mass per bin; sums to one.
    pub mass: Vec<f64>,
    /// Mean square of the fast coordinate per bin (`x` for the channel,
    /// `r - r0` for the ring); NaN for empty bins or reduced dynamics.
    pub mean_sq_fast: Vec<f64>,
    /// Pooled post-burn-in samples, replica by replica.
    pub samples: Vec<f64>,
}

impl StationaryEstimate {
    fn from_samples(samples: Vec<f64>, fast_sq: Option<Vec<f64>>, lo: f64, hi: f64, bins: usize) -> Self {
        let width = (hi - lo) / bins as f64;
        let edges: Vec<f64> = (0..=bins).map(|i| lo + width * i as f64).collect();
        let mut counts = vec![0usize; bins];
        let mut sq = vec![0.0; bins];
        for (k, &s) in samples.iter().enumerate() {
            let b = (((s - lo) / width) as usize).min(bins - 1);
            counts[b] += 1;
            if let Some(f) = &fast_sq {
                sq[b] += f[k];
            }
        }
        let total = samples.len() as f64;
        StationaryEstimate {
            edges,
            mass: counts.iter().map(|&c| c as f64 / total).collect(),
            mean_sq_fast: counts
                .iter()
                .zip(&sq)
                .map(|(&c, &s)| {
                    if c > 0 && fast_sq.is_some() {
                        s / c as f64
                    } else {
                        f64::NAN
                    }
                })
                .collect(),
            samples,
        }
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// Mass divided by bin width.
    pub fn density(&self) -> Vec<f64> {
        self.edges
            .windows(2)
            .zip(&self.mass)
            .map(|(w, m)| m / (w[1] - w[0]))
            .collect()
    }
}

fn require_temperature(cfg: &LangevinConfig) -> Result<()> {
    if cfg.temperature <= 0.0 {
        return Err(Error::Degenerate("no stationary measure to estimate at T = 0".into()));
    }
    Ok(())
}

fn spread_start(i: usize, n: usize, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * (i as f64 + 0.5) / n as f64
}

/// Empirical stationary marginal of the full dynamics, pooled over replicas.
/// Replicas start spread evenly across the slow coordinate with the fast one at rest.
pub fn stationary_marginal(pot: &Potential, cfg: &LangevinConfig, bins: usize) -> Result<StationaryEstimate> {
    cfg.validate_full(pot)?;
    require_temperature(cfg)?;
    if bins == 0 {
        return Err(Error::InvalidArgument("need at least one bin".into()));
    }
    let first = cfg.first_sample();
    let n = cfg.n_replicas;
    let parts = par::map_indexed(n, |i| {
        let mut slow = Vec::new();
        let mut fast = Vec::new();
        let start = match *pot {
            Potential::Channel { .. } => (0.0, spread_start(i, n, cfg.y_domain.0, cfg.y_domain.1)),
            Potential::Ring { r0, .. } => {
                let phi = spread_start(i, n, -std::f64::consts::PI, std::f64::consts::PI);
                (r0 * phi.cos(), r0 * phi.sin())
            }
        };
        run_full(pot, cfg, start, i as u64, |step, x, y| {
            if step >= first && (step - first).is_multiple_of(cfg.thin) {
                match *pot {
                    Potential::Channel { .. } => {
                        slow.push(y);
                        fast.push(x * x);
                    }
                    Potential::Ring { r0, .. } => {
                        slow.push(y.atan2(x));
                        fast.push((x.hypot(y) - r0).powi(2));
                    }
                }
            }
        });
        (slow, fast)
    });
    let (lo, hi) = match pot {
        Potential::Channel { .. } => cfg.y_domain,
        Potential::Ring { .. } => (-std::f64::consts::PI, std::f64::consts::PI),
    };
    let (slow, fast): (Vec<Vec<f64>>, Vec<Vec<f64>>) = parts.into_iter().unzip();
    Ok(StationaryEstimate::from_samples(
        slow.concat(),
        Some(fast.concat()),
        lo,
        hi,
        bins,
    ))
}

/// Empirical stationary marginal of the reduced equation.
pub fn effective_stationary_marginal(pot: &Potential, cfg: &LangevinConfig, bins: usize) -> Result<StationaryEstimate> {
    let profile = pot
        .profile()
        .ok_or_else(|| Error::Unsupported("effective dynamics are defined for the channel potential only".into()))?;
    cfg.validate(pot)?;
    require_temperature(cfg)?;
    if bins == 0 {
        return Err(Error::InvalidArgument("need at least one bin".into()));
    }
    let first = cfg.first_sample();
    let n = cfg.n_replicas;
    let (lo, hi) = cfg.y_domain;
    let parts = par::map_indexed(n, |i| {
        let mut slow = Vec::new();
        run_reduced(profile, cfg, spread_start(i, n, lo, hi), i as u64, |step, y| {
            if step >= first && (step - first).is_multiple_of(cfg.thin) {
                slow.push(y);
            }
        });
        slow
    });
    Ok(StationaryEstimate::from_samples(parts.concat(), None, lo, hi, bins))
}

/// Samples of `x` with `y` held fixed, pooled over replicas after burn-in.
pub fn conditional_x_samples(pot: &Potential, cfg: &LangevinConfig, y: f64) -> Result<Vec<f64>> {
    let profile = pot
        .profile()
        .ok_or_else(|| Error::Unsupported("frozen-y sampling is defined for the channel potential only".into()))?;
    cfg.validate_full(pot)?;
    check_start(pot, cfg, y)?;
    let g = profile.g(y);
    let amp = (2.0 * cfg.temperature * cfg.dt).sqrt();
    let first = cfg.first_sample();
    let parts = par::map_indexed(cfg.n_replicas, |i| {
        let mut rng = rng::stream(cfg.seed, rng::DOMAIN_LANGEVIN, i as u64);
        let mut x = 0.0;
        let mut out = Vec::new();
        for step in 1..=cfg.n_steps {
            let n: f64 = StandardNormal.sample(&mut rng);
            x += -g * x * cfg.dt + amp * n;
            if step >= first && (step - first).is_multiple_of(cfg.thin) {
                out.push(x);
            }
        }
        out
    });
    Ok(parts.concat())
}

/// Measurement of the entropic drift of `y` at a fixed point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriftProbe {
    pub temperature: f64,
    pub y: f64,
    pub n_replicas: usize,
    pub dt: f64,
    /// Steps of frozen-`y` thermalization of `x`; 0 means `ceil(10 / (g(y) dt))`.
    pub thermalize_steps: usize,
    pub seed: u64,
}

impl Default for DriftProbe {
    fn default() -> Self {
        DriftProbe {
            temperature: 0.1,
            y: 0.5,
            n_replicas: 4000,
            dt: 1e-3,
            thermalize_steps: 0,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DriftEstimate {
    pub mean: f64,
    pub stderr: f64,
}

/// Ensemble mean of the instantaneous `dy/dt = -g'(y) x^2 / 2` right after
/// releasing `y`, with `x` first thermalized at frozen `y` from `x = 0`.
pub fn drift_velocity(pot: &Potential, probe: &DriftProbe) -> Result<DriftEstimate> {
    let profile = pot
        .profile()
        .ok_or_else(|| Error::Unsupported("drift probes are defined for the channel potential only".into()))?;
    if probe.n_replicas < 2 {
        return Err(Error::InvalidArgument(
            "drift needs at least 2 replicas for an error bar".into(),
        ));
    }
    let g = profile.g(probe.y);
    if !(g > 0.0) || !(probe.dt > 0.0) || probe.dt * g >= 0.5 {
        return Err(Error::Config(format!(
            "unstable or invalid probe: g(y)={g}, dt={}",
            probe.dt
        )));
    }
    if !(probe.temperature >= 0.0) {
        return Err(Error::Config(format!(
            "temperature must be >= 0, got {}",
            probe.temperature
        )));
    }
    let steps = if probe.thermalize_steps == 0 {
        (10.0 / (g * probe.dt)).ceil() as usize
    } else {
        probe.thermalize_steps
    };
    let amp = (2.0 * probe.temperature * probe.dt).sqrt();
    let slope = profile.dg(probe.y);
    let samples = par::map_indexed(probe.n_replicas, |i| {
        let mut rng = rng::stream(probe.seed, rng::DOMAIN_PROBE, i as u64);
        let mut x = 0.0f64;
        if amp > 0.0 {
            for _ in 0..steps {
                let n: f64 = StandardNormal.sample(&mut rng);
                x += -g * x * probe.dt + amp * n;
            }
        }
        -0.5 * slope * x * x
    });
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(DriftEstimate {
        mean,
        stderr: (var / n).sqrt(),
    })
}

/// Normalized CDF of a density proportional to `g(y)^exponent` on `[lo, hi]`,
/// tabulated with the trapezoid rule.
#[derive(Clone, Debug)]
pub struct TabulatedCdf {
    grid: Vec<f64>,
    cdf: Vec<f64>,
}

impl TabulatedCdf {
    pub fn power_law(profile: Profile, exponent: f64, lo: f64, hi: f64, points: usize) -> Self {
        let points = points.max(2);
        let h = (hi - lo) / (points - 1) as f64;
        let grid: Vec<f64> = (0..points).map(|i| lo + h * i as f64).collect();
        let dens: Vec<f64> = grid.iter().map(|&y| profile.g(y).powf(exponent)).collect();
        let mut cdf = vec![0.0; points];
        for i in 1..points {
            cdf[i] = cdf[i - 1] + 0.5 * h * (dens[i - 1] + dens[i]);
        }
        let z = cdf[points - 1];
        cdf.iter_mut().for_each(|c| *c /= z);
        TabulatedCdf { grid, cdf }
    }

    pub fn eval(&self, y: f64) -> f64 {
        let n = self.grid.len();
        if y <= self.grid[0] {
            return 0.0;
        }
        if y >= self.grid[n - 1] {
            return 1.0;
        }
        let h = self.grid[1] - self.grid[0];
        let i = (((y - self.grid[0]) / h) as usize).min(n - 2);
        let w = (y - self.grid[i]) / h;
        self.cdf[i] * (1.0 - w) + self.cdf[i + 1] * w
    }
}

/// Two-sided Kolmogorov-Smirnov distance between samples and a CDF.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = cdf(v);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// KS distances of one empirical marginal to the two candidate laws.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LawDistances {
    /// Against `P ∝ g^(-1/2)`, the exact joint-Boltzmann marginal.
    pub ks_sqrt_law: f64,
    /// Against `P ∝ 1/g`, the law of the reduced equation.
    pub ks_inverse_law: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MarginalComparison {
    pub full: StationaryEstimate,
    pub reduced: StationaryEstimate,
    pub full_distances: LawDistances,
    pub reduced_distances: LawDistances,
}

/// Runs both the full and the reduced dynamics and measures each against both laws.
pub fn compare_marginals(pot: &Potential, cfg: &LangevinConfig, bins: usize) -> Result<MarginalComparison> {
    let profile = pot
        .profile()
        .ok_or_else(|| Error::Unsupported("marginal comparison is defined for the channel potential only".into()))?;
    let full = stationary_marginal(pot, cfg, bins)?;
    let reduced = effective_stationary_marginal(pot, cfg, bins)?;
    Ok(MarginalComparison {
        full_distances: law_distances(profile, cfg.y_domain, &full.samples),
        reduced_distances: law_distances(profile, cfg.y_domain, &reduced.samples),
        full,
        reduced,
    })
}

/// KS distances of `y` samples on `domain` to both candidate laws of `profile`.
pub fn law_distances(profile: Profile, domain: (f64, f64), samples: &[f64]) -> LawDistances {
    let (lo, hi) = domain;
    let sqrt_law = TabulatedCdf::power_law(profile, -0.5, lo, hi, 20_001);
    let inv_law = TabulatedCdf::power_law(profile, -1.0, lo, hi, 20_001);
    LawDistances {
        ks_sqrt_law: ks_statistic(samples, |y| sqrt_law.eval(y)),
        ks_inverse_law: ks_statistic(samples, |y| inv_law.eval(y)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(temperature: f64) -> LangevinConfig {
        LangevinConfig {
            temperature,
            n_steps: 20_000,
            n_replicas: 40,
            ..LangevinConfig::default()
        }
    }

    #[test]
    fn zero_temperature_channel_is_gradient_flow() {
        let pot = Potential::channel(Profile::Constant { c: 1.5 });
        let tr = integrate(
            &pot,
            &LangevinConfig {
                n_steps: 3000,
                ..quick(0.0)
            },
            (1.0, 0.0),
        )
        .unwrap();
        assert!(tr.y.iter().all(|&y| y == 0.0));
        assert!(tr.x.windows(2).all(|w| w[1] < w[0] && w[1] > 0.0));
        // exact flow would give exp(-1.5 t)
        let last = *tr.x.last().unwrap();
        assert!((last - (-1.5 * 3.0f64).exp()).abs() < 1e-3);
    }

    #[test]
    fn zero_temperature_ring_keeps_its_angle() {
        let pot = Potential::Ring { r0: 1.0, a: 0.6 };
        for phi in [0.3f64, 1.7, -2.5] {
            let start = (1.0 * phi.cos(), 1.0 * phi.sin());
            let tr = integrate(
                &pot,
                &LangevinConfig {
                    n_steps: 2000,
                    ..quick(0.0)
                },
                start,
            )
            .unwrap();
            for (x, y) in tr.x.iter().zip(&tr.y) {
                assert!((y.atan2(*x) - phi).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conditional_variance_from_free_dynamics() {
        let pot = Potential::channel(Profile::Constant { c: 2.0 });
        let cfg = LangevinConfig {
            temperature: 0.5,
            n_steps: 200_000,
            record_every: 1,
            ..LangevinConfig::default()
        };
        let tr = integrate(&pot, &cfg, (0.0, 0.0)).unwrap();
        let burn = tr.len() / 5;
        let xs: Vec<f64> = tr.x[burn..].iter().step_by(250).map(|x| x * x).collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let sd = (xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let sigma = sd / n.sqrt();
        assert!((mean - 0.25).abs() < 3.0 * sigma + 1e-3, "{mean} ± {sigma}");
    }

    #[test]
    fn determinism() {
        let pot = Potential::channel(Profile::Quadratic { a: 4.0 });
        let cfg = quick(0.2);
        let a = integrate(&pot, &cfg, (0.1, 0.2)).unwrap();
        let b = integrate(&pot, &cfg, (0.1, 0.2)).unwrap();
        assert_eq!(a, b);
        let c = integrate(&pot, &LangevinConfig { seed: 1, ..cfg }, (0.1, 0.2)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn configuration_errors() {
        let pot = Potential::channel(Profile::Exp { beta: 1.0 });
        let unstable = LangevinConfig {
            dt: 0.3,
            ..LangevinConfig::default()
        };
        assert!(matches!(integrate(&pot, &unstable, (0.0, 0.0)), Err(Error::Config(_))));
        assert!(matches!(
            stationary_marginal(&pot, &quick(0.0), 10),
            Err(Error::Degenerate(_))
        ));
        let ring = Potential::Ring { r0: 1.0, a: 0.2 };
        assert!(matches!(
            effective_dynamics(&ring, &quick(0.1), 0.0),
            Err(Error::Unsupported(_))
        ));
        assert!(integrate(&pot, &quick(0.1), (0.0, 3.0)).is_err());
        let negative = Potential::channel(Profile::Quadratic { a: -2.0 });
        assert!(integrate(&negative, &quick(0.1), (0.0, 0.0)).is_err());
    }

    #[test]
    fn reflection_stays_inside() {
        assert_eq!(reflect(1.25, -1.0, 1.0), 0.75);
        assert_eq!(reflect(-1.5, -1.0, 1.0), -0.5);
        assert!((reflect(5.5, -1.0, 1.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn reduced_drift_for_exponential_profile() {
        // g = exp(beta y): drift is -T beta everywhere.
        let (t, beta) = (0.1, 2.0);
        let pot = Potential::channel(Profile::Exp { beta });
        let cfg = LangevinConfig {
            temperature: t,
            y_domain: (-50.0, 50.0),
            n_steps: 2000,
            record_every: 2000,
            ..LangevinConfig::default()
        };
        let finals: Vec<f64> = (0..400)
            .map(|s| {
                *effective_dynamics(&pot, &LangevinConfig { seed: s, ..cfg.clone() }, 0.0)
                    .unwrap()
                    .y
                    .last()
                    .unwrap()
            })
            .collect();
        let n = finals.len() as f64;
        let mean = finals.iter().sum::<f64>() / n;
        let sd = (finals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let expected = -t * beta * 2.0;
        assert!((mean - expected).abs() < 3.0 * sd / n.sqrt(), "{mean} vs {expected}");
    }

    #[test]
    fn free_diffusion_msd() {
        let t = 0.2;
        let pot = Potential::channel(Profile::Constant { c: 1.0 });
        let cfg = LangevinConfig {
            temperature: t,
            y_domain: (-100.0, 100.0),
            n_steps: 1000,
            record_every: 1000,
            ..LangevinConfig::default()
        };
        let sq: Vec<f64> = (0..1000)
            .map(|s| {
                effective_dynamics(&pot, &LangevinConfig { seed: s, ..cfg.clone() }, 0.0)
                    .unwrap()
                    .y[1]
                    .powi(2)
            })
            .collect();
        let msd = sq.iter().sum::<f64>() / sq.len() as f64;
        // 2 T t with t = 1; relative standard error sqrt(2/1000)
        assert!((msd - 0.4).abs() < 3.0 * 0.4 * (2.0f64 / 1000.0).sqrt(), "{msd}");
    }

    #[test]
    fn constant_profile_marginal_is_uniform() {
        let pot = Potential::channel(Profile::Constant { c: 1.0 });
        let cfg = LangevinConfig {
            temperature: 0.2,
            n_replicas: 100,
            ..LangevinConfig::default()
        };
        let est = stationary_marginal(&pot, &cfg, 20).unwrap();
        assert!((est.mass.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let ks = ks_statistic(&est.samples, |y| (y + 1.0) / 2.0);
        assert!(ks < 0.05, "{ks}");
    }

    #[test]
    fn flat_ring_has_uniform_angle() {
        let pot = Potential::Ring { r0: 1.0, a: 0.0 };
        let cfg = LangevinConfig {
            temperature: 0.2,
            n_replicas: 400,
            ..LangevinConfig::default()
        };
        let est = stationary_marginal(&pot, &cfg, 16).unwrap();
        let pi = std::f64::consts::PI;
        let ks = ks_statistic(&est.samples, |p| (p + pi) / (2.0 * pi));
        assert!(ks < 0.05, "{ks}");
        for d in est.density() {
            assert!((d - 1.0 / (2.0 * pi)).abs() < 0.05);
        }
    }

    #[test]
    fn drift_sign_and_zero_temperature() {
        let pot = Potential::channel(Profile::Quadratic { a: 4.0 });
        let probe = DriftProbe {
            temperature: 0.1,
            y: 0.5,
            n_replicas: 2000,
            ..DriftProbe::default()
        };
        let d = drift_velocity(&pot, &probe).unwrap();
        assert!(d.mean + 3.0 * d.stderr < 0.0, "{d:?}");
        let cold = drift_velocity(
            &pot,
            &DriftProbe {
                temperature: 0.0,
                ..probe
            },
        )
        .unwrap();
        assert_eq!(cold.mean, 0.0);
    }

    #[test]
    fn tabulated_cdf_matches_closed_form() {
        // ∫ (1 + 4y^2)^(-1/2) dy = asinh(2y) / 2
        let cdf = TabulatedCdf::power_law(Profile::Quadratic { a: 4.0 }, -0.5, -1.0, 1.0, 20_001);
        let exact = |y: f64| (2.0 * y).asinh() / 2.0;
        for y in [-0.9, -0.3, 0.0, 0.41, 0.99] {
            let want = (exact(y) - exact(-1.0)) / (exact(1.0) - exact(-1.0));
            assert!((cdf.eval(y) - want).abs() < 1e-8);
        }
    }

    #[test]
    fn ks_of_perfect_grid_is_small() {
        let s: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        assert!((ks_statistic(&s, |v| v) - 0.0005).abs() < 1e-12);
    }
}
