//! Dense multilayer perceptron over a flat parameter vector.
//!
//! Parameters are laid out layer by layer: the weight matrix of layer `l`
//! (row-major, `widths[l+1]` rows by `widths[l]` columns) followed by its bias
//! vector. The loss is the mean negative log-likelihood of a softmax output,
//! so a summed loss is `B` times [`loss`] and its derivatives scale the same
//! way.
//!
//! Gradients are exact reverse-mode derivatives. Hessian-vector products run
//! the same backward pass over [`scalar::Dual`] numbers, which differentiates
//! `g(theta) . v` exactly rather than by finite differences.

pub mod scalar;
mod symmetry;

use std::ops::{Deref, DerefMut};
use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::par;
use crate::rng;

use self::scalar::{Dual, Scalar};

pub use self::symmetry::{rescale_generator, rescale_hidden_unit};

/// Examples per parallel shard. Shard sums are combined in shard order.
const SHARD: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::InvalidArgument(format!("unknown activation `{other}`"))),
        }
    }
}

/// Architecture of a dense network: widths from input dimension to class count.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    widths: Vec<usize>,
    activation: Activation,
    init_seed: u64,
}

impl NetSpec {
    pub fn new(widths: Vec<usize>, activation: Activation, init_seed: u64) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "a network needs at least 2 widths, got {}",
                widths.len()
            )));
        }
        if widths.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "all widths must be >= 1, got {widths:?}"
            )));
        }
        Ok(NetSpec {
            widths,
            activation,
            init_seed,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn with_init_seed(&self, init_seed: u64) -> NetSpec {
        NetSpec {
            init_seed,
            ..self.clone()
        }
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn classes(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    /// Offsets of the weight matrix and bias vector of layer `l`.
    pub fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let start: usize = self.widths[..=l].windows(2).map(|w| (w[0] + 1) * w[1]).sum();
        (start, start + self.widths[l] * self.widths[l + 1])
    }

    /// Same architecture, ignoring the initialization seed.
    pub fn same_shape(&self, other: &NetSpec) -> bool {
        self.widths == other.widths && self.activation == other.activation
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` per layer, weights and biases alike.
    pub fn init(&self) -> ParamVector {
        let mut rng = rng::stream(self.init_seed, rng::DOMAIN_INIT, 0);
        let mut values = Vec::with_capacity(self.param_count());
        for w in self.widths.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..(w[0] + 1) * w[1] {
                values.push(rng.random_range(-bound..=bound));
            }
        }
        ParamVector(values)
    }
}

/// A point in parameter space.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        ParamVector(values)
    }

    pub fn zeros(n: usize) -> Self {
        ParamVector(vec![0.0; n])
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        linalg::norm(&self.0)
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        linalg::dot(&self.0, other)
    }

    pub fn scaled(&self, k: f64) -> ParamVector {
        ParamVector(self.0.iter().map(|v| v * k).collect())
    }

    pub fn is_finite(&self) -> bool {
        linalg::all_finite(&self.0)
    }

    fn check(&self, spec: &NetSpec, what: &str) -> Result<()> {
        if self.0.len() != spec.param_count() {
            return Err(Error::Shape(format!(
                "{what} has length {}, network expects {}",
                self.0.len(),
                spec.param_count()
            )));
        }
        Ok(())
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        ParamVector(v)
    }
}

impl Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// Row-major inputs with integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    inputs: Arc<[f64]>,
    labels: Arc<[usize]>,
    dim: usize,
}

impl Batch {
    pub fn new(inputs: Vec<f64>, labels: Vec<usize>, dim: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Shape("a batch needs at least one example".into()));
        }
        if dim == 0 || inputs.len() != labels.len() * dim {
            return Err(Error::Shape(format!(
                "{} input values do not form {} rows of width {dim}",
                inputs.len(),
                labels.len()
            )));
        }
        Ok(Batch {
            inputs: inputs.into(),
            labels: labels.into(),
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Copies out the rows named by `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> Batch {
        let mut inputs = Vec::with_capacity(idx.len() * self.dim);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            inputs.extend_from_slice(self.input(i));
            labels.push(self.labels[i]);
        }
        Batch {
            inputs: inputs.into(),
            labels: labels.into(),
            dim: self.dim,
        }
    }

    fn check(&self, spec: &NetSpec) -> Result<()> {
        if self.dim != spec.input_dim() {
            return Err(Error::Shape(format!(
                "batch input width {} differs from network input width {}",
                self.dim,
                spec.input_dim()
            )));
        }
        let c = spec.classes();
        if let Some(&bad) = self.labels.iter().find(|&&y| y >= c) {
            return Err(Error::Shape(format!("label {bad} out of range for {c} classes")));
        }
        Ok(())
    }
}

/// Per-example activations for one forward pass.
struct Trace<S> {
    /// `acts[l]` is the input to layer `l`; `acts[0]` is the example itself.
    acts: Vec<Vec<S>>,
    /// Pre-activations of every layer; the last entry holds the logits.
    pres: Vec<Vec<S>>,
}

impl<S: Scalar> Trace<S> {
    fn new(spec: &NetSpec) -> Self {
        let w = &spec.widths;
        Trace {
            acts: w[..w.len() - 1].iter().map(|&n| vec![S::zero(); n]).collect(),
            pres: w[1..].iter().map(|&n| vec![S::zero(); n]).collect(),
        }
    }

    fn logits(&self) -> &[S] {
        self.pres.last().unwrap()
    }
}

fn activate<S: Scalar>(act: Activation, z: S) -> S {
    match act {
        Activation::Relu => {
            if z.re() > 0.0 {
                z
            } else {
                S::zero()
            }
        }
        Activation::Tanh => z.tanh(),
    }
}

fn activate_deriv<S: Scalar>(act: Activation, z: S) -> S {
    match act {
        Activation::Relu => S::cst(if z.re() > 0.0 { 1.0 } else { 0.0 }),
        Activation::Tanh => {
            let t = z.tanh();
            S::cst(1.0) - t * t
        }
    }
}

fn forward<S: Scalar>(spec: &NetSpec, theta: &[S], x: &[f64], tr: &mut Trace<S>) {
    for (a, &v) in tr.acts[0].iter_mut().zip(x) {
        *a = S::cst(v);
    }
    let layers = spec.layers();
    for l in 0..layers {
        let (n_in, n_out) = (spec.widths[l], spec.widths[l + 1]);
        let (wo, bo) = spec.layer_offsets(l);
        for o in 0..n_out {
            let row = &theta[wo + o * n_in..wo + (o + 1) * n_in];
            let mut z = theta[bo + o];
            for (w, a) in row.iter().zip(&tr.acts[l]) {
                z += *w * *a;
            }
            tr.pres[l][o] = z;
        }
        if l + 1 < layers {
            for o in 0..n_out {
                tr.acts[l + 1][o] = activate(spec.activation, tr.pres[l][o]);
            }
        }
    }
}

/// Accumulates `J^T dlogits` into `grad`, where `J` is the Jacobian of the logits.
fn backward<S: Scalar>(spec: &NetSpec, theta: &[S], tr: &Trace<S>, dlogits: &[S], grad: &mut [S]) {
    let mut dz: Vec<S> = dlogits.to_vec();
    for l in (0..spec.layers()).rev() {
        let (n_in, n_out) = (spec.widths[l], spec.widths[l + 1]);
        let (wo, bo) = spec.layer_offsets(l);
        for o in 0..n_out {
            let g = dz[o];
            grad[bo + o] += g;
            let row = &mut grad[wo + o * n_in..wo + (o + 1) * n_in];
            for (gw, a) in row.iter_mut().zip(&tr.acts[l]) {
                *gw += g * *a;
            }
        }
        if l > 0 {
            let mut da = vec![S::zero(); n_in];
            for o in 0..n_out {
                let g = dz[o];
                let row = &theta[wo + o * n_in..wo + (o + 1) * n_in];
                for (d, w) in da.iter_mut().zip(row) {
                    *d += *w * g;
                }
            }
            for (d, z) in da.iter_mut().zip(&tr.pres[l - 1]) {
                *d = *d * activate_deriv(spec.activation, *z);
            }
            dz = da;
        }
    }
}

/// Log-sum-exp stabilized softmax: returns `(log_sum_exp, probabilities)`.
fn softmax<S: Scalar>(logits: &[S]) -> (S, Vec<S>) {
    let m = logits.iter().map(|z| z.re()).fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<S> = logits.iter().map(|&z| (z - S::cst(m)).exp()).collect();
    let mut s = S::zero();
    for &v in &e {
        s += v;
    }
    let lse = S::cst(m) + s.ln();
    let p = e.into_iter().map(|v| v / s).collect();
    (lse, p)
}

/// Sum of per-example losses and (optionally) their gradient over `range`.
fn shard_loss_grad<S: Scalar>(
    spec: &NetSpec,
    theta: &[S],
    batch: &Batch,
    range: std::ops::Range<usize>,
    want_grad: bool,
) -> (S, Vec<S>) {
    let mut tr = Trace::new(spec);
    let mut grad = if want_grad {
        vec![S::zero(); theta.len()]
    } else {
        Vec::new()
    };
    let mut total = S::zero();
    for i in range {
        forward(spec, theta, batch.input(i), &mut tr);
        let y = batch.label(i);
        let (lse, mut p) = softmax(tr.logits());
        total += lse - tr.logits()[y];
        if want_grad {
            p[y] += S::cst(-1.0);
            backward(spec, theta, &tr, &p, &mut grad);
        }
    }
    (total, grad)
}

fn batch_loss_grad<S: Scalar>(spec: &NetSpec, theta: &[S], batch: &Batch, want_grad: bool) -> (S, Vec<S>) {
    let n = batch.len();
    let shards = n.div_ceil(SHARD);
    let parts = par::map_indexed(shards, |s| {
        shard_loss_grad(spec, theta, batch, s * SHARD..((s + 1) * SHARD).min(n), want_grad)
    });
    let inv = 1.0 / n as f64;
    let mut total = S::zero();
    let mut grad = if want_grad {
        vec![S::zero(); theta.len()]
    } else {
        Vec::new()
    };
    for (l, g) in parts {
        total += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    (total.scale(inv), grad.into_iter().map(|g| g.scale(inv)).collect())
}

fn check(spec: &NetSpec, theta: &ParamVector, batch: &Batch) -> Result<()> {
    theta.check(spec, "parameter vector")?;
    batch.check(spec)
}

/// Mean negative log-likelihood over the batch.
pub fn loss(spec: &NetSpec, theta: &ParamVector, batch: &Batch) -> Result<f64> {
    check(spec, theta, batch)?;
    Ok(batch_loss_grad::<f64>(spec, theta, batch, false).0)
}

pub fn loss_and_gradient(spec: &NetSpec, theta: &ParamVector, batch: &Batch) -> Result<(f64, ParamVector)> {
    check(spec, theta, batch)?;
    let (l, g) = batch_loss_grad::<f64>(spec, theta, batch, true);
    Ok((l, ParamVector(g)))
}

/// Exact gradient of [`loss`].
pub fn gradient(spec: &NetSpec, theta: &ParamVector, batch: &Batch) -> Result<ParamVector> {
    loss_and_gradient(spec, theta, batch).map(|(_, g)| g)
}

/// Exact Hessian-vector product `H v` of the mean loss.
pub fn hvp(spec: &NetSpec, theta: &ParamVector, batch: &Batch, v: &[f64]) -> Result<ParamVector> {
    if v.is_empty() {
        return Err(Error::Degenerate("hvp direction has length zero".into()));
    }
    check(spec, theta, batch)?;
    if v.len() != theta.len() {
        return Err(Error::Shape(format!(
            "hvp direction has length {}, network expects {}",
            v.len(),
            theta.len()
        )));
    }
    let lifted: Vec<Dual> = theta.iter().zip(v).map(|(&t, &d)| Dual::new(t, d)).collect();
    let (_, g) = batch_loss_grad(spec, &lifted, batch, true);
    Ok(ParamVector(g.into_iter().map(|d| d.du).collect()))
}

/// Output logits for one input.
pub fn logits(spec: &NetSpec, theta: &ParamVector, x: &[f64]) -> Result<Vec<f64>> {
    theta.check(spec, "parameter vector")?;
    check_input(spec, x)?;
    let mut tr = Trace::new(spec);
    forward(spec, theta, x, &mut tr);
    Ok(tr.logits().to_vec())
}

/// Predicted class probabilities for one input.
pub fn probabilities(spec: &NetSpec, theta: &ParamVector, x: &[f64]) -> Result<Vec<f64>> {
    Ok(softmax(&logits(spec, theta, x)?).1)
}

fn check_input(spec: &NetSpec, x: &[f64]) -> Result<()> {
    if x.len() != spec.input_dim() {
        return Err(Error::Shape(format!(
            "input width {} differs from network input width {}",
            x.len(),
            spec.input_dim()
        )));
    }
    Ok(())
}

/// Gradient of `log p(y | x)`, i.e. minus the gradient of the per-example loss.
pub fn score(spec: &NetSpec, theta: &ParamVector, x: &[f64], y: usize) -> Result<ParamVector> {
    theta.check(spec, "parameter vector")?;
    check_input(spec, x)?;
    if y >= spec.classes() {
        return Err(Error::Shape(format!(
            "label {y} out of range for {} classes",
            spec.classes()
        )));
    }
    let mut tr = Trace::new(spec);
    forward(spec, theta, x, &mut tr);
    let (_, p) = softmax(tr.logits());
    let up: Vec<f64> = p
        .iter()
        .enumerate()
        .map(|(c, &pc)| if c == y { 1.0 - pc } else { -pc })
        .collect();
    let mut g = vec![0.0; theta.len()];
    backward(spec, theta, &tr, &up, &mut g);
    Ok(ParamVector(g))
}

/// Scores for every class label of one input, with the model's probabilities.
pub fn scores_all_classes(spec: &NetSpec, theta: &ParamVector, x: &[f64]) -> Result<(Vec<f64>, Vec<ParamVector>)> {
    theta.check(spec, "parameter vector")?;
    check_input(spec, x)?;
    let mut tr = Trace::new(spec);
    forward(spec, theta, x, &mut tr);
    let (_, p) = softmax(tr.logits());
    let scores = (0..spec.classes())
        .map(|y| {
            let up: Vec<f64> = p
                .iter()
                .enumerate()
                .map(|(c, &pc)| if c == y { 1.0 - pc } else { -pc })
                .collect();
            let mut g = vec![0.0; theta.len()];
            backward(spec, theta, &tr, &up, &mut g);
            ParamVector(g)
        })
        .collect();
    Ok((p, scores))
}

/// Fraction of examples whose arg-max logit equals the label.
pub fn accuracy(spec: &NetSpec, theta: &ParamVector, batch: &Batch) -> Result<f64> {
    check(spec, theta, batch)?;
    let mut tr = Trace::new(spec);
    let mut hits = 0usize;
    for i in 0..batch.len() {
        forward(spec, theta, batch.input(i), &mut tr);
        let z = tr.logits();
        let best = (0..z.len()).fold(0, |b, c| if z[c] > z[b] { c } else { b });
        hits += usize::from(best == batch.label(i));
    }
    Ok(hits as f64 / batch.len() as f64)
}
