//! Browser bindings: the Langevin channel marginal and a loss profile between
//! two freshly trained toy networks. Results cross the boundary as JSON strings.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use entroscope::curvature::{lambda_max_power, PowerConfig};
use entroscope::datasets::{make_moons, OrderSeed};
use entroscope::langevin::{law_distances, stationary_marginal, LangevinConfig, Potential, Profile};
use entroscope::optim::{LrSchedule, OptimConfig, OptimizerState};
use entroscope::paths::interpolate;
use entroscope::training::{run_epochs, TrainPlan};
use entroscope::{tensornet, Activation, NetSpec};

#[derive(Serialize)]
pub struct Marginal {
    pub centers: Vec<f64>,
    pub density: Vec<f64>,
    /// Normalized `g^(-1/2)` and `1/g` evaluated at the bin centers.
    pub sqrt_law: Vec<f64>,
    pub inverse_law: Vec<f64>,
    pub ks_sqrt_law: f64,
    pub ks_inverse_law: f64,
}

#[derive(Serialize)]
pub struct InterpProfile {
    pub t: Vec<f64>,
    pub loss: Vec<f64>,
    pub lambda_max: Vec<f64>,
    pub acc_a: f64,
    pub acc_b: f64,
}

fn profile(kind: &str, param: f64) -> Result<Profile, String> {
    match kind {
        "quadratic" => Ok(Profile::Quadratic { a: param }),
        "exp" => Ok(Profile::Exp { beta: param }),
        "constant" => Ok(Profile::Constant { c: param }),
        other => Err(format!("unknown profile {other:?}")),
    }
}

fn normalized(profile: Profile, exponent: f64, xs: &[f64], width: f64) -> Vec<f64> {
    let raw: Vec<f64> = xs.iter().map(|&y| profile.g(y).powf(exponent)).collect();
    let z: f64 = raw.iter().sum::<f64>() * width;
    raw.iter().map(|v| v / z).collect()
}

/// Stationary `y`-marginal of the full channel dynamics on `[-1, 1]`.
pub fn channel_marginal(
    kind: &str,
    param: f64,
    temperature: f64,
    replicas: usize,
    steps: usize,
    bins: usize,
    seed: u64,
) -> Result<Marginal, String> {
    let profile = profile(kind, param)?;
    let pot = Potential::channel(profile);
    let cfg = LangevinConfig {
        temperature,
        n_steps: steps,
        n_replicas: replicas,
        seed,
        ..LangevinConfig::default()
    };
    let est = stationary_marginal(&pot, &cfg, bins).map_err(|e| e.to_string())?;
    let centers = est.centers();
    let width = est.edges[1] - est.edges[0];
    let d = law_distances(profile, cfg.y_domain, &est.samples);
    Ok(Marginal {
        sqrt_law: normalized(profile, -0.5, &centers, width),
        inverse_law: normalized(profile, -1.0, &centers, width),
        density: est.density(),
        centers,
        ks_sqrt_law: d.ks_sqrt_law,
        ks_inverse_law: d.ks_inverse_law,
    })
}

/// Trains two tanh networks on two-moons from different seeds and evaluates the
/// straight line between them.
pub fn interpolation_profile(
    seed_a: u64,
    seed_b: u64,
    hidden: usize,
    epochs: usize,
    points: usize,
) -> Result<InterpProfile, String> {
    let err = |e: entroscope::Error| e.to_string();
    if points < 2 {
        return Err("need at least two points".into());
    }
    let ds = make_moons(200, 0.2, 0).map_err(err)?;
    let plan = TrainPlan {
        total_epochs: epochs,
        batch_size: 32,
        schedule: LrSchedule::default(),
    };
    let train = |seed: u64| -> Result<_, String> {
        let spec = NetSpec::new(vec![2, hidden, 2], Activation::Tanh, seed).map_err(err)?;
        let mut theta = spec.init();
        let mut opt = OptimizerState::new(OptimConfig::sgd(0.2));
        let stats = run_epochs(&spec, &ds, &mut theta, &mut opt, &plan, 0..epochs, OrderSeed(seed)).map_err(err)?;
        let acc = stats.last().map_or(f64::NAN, |s| s.train_acc);
        Ok((spec, theta, acc))
    };
    let (spec, a, acc_a) = train(seed_a)?;
    let (_, b, acc_b) = train(seed_b)?;
    let power = PowerConfig {
        iters: 100,
        tol: 1e-6,
        seed: 0,
    };
    let mut out = InterpProfile {
        t: vec![],
        loss: vec![],
        lambda_max: vec![],
        acc_a,
        acc_b,
    };
    for i in 0..points {
        let t = i as f64 / (points - 1) as f64;
        let theta = interpolate(&a, &b, t).map_err(err)?;
        out.t.push(t);
        out.loss.push(tensornet::loss(&spec, &theta, ds.full()).map_err(err)?);
        out.lambda_max
            .push(lambda_max_power(&spec, &theta, ds.full(), &power).map_err(err)?.lambda);
    }
    Ok(out)
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
        .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = channelMarginal)]
pub fn channel_marginal_js(
    kind: &str,
    param: f64,
    temperature: f64,
    replicas: usize,
    steps: usize,
    bins: usize,
    seed: u32,
) -> Result<String, JsValue> {
    to_js(channel_marginal(
        kind,
        param,
        temperature,
        replicas,
        steps,
        bins,
        seed.into(),
    ))
}

#[wasm_bindgen(js_name = interpolationProfile)]
pub fn interpolation_profile_js(
    seed_a: u32,
    seed_b: u32,
    hidden: usize,
    epochs: usize,
    points: usize,
) -> Result<String, JsValue> {
    to_js(interpolation_profile(
        seed_a.into(),
        seed_b.into(),
        hidden,
        epochs,
        points,
    ))
}
