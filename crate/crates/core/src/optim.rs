//! Stochastic optimizers and the step learning-rate schedule.
//!
//! Conventions, with `g` the minibatch gradient plus coupled weight decay
//! `w * theta`:
//!
//! | kind       | update                                                    |
//! |------------|-----------------------------------------------------------|
//! | `sgd`      | `theta -= lr * g`                                         |
//! | `momentum` | `v = beta * v + g; theta -= lr * v`                       |
//! | `nesterov` | `v = beta * v + g; theta -= lr * (g + beta * v)`          |
//! | `adam`     | bias-corrected first/second moments, `theta -= lr * m / (sqrt(v) + eps)` |
//!
//! The momentum buffer accumulates raw gradients (no `1 - beta` damping), the
//! usual deep-learning form. Every state counts its updates so callers can
//! report effective time `updates * lr` independent of the optimizer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimKind {
    Sgd,
    Momentum,
    Nesterov,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub kind: OptimKind,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            kind: OptimKind::Sgd,
            lr: 0.02,
            momentum: 0.9,
            weight_decay: 0.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl OptimConfig {
    pub fn sgd(lr: f64) -> Self {
        OptimConfig {
            kind: OptimKind::Sgd,
            lr,
            ..Default::default()
        }
    }

    pub fn with_kind(mut self, kind: OptimKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive and finite, got {}",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!(
                "weight decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if self.kind == OptimKind::Adam {
            for b in [self.adam_beta1, self.adam_beta2] {
                if !(0.0..1.0).contains(&b) {
                    return Err(Error::Config(format!("adam betas must lie in [0, 1), got {b}")));
                }
            }
            if !(self.adam_eps > 0.0) {
                return Err(Error::Config(format!(
                    "adam eps must be positive, got {}",
                    self.adam_eps
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct OptimizerState {
    config: OptimConfig,
    lr: f64,
    updates: u64,
    velocity: Vec<f64>,
    second: Vec<f64>,
    poisoned: bool,
}

impl OptimizerState {
    pub fn new(config: OptimConfig) -> Self {
        let lr = config.lr;
        OptimizerState {
            config,
            lr,
            updates: 0,
            velocity: Vec::new(),
            second: Vec::new(),
            poisoned: false,
        }
    }

    pub fn config(&self) -> &OptimConfig {
        &self.config
    }

    /// Learning rate used by the next step.
    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    /// Number of successful updates so far.
    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Applies one update in place. A non-finite gradient poisons the state:
    /// this and every later call fail.
    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) -> Result<()> {
        if self.poisoned {
            return Err(Error::Poisoned("an earlier step saw a non-finite gradient".into()));
        }
        if grad.len() != theta.len() {
            return Err(Error::Shape(format!(
                "gradient has length {}, parameters {}",
                grad.len(),
                theta.len()
            )));
        }
        if !linalg::all_finite(grad) {
            self.poisoned = true;
            return Err(Error::Poisoned(format!(
                "non-finite gradient at update {}",
                self.updates
            )));
        }
        let c = &self.config;
        let wd = c.weight_decay;
        let g: Vec<f64> = if wd > 0.0 {
            grad.iter().zip(theta.iter()).map(|(g, t)| g + wd * t).collect()
        } else {
            grad.to_vec()
        };
        if self.velocity.len() != theta.len() {
            self.velocity = vec![0.0; theta.len()];
        }
        let lr = self.lr;
        match c.kind {
            OptimKind::Sgd => linalg::axpy(-lr, &g, theta),
            OptimKind::Momentum => {
                for ((t, v), gi) in theta.iter_mut().zip(&mut self.velocity).zip(&g) {
                    *v = c.momentum * *v + gi;
                    *t -= lr * *v;
                }
            }
            OptimKind::Nesterov => {
                for ((t, v), gi) in theta.iter_mut().zip(&mut self.velocity).zip(&g) {
                    *v = c.momentum * *v + gi;
                    *t -= lr * (gi + c.momentum * *v);
                }
            }
            OptimKind::Adam => {
                if self.second.len() != theta.len() {
                    self.second = vec![0.0; theta.len()];
                }
                let k = (self.updates + 1) as i32;
                let (b1, b2) = (c.adam_beta1, c.adam_beta2);
                let corr1 = 1.0 - b1.powi(k);
                let corr2 = 1.0 - b2.powi(k);
                for (((t, m), v), gi) in theta.iter_mut().zip(&mut self.velocity).zip(&mut self.second).zip(&g) {
                    *m = b1 * *m + (1.0 - b1) * gi;
                    *v = b2 * *v + (1.0 - b2) * gi * gi;
                    let m_hat = *m / corr1;
                    let v_hat = *v / corr2;
                    *t -= lr * m_hat / (v_hat.sqrt() + c.adam_eps);
                }
            }
        }
        self.updates += 1;
        Ok(())
    }
}

/// Multiply the learning rate by `factor` at each milestone fraction of training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub milestones: Vec<f64>,
    pub factor: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            milestones: vec![0.3, 0.6, 0.8, 0.9],
            factor: 0.2,
        }
    }
}

impl LrSchedule {
    pub fn constant() -> Self {
        LrSchedule {
            milestones: Vec::new(),
            factor: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.milestones.iter().any(|m| !(*m > 0.0 && *m < 1.0)) {
            return Err(Error::Config(format!(
                "milestones must lie in (0, 1): {:?}",
                self.milestones
            )));
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "milestones must increase strictly: {:?}",
                self.milestones
            )));
        }
        if !(self.factor > 0.0 && self.factor <= 1.0) {
            return Err(Error::Config(format!(
                "schedule factor must lie in (0, 1], got {}",
                self.factor
            )));
        }
        Ok(())
    }

    /// `base_lr * factor^(milestones reached)`, where milestone `m` is reached once `epoch / total >= m`.
    pub fn lr_at(&self, base_lr: f64, epoch: usize, total_epochs: usize) -> f64 {
        let frac = epoch as f64 / total_epochs.max(1) as f64;
        let passed = self.milestones.iter().filter(|&&m| frac >= m).count();
        base_lr * self.factor.powi(passed as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dot;

    fn run(kind: OptimKind, lr: f64, theta0: f64, grads: &[f64]) -> Vec<f64> {
        let mut st = OptimizerState::new(
            OptimConfig {
                lr,
                ..OptimConfig::default()
            }
            .with_kind(kind),
        );
        let mut theta = vec![theta0];
        grads
            .iter()
            .map(|&g| {
                st.step(&mut theta, &[g]).unwrap();
                theta[0]
            })
            .collect()
    }

    #[test]
    fn vanilla_sgd_step() {
        let t = run(OptimKind::Sgd, 0.1, 1.0, &[2.0]);
        assert!((t[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn momentum_hand_recursion() {
        let t = run(OptimKind::Momentum, 0.1, 0.0, &[1.0, 1.0]);
        assert!((t[0] + 0.1).abs() < 1e-15);
        assert!((t[1] + 0.29).abs() < 1e-15);
    }

    #[test]
    fn nesterov_hand_recursion() {
        // v1 = 1, step = 1 + 0.9 = 1.9; v2 = 1.9, step = 1 + 1.71 = 2.71
        let t = run(OptimKind::Nesterov, 0.1, 0.0, &[1.0, 1.0]);
        assert!((t[0] + 0.19).abs() < 1e-15);
        assert!((t[1] + 0.19 + 0.271).abs() < 1e-14);
    }

    #[test]
    fn adam_first_step() {
        let mut st = OptimizerState::new(OptimConfig {
            kind: OptimKind::Adam,
            lr: 0.001,
            ..OptimConfig::default()
        });
        let mut theta = vec![0.0];
        st.step(&mut theta, &[1.0]).unwrap();
        // m_hat = v_hat = 1, so the step is lr / (1 + eps)
        let expected = -0.001 / (1.0 + 1e-8);
        assert!((theta[0] - expected).abs() < 1e-18);
        assert!((theta[0] + 0.000999999).abs() < 1e-9);
    }

    #[test]
    fn coupled_weight_decay() {
        let mut st = OptimizerState::new(OptimConfig {
            weight_decay: 0.5,
            ..OptimConfig::sgd(0.1)
        });
        let mut theta = vec![2.0];
        st.step(&mut theta, &[0.0]).unwrap();
        assert!((theta[0] - 1.9).abs() < 1e-15);
    }

    #[test]
    fn nan_gradient_poisons() {
        let mut st = OptimizerState::new(OptimConfig::sgd(0.1));
        let mut theta = vec![1.0, 2.0];
        assert!(matches!(st.step(&mut theta, &[f64::NAN, 0.0]), Err(Error::Poisoned(_))));
        assert_eq!(theta, vec![1.0, 2.0]);
        assert!(matches!(st.step(&mut theta, &[0.0, 0.0]), Err(Error::Poisoned(_))));
        assert_eq!(st.updates(), 0);
        assert!(matches!(st.step(&mut [0.0], &[0.0, 1.0]), Err(Error::Poisoned(_))));
    }

    #[test]
    fn schedule_milestones() {
        let s = LrSchedule::default();
        assert_eq!(s.lr_at(0.1, 0, 200), 0.1);
        assert!((s.lr_at(0.1, 59, 200) - 0.1).abs() < 1e-15);
        assert!((s.lr_at(0.1, 60, 200) - 0.02).abs() < 1e-15);
        assert!((s.lr_at(0.1, 199, 200) - 1.6e-4).abs() < 1e-15);
        assert!(s.validate().is_ok());
        let bad = LrSchedule {
            milestones: vec![0.5, 0.4],
            factor: 0.2,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn full_batch_sgd_descends_a_quadratic_monotonically() {
        // L = 1/2 x^T A x with A = diag(4, 1, 0.25); lr < 2 / 4.
        let a = [4.0, 1.0, 0.25];
        let loss = |x: &[f64]| 0.5 * x.iter().zip(&a).map(|(v, k)| k * v * v).sum::<f64>();
        let mut x = vec![1.0, -2.0, 3.0];
        let mut st = OptimizerState::new(OptimConfig::sgd(0.45));
        let mut prev = loss(&x);
        for _ in 0..200 {
            let g: Vec<f64> = x.iter().zip(&a).map(|(v, k)| k * v).collect();
            st.step(&mut x, &g).unwrap();
            let l = loss(&x);
            assert!(l <= prev);
            prev = l;
        }
        assert!(dot(&x, &x) < 1e-6);
        assert_eq!(st.updates(), 200);
    }

    #[test]
    fn config_validation() {
        assert!(OptimConfig::sgd(0.0).validate().is_err());
        assert!(OptimConfig {
            momentum: 1.0,
            ..OptimConfig::default()
        }
        .validate()
        .is_err());
        assert!(OptimConfig::default().validate().is_ok());
    }
}
