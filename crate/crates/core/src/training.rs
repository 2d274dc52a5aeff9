//! Epoch-based minibatch training.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::datasets::{batch_indices, Dataset, OrderSeed};
use crate::error::{Error, Result};
use crate::optim::{LrSchedule, OptimizerState};
use crate::tensornet::{self, NetSpec, ParamVector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainPlan {
    pub total_epochs: usize,
    pub batch_size: usize,
    pub schedule: LrSchedule,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
}

/// Trains over `epochs` (a sub-range of the plan), using batch order `order`.
/// Each epoch's learning rate comes from the plan's schedule and the
/// optimizer's base rate. Statistics are evaluated on the full dataset at the
/// end of every epoch.
pub fn run_epochs(
    spec: &NetSpec,
    ds: &Dataset,
    theta: &mut ParamVector,
    opt: &mut OptimizerState,
    plan: &TrainPlan,
    epochs: Range<usize>,
    order: OrderSeed,
) -> Result<Vec<EpochStats>> {
    let base_lr = opt.config().lr;
    let mut stats = Vec::with_capacity(epochs.len());
    for epoch in epochs {
        let lr = plan.schedule.lr_at(base_lr, epoch, plan.total_epochs);
        opt.set_lr(lr);
        for idx in batch_indices(ds.len(), plan.batch_size, epoch as u64, order)? {
            let batch = ds.batch(&idx);
            let (l, g) = tensornet::loss_and_gradient(spec, theta, &batch)?;
            if !l.is_finite() {
                return Err(Error::NonFinite(format!("training loss became {l} in epoch {epoch}")));
            }
            opt.step(theta, &g)?;
        }
        let train_loss = tensornet::loss(spec, theta, ds.full())?;
        if !train_loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "training loss became {train_loss} after epoch {epoch}"
            )));
        }
        stats.push(EpochStats {
            epoch,
            lr,
            train_loss,
            train_acc: tensornet::accuracy(spec, theta, ds.full())?,
        });
    }
    opt.set_lr(base_lr);
    Ok(stats)
}

/// Full-batch descent for `steps` updates; returns the final loss.
pub fn descend_full_batch(
    spec: &NetSpec,
    ds: &Dataset,
    theta: &mut ParamVector,
    opt: &mut OptimizerState,
    steps: usize,
) -> Result<f64> {
    for _ in 0..steps {
        let g = tensornet::gradient(spec, theta, ds.full())?;
        opt.step(theta, &g)?;
    }
    let l = tensornet::loss(spec, theta, ds.full())?;
    if !l.is_finite() {
        return Err(Error::NonFinite(format!("full-batch loss became {l}")));
    }
    Ok(l)
}
