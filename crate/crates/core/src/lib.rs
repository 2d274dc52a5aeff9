//! Desk-scale laboratory for entropic barriers in neural-network loss landscapes.
//!
//! The crate trains small dense networks ([`tensornet`], [`optim`], [`training`]),
//! builds low-loss paths between minima ([`paths`]), measures curvature along
//! them ([`curvature`]), runs path-constrained stochastic dynamics and
//! linear-mode-connectivity protocols ([`experiments`]), and simulates the
//! two-dimensional Langevin toy model with known stationary laws ([`langevin`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod curvature;
pub mod datasets;
pub mod error;
pub mod experiments;
pub mod langevin;
pub mod linalg;
pub mod optim;
pub mod par;
pub mod paths;
pub mod rng;
pub mod tensornet;
pub mod training;

pub use error::{Error, Result};
pub use tensornet::{Activation, Batch, NetSpec, ParamVector};
