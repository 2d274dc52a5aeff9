//! Positive rescaling symmetry of ReLU units.
//!
//! Multiplying the incoming weights and bias of a hidden ReLU unit by `alpha > 0`
//! and its outgoing weights by `1/alpha` leaves the network function unchanged.

use super::{Activation, NetSpec, ParamVector};
use crate::error::{Error, Result};

fn check_unit(spec: &NetSpec, theta: &ParamVector, hidden: usize, unit: usize) -> Result<()> {
    if spec.activation() != Activation::Relu {
        return Err(Error::Unsupported("rescaling symmetry requires relu units".into()));
    }
    if hidden + 1 >= spec.layers() || unit >= spec.widths()[hidden + 1] {
        return Err(Error::InvalidArgument(format!(
            "no hidden unit {unit} in hidden layer {hidden} of {:?}",
            spec.widths()
        )));
    }
    theta.check(spec, "parameter vector")
}

/// Index lists `(incoming, outgoing)` of a hidden unit's parameters.
fn unit_params(spec: &NetSpec, hidden: usize, unit: usize) -> (Vec<usize>, Vec<usize>) {
    let w = spec.widths();
    let (n_in, n_mid, n_out) = (w[hidden], w[hidden + 1], w[hidden + 2]);
    let (wo, bo) = spec.layer_offsets(hidden);
    let mut incoming: Vec<usize> = (0..n_in).map(|i| wo + unit * n_in + i).collect();
    incoming.push(bo + unit);
    let (wo2, _) = spec.layer_offsets(hidden + 1);
    let outgoing = (0..n_out).map(|o| wo2 + o * n_mid + unit).collect();
    (incoming, outgoing)
}

/// Applies `T_alpha` to unit `unit` of hidden layer `hidden` (0 = first hidden layer).
pub fn rescale_hidden_unit(
    spec: &NetSpec,
    theta: &ParamVector,
    hidden: usize,
    unit: usize,
    alpha: f64,
) -> Result<ParamVector> {
    check_unit(spec, theta, hidden, unit)?;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "rescaling factor must be positive, got {alpha}"
        )));
    }
    let (incoming, outgoing) = unit_params(spec, hidden, unit);
    let mut out = theta.clone();
    for i in incoming {
        out[i] *= alpha;
    }
    for o in outgoing {
        out[o] /= alpha;
    }
    Ok(out)
}

/// Tangent `d/d alpha T_alpha(theta)` at `alpha = 1`.
pub fn rescale_generator(spec: &NetSpec, theta: &ParamVector, hidden: usize, unit: usize) -> Result<ParamVector> {
    check_unit(spec, theta, hidden, unit)?;
    let (incoming, outgoing) = unit_params(spec, hidden, unit);
    let mut v = ParamVector::zeros(theta.len());
    for i in incoming {
        v[i] = theta[i];
    }
    for o in outgoing {
        v[o] = -theta[o];
    }
    Ok(v)
}
