//! Binary container: one line of UTF-8 JSON, a newline, then little-endian f64 values.
//!
//! Network checkpoints use the header
//! `{"version":1,"n_params":N,"widths":[...],"activation":"relu","dtype":"f64"}`
//! followed by exactly `N` values. Values round-trip bit-exactly.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensornet::{Activation, NetSpec, ParamVector};

pub const VERSION: u32 = 1;

pub fn write_container<W: Write, H: Serialize>(mut w: W, header: &H, values: &[f64]) -> Result<()> {
    let line = serde_json::to_string(header)?;
    w.write_all(line.as_bytes())?;
    w.write_all(b"\n")?;
    let mut buf = Vec::with_capacity(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn read_container<R: Read, H: DeserializeOwned>(r: R) -> Result<(H, Vec<f64>)> {
    let mut r = BufReader::new(r);
    let mut line = Vec::new();
    r.read_until(b'\n', &mut line)?;
    if line.last() != Some(&b'\n') {
        return Err(Error::Container("missing newline after JSON header".into()));
    }
    line.pop();
    let header: H = serde_json::from_slice(&line)?;
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() % 8 != 0 {
        return Err(Error::Container(format!(
            "payload of {} bytes is not a whole number of f64 values",
            body.len()
        )));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, values))
}

/// Field order matters: it fixes the serialized header byte for byte.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub version: u32,
    pub n_params: usize,
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub dtype: String,
}

impl CheckpointHeader {
    pub fn for_spec(spec: &NetSpec) -> Self {
        CheckpointHeader {
            version: VERSION,
            n_params: spec.param_count(),
            widths: spec.widths().to_vec(),
            activation: spec.activation(),
            dtype: "f64".into(),
        }
    }
}

pub fn encode_checkpoint<W: Write>(w: W, spec: &NetSpec, theta: &ParamVector) -> Result<()> {
    if theta.len() != spec.param_count() {
        return Err(Error::Shape(format!(
            "checkpoint of {} values for a network with {} parameters",
            theta.len(),
            spec.param_count()
        )));
    }
    write_container(w, &CheckpointHeader::for_spec(spec), theta)
}

/// Decodes a checkpoint. The returned spec has `init_seed` 0; the header does not carry it.
pub fn decode_checkpoint<R: Read>(r: R) -> Result<(NetSpec, ParamVector)> {
    let (h, values): (CheckpointHeader, Vec<f64>) = read_container(r)?;
    if h.version != VERSION {
        return Err(Error::Container(format!(
            "unsupported checkpoint version {}",
            h.version
        )));
    }
    if h.dtype != "f64" {
        return Err(Error::Container(format!("unsupported dtype `{}`", h.dtype)));
    }
    let spec = NetSpec::new(h.widths, h.activation, 0)?;
    if spec.param_count() != h.n_params || values.len() != h.n_params {
        return Err(Error::Container(format!(
            "header declares {} parameters, widths imply {}, payload holds {}",
            h.n_params,
            spec.param_count(),
            values.len()
        )));
    }
    Ok((spec, ParamVector::new(values)))
}

pub fn save_checkpoint(path: &Path, spec: &NetSpec, theta: &ParamVector) -> Result<()> {
    let mut buf = Vec::new();
    encode_checkpoint(&mut buf, spec, theta)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(NetSpec, ParamVector)> {
    decode_checkpoint(fs::File::open(path)?)
}
