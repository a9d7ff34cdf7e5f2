//! Small numeric helpers shared by the aligner and filter networks, plus the
//! on-disk network format.
//!
//! Network file layout: `u64` little-endian header length, a UTF-8 JSON
//! header, then every parameter tensor as little-endian `f32` in the order
//! listed by the header's `tensors` field.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Binary cross entropy of `sigmoid(logit)` against a (possibly soft) label.
pub fn bce_with_logits(logit: f64, label: f64) -> f64 {
    softplus(logit) - label * logit
}

pub fn prelu(z: f64, slope: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        slope * z
    }
}

/// Glorot-uniform matrix, `rows × cols` row-major.
pub fn glorot(rng: &mut impl Rng, rows: usize, cols: usize) -> Vec<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    (0..rows * cols).map(|_| rng.gen_range(-limit..limit)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetHeader<C> {
    pub kind: String,
    pub config: C,
    pub tensors: Vec<TensorInfo>,
}

pub fn write_net<C: Serialize>(path: &Path, kind: &str, config: &C, tensors: &[(&str, &[f64])]) -> Result<()> {
    let header = NetHeader {
        kind: kind.to_string(),
        config,
        tensors: tensors
            .iter()
            .map(|(name, t)| TensorInfo {
                name: name.to_string(),
                len: t.len(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(8 + json.len() + 4 * tensors.iter().map(|t| t.1.len()).sum::<usize>());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for (_, t) in tensors {
        for &v in t.iter() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Named tensors in header order.
pub type Tensors = Vec<(String, Vec<f64>)>;

/// Read a network file; returns the config and its tensors.
pub fn read_net<C: for<'de> Deserialize<'de>>(path: &Path, kind: &str) -> Result<(C, Tensors)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |d: &str| Error::format("network file", d.to_string());
    let hlen = u64::from_le_bytes(bytes.get(..8).ok_or_else(|| bad("truncated header"))?.try_into().expect("8 bytes")) as usize;
    let json = bytes.get(8..8 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: NetHeader<C> = serde_json::from_slice(json)?;
    if header.kind != kind {
        return Err(bad(&format!("expected a {kind} network, found {}", header.kind)));
    }
    let mut at = 8 + hlen;
    let mut out = Vec::with_capacity(header.tensors.len());
    for t in header.tensors {
        let raw = bytes.get(at..at + 4 * t.len).ok_or_else(|| bad("truncated parameters"))?;
        let vals = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        out.push((t.name, vals));
        at += 4 * t.len;
    }
    if at != bytes.len() {
        return Err(bad("trailing bytes after parameters"));
    }
    Ok((header.config, out))
}

/// Pull the named tensor out of `tensors`, checking its length.
pub(crate) fn take_tensor(tensors: &mut Vec<(String, Vec<f64>)>, name: &str, len: usize) -> Result<Vec<f64>> {
    let pos = tensors
        .iter()
        .position(|(n, _)| n == name)
        .ok_or_else(|| Error::format("network file", format!("missing tensor {name}")))?;
    let (_, t) = tensors.remove(pos);
    if t.len() != len {
        return Err(Error::DimMismatch {
            expected: len,
            found: t.len(),
        });
    }
    Ok(t)
}
