//! Model files.
//!
//! ```text
//! magic    4 bytes   "PHM1"
//! hlen     u32 LE    length of the JSON header in bytes
//! header   hlen      UTF-8 JSON: format version, crate version, config, tensor shapes
//! payload            f64 LE values of each tensor, in header order
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::linalg::Matrix;
use crate::prototypes::PrototypeBank;

use super::model::{ModelParams, TENSOR_NAMES};
use super::TrainConfig;

pub const MODEL_MAGIC: &[u8; 4] = b"PHM1";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    crate_version: String,
    d_in: usize,
    config: TrainConfig,
    tensors: Vec<TensorEntry>,
}

fn shapes(p: &ModelParams) -> [Vec<usize>; 6] {
    [
        vec![p.dim(), p.d_in()],
        vec![p.dim()],
        vec![p.bank.num_data(), p.dim()],
        vec![p.bank.num_top(), p.dim()],
        vec![p.bank.num_data()],
        vec![1],
    ]
}

pub fn model_to_bytes(params: &ModelParams, cfg: &TrainConfig) -> Vec<u8> {
    let header = Header {
        format_version: MODEL_VERSION,
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        d_in: params.d_in(),
        config: cfg.clone(),
        tensors: TENSOR_NAMES
            .iter()
            .zip(shapes(params))
            .map(|(n, shape)| TensorEntry {
                name: (*n).to_string(),
                shape,
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let payload: usize = params.tensors().iter().map(|t| t.len() * 8).sum();
    let mut out = Vec::with_capacity(8 + json.len() + payload);
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for t in params.tensors() {
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn fmt_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<(ModelParams, TrainConfig)> {
    if bytes.len() < 8 {
        return Err(fmt_err("model file shorter than its fixed header"));
    }
    if &bytes[..4] != MODEL_MAGIC {
        return Err(fmt_err("bad model magic"));
    }
    let hlen = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let rest = &bytes[8..];
    if hlen > rest.len() {
        return Err(fmt_err("model header length exceeds file size"));
    }
    let header_json: serde_json::Value =
        serde_json::from_slice(&rest[..hlen]).map_err(|e| fmt_err(format!("model header: {e}")))?;
    let found = header_json
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| fmt_err("model header lacks format_version"))?;
    if found != u64::from(MODEL_VERSION) {
        return Err(Error::UnsupportedVersion {
            expected: MODEL_VERSION,
            found: found.min(u64::from(u32::MAX)) as u32,
        });
    }
    let header: Header =
        serde_json::from_value(header_json).map_err(|e| fmt_err(format!("model header: {e}")))?;
    let cfg = header.config;
    cfg.validate()
        .map_err(|e| fmt_err(format!("model config: {e}")))?;

    let (dim, nd, nt) = (cfg.geometry.dim, cfg.num_data_protos(), cfg.num_top_protos);
    let expected: [Vec<usize>; 6] = [
        vec![dim, header.d_in],
        vec![dim],
        vec![nd, dim],
        vec![nt, dim],
        vec![nd],
        vec![1],
    ];
    if header.tensors.len() != TENSOR_NAMES.len() {
        return Err(fmt_err("unexpected tensor count"));
    }
    for ((entry, name), shape) in header.tensors.iter().zip(TENSOR_NAMES).zip(&expected) {
        if entry.name != name || &entry.shape != shape {
            return Err(fmt_err(format!(
                "tensor {} with shape {:?} does not match expected {name} {:?}",
                entry.name, entry.shape, shape
            )));
        }
    }
    let counts: Vec<usize> = expected.iter().map(|s| s.iter().product()).collect();
    let total = counts
        .iter()
        .try_fold(0usize, |acc, n| acc.checked_add(*n))
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| fmt_err("tensor sizes overflow"))?;
    let payload = &rest[hlen..];
    if payload.len() != total {
        return Err(fmt_err(format!(
            "payload is {} bytes, header declares {total}",
            payload.len()
        )));
    }

    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut take = |n: usize| -> Vec<f64> { values.by_ref().take(n).collect() };
    let w = take(counts[0]);
    let b = take(counts[1]);
    let td = take(counts[2]);
    let tt = take(counts[3]);
    let cw = take(counts[4]);
    let cb = take(counts[5])[0];
    let bank = PrototypeBank::from_parts(
        Matrix::from_vec(nd, dim, td),
        Matrix::from_vec(nt, dim, tt),
        cfg.num_bonafide_protos,
        cfg.num_spoof_protos,
        cfg.geometry,
    )?;
    let params = ModelParams {
        projector_weight: Matrix::from_vec(dim, header.d_in, w),
        projector_bias: b,
        bank,
        cls_weight: cw,
        cls_bias: cb,
    };
    Ok((params, cfg))
}

pub fn save_model(path: &Path, params: &ModelParams, cfg: &TrainConfig) -> Result<()> {
    write_atomic(path, &model_to_bytes(params, cfg))
}

pub fn load_model(path: &Path) -> Result<(ModelParams, TrainConfig)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_bytes(&bytes)
}
