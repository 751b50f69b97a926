//! Single-file checkpoints.
//!
//! ```text
//! SEQCRITIC-CKPT-1\n
//! {"meta": {...}, "tensors": [{"name", "shape": [rows, cols], "dtype", "offset", "nbytes"}]}\n
//! <raw little-endian tensor data; offsets are relative to the first byte after the manifest>
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Matrix, ParameterSet, Scalar};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &str = "SEQCRITIC-CKPT-1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub dtype: String,
    pub offset: usize,
    pub nbytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<TensorEntry>,
}

pub fn encode_checkpoint<F: Scalar>(
    params: &ParameterSet<F>,
    meta: &BTreeMap<String, String>,
) -> Vec<u8> {
    let mut blob = Vec::new();
    let mut tensors = Vec::new();
    for (_, name, t) in params.weights.iter() {
        let offset = blob.len();
        for &x in &t.data {
            x.write_le(&mut blob);
        }
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: [t.rows, t.cols],
            dtype: F::DTYPE.to_string(),
            offset,
            nbytes: blob.len() - offset,
        });
    }
    let manifest = Manifest {
        meta: meta.clone(),
        tensors,
    };
    let mut out = Vec::with_capacity(blob.len() + 256);
    out.extend_from_slice(CHECKPOINT_MAGIC.as_bytes());
    out.push(b'\n');
    out.extend_from_slice(
        serde_json::to_string(&manifest)
            .expect("manifest")
            .as_bytes(),
    );
    out.push(b'\n');
    out.extend_from_slice(&blob);
    out
}

fn read_tensor<F: Scalar, G: Scalar>(bytes: &[u8]) -> Vec<F> {
    bytes
        .chunks_exact(G::BYTES)
        .map(|c| F::of(G::read_le(c).f64()))
        .collect()
}

/// Decodes a checkpoint, converting stored tensors to `F`.
pub fn decode_checkpoint<F: Scalar>(
    bytes: &[u8],
    path: &Path,
) -> Result<(ParameterSet<F>, BTreeMap<String, String>)> {
    let parse = |offset: usize, message: &str| Error::Parse {
        path: path.to_path_buf(),
        offset,
        message: message.to_string(),
    };
    let magic_end = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| parse(0, "missing header line"))?;
    if &bytes[..magic_end] != CHECKPOINT_MAGIC.as_bytes() {
        return Err(parse(0, "bad header, expected SEQCRITIC-CKPT-1"));
    }
    let man_start = magic_end + 1;
    let man_end = man_start
        + bytes[man_start..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| parse(man_start, "missing manifest line"))?;
    let manifest: Manifest = serde_json::from_slice(&bytes[man_start..man_end])
        .map_err(|e| parse(man_start + e.column().saturating_sub(1), &e.to_string()))?;
    let blob = &bytes[man_end + 1..];
    let mut params = ParameterSet::new();
    for t in &manifest.tensors {
        let end = t.offset + t.nbytes;
        if end > blob.len() {
            return Err(parse(
                man_end + 1 + t.offset,
                &format!("tensor `{}` truncated", t.name),
            ));
        }
        let raw = &blob[t.offset..end];
        let data: Vec<F> = match t.dtype.as_str() {
            "f32" => read_tensor::<F, f32>(raw),
            "f64" => read_tensor::<F, f64>(raw),
            other => return Err(parse(man_start, &format!("unknown dtype `{other}`"))),
        };
        if data.len() != t.shape[0] * t.shape[1] {
            return Err(parse(
                man_start,
                &format!("tensor `{}` has wrong size", t.name),
            ));
        }
        params.add(&t.name, Matrix::from_vec(t.shape[0], t.shape[1], data))?;
    }
    Ok((params, manifest.meta))
}

pub fn save_checkpoint<F: Scalar>(
    path: &Path,
    params: &ParameterSet<F>,
    meta: &BTreeMap<String, String>,
) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    std::fs::write(path, encode_checkpoint(params, meta)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<F: Scalar>(
    path: &Path,
) -> Result<(ParameterSet<F>, BTreeMap<String, String>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}
