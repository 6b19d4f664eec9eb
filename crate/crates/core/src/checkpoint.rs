//! Model checkpoints: a text manifest (`name d0,d1,...` per line) next to a
//! binary file holding every tensor as little-endian f64, concatenated in
//! manifest order.

use std::fs;
use std::path::Path;

use pst_tensor::Tensor;

use crate::error::{Error, Result};
use crate::params::ParamSet;

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const WEIGHTS_FILE: &str = "weights.bin";

pub fn manifest_text(params: &ParamSet) -> String {
    let mut out = String::new();
    for (name, value) in params.iter() {
        let dims: Vec<String> = value.shape().iter().map(usize::to_string).collect();
        out.push_str(&format!("{name} {}\n", dims.join(",")));
    }
    out
}

pub fn weights_bytes(params: &ParamSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(params.n_scalars() * 8);
    for v in params.values() {
        for x in v.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

/// Writes `manifest.txt` and `weights.bin` into `dir`, creating it if needed.
pub fn save(params: &ParamSet, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = dir.join(MANIFEST_FILE);
    fs::write(&manifest, manifest_text(params)).map_err(|e| Error::io(&manifest, e))?;
    let weights = dir.join(WEIGHTS_FILE);
    fs::write(&weights, weights_bytes(params)).map_err(|e| Error::io(&weights, e))
}

pub fn load(dir: &Path) -> Result<ParamSet> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let weights_path = dir.join(WEIGHTS_FILE);
    let manifest = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let bytes = fs::read(&weights_path).map_err(|e| Error::io(&weights_path, e))?;
    let bad = |line: usize, msg: String| Error::Format {
        path: manifest_path.clone(),
        msg: format!("line {line}: {msg}"),
    };
    let mut entries = Vec::new();
    for (i, line) in manifest.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (name, dims) = line
            .rsplit_once(' ')
            .ok_or_else(|| bad(i + 1, format!("expected `name dims`, got {line:?}")))?;
        let shape = dims
            .split(',')
            .map(|d| d.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| bad(i + 1, format!("bad dimension list {dims:?}: {e}")))?;
        entries.push((name.to_string(), shape));
    }
    let total: usize = entries.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
    if bytes.len() != total * 8 {
        return Err(Error::Format {
            path: weights_path.clone(),
            msg: format!("{} bytes, manifest needs {}", bytes.len(), total * 8),
        });
    }
    let mut params = ParamSet::new();
    let mut values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    for (name, shape) in entries {
        let n = shape.iter().product();
        let data: Vec<f64> = values.by_ref().take(n).collect();
        params.add(name, Tensor::new(shape, data)?)?;
    }
    if !params.all_finite() {
        return Err(Error::NonFinite("checkpoint weights"));
    }
    Ok(params)
}
