//! Parameter snapshot file: one line of JSON metadata (spec, length, and
//! caller-supplied extras) followed by the raw little-endian f64 vector.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelError, ModelParams, ModelSpec};

#[derive(Debug, Serialize, Deserialize)]
struct SnapshotHeader {
    spec: ModelSpec,
    theta_len: usize,
    #[serde(default)]
    meta: serde_json::Value,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> ModelError + '_ {
    move |source| ModelError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Write a parameter snapshot. `meta` is stored verbatim in the header
/// (callers embed the config digest and master seed there).
pub fn save_params(
    params: &ModelParams,
    path: &Path,
    meta: &serde_json::Value,
) -> Result<(), ModelError> {
    let header = SnapshotHeader {
        spec: params.spec.clone(),
        theta_len: params.theta.len(),
        meta: meta.clone(),
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    let json = serde_json::to_string(&header)
        .map_err(|e| ModelError::Format(format!("header encode: {e}")))?;
    w.write_all(json.as_bytes()).map_err(io_err(path))?;
    w.write_all(b"\n").map_err(io_err(path))?;
    for v in &params.theta {
        w.write_all(&v.to_le_bytes()).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Read back a snapshot written by [`save_params`].
pub fn load_params(path: &Path) -> Result<(ModelParams, serde_json::Value), ModelError> {
    let mut r = BufReader::new(File::open(path).map_err(io_err(path))?);
    let mut line = String::new();
    r.read_line(&mut line).map_err(io_err(path))?;
    let header: SnapshotHeader = serde_json::from_str(line.trim_end())
        .map_err(|e| ModelError::Format(format!("header decode: {e}")))?;
    let mut bytes = vec![0u8; header.theta_len * 8];
    r.read_exact(&mut bytes)
        .map_err(|_| ModelError::Format("snapshot truncated".into()))?;
    let theta: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let params = ModelParams::new(header.spec, theta)?;
    Ok((params, header.meta))
}
