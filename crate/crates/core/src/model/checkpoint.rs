//! Single-file parameter container.
//!
//! Layout: one version byte, a little-endian `u32` manifest length, the JSON
//! manifest `{"config": .., "tensors": [{"name","shape","offset"}]}` and the
//! parameters as little-endian `f32`. Offsets are in bytes from the start of
//! the payload.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::real::Real;

use super::params::ModelParams;
use super::{ModelConfig, ModelError, Result};

pub const CHECKPOINT_VERSION: u8 = 1;

#[derive(Serialize, Deserialize)]
struct Manifest {
    config: ModelConfig,
    tensors: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

pub fn write_checkpoint<F: Real, W: Write>(params: &ModelParams<F>, mut w: W) -> Result<()> {
    let manifest = Manifest {
        config: params.config.clone(),
        tensors: params
            .layout
            .entries
            .iter()
            .map(|e| ManifestEntry {
                name: e.name.clone(),
                shape: e.shape.clone(),
                offset: 4 * e.offset,
            })
            .collect(),
    };
    let text = serde_json::to_vec(&manifest).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    let mut buf = Vec::with_capacity(5 + text.len() + 4 * params.data.len());
    buf.push(CHECKPOINT_VERSION);
    buf.extend_from_slice(&(text.len() as u32).to_le_bytes());
    buf.extend_from_slice(&text);
    for &v in &params.data {
        buf.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint<F: Real, R: Read>(mut r: R) -> Result<ModelParams<F>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let bad = |m: &str| ModelError::Checkpoint(m.to_string());
    if bytes.len() < 5 {
        return Err(bad("truncated header"));
    }
    if bytes[0] != CHECKPOINT_VERSION {
        return Err(ModelError::Checkpoint(format!("unsupported version {}", bytes[0])));
    }
    let mlen = u32::from_le_bytes(bytes[1..5].try_into().expect("4 bytes")) as usize;
    let payload_start = 5 + mlen;
    if bytes.len() < payload_start {
        return Err(bad("truncated manifest"));
    }
    let manifest: Manifest =
        serde_json::from_slice(&bytes[5..payload_start]).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    let payload = &bytes[payload_start..];
    if payload.len() % 4 != 0 {
        return Err(bad("payload is not a whole number of f32 values"));
    }
    let data: Vec<F> = payload
        .chunks_exact(4)
        .map(|c| F::of(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
        .collect();
    let params = ModelParams::from_data(&manifest.config, data)?;
    if manifest.tensors.len() != params.layout.entries.len()
        || manifest
            .tensors
            .iter()
            .zip(&params.layout.entries)
            .any(|(m, e)| m.name != e.name || m.shape != e.shape || m.offset != 4 * e.offset)
    {
        return Err(bad("manifest does not match the configured layout"));
    }
    Ok(params)
}

pub fn save_checkpoint<F: Real>(params: &ModelParams<F>, path: impl AsRef<Path>) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_checkpoint(params, std::io::BufWriter::new(f))
}

pub fn load_checkpoint<F: Real>(path: impl AsRef<Path>) -> Result<ModelParams<F>> {
    read_checkpoint(std::fs::File::open(path)?)
}
