//! Binary checkpoints: one JSON manifest line, a newline, then every
//! parameter as little-endian `f32` in manifest order.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EncoderError;
use crate::tensor::{Matrix, ParamStore, Real};

pub const CHECKPOINT_FORMAT: &str = "labelattn-ckpt-1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    meta: serde_json::Value,
    params: Vec<CheckpointEntry>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub entries: Vec<CheckpointEntry>,
    pub values: Vec<Vec<f32>>,
}

impl Checkpoint {
    /// Copies every stored parameter whose name passes `filter` into
    /// `store`. Missing parameters and shape disagreements are errors.
    pub fn load_into<T: Real>(
        &self,
        store: &mut ParamStore<T>,
        filter: impl Fn(&str) -> bool,
    ) -> Result<usize, EncoderError> {
        let mut loaded = 0;
        for (entry, values) in self.entries.iter().zip(&self.values) {
            if !filter(&entry.name) {
                continue;
            }
            let id = store.find(&entry.name).ok_or_else(|| EncoderError::Mismatch {
                what: entry.name.clone(),
                expected: "no such parameter".into(),
                found: format!("{}x{}", entry.rows, entry.cols),
            })?;
            let param = store.get_mut(id);
            if param.value.shape() != (entry.rows, entry.cols) {
                return Err(EncoderError::Mismatch {
                    what: entry.name.clone(),
                    expected: format!("{}x{}", param.value.rows(), param.value.cols()),
                    found: format!("{}x{}", entry.rows, entry.cols),
                });
            }
            param.value = Matrix::from_vec(
                entry.rows,
                entry.cols,
                values.iter().map(|&v| T::of(v as f64)).collect(),
            )?;
            loaded += 1;
        }
        for (_, p) in store.iter() {
            if filter(&p.name) && !self.entries.iter().any(|e| e.name == p.name) {
                return Err(EncoderError::Mismatch {
                    what: p.name.clone(),
                    expected: format!("{}x{}", p.value.rows(), p.value.cols()),
                    found: "missing".into(),
                });
            }
        }
        Ok(loaded)
    }
}

/// Writes `store` atomically (temp file, then rename).
pub fn write_checkpoint<T: Real>(
    path: &Path,
    meta: &serde_json::Value,
    store: &ParamStore<T>,
) -> Result<(), EncoderError> {
    let manifest = Manifest {
        format: CHECKPOINT_FORMAT.into(),
        meta: meta.clone(),
        params: store
            .iter()
            .map(|(_, p)| CheckpointEntry {
                name: p.name.clone(),
                rows: p.value.rows(),
                cols: p.value.cols(),
            })
            .collect(),
    };
    let header = serde_json::to_string(&manifest).map_err(|e| EncoderError::Format(e.to_string()))?;
    let mut buf = Vec::with_capacity(header.len() + 1 + 4 * store.num_scalars());
    buf.extend_from_slice(header.as_bytes());
    buf.push(b'\n');
    for (_, p) in store.iter() {
        for &v in p.value.as_slice() {
            buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&buf)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, EncoderError> {
    let mut reader = BufReader::new(fs::File::open(path)?);
    let mut header = String::new();
    reader.read_line(&mut header)?;
    let manifest: Manifest =
        serde_json::from_str(header.trim_end()).map_err(|e| EncoderError::Format(e.to_string()))?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(EncoderError::Format(format!(
            "unknown format {:?}",
            manifest.format
        )));
    }
    let mut blob = Vec::new();
    reader.read_to_end(&mut blob)?;
    let expected: usize = manifest.params.iter().map(|e| e.rows * e.cols).sum();
    if blob.len() != expected * 4 {
        return Err(EncoderError::Format(format!(
            "expected {} bytes of parameters, found {}",
            expected * 4,
            blob.len()
        )));
    }
    let mut values = Vec::with_capacity(manifest.params.len());
    let mut offset = 0;
    for e in &manifest.params {
        let n = e.rows * e.cols;
        values.push(
            blob[offset..offset + 4 * n]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect(),
        );
        offset += 4 * n;
    }
    Ok(Checkpoint {
        meta: manifest.meta,
        entries: manifest.params,
        values,
    })
}
