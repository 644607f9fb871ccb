//! Embedding container: raw little-endian f32 matrix plus JSON manifest.
//!
//! The pair `<name>.f32` / `<name>.manifest.json` is the interchange format
//! for per-instance feature vectors. The manifest binds row order to string
//! keys (`ann:<id>` for annotations, `det:<id>` for detections).

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DataError;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    dim: usize,
    rows: usize,
    keys: Vec<String>,
}

/// Dense row-major f32 matrix with one string key per row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    keys: Vec<String>,
    data: Vec<f32>,
    index: HashMap<String, usize>,
}

impl EmbeddingMatrix {
    pub fn new(dim: usize, rows: Vec<(String, Vec<f32>)>) -> Result<Self, DataError> {
        if dim == 0 {
            return Err(DataError::Shape("dim must be positive".into()));
        }
        let mut keys = Vec::with_capacity(rows.len());
        let mut data = Vec::with_capacity(rows.len() * dim);
        let mut index = HashMap::with_capacity(rows.len());
        for (key, vector) in rows {
            if vector.len() != dim {
                return Err(DataError::Shape(format!(
                    "row '{key}' has {} values, expected {dim}",
                    vector.len()
                )));
            }
            if vector.iter().any(|v| !v.is_finite()) {
                return Err(DataError::Shape(format!("row '{key}' has non-finite values")));
            }
            if index.insert(key.clone(), keys.len()).is_some() {
                return Err(DataError::Key(key));
            }
            keys.push(key);
            data.extend_from_slice(&vector);
        }
        Ok(Self {
            dim,
            keys,
            data,
            index,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, key: &str) -> Option<&[f32]> {
        self.index.get(key).map(|&i| self.row(i))
    }
}

/// Loads the raw matrix at `data_path` described by `manifest_path`.
pub fn load_embeddings(data_path: &Path, manifest_path: &Path) -> Result<EmbeddingMatrix, DataError> {
    let manifest_bytes =
        std::fs::read(manifest_path).map_err(|e| DataError::io(manifest_path, e))?;
    let manifest: Manifest =
        serde_json::from_slice(&manifest_bytes).map_err(|e| DataError::Parse {
            path: manifest_path.display().to_string(),
            message: e.to_string(),
        })?;
    if manifest.keys.len() != manifest.rows {
        return Err(DataError::Shape(format!(
            "manifest lists {} keys but declares {} rows",
            manifest.keys.len(),
            manifest.rows
        )));
    }
    if manifest.dim == 0 {
        return Err(DataError::Shape("manifest dim must be positive".into()));
    }

    let bytes = std::fs::read(data_path).map_err(|e| DataError::io(data_path, e))?;
    let expected = manifest.rows * manifest.dim * 4;
    if bytes.len() != expected {
        return Err(DataError::Shape(format!(
            "{} holds {} bytes, expected {} ({} rows x dim {})",
            data_path.display(),
            bytes.len(),
            expected,
            manifest.rows,
            manifest.dim
        )));
    }

    let mut data = Vec::with_capacity(manifest.rows * manifest.dim);
    for chunk in bytes.chunks_exact(4) {
        data.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
    }

    let mut index = HashMap::with_capacity(manifest.rows);
    for (i, key) in manifest.keys.iter().enumerate() {
        if index.insert(key.clone(), i).is_some() {
            return Err(DataError::Key(key.clone()));
        }
    }
    Ok(EmbeddingMatrix {
        dim: manifest.dim,
        keys: manifest.keys,
        data,
        index,
    })
}

/// Writes the `<data>.f32` / `<manifest>.json` pair; [`load_embeddings`]
/// inverts it bit-exactly.
pub fn save_embeddings(
    emb: &EmbeddingMatrix,
    data_path: &Path,
    manifest_path: &Path,
) -> Result<(), DataError> {
    let manifest = Manifest {
        dim: emb.dim,
        rows: emb.keys.len(),
        keys: emb.keys.clone(),
    };
    let manifest_bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    std::fs::write(manifest_path, manifest_bytes).map_err(|e| DataError::io(manifest_path, e))?;

    let mut bytes = Vec::with_capacity(emb.data.len() * 4);
    for v in &emb.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(data_path, bytes).map_err(|e| DataError::io(data_path, e))
}
