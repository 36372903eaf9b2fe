//! Persisted model format.
//!
//! ```text
//! offset  size  content
//! 0       4     magic "HMGC"
//! 4       4     format version, u32 little-endian
//! 8       4     metadata length M, u32 little-endian
//! 12      M     metadata, UTF-8 TOML (see `Metadata`)
//! 12+M    ...   tensor blobs in directory order, f32 little-endian
//! ```
//!
//! The metadata `tensors` array is the directory: one `{ name, shape }`
//! entry per blob, trainable parameters first, then for each batch-norm
//! layer `<layer>.running_mean` and `<layer>.running_var`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::effnet::ScaledSpec;
use crate::error::{Error, Result};
use crate::model::HmgcModel;
use crate::taxonomy::TaxonomyTree;

pub const MAGIC: &[u8; 4] = b"HMGC";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub taxonomy_digest: String,
    pub level_sizes: [usize; 3],
    pub hidden: [usize; 3],
    /// Full taxonomy document, so a model can be used without its config.
    pub taxonomy: String,
    pub spec: ScaledSpec,
    pub tensors: Vec<TensorEntry>,
}

const RUNNING_MEAN: &str = ".running_mean";
const RUNNING_VAR: &str = ".running_var";

pub fn model_bytes(model: &HmgcModel<f32>, tree: &TaxonomyTree) -> Result<Vec<u8>> {
    if tree.level_sizes() != model.level_sizes {
        return Err(Error::ModelFormat(format!(
            "model level sizes {:?} do not match taxonomy {:?}",
            model.level_sizes,
            tree.level_sizes()
        )));
    }
    let mut tensors = Vec::new();
    let mut blobs: Vec<&[f32]> = Vec::new();
    for (name, t) in model.store.iter() {
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
        });
        blobs.push(t.data());
    }
    for (name, stats) in model.store.buffers() {
        for (suffix, v) in [(RUNNING_MEAN, &stats.mean), (RUNNING_VAR, &stats.var)] {
            tensors.push(TensorEntry {
                name: format!("{name}{suffix}"),
                shape: vec![v.len()],
            });
            blobs.push(v);
        }
    }
    let meta = Metadata {
        taxonomy_digest: tree.digest(),
        level_sizes: model.level_sizes,
        hidden: model.hidden_widths(),
        taxonomy: tree.to_document(),
        spec: model.spec.clone(),
        tensors,
    };
    let meta_text = toml::to_string(&meta).map_err(|e| Error::ModelFormat(e.to_string()))?;
    let mut out = Vec::with_capacity(12 + meta_text.len() + 4 * blobs.iter().map(|b| b.len()).sum::<usize>());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(meta_text.len() as u32).to_le_bytes());
    out.extend_from_slice(meta_text.as_bytes());
    for b in blobs {
        for v in b {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_model(path: &Path, model: &HmgcModel<f32>, tree: &TaxonomyTree) -> Result<()> {
    fs::write(path, model_bytes(model, tree)?).map_err(|e| Error::io(path, e))
}

fn read_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::ModelFormat(format!("file too short for {what}")))
}

/// Parses a model file. With `expected` set, the stored taxonomy digest must
/// match it; otherwise the embedded taxonomy is used. Returns the model and
/// the taxonomy it was trained on.
pub fn parse_model(bytes: &[u8], expected: Option<&TaxonomyTree>) -> Result<(HmgcModel<f32>, TaxonomyTree)> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    let version = read_u32(bytes, 4, "version")?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch(version));
    }
    let meta_len = read_u32(bytes, 8, "metadata length")? as usize;
    let meta_bytes = bytes
        .get(12..12 + meta_len)
        .ok_or_else(|| Error::ModelFormat("file truncated in metadata".into()))?;
    let meta_text = std::str::from_utf8(meta_bytes).map_err(|e| Error::ModelFormat(format!("metadata: {e}")))?;
    let meta: Metadata = toml::from_str(meta_text).map_err(|e| Error::ModelFormat(format!("metadata: {e}")))?;

    let tree = match expected {
        Some(t) => {
            if t.digest() != meta.taxonomy_digest {
                return Err(Error::DigestMismatch {
                    expected: meta.taxonomy_digest,
                    actual: t.digest(),
                });
            }
            t.clone()
        }
        None => {
            let t = TaxonomyTree::load(&meta.taxonomy)?;
            if t.digest() != meta.taxonomy_digest {
                return Err(Error::DigestMismatch {
                    expected: meta.taxonomy_digest,
                    actual: t.digest(),
                });
            }
            t
        }
    };
    if tree.level_sizes() != meta.level_sizes {
        return Err(Error::ModelFormat("level sizes disagree with the taxonomy".into()));
    }

    // Rebuild the structure, then overwrite every tensor from the blobs.
    let mut model = HmgcModel::new(meta.spec.clone(), meta.level_sizes, Some(meta.hidden), 0)?;
    let expected_count = model.store.len() + 2 * model.store.buffers().count();
    if meta.tensors.len() != expected_count {
        return Err(Error::ModelFormat(format!(
            "directory lists {} tensors, spec implies {expected_count}",
            meta.tensors.len()
        )));
    }
    let mut offset = 12 + meta_len;
    for entry in &meta.tensors {
        let n: usize = entry.shape.iter().product();
        let blob = bytes
            .get(offset..offset + 4 * n)
            .ok_or_else(|| Error::Truncated(entry.name.clone()))?;
        offset += 4 * n;
        let values: Vec<f32> = blob.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        let target: &mut Vec<f32> = if let Some(layer) = entry.name.strip_suffix(RUNNING_MEAN) {
            &mut model.store.buffer_by_name_mut(layer).ok_or_else(|| unknown(&entry.name))?.mean
        } else if let Some(layer) = entry.name.strip_suffix(RUNNING_VAR) {
            &mut model.store.buffer_by_name_mut(layer).ok_or_else(|| unknown(&entry.name))?.var
        } else {
            let t = model.store.by_name_mut(&entry.name).ok_or_else(|| unknown(&entry.name))?;
            if t.shape() != entry.shape.as_slice() {
                return Err(Error::ModelFormat(format!(
                    "tensor '{}' has shape {:?}, spec implies {:?}",
                    entry.name,
                    entry.shape,
                    t.shape()
                )));
            }
            t.data_mut().copy_from_slice(&values);
            continue;
        };
        if target.len() != values.len() {
            return Err(Error::ModelFormat(format!("buffer '{}' has {} values, expected {}", entry.name, values.len(), target.len())));
        }
        target.copy_from_slice(&values);
    }
    if offset != bytes.len() {
        return Err(Error::ModelFormat(format!("{} trailing bytes", bytes.len() - offset)));
    }
    Ok((model, tree))
}

fn unknown(name: &str) -> Error {
    Error::ModelFormat(format!("tensor '{name}' is not part of the model"))
}

pub fn load_model(path: &Path, expected: Option<&TaxonomyTree>) -> Result<(HmgcModel<f32>, TaxonomyTree)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_model(&bytes, expected)
}
