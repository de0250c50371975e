//! JSON manifest plus one raw little-endian `f32` file per tensor.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::graph::{BottleneckSpec, ModelGraph, NodeSpec, Preprocess};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub shape: Vec<usize>,
    pub file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dtype: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub preprocess: Preprocess,
    pub num_classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_shape: Option<[usize; 3]>,
    pub stem: Vec<NodeSpec>,
    pub blocks: Vec<BottleneckSpec>,
    pub head: Vec<NodeSpec>,
    pub tensors: BTreeMap<String, TensorEntry>,
}

fn tensor_file_name(name: &str) -> String {
    let safe: String = name
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '_' || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("tensors/{safe}.bin")
}

pub fn encode_f32_le(data: &[f32]) -> Vec<u8> {
    data.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn decode_f32_le(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

fn read_tensor(dir: &Path, name: &str, entry: &TensorEntry) -> Result<Tensor> {
    if let Some(dtype) = entry.dtype.as_deref() {
        if dtype != "f32" {
            return Err(Error::UnsupportedDtype {
                name: name.to_string(),
                dtype: dtype.to_string(),
            });
        }
    }
    let path = dir.join(&entry.file);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let numel: usize = entry.shape.iter().product();
    if bytes.len() != numel * 4 {
        return Err(Error::TensorSize {
            name: name.to_string(),
            expected: numel * 4,
            actual: bytes.len(),
        });
    }
    Tensor::new(entry.shape.clone(), decode_f32_le(&bytes))
        .map_err(|e| e.in_layer(format!("tensor {name}")))
}

/// Loads and validates a model from its manifest.
pub fn load_model(manifest_path: impl AsRef<Path>) -> Result<ModelGraph> {
    let manifest_path = manifest_path.as_ref();
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    from_manifest(manifest, dir)
}

/// Builds a graph from a parsed manifest whose tensor files live under `dir`.
pub fn from_manifest(manifest: Manifest, dir: &Path) -> Result<ModelGraph> {
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::UnsupportedVersion(manifest.version));
    }
    let tensors = manifest
        .tensors
        .iter()
        .map(|(name, entry)| Ok((name.clone(), read_tensor(dir, name, entry)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let graph = ModelGraph {
        preprocess: manifest.preprocess,
        input_shape: manifest.input_shape,
        stem: manifest.stem,
        blocks: manifest.blocks,
        head: manifest.head,
        num_classes: manifest.num_classes,
        tensors,
    };
    graph.validate()?;
    Ok(graph)
}

pub fn to_manifest(graph: &ModelGraph) -> Manifest {
    Manifest {
        version: MANIFEST_VERSION,
        preprocess: graph.preprocess.clone(),
        num_classes: graph.num_classes,
        input_shape: graph.input_shape,
        stem: graph.stem.clone(),
        blocks: graph.blocks.clone(),
        head: graph.head.clone(),
        tensors: graph
            .tensors
            .iter()
            .map(|(name, t)| {
                (
                    name.clone(),
                    TensorEntry {
                        shape: t.shape().to_vec(),
                        file: tensor_file_name(name),
                        dtype: None,
                    },
                )
            })
            .collect(),
    }
}

/// Writes `manifest.json` and `tensors/*.bin` under `dir`; returns the manifest path.
pub fn save_model(graph: &ModelGraph, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let manifest = to_manifest(graph);
    let tensor_dir = dir.join("tensors");
    fs::create_dir_all(&tensor_dir).map_err(|e| Error::io(&tensor_dir, e))?;
    for (name, entry) in &manifest.tensors {
        let path = dir.join(&entry.file);
        fs::write(&path, encode_f32_le(graph.tensors[name].data()))
            .map_err(|e| Error::io(&path, e))?;
    }
    let path = dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
