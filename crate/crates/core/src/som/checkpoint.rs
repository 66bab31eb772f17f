//! Checkpoint directory: `manifest.json` plus one little-endian blob per
//! tensor.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{layout, SomConfig, SomError, SomModel};
use crate::numkernel::{Array, DType, ParamStore};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub dtype: String,
    pub config: SomConfig,
    pub tensors: Vec<TensorEntry>,
    /// Free-form run information (training config, vocabulary path, epoch).
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

/// A loaded checkpoint.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: SomModel,
    pub metadata: BTreeMap<String, serde_json::Value>,
}

fn dtype_name(d: DType) -> &'static str {
    match d {
        DType::F32 => "f32",
        DType::F64 => "f64",
    }
}

fn parse_dtype(s: &str) -> Result<DType, SomError> {
    match s {
        "f32" => Ok(DType::F32),
        "f64" => Ok(DType::F64),
        other => Err(SomError::Checkpoint(format!("dtype: unsupported {other:?}"))),
    }
}

/// Writes `model` into directory `dir` (created if needed). Output bytes
/// depend only on the parameters, config, and metadata.
pub fn save_checkpoint(
    model: &SomModel,
    dir: &Path,
    dtype: DType,
    metadata: BTreeMap<String, serde_json::Value>,
) -> Result<(), SomError> {
    fs::create_dir_all(dir)?;
    let mut tensors = Vec::new();
    for id in model.params.ids() {
        let name = model.params.name(id).to_string();
        let array = model.params.get(id).to_dtype(dtype);
        let file = format!("{name}.bin");
        fs::write(dir.join(&file), array.to_le_bytes())?;
        tensors.push(TensorEntry { name, shape: array.shape().to_vec(), file });
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        dtype: dtype_name(dtype).into(),
        config: model.config.clone(),
        tensors,
        metadata,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint, SomError> {
    let text = fs::read_to_string(dir.join("manifest.json"))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(SomError::Checkpoint(format!(
            "format_version: {} is not supported (expected {FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    let dtype = parse_dtype(&manifest.dtype)?;
    manifest.config.validate()?;
    let expected = layout(&manifest.config);
    let by_name: BTreeMap<&str, &TensorEntry> = manifest.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
    if let Some(extra) = manifest.tensors.iter().find(|t| !expected.iter().any(|(n, _, _)| n == &t.name)) {
        return Err(SomError::Tensor { tensor: extra.name.clone(), message: "not part of this model".into() });
    }
    let mut params = ParamStore::new();
    for (name, shape, mask) in expected {
        let entry = by_name
            .get(name.as_str())
            .ok_or_else(|| SomError::Tensor { tensor: name.clone(), message: "missing from manifest".into() })?;
        if entry.shape != shape {
            return Err(SomError::Tensor {
                tensor: name,
                message: format!("shape {:?} in manifest, model needs {:?}", entry.shape, shape),
            });
        }
        let bytes = fs::read(dir.join(&entry.file))
            .map_err(|e| SomError::Tensor { tensor: name.clone(), message: e.to_string() })?;
        let array = Array::from_le_bytes(shape, dtype, &bytes)
            .map_err(|e| SomError::Tensor { tensor: name.clone(), message: e.to_string() })?
            .to_dtype(DType::F64);
        if let Some(mask) = &mask {
            if let Some(k) = array.data().iter().zip(mask).position(|(v, &z)| z && *v != 0.0) {
                return Err(SomError::Tensor {
                    tensor: name,
                    message: format!("semantic-to-syntactic block entry {k} is nonzero"),
                });
            }
        }
        match mask {
            Some(m) => params.add_structured(&name, array, m)?,
            None => params.add(&name, array)?,
        };
    }
    let model = SomModel::from_params(manifest.config, params)?;
    Ok(Checkpoint { model, metadata: manifest.metadata })
}
