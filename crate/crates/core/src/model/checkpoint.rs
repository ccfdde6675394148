//! Model checkpoints: a versioned JSON dump of every tensor with its shape.
//! Numbers are written in shortest round-trip form, so load after save
//! reproduces every parameter bit for bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::concept::{ConceptModel, EncoderMode, ModelDims};
use super::noise::NoiseModel;
use super::tensor::ParamStore;
use crate::vocab::ConceptVocabulary;

pub const CHECKPOINT_FORMAT: &str = "fashionkb-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse checkpoint: {0}")]
    Parse(String),
    #[error("not a checkpoint (format {0:?})")]
    Format(String),
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { expected: u32, found: u32 },
    #[error("checkpoint tensors do not match the model layout: {0}")]
    Layout(String),
    #[error("refusing to save non-finite parameters")]
    NonFinite,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    vocabulary: ConceptVocabulary,
    dims: ModelDims,
    mode: EncoderMode,
    model: ParamStore,
    noise: ParamStore,
}

pub fn save_checkpoint(
    model: &ConceptModel,
    noise: &NoiseModel,
    path: impl AsRef<Path>,
) -> Result<(), CheckpointError> {
    if !model.params().is_finite() || !noise.params().is_finite() {
        return Err(CheckpointError::NonFinite);
    }
    let path = path.as_ref();
    let io = |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        vocabulary: model.vocab().clone(),
        dims: model.dims(),
        mode: model.mode(),
        model: model.params().clone(),
        noise: noise.params().clone(),
    };
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    serde_json::to_writer(&mut out, &file).map_err(|e| CheckpointError::Parse(e.to_string()))?;
    out.write_all(b"\n").map_err(io)?;
    out.flush().map_err(io)
}

pub fn load_checkpoint(
    path: impl AsRef<Path>,
) -> Result<(ConceptModel, NoiseModel), CheckpointError> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?);
    let value: serde_json::Value =
        serde_json::from_reader(reader).map_err(|e| CheckpointError::Parse(e.to_string()))?;
    let format = value
        .get("format")
        .and_then(|f| f.as_str())
        .unwrap_or_default();
    if format != CHECKPOINT_FORMAT {
        return Err(CheckpointError::Format(format.to_string()));
    }
    let version = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version {
            expected: CHECKPOINT_VERSION,
            found: version,
        });
    }
    let file: CheckpointFile =
        serde_json::from_value(value).map_err(|e| CheckpointError::Parse(e.to_string()))?;
    let mut model = ConceptModel::new(file.vocabulary.clone(), file.dims, file.mode, 0);
    model
        .replace_params(file.model)
        .map_err(CheckpointError::Layout)?;
    let vocab = &file.vocabulary;
    let mut noise = NoiseModel::new(&vocab.task_names(), &vocab.task_sizes(), 0.9);
    noise
        .replace_params(file.noise)
        .map_err(CheckpointError::Layout)?;
    Ok((model, noise))
}
