//! Versioned JSON checkpoints.
//!
//! A checkpoint is a single JSON object holding the format version, the full
//! training config snapshot (ablation switches and the seed included), the
//! relation labels, both vocabularies, and every named parameter array.
//! Maps are ordered and floats use the shortest round-trip representation,
//! so save → load → save is byte-identical.

use crate::config::TrainConfig;
use crate::data::{DataError, RelationSchema};
use crate::model::ModelParams;
use crate::tensor::Tensor;
use crate::vocab::Vocab;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported checkpoint format version {0} (expected {FORMAT_VERSION})")]
    Version(u32),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("parameter {name:?} has shape {got:?}, expected {want:?}")]
    BadShape {
        name: String,
        got: Vec<usize>,
        want: Vec<usize>,
    },
}

#[derive(Serialize, Deserialize)]
struct SavedTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    config: TrainConfig,
    relations: Vec<String>,
    vocab: Vec<String>,
    char_vocab: Vec<String>,
    params: BTreeMap<String, SavedTensor>,
}

/// Serializes a checkpoint to bytes (terminated by one newline).
pub fn to_bytes(params: &ModelParams, cfg: &TrainConfig) -> Vec<u8> {
    let file = CheckpointFile {
        format_version: FORMAT_VERSION,
        config: cfg.clone(),
        relations: params.relation_labels.clone(),
        vocab: params.vocab.tokens().to_vec(),
        char_vocab: params.char_vocab.tokens().to_vec(),
        params: params
            .tensors
            .iter()
            .map(|(k, t)| {
                (
                    k.clone(),
                    SavedTensor {
                        shape: t.shape.clone(),
                        data: t.data.clone(),
                    },
                )
            })
            .collect(),
    };
    let mut bytes = serde_json::to_vec(&file).expect("checkpoint serializes");
    bytes.push(b'\n');
    bytes
}

pub fn save(params: &ModelParams, cfg: &TrainConfig, path: &Path) -> Result<(), CheckpointError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&to_bytes(params, cfg))?;
    Ok(())
}

/// Loads a checkpoint, rebuilding vocabulary indexes and validating every
/// parameter shape against the config it was saved with.
pub fn load_bytes(bytes: &[u8]) -> Result<(ModelParams, TrainConfig, RelationSchema), CheckpointError> {
    let file: CheckpointFile = serde_json::from_slice(bytes)?;
    if file.format_version != FORMAT_VERSION {
        return Err(CheckpointError::Version(file.format_version));
    }
    let schema = RelationSchema::new(file.relations.clone())?;
    let vocab = Vocab::from_tokens(file.vocab);
    let char_vocab = Vocab::from_tokens(file.char_vocab);

    // a freshly initialized skeleton pins the expected parameter set/shapes
    let reference = ModelParams::init(
        file.config.model.clone(),
        &file.relations,
        vocab.clone(),
        char_vocab.clone(),
        file.config.seed,
    );
    let mut tensors = BTreeMap::new();
    for (name, want) in &reference.tensors {
        let got = file
            .params
            .get(name)
            .ok_or_else(|| CheckpointError::BadShape {
                name: name.clone(),
                got: vec![],
                want: want.shape.clone(),
            })?;
        if got.shape != want.shape {
            return Err(CheckpointError::BadShape {
                name: name.clone(),
                got: got.shape.clone(),
                want: want.shape.clone(),
            });
        }
        tensors.insert(
            name.clone(),
            Tensor::new(got.shape.clone(), got.data.clone()).expect("validated shape"),
        );
    }
    let params = ModelParams {
        cfg: file.config.model.clone(),
        n_relations: schema.len(),
        relation_labels: file.relations,
        vocab,
        char_vocab,
        tensors,
    };
    Ok((params, file.config, schema))
}

pub fn load(path: &Path) -> Result<(ModelParams, TrainConfig, RelationSchema), CheckpointError> {
    let bytes = std::fs::read(path)?;
    load_bytes(&bytes)
}
