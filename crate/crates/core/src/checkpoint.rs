//! Model persistence: a one-line JSON header describing the bundle
//! followed by the named parameter arrays as little-endian f32, in
//! header order. Saving a loaded bundle reproduces the file verbatim.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use crate::error::{Error, Result};
use crate::models::{hex_string, Model, ModelConfig};
use crate::nn::ParamStore;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
}

#[derive(Debug, serde::Serialize, serde::Deserialize)]
struct Header {
    format_version: u32,
    model_config: ModelConfig,
    config_digest: String,
    epoch: usize,
    best_val_loss: f64,
    seed: u64,
    train_config_digest: String,
    arrays: Vec<ArrayEntry>,
}

/// A trained model together with the training state that produced it.
#[derive(Debug, Clone)]
pub struct CheckpointBundle {
    pub model: Model,
    pub epoch: usize,
    pub best_val_loss: f64,
    pub seed: u64,
    pub train_config_digest: String,
}

impl CheckpointBundle {
    /// Error unless the stored architecture matches `expected`.
    pub fn expect_config(&self, expected: &ModelConfig) -> Result<()> {
        let found = self.model.config.digest();
        let want = expected.digest();
        if found != want {
            return Err(Error::CheckpointDigest { found, expected: want });
        }
        Ok(())
    }
}

pub fn save_checkpoint(bundle: &CheckpointBundle, path: &Path) -> Result<()> {
    let arrays: Vec<ArrayEntry> = bundle
        .model
        .params
        .iter()
        .map(|(name, p)| ArrayEntry {
            name: name.to_string(),
            shape: p.value.shape().to_vec(),
            trainable: p.trainable,
        })
        .collect();
    let header = Header {
        format_version: CHECKPOINT_VERSION,
        model_config: bundle.model.config.clone(),
        config_digest: bundle.model.config.digest(),
        epoch: bundle.epoch,
        best_val_loss: bundle.best_val_loss,
        seed: bundle.seed,
        train_config_digest: bundle.train_config_digest.clone(),
        arrays,
    };
    let mut bytes = serde_json::to_vec(&header)?;
    bytes.push(b'\n');
    for (_, p) in bundle.model.params.iter() {
        for &v in p.value.iter() {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<CheckpointBundle> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Config("checkpoint has no header line".into()))?;
    let header: Header = serde_json::from_slice(&bytes[..newline])?;
    if header.format_version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            found: header.format_version,
            supported: CHECKPOINT_VERSION,
        });
    }
    let recomputed = header.model_config.digest();
    if header.config_digest != recomputed {
        return Err(Error::CheckpointDigest {
            found: header.config_digest,
            expected: recomputed,
        });
    }

    let mut params = ParamStore::new();
    let mut offset = newline + 1;
    for entry in &header.arrays {
        let count: usize = entry.shape.iter().product();
        let need = count * 4;
        if offset + need > bytes.len() {
            return Err(Error::CheckpointTruncated { array: entry.name.clone() });
        }
        let mut values = Vec::with_capacity(count);
        for i in 0..count {
            let at = offset + i * 4;
            let raw: [u8; 4] = bytes[at..at + 4].try_into().unwrap();
            values.push(f32::from_le_bytes(raw) as f64);
        }
        let array = ArrayD::from_shape_vec(IxDyn(&entry.shape), values)
            .map_err(|e| Error::Config(format!("bad shape for {}: {e}", entry.name)))?;
        params.insert(&entry.name, array, entry.trainable);
        offset += need;
    }
    if offset != bytes.len() {
        return Err(Error::Config(format!(
            "checkpoint carries {} unexpected trailing bytes",
            bytes.len() - offset
        )));
    }

    Ok(CheckpointBundle {
        model: Model { config: header.model_config, params },
        epoch: header.epoch,
        best_val_loss: header.best_val_loss,
        seed: header.seed,
        train_config_digest: header.train_config_digest,
    })
}

/// SHA-256 of a file, for comparing artifacts across runs.
pub fn file_digest(path: &Path) -> Result<String> {
    use sha2::Digest;
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    Ok(hex_string(&sha2::Sha256::digest(&bytes)))
}
