//! Checkpoint format: one magic line, one JSON header line (format
//! version, config echo, named array manifest with shapes and byte
//! offsets, total parameter count), then all parameter values as
//! little-endian 64-bit floats in manifest order. Round trips are
//! bitwise exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::network::Model;

const MAGIC: &str = "MSCMHMST-CKPT v1";

#[derive(Serialize, Deserialize)]
struct ArrayManifest {
    name: String,
    shape: Vec<usize>,
    /// Byte offset of this array inside the value blob.
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    format_version: u32,
    config: ModelConfig,
    arrays: Vec<ArrayManifest>,
    total_params: usize,
    manifest_hash: Option<String>,
}

/// A checkpoint loaded back from disk.
pub struct LoadedCheckpoint {
    pub model: Model,
    pub manifest_hash: Option<String>,
}

pub fn save(model: &Model, path: &Path, manifest_hash: Option<&str>) -> Result<()> {
    let params = model.params();
    let mut arrays = Vec::with_capacity(params.len());
    let mut offset = 0usize;
    for id in params.ids() {
        let value = params.value(id);
        arrays.push(ArrayManifest {
            name: params.name(id).to_string(),
            shape: value.shape().to_vec(),
            offset,
        });
        offset += value.numel() * 8;
    }
    let header = CheckpointHeader {
        format_version: 1,
        config: model.config().clone(),
        arrays,
        total_params: params.total_len(),
        manifest_hash: manifest_hash.map(str::to_string),
    };
    let header_json = serde_json::to_string(&header)
        .map_err(|e| Error::checkpoint(format!("header serialization failed: {e}")))?;

    let mut bytes = Vec::with_capacity(MAGIC.len() + header_json.len() + 2 + offset);
    bytes.extend_from_slice(MAGIC.as_bytes());
    bytes.push(b'\n');
    bytes.extend_from_slice(header_json.as_bytes());
    bytes.push(b'\n');
    for id in params.ids() {
        for v in params.value(id).data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<LoadedCheckpoint> {
    let bytes = fs::read(path)?;
    let magic_end = find_newline(&bytes, 0)
        .ok_or_else(|| Error::checkpoint("missing magic line".to_string()))?;
    if &bytes[..magic_end] != MAGIC.as_bytes() {
        return Err(Error::checkpoint(format!(
            "bad magic line, expected '{MAGIC}'"
        )));
    }
    let header_end = find_newline(&bytes, magic_end + 1)
        .ok_or_else(|| Error::checkpoint("missing header line".to_string()))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[magic_end + 1..header_end])
        .map_err(|e| Error::checkpoint(format!("unreadable header: {e}")))?;
    if header.format_version != 1 {
        return Err(Error::checkpoint(format!(
            "unsupported format version {}",
            header.format_version
        )));
    }

    let blob = &bytes[header_end + 1..];
    if blob.len() != header.total_params * 8 {
        return Err(Error::checkpoint(format!(
            "value blob holds {} bytes, header promises {}",
            blob.len(),
            header.total_params * 8
        )));
    }

    let mut model = Model::build(header.config.clone())
        .map_err(|e| Error::checkpoint(format!("config in header does not build: {e}")))?;
    {
        let params = model.params_mut();
        if params.len() != header.arrays.len() {
            return Err(Error::checkpoint(format!(
                "checkpoint lists {} arrays, model has {}",
                header.arrays.len(),
                params.len()
            )));
        }
        let ids: Vec<_> = params.ids().collect();
        for (id, entry) in ids.into_iter().zip(&header.arrays) {
            if params.name(id) != entry.name || params.value(id).shape() != entry.shape {
                return Err(Error::checkpoint(format!(
                    "array mismatch: checkpoint has '{}' {:?}, model expects '{}' {:?}",
                    entry.name,
                    entry.shape,
                    params.name(id),
                    params.value(id).shape()
                )));
            }
            let numel = params.value(id).numel();
            if entry.offset + numel * 8 > blob.len() {
                return Err(Error::checkpoint(format!(
                    "array '{}' overruns the value blob",
                    entry.name
                )));
            }
            let dst = params.value_mut(id).data_mut();
            for (i, v) in dst.iter_mut().enumerate() {
                let at = entry.offset + i * 8;
                let mut raw = [0u8; 8];
                raw.copy_from_slice(&blob[at..at + 8]);
                *v = f64::from_le_bytes(raw);
            }
        }
    }
    Ok(LoadedCheckpoint { model, manifest_hash: header.manifest_hash })
}

fn find_newline(bytes: &[u8], from: usize) -> Option<usize> {
    bytes[from..].iter().position(|&b| b == b'\n').map(|p| from + p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::{ModelConfig, Variant};

    fn small_config() -> ModelConfig {
        ModelConfig {
            variant: Variant::Mscmhmst4,
            input_channels: 2,
            history: 6,
            horizon: 3,
            branch_channels: 2,
            encoder_layers: 1,
            seed: 9,
            ..Default::default()
        }
    }

    #[test]
    fn round_trip_is_bitwise_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");

        let model = Model::build(small_config()).unwrap();
        save(&model, &p1, Some("abc123")).unwrap();
        let loaded = load(&p1).unwrap();
        assert_eq!(loaded.manifest_hash.as_deref(), Some("abc123"));
        save(&loaded.model, &p2, loaded.manifest_hash.as_deref()).unwrap();

        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn forward_identical_after_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let model = Model::build(small_config()).unwrap();
        let batch = crate::numcore::Tensor::new(
            vec![1, 2, 6],
            (0..12).map(|i| i as f64 * 0.25 - 1.0).collect(),
        )
        .unwrap();
        let before = model.predict(&batch).unwrap();
        save(&model, &path, None).unwrap();
        let after = load(&path).unwrap().model.predict(&batch).unwrap();
        assert!(before
            .data()
            .iter()
            .zip(after.data())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn corrupted_header_is_a_checkpoint_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let model = Model::build(small_config()).unwrap();
        save(&model, &path, None).unwrap();

        let mut bytes = fs::read(&path).unwrap();
        bytes[MAGIC.len() + 3] = b'!';
        fs::write(&path, bytes).unwrap();
        match load(&path) {
            Err(Error::Checkpoint(_)) => {}
            Err(other) => panic!("expected checkpoint error, got {other:?}"),
            Ok(_) => panic!("corrupted checkpoint loaded successfully"),
        }
    }

    #[test]
    fn count_matches_stored_total() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let model = Model::build(small_config()).unwrap();
        save(&model, &path, None).unwrap();
        let text = fs::read(&path).unwrap();
        let header_line = text.split(|&b| b == b'\n').nth(1).unwrap();
        let header: CheckpointHeader = serde_json::from_slice(header_line).unwrap();
        assert_eq!(header.total_params, model.count_parameters());
    }
}
