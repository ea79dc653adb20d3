use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autograd::Scalar;
use crate::error::{Error, Result};

use super::config::ModelConfig;
use super::params::ParamStore;

/// Checkpoint directory layout:
///
/// ```text
/// <dir>/config.json      model configuration
/// <dir>/manifest.json    tensor inventory + element type
/// <dir>/tensors/<name>.bin   flat little-endian values
/// ```
#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    dtype: String,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    decay: bool,
}

const FORMAT: &str = "tensor-dir-v1";

fn dtype_name<S: Scalar>() -> &'static str {
    if std::mem::size_of::<S>() == 4 {
        "f32"
    } else {
        "f64"
    }
}

pub fn save<S: Scalar>(dir: &Path, config: &ModelConfig, store: &ParamStore<S>) -> Result<()> {
    let tensors_dir = dir.join("tensors");
    fs::create_dir_all(&tensors_dir).map_err(|e| Error::io(&tensors_dir, e))?;

    let config_path = dir.join("config.json");
    let config_json = serde_json::to_string_pretty(config)?;
    fs::write(&config_path, config_json).map_err(|e| Error::io(&config_path, e))?;

    let manifest = Manifest {
        format: FORMAT.to_string(),
        dtype: dtype_name::<S>().to_string(),
        tensors: store
            .iter()
            .map(|(name, p)| TensorEntry {
                name: name.to_string(),
                shape: p.shape.clone(),
                decay: p.decay,
            })
            .collect(),
    };
    let manifest_path = dir.join("manifest.json");
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)
        .map_err(|e| Error::io(&manifest_path, e))?;

    for (name, p) in store.iter() {
        let path = tensors_dir.join(format!("{name}.bin"));
        let mut file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut buf = Vec::with_capacity(p.values.len() * 8);
        for &v in &p.values {
            if dtype_name::<S>() == "f32" {
                buf.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
            } else {
                buf.extend_from_slice(&v.to_f64().to_le_bytes());
            }
        }
        file.write_all(&buf).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

pub fn load<S: Scalar>(dir: &Path) -> Result<(ModelConfig, ParamStore<S>)> {
    let config_path = dir.join("config.json");
    let config_text = fs::read_to_string(&config_path).map_err(|e| Error::io(&config_path, e))?;
    let config: ModelConfig = serde_json::from_str(&config_text)
        .map_err(|e| Error::CheckpointMismatch(format!("invalid config.json: {e}")))?;

    let manifest_path = dir.join("manifest.json");
    let manifest_text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&manifest_text)
        .map_err(|e| Error::CheckpointMismatch(format!("invalid manifest.json: {e}")))?;
    if manifest.format != FORMAT {
        return Err(Error::CheckpointMismatch(format!(
            "unknown checkpoint format {}",
            manifest.format
        )));
    }
    let elem = match manifest.dtype.as_str() {
        "f32" => 4usize,
        "f64" => 8,
        other => {
            return Err(Error::CheckpointMismatch(format!("unknown dtype {other}")));
        }
    };

    let mut store = ParamStore::new();
    for entry in &manifest.tensors {
        let path = dir.join("tensors").join(format!("{}.bin", entry.name));
        let mut file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut buf = Vec::new();
        file.read_to_end(&mut buf).map_err(|e| Error::io(&path, e))?;
        let expected = entry.shape.iter().product::<usize>() * elem;
        if buf.len() != expected {
            return Err(Error::CheckpointMismatch(format!(
                "tensor {}: {} bytes on disk, shape {:?} needs {}",
                entry.name,
                buf.len(),
                entry.shape,
                expected
            )));
        }
        let values: Vec<S> = if elem == 4 {
            buf.chunks_exact(4)
                .map(|c| S::from_f64(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
                .collect()
        } else {
            buf.chunks_exact(8)
                .map(|c| {
                    S::from_f64(f64::from_le_bytes([
                        c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7],
                    ]))
                })
                .collect()
        };
        store.insert(&entry.name, entry.shape.clone(), values, entry.decay);
    }

    // embeddings must agree with the declared configuration
    if store.contains("emb.tok") {
        let emb = store.get("emb.tok");
        if emb.shape != [config.vocab_size, config.embedding] {
            return Err(Error::CheckpointMismatch(format!(
                "token embedding shape {:?} disagrees with config vocab {} x embedding {}",
                emb.shape, config.vocab_size, config.embedding
            )));
        }
    }
    Ok((config, store))
}

/// Reject checkpoints trained against a different vocabulary.
pub fn check_vocab(config: &ModelConfig, vocab_size: usize) -> Result<()> {
    if config.vocab_size != vocab_size {
        return Err(Error::CheckpointMismatch(format!(
            "checkpoint vocabulary size {} does not match tokenizer vocabulary size {vocab_size}",
            config.vocab_size
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::init_encoder_params;

    #[test]
    fn roundtrip_preserves_values_and_order() {
        let dir = tempfile::tempdir().unwrap();
        let config = ModelConfig::tiny(40, 32);
        let store: ParamStore<f32> = init_encoder_params(&config, 3);
        save(dir.path(), &config, &store).unwrap();
        let (config2, store2): (ModelConfig, ParamStore<f32>) = load(dir.path()).unwrap();
        assert_eq!(config, config2);
        let names_a: Vec<&str> = store.names().collect();
        let names_b: Vec<&str> = store2.names().collect();
        assert_eq!(names_a, names_b);
        for (name, p) in store.iter() {
            assert_eq!(p.values, store2.get(name).values, "{name}");
            assert_eq!(p.shape, store2.get(name).shape, "{name}");
            assert_eq!(p.decay, store2.get(name).decay, "{name}");
        }
    }

    #[test]
    fn vocab_mismatch_is_rejected() {
        let config = ModelConfig::tiny(40, 32);
        assert!(check_vocab(&config, 40).is_ok());
        let err = check_vocab(&config, 41).unwrap_err();
        assert!(matches!(err, Error::CheckpointMismatch(_)));
    }

    #[test]
    fn truncated_tensor_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let config = ModelConfig::tiny(40, 32);
        let store: ParamStore<f32> = init_encoder_params(&config, 3);
        save(dir.path(), &config, &store).unwrap();
        let victim = dir.path().join("tensors").join("emb.seg.bin");
        std::fs::write(&victim, [0u8; 3]).unwrap();
        let res: Result<(ModelConfig, ParamStore<f32>)> = load(dir.path());
        assert!(matches!(res, Err(Error::CheckpointMismatch(_))));
    }

    #[test]
    fn f32_checkpoint_loads_at_f64() {
        let dir = tempfile::tempdir().unwrap();
        let config = ModelConfig::tiny(40, 32);
        let store: ParamStore<f32> = init_encoder_params(&config, 3);
        save(dir.path(), &config, &store).unwrap();
        let (_, store64): (ModelConfig, ParamStore<f64>) = load(dir.path()).unwrap();
        let a = store.get("emb.tok");
        let b = store64.get("emb.tok");
        assert!(a
            .values
            .iter()
            .zip(&b.values)
            .all(|(&x, &y)| (x as f64) == y));
    }
}
