use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{NetworkConfig, PainNet};
use crate::error::{Error, Result};
use crate::nn::EmaState;

const FORMAT: &str = "ecgpain-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorBlob {
    name: String,
    shape: Vec<usize>,
    /// Little-endian f64 bytes, base64 encoded.
    data: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct EmaBlob {
    decay: f64,
    updates: u64,
    warmup: bool,
    shadow: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    config: NetworkConfig,
    config_hash: String,
    optimizer_step: u64,
    tensors: Vec<TensorBlob>,
    ema: Option<EmaBlob>,
}

#[derive(Debug, Clone)]
pub struct LoadedCheckpoint {
    pub net: PainNet,
    pub ema: Option<EmaState>,
    pub optimizer_step: u64,
    pub config_hash: String,
}

/// SHA-256 of the config's canonical JSON, hex encoded.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let bytes = serde_json::to_vec(config)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn encode(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

fn decode(s: &str, expected: usize, what: &str) -> Result<Vec<f64>> {
    let bytes = STANDARD
        .decode(s)
        .map_err(|e| Error::Checkpoint(format!("{what}: bad base64: {e}")))?;
    if bytes.len() != expected * 8 {
        return Err(Error::Checkpoint(format!(
            "{what}: expected {expected} values, found {} bytes",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

pub fn save_checkpoint(
    path: &Path,
    net: &PainNet,
    ema: Option<&EmaState>,
    optimizer_step: u64,
) -> Result<()> {
    let tensors = net
        .tensor_names()
        .into_iter()
        .zip(net.tensor_shapes())
        .zip(net.tensors())
        .map(|((name, shape), data)| TensorBlob {
            name,
            shape,
            data: encode(data),
        })
        .collect();
    let file = CheckpointFile {
        format: FORMAT.into(),
        version: VERSION,
        config: net.config().clone(),
        config_hash: config_hash(net.config())?,
        optimizer_step,
        tensors,
        ema: ema.map(|e| EmaBlob {
            decay: e.decay,
            updates: e.updates,
            warmup: e.warmup,
            shadow: e.shadow.iter().map(|s| encode(s)).collect(),
        }),
    };
    let json = serde_json::to_string(&file)?;
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<LoadedCheckpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: CheckpointFile = serde_json::from_str(&text)?;
    if file.format != FORMAT || file.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint {} v{}",
            file.format, file.version
        )));
    }
    let hash = config_hash(&file.config)?;
    if hash != file.config_hash {
        return Err(Error::Checkpoint("config hash does not match stored config".into()));
    }

    let mut net = PainNet::new(file.config, 0)?;
    let names = net.tensor_names();
    let shapes = net.tensor_shapes();
    if file.tensors.len() != names.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, found {}",
            names.len(),
            file.tensors.len()
        )));
    }
    for (((blob, name), shape), dst) in file
        .tensors
        .iter()
        .zip(&names)
        .zip(&shapes)
        .zip(net.tensors_mut())
    {
        if &blob.name != name || &blob.shape != shape {
            return Err(Error::Checkpoint(format!(
                "tensor {} {:?} does not match architecture ({name} {shape:?})",
                blob.name, blob.shape
            )));
        }
        dst.copy_from_slice(&decode(&blob.data, dst.len(), name)?);
    }

    let ema = match file.ema {
        None => None,
        Some(e) => {
            if e.shadow.len() != names.len() {
                return Err(Error::Checkpoint("EMA shadow tensor count mismatch".into()));
            }
            let shadow = e
                .shadow
                .iter()
                .zip(&shapes)
                .zip(&names)
                .map(|((s, shape), name)| decode(s, shape.iter().product(), name))
                .collect::<Result<Vec<_>>>()?;
            let mut state = EmaState::from_shadow(shadow, e.decay)?.with_warmup(e.warmup);
            state.updates = e.updates;
            Some(state)
        }
    };
    Ok(LoadedCheckpoint {
        net,
        ema,
        optimizer_step: file.optimizer_step,
        config_hash: hash,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::TaskSet;

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = NetworkConfig {
            encoder_widths: vec![7, 5],
            head_hidden: 4,
            age_classes: 3,
            tasks: TaskSet { age: true, gender: false },
            ..NetworkConfig::st_nn(7, 5)
        };
        let mut net = PainNet::new(cfg, 11).unwrap();
        net.task_weights[0] = 1.0 / 3.0;
        net.tensors_mut()[0][0] = f64::MIN_POSITIVE;
        let mut ema = EmaState::new(&net.tensors(), 0.9).unwrap().with_warmup(true);
        ema.update(&net.tensors()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        save_checkpoint(&path, &net, Some(&ema), 17).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.net, net);
        assert_eq!(back.ema.as_ref(), Some(&ema));
        assert_eq!(back.optimizer_step, 17);
        for (a, b) in back.net.tensors().iter().zip(net.tensors()) {
            assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn tampered_config_is_rejected() {
        let net = PainNet::new(
            NetworkConfig {
                encoder_widths: vec![3],
                head_hidden: 2,
                ..NetworkConfig::st_nn(6, 2)
            },
            0,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        save_checkpoint(&path, &net, None, 0).unwrap();
        let text = fs::read_to_string(&path).unwrap().replace("\"pain_classes\":2", "\"pain_classes\":5");
        fs::write(&path, text).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));
    }
}
