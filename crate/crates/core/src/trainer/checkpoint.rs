//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 8 | magic `OVRCKPT\n` |
//! | 4 | `u32` format version |
//! | 8 | `u64` header length `H` |
//! | H | UTF-8 JSON header |
//! | 8·N | `f64` payload, tensors back to back in header order, row-major |
//! | 32 | SHA-256 of every preceding byte |
//!
//! The header holds the full training config, the completed epoch count, the
//! optimizer step count, and a tensor index of `{name, shape}` entries. The
//! index lists model tensors (trainable first, then running statistics), then
//! `nadam.m.<name>` and `nadam.v.<name>` per trainable tensor, then
//! `loss_history`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{TrainConfig, Trainer};
use crate::error::{Error, Result};
use crate::net::ModelWeights;
use crate::optim::{init_state, NadamState};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"OVRCKPT\n";
pub const CHECKPOINT_VERSION: u32 = 1;

const DIGEST_LEN: usize = 32;
const PREAMBLE_LEN: usize = 8 + 4 + 8;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    epoch: usize,
    optimizer_t: u64,
    tensors: Vec<TensorEntry>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn collect_tensors(trainer: &Trainer) -> Vec<Tensor> {
    let mut out: Vec<Tensor> = trainer.weights.all_tensors().into_iter().cloned().collect();
    for (prefix, moments) in [
        ("nadam.m.", &trainer.optimizer.first_moment),
        ("nadam.v.", &trainer.optimizer.second_moment),
    ] {
        out.extend(moments.iter().map(|t| Tensor {
            name: format!("{prefix}{}", t.name),
            ..t.clone()
        }));
    }
    out.push(Tensor {
        name: "loss_history".into(),
        shape: vec![trainer.loss_history.len()],
        data: trainer.loss_history.clone(),
    });
    out
}

pub fn encode_checkpoint(trainer: &Trainer) -> Result<Vec<u8>> {
    let tensors = collect_tensors(trainer);
    let header = Header {
        config: trainer.config.clone(),
        epoch: trainer.epoch,
        optimizer_t: trainer.optimizer.t,
        tensors: tensors
            .iter()
            .map(|t| TensorEntry {
                name: t.name.clone(),
                shape: t.shape.clone(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header).map_err(|e| corrupt(format!("cannot encode header: {e}")))?;
    let payload_len: usize = tensors.iter().map(|t| t.data.len() * 8).sum();
    let mut bytes = Vec::with_capacity(PREAMBLE_LEN + header.len() + payload_len + DIGEST_LEN);
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header);
    for t in &tensors {
        for v in &t.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&bytes);
    bytes.extend_from_slice(&digest);
    Ok(bytes)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Trainer> {
    if bytes.len() < PREAMBLE_LEN + DIGEST_LEN {
        return Err(corrupt(format!("file is {} bytes, too short for a checkpoint", bytes.len())));
    }
    if &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(corrupt("not a checkpoint file (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(corrupt(format!(
            "unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(corrupt("checksum mismatch: payload is truncated or corrupt"));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let header_end = PREAMBLE_LEN
        .checked_add(header_len)
        .filter(|&e| e <= body.len())
        .ok_or_else(|| corrupt("header length exceeds file size"))?;
    let header: Header = serde_json::from_slice(&body[PREAMBLE_LEN..header_end])
        .map_err(|e| corrupt(format!("unreadable header: {e}")))?;
    let payload = &body[header_end..];
    let expected: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>() * 8).sum();
    if payload.len() != expected {
        return Err(corrupt(format!(
            "payload holds {} bytes, tensor index implies {expected}",
            payload.len()
        )));
    }

    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut stored = header.tensors.iter().map(|entry| {
        let n = entry.shape.iter().product();
        Tensor {
            name: entry.name.clone(),
            shape: entry.shape.clone(),
            data: values.by_ref().take(n).collect(),
        }
    });
    let mut take = |name: &str, shape: &[usize]| -> Result<Vec<f64>> {
        let t = stored
            .next()
            .ok_or_else(|| corrupt(format!("tensor {name} missing")))?;
        if t.name != name || t.shape != shape {
            return Err(corrupt(format!(
                "expected tensor {name} {shape:?}, found {} {:?}",
                t.name, t.shape
            )));
        }
        Ok(t.data)
    };

    header.config.validate()?;
    let mut weights = ModelWeights::zeros(&header.config.model)?;
    for t in weights.all_tensors_mut() {
        t.data = take(&t.name, &t.shape.clone())?;
    }
    let mut optimizer: NadamState = init_state(&weights, header.config.optimizer)?;
    optimizer.t = header.optimizer_t;
    for (prefix, moments) in [
        ("nadam.m.", &mut optimizer.first_moment),
        ("nadam.v.", &mut optimizer.second_moment),
    ] {
        for t in moments.iter_mut() {
            t.data = take(&format!("{prefix}{}", t.name), &t.shape.clone())?;
        }
    }
    let loss_history = take("loss_history", &[header.epoch])?;
    if stored.next().is_some() {
        return Err(corrupt("unexpected trailing tensors"));
    }
    Ok(Trainer {
        config: header.config,
        weights,
        optimizer,
        epoch: header.epoch,
        loss_history,
    })
}

/// Write atomically: a sibling temporary file is renamed over `path`.
pub fn save_checkpoint(trainer: &Trainer, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(trainer)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Trainer> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::counts::ObjectHistogram;
    use crate::dists::Family;
    use crate::net::{InputSpec, ModelConfig};
    use crate::tensor::Matrix;
    use crate::trainer::TrainData;

    fn small_trainer() -> (Trainer, TrainData) {
        let mut cfg = TrainConfig::new(ModelConfig::new(InputSpec::Features { dim: 2 }, 2, Family::NegBinomial).with_hidden(4));
        cfg.batch_size = 4;
        cfg.epochs = 2;
        cfg.seed = 9;
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 / 10.0, 1.0 - i as f64 / 20.0]).collect();
        let hists = (0..10).map(|i| ObjectHistogram::new(vec![i % 3, (i * 7) % 4])).collect();
        let data = TrainData::new(Matrix::from_rows(&rows).unwrap(), hists).unwrap();
        let mut t = Trainer::new(cfg).unwrap();
        t.run_epoch(&data).unwrap();
        (t, data)
    }

    #[test]
    fn round_trip_then_step_is_bit_identical() {
        let (t, data) = small_trainer();
        let mut restored = decode_checkpoint(&encode_checkpoint(&t).unwrap()).unwrap();
        assert_eq!(restored.config, t.config);
        assert_eq!(restored.weights.all_tensors(), t.weights.all_tensors());
        assert_eq!(restored.optimizer, t.optimizer);
        let mut original = t.clone();
        original.run_epoch(&data).unwrap();
        restored.run_epoch(&data).unwrap();
        assert_eq!(original.weights.all_tensors(), restored.weights.all_tensors());
        assert_eq!(original.loss_history, restored.loss_history);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let (t, _) = small_trainer();
        let bytes = encode_checkpoint(&t).unwrap();
        for cut in [0, 10, bytes.len() / 2, bytes.len() - 1] {
            let err = decode_checkpoint(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, Error::Checkpoint(_)), "{err}");
        }
    }

    #[test]
    fn flipped_byte_is_rejected() {
        let (t, _) = small_trainer();
        let mut bytes = encode_checkpoint(&t).unwrap();
        let i = bytes.len() - 100;
        bytes[i] ^= 1;
        assert!(matches!(
            decode_checkpoint(&bytes),
            Err(Error::Checkpoint(m)) if m.contains("checksum")
        ));
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let (t, _) = small_trainer();
        let mut bytes = encode_checkpoint(&t).unwrap();
        bytes[8] = 99;
        assert!(matches!(
            decode_checkpoint(&bytes),
            Err(Error::Checkpoint(m)) if m.contains("version")
        ));
    }

    #[test]
    fn file_round_trip_echoes_config() {
        let (t, _) = small_trainer();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("model.ckpt");
        save_checkpoint(&t, &p).unwrap();
        let back = load_checkpoint(&p).unwrap();
        assert_eq!(back.config, t.config);
        assert_eq!(back.epoch, 1);
        assert!(!dir.path().join("model.ckpt.tmp").exists());
    }
}
