//! Bank checkpoints and run manifests.
//!
//! Layout: 8-byte magic, u32 format version, u64 header length, JSON
//! header, row-major little-endian f64 rows, then the SHA-256 of every
//! preceding byte. All integers are little-endian.

use std::collections::BTreeMap;
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::{BankMetadata, Seq2SeqBackend, SoftTokenBank};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"ICLMUBNK";
const VERSION: u32 = 1;
const FLOAT_WIDTH: usize = 8;

#[derive(Serialize, Deserialize)]
struct Header {
    rows: usize,
    cols: usize,
    float_width: usize,
    byte_order: String,
    tag_offsets: BTreeMap<String, Range<usize>>,
    metadata: BankMetadata,
}

pub fn encode_checkpoint(bank: &SoftTokenBank) -> Result<Vec<u8>> {
    let header = Header {
        rows: bank.total_width(),
        cols: bank.embedding_dim(),
        float_width: FLOAT_WIDTH,
        byte_order: "little".into(),
        tag_offsets: bank.tag_offsets().clone(),
        metadata: bank.metadata.clone(),
    };
    let header = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(20 + header.len() + bank.parameter_count() * FLOAT_WIDTH + 32);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for v in bank.rows().iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let sum = Sha256::digest(&out);
    out.extend_from_slice(&sum);
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<SoftTokenBank> {
    let corrupt = |why: &str| Error::CorruptCheckpoint(why.to_string());
    if bytes.len() < 20 + 32 {
        return Err(corrupt("file too short"));
    }
    let (body, sum) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != sum {
        return Err(corrupt("checksum mismatch"));
    }
    if &body[..8] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(corrupt(&format!("unsupported version {version}")));
    }
    let header_len = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
    let rest = &body[20..];
    if rest.len() < header_len {
        return Err(corrupt("truncated header"));
    }
    let header: Header = serde_json::from_slice(&rest[..header_len])
        .map_err(|e| corrupt(&format!("bad header: {e}")))?;
    if header.float_width != FLOAT_WIDTH || header.byte_order != "little" {
        return Err(corrupt("unsupported float layout"));
    }
    let data = &rest[header_len..];
    if data.len() != header.rows * header.cols * FLOAT_WIDTH {
        return Err(corrupt("row data does not match the declared shape"));
    }
    let values = data
        .chunks_exact(FLOAT_WIDTH)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let rows = Array2::from_shape_vec((header.rows, header.cols), values)
        .map_err(|e| corrupt(&e.to_string()))?;
    SoftTokenBank::new(rows, header.tag_offsets, header.metadata)
        .map_err(|e| corrupt(&e.to_string()))
}

pub fn save_checkpoint(bank: &SoftTokenBank, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(bank)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<SoftTokenBank> {
    decode_checkpoint(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Compares the digest recorded in `bank` with the active backend.
///
/// Returns `Ok(false)` and logs a warning on mismatch, or fails with
/// [`Error::DigestMismatch`] when `strict`.
pub fn verify_provenance(bank: &SoftTokenBank, backend: &dyn Seq2SeqBackend, strict: bool) -> Result<bool> {
    let actual = backend.param_digest();
    if bank.metadata.base_param_digest == actual {
        return Ok(true);
    }
    if strict {
        return Err(Error::DigestMismatch {
            expected: bank.metadata.base_param_digest.clone(),
            actual,
        });
    }
    log::warn!(
        "checkpoint was trained against {} ({}), active backend is {} ({})",
        bank.metadata.base_model,
        bank.metadata.base_param_digest,
        backend.model_id(),
        actual
    );
    Ok(false)
}

/// Hex SHA-256 of a checkpoint's bytes.
pub fn checkpoint_digest(bank: &SoftTokenBank) -> Result<String> {
    Ok(hex::encode(Sha256::digest(encode_checkpoint(bank)?)))
}

/// Machine-readable record of one warm-up run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: serde_json::Value,
    pub seed: u64,
    pub base_model: String,
    pub base_param_digest: String,
    pub tokenizer: String,
    pub trainable_parameters: usize,
    pub loss_trace: Vec<f64>,
    pub checkpoint: Option<PathBuf>,
    pub checkpoint_sha256: Option<String>,
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(
            &fs::read_to_string(path).map_err(|e| Error::io(path, e))?,
        )?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{extend_vocabulary, InitStrategy, ToyBackend, ToyConfig};
    use crate::markup::define_default_tagset;

    fn bank() -> (ToyBackend, SoftTokenBank) {
        let backend = ToyBackend::new(ToyConfig {
            d_model: 8,
            heads: 2,
            d_ff: 8,
            vocab_size: 128,
            context_budget: 16,
            ..ToyConfig::default()
        })
        .unwrap();
        let tags = define_default_tagset(11).unwrap();
        let mut bank = extend_vocabulary(&backend, &tags, InitStrategy::Random, 42, None).unwrap();
        bank.metadata.steps = 17;
        (backend, bank)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (_, bank) = bank();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bank.ckpt");
        save_checkpoint(&bank, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, bank);
        assert_eq!(back.metadata.seed, 42);
        assert_eq!(back.metadata.steps, 17);
        for (a, b) in back.rows().iter().zip(bank.rows()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn corruption_is_detected() {
        let (_, bank) = bank();
        let mut bytes = encode_checkpoint(&bank).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::CorruptCheckpoint(_))));
        assert!(decode_checkpoint(&bytes[..10]).is_err());
    }

    #[test]
    fn provenance_against_other_backend() {
        let (backend, bank) = bank();
        assert!(verify_provenance(&bank, &backend, true).unwrap());
        let other = ToyBackend::new(ToyConfig {
            seed: 9,
            ..backend.config().clone()
        })
        .unwrap();
        assert!(!verify_provenance(&bank, &other, false).unwrap());
        assert!(matches!(
            verify_provenance(&bank, &other, true),
            Err(Error::DigestMismatch { .. })
        ));
    }
}
