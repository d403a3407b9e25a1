//! Versioned binary checkpoints.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "BMLP"  u32 version  u64 payload_len  payload  u32 crc32(header ++ payload)
//! payload = str hyper_json
//!           bytes vocab            (the split-directory vocab encoding)
//!           u64 tensor_count
//!           tensor_count × { str name, u64 rank, rank × u64 dim, f64 × Π dims }
//! ```
//!
//! Tensors appear in the model's fixed tensor order: embedding tables, the
//! heterogeneous tower blocks and pooling, the intent tower blocks, the gate,
//! then the output layer.

use std::path::{Path, PathBuf};

use bmlp_core::encoding::Vocab;
use bmlp_core::model::{HyperParams, ModelParams};
use bmlp_core::numerics::{ParamSet, RngStream, Tensor};
use thiserror::Error;

use crate::binio::{DecodeError, Reader, Writer};
use crate::splits::{decode_vocab, encode_vocab};

pub const MAGIC: &[u8; 4] = b"BMLP";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint: bad magic bytes")]
    BadMagic,
    #[error("checkpoint format version {found} is not supported (expected {VERSION})")]
    Version { found: u32 },
    #[error("corrupt checkpoint: truncated ({0})")]
    Truncated(String),
    #[error("corrupt checkpoint: checksum mismatch (stored {stored:08x}, computed {computed:08x})")]
    Checksum { stored: u32, computed: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("hyperparameter mismatch: checkpoint has {field} = {found}, run expects {expected}")]
    HyperMismatch {
        field: &'static str,
        found: String,
        expected: String,
    },
}

impl From<DecodeError> for CheckpointError {
    fn from(e: DecodeError) -> Self {
        match e {
            DecodeError::Eof(_) => CheckpointError::Truncated(e.to_string()),
            other => CheckpointError::Corrupt(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub hyper: HyperParams,
    pub vocab: Vocab,
    pub params: ModelParams,
}

pub fn encode(hyper: &HyperParams, vocab: &Vocab, params: &ModelParams) -> Vec<u8> {
    let mut p = Writer::new();
    p.str(&serde_json::to_string(hyper).expect("hyperparameters serialize"));
    p.len_prefixed(&encode_vocab(vocab));
    let names = params.names();
    let tensors = params.tensors();
    p.u64(tensors.len() as u64);
    for (name, t) in names.iter().zip(tensors) {
        p.str(name);
        p.u64(t.shape().len() as u64);
        for &d in t.shape() {
            p.u64(d as u64);
        }
        for &x in t.data() {
            p.f64(x);
        }
    }
    let payload = p.into_inner();
    let mut w = Writer::new();
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.u64(payload.len() as u64);
    w.bytes(&payload);
    let crc = crc32fast::hash(w.as_slice());
    let mut out = w.into_inner();
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Parses a checkpoint. Nothing is returned unless the whole file checks
/// out, so a failed load never yields partial state.
pub fn decode(buf: &[u8]) -> Result<Checkpoint, CheckpointError> {
    if buf.len() < 4 {
        return Err(CheckpointError::Truncated(format!("{} bytes", buf.len())));
    }
    if &buf[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut r = Reader::new(buf);
    r.take(4)?;
    let found = r.u32()?;
    if found != VERSION {
        return Err(CheckpointError::Version { found });
    }
    let len = r.u64()?;
    let expected = (HEADER_LEN as u64).checked_add(len).and_then(|n| n.checked_add(4));
    if expected != Some(buf.len() as u64) {
        return Err(CheckpointError::Truncated(format!(
            "header declares a {len}-byte payload, file has {} bytes",
            buf.len()
        )));
    }
    let body_end = buf.len() - 4;
    let stored = u32::from_le_bytes(buf[body_end..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(&buf[..body_end]);
    if stored != computed {
        return Err(CheckpointError::Checksum { stored, computed });
    }

    let mut r = Reader::new(&buf[HEADER_LEN..body_end]);
    let hyper: HyperParams =
        serde_json::from_str(r.str()?).map_err(|e| CheckpointError::Corrupt(format!("hyperparameters: {e}")))?;
    let vocab = decode_vocab(r.len_prefixed()?).map_err(|e| CheckpointError::Corrupt(format!("vocabulary: {e:#}")))?;
    let mut params = ModelParams::init(&hyper, vocab.num_items(), vocab.num_behaviors(), &mut RngStream::new(0))
        .map_err(|e| CheckpointError::Corrupt(format!("hyperparameters: {e}")))?;
    let names = params.names();
    let n = r.u64()?;
    if n != names.len() as u64 {
        return Err(CheckpointError::Corrupt(format!(
            "{n} tensors stored, architecture has {}",
            names.len()
        )));
    }
    for (name, t) in names.iter().zip(params.tensors_mut()) {
        let stored_name = r.str()?;
        if stored_name != name {
            return Err(CheckpointError::Corrupt(format!("expected tensor `{name}`, found `{stored_name}`")));
        }
        let rank = r.count(8)?;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u64()? as usize);
        }
        if dims != t.shape() {
            return Err(CheckpointError::Corrupt(format!(
                "tensor `{name}` has shape {dims:?}, architecture needs {:?}",
                t.shape()
            )));
        }
        let mut data = Vec::with_capacity(t.len());
        for _ in 0..t.len() {
            data.push(r.f64()?);
        }
        *t = Tensor::from_vec(&dims, data).expect("shape checked");
    }
    r.finish()?;
    Ok(Checkpoint { hyper, vocab, params })
}

pub fn save(path: &Path, hyper: &HyperParams, vocab: &Vocab, params: &ModelParams) -> Result<(), CheckpointError> {
    std::fs::write(path, encode(hyper, vocab, params)).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let buf = std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&buf)
}

/// Compares the fields that determine the network's structure and outputs.
/// Optimizer and schedule settings may differ.
pub fn check_architecture(found: &HyperParams, expected: &HyperParams) -> Result<(), CheckpointError> {
    fn cmp<T: PartialEq + std::fmt::Debug>(field: &'static str, a: T, b: T) -> Result<(), CheckpointError> {
        if a == b {
            Ok(())
        } else {
            Err(CheckpointError::HyperMismatch {
                field,
                found: format!("{a:?}"),
                expected: format!("{b:?}"),
            })
        }
    }
    let (f, e) = (found, expected);
    cmp("d", f.d, e.d)?;
    cmp("heads", f.heads, e.heads)?;
    cmp("blocks", f.blocks, e.blocks)?;
    cmp("len", f.len, e.len)?;
    cmp("aux_len", f.aux_len, e.aux_len)?;
    cmp("d_t", f.scb_hidden(), e.scb_hidden())?;
    cmp("d_c", f.fcb_hidden(), e.fcb_hidden())?;
    cmp("d_t_aux", f.pip_hidden(), e.pip_hidden())?;
    cmp("variant", f.variant, e.variant)?;
    cmp("ablation", f.ablation, e.ablation)?;
    cmp("score_activation", f.score_activation, e.score_activation)?;
    cmp("pip_scb_residual", f.pip_scb_residual, e.pip_scb_residual)?;
    cmp("pip_exclude_padded", f.pip_exclude_padded, e.pip_exclude_padded)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> (HyperParams, Vocab, ModelParams) {
        let hyper = HyperParams {
            d: 4,
            len: 6,
            aux_len: 3,
            ..HyperParams::default()
        };
        let vocab = Vocab::from_parts(
            (1..=7).map(|k| format!("i{k}")).collect(),
            vec!["click".into(), "buy".into()],
            "buy",
        )
        .unwrap();
        let params = ModelParams::init(&hyper, 7, 2, &mut RngStream::new(5)).unwrap();
        (hyper, vocab, params)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (h, v, p) = tiny();
        let c = decode(&encode(&h, &v, &p)).unwrap();
        assert_eq!(c.hyper, h);
        assert_eq!(c.vocab, v);
        for (a, b) in c.params.tensors().iter().zip(p.tensors()) {
            let bits = |t: &Tensor| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn damage_is_detected() {
        let (h, v, p) = tiny();
        let buf = encode(&h, &v, &p);
        for cut in [0, 3, 10, HEADER_LEN, buf.len() / 2, buf.len() - 1] {
            assert!(matches!(decode(&buf[..cut]), Err(CheckpointError::Truncated(_))), "cut {cut}");
        }
        let mut flipped = buf.clone();
        flipped[HEADER_LEN + 40] ^= 1;
        assert!(matches!(decode(&flipped), Err(CheckpointError::Checksum { .. })));
        let mut magic = buf.clone();
        magic[0] = b'X';
        assert!(matches!(decode(&magic), Err(CheckpointError::BadMagic)));
        let mut ver = buf;
        ver[4] = 2;
        assert!(matches!(decode(&ver), Err(CheckpointError::Version { found: 2 })));
    }

    #[test]
    fn architecture_check() {
        let (h, _, _) = tiny();
        let mut other = h.clone();
        other.lr = 0.5;
        other.epochs = 3;
        check_architecture(&h, &other).unwrap();
        other.heads = 4;
        let e = check_architecture(&h, &other).unwrap_err();
        assert!(e.to_string().contains("heads = 2"), "{e}");
    }
}
