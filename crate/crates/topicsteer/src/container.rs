//! Binary model container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic     8 bytes  "TSTEERMC"
//! version   u32
//! hlen      u32      length of the JSON header
//! header    hlen     {"kind", "meta", "tensors": [{"name", "shape"}]}
//! data      f64 LE   every tensor in header order
//! digest    32 bytes SHA-256 of everything above
//! ```

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use topicsteer_core::Tensor;

use crate::io::{self, IoError};

pub const MAGIC: &[u8; 8] = b"TSTEERMC";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("{0}: not a model container")]
    BadMagic(String),
    #[error("{path}: container version {found} is not supported (expected {FORMAT_VERSION})")]
    Version { path: String, found: u32 },
    #[error("{path}: expected a {expected} container, found {found}")]
    Kind { path: String, expected: String, found: String },
    #[error("{0}: truncated container")]
    Truncated(String),
    #[error("{0}: checksum mismatch")]
    Checksum(String),
    #[error("{path}: {message}")]
    Header { path: String, message: String },
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header<M> {
    kind: String,
    meta: M,
    tensors: Vec<TensorEntry>,
}

pub fn encode<M: Serialize>(kind: &str, meta: &M, tensors: &[(&str, &Tensor)]) -> Vec<u8> {
    let header = Header {
        kind: kind.to_string(),
        meta,
        tensors: tensors.iter().map(|(n, t)| TensorEntry { name: n.to_string(), shape: t.shape().to_vec() }).collect(),
    };
    let hbytes = serde_json::to_vec(&header).expect("header serialises");
    let mut out = Vec::with_capacity(16 + hbytes.len() + tensors.iter().map(|(_, t)| 8 * t.numel()).sum::<usize>() + 32);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(hbytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&hbytes);
    for (_, t) in tensors {
        for x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

pub fn decode<M: DeserializeOwned>(
    name: &str,
    bytes: &[u8],
    kind: &str,
) -> Result<(M, Vec<(String, Tensor)>), ContainerError> {
    let n = bytes.len();
    if n < 16 + 32 || &bytes[..8] != MAGIC {
        return Err(ContainerError::BadMagic(name.into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(ContainerError::Version { path: name.into(), found: version });
    }
    let (body, digest) = bytes.split_at(n - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(ContainerError::Checksum(name.into()));
    }
    let hlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let hend = 16usize.checked_add(hlen).filter(|&e| e <= body.len()).ok_or(ContainerError::Truncated(name.into()))?;
    let header: Header<M> = serde_json::from_slice(&body[16..hend])
        .map_err(|e| ContainerError::Header { path: name.into(), message: e.to_string() })?;
    if header.kind != kind {
        return Err(ContainerError::Kind { path: name.into(), expected: kind.into(), found: header.kind });
    }
    let mut pos = hend;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in header.tensors {
        let count: usize = e.shape.iter().product();
        let end = pos.checked_add(8 * count).filter(|&x| x <= body.len()).ok_or(ContainerError::Truncated(name.into()))?;
        let data: Vec<f64> = body[pos..end].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        pos = end;
        let t = Tensor::new(e.shape, data)
            .map_err(|err| ContainerError::Header { path: name.into(), message: format!("tensor {}: {err}", e.name) })?;
        tensors.push((e.name, t));
    }
    if pos != body.len() {
        return Err(ContainerError::Header { path: name.into(), message: "trailing bytes after tensor data".into() });
    }
    Ok((header.meta, tensors))
}

pub fn write<M: Serialize>(path: &Path, kind: &str, meta: &M, tensors: &[(&str, &Tensor)]) -> Result<(), ContainerError> {
    Ok(io::write_bytes(path, &encode(kind, meta, tensors))?)
}

pub fn read<M: DeserializeOwned>(path: &Path, kind: &str) -> Result<(M, Vec<(String, Tensor)>), ContainerError> {
    let bytes = io::read_bytes(path)?;
    decode(&path.display().to_string(), &bytes, kind)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<(String, Tensor)> {
        vec![
            ("w".into(), Tensor::matrix(2, 3, vec![1.0, -2.5, 3.0, 1e-300, 0.0, -0.0]).unwrap()),
            ("b".into(), Tensor::from_vec(vec![0.1, 0.2]).unwrap()),
        ]
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ts = sample();
        let refs: Vec<(&str, &Tensor)> = ts.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let bytes = encode("lm", &serde_json::json!({"d": 3}), &refs);
        let (meta, back): (serde_json::Value, _) = decode("x", &bytes, "lm").unwrap();
        assert_eq!(meta["d"], 3);
        assert_eq!(back.len(), 2);
        for ((n1, t1), (n2, t2)) in ts.iter().zip(&back) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            assert!(t1.data().iter().zip(t2.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn rejects_corruption() {
        let ts = sample();
        let refs: Vec<(&str, &Tensor)> = ts.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let bytes = encode("lm", &(), &refs);
        assert!(matches!(decode::<()>("x", &bytes, "disc"), Err(ContainerError::Kind { .. })));
        let mut flipped = bytes.clone();
        flipped[40] ^= 1;
        assert!(matches!(decode::<()>("x", &flipped, "lm"), Err(ContainerError::Checksum(_))));
        assert!(matches!(decode::<()>("x", &bytes[..20], "lm"), Err(ContainerError::BadMagic(_))));
        let mut v2 = bytes.clone();
        v2[8] = 2;
        assert!(matches!(decode::<()>("x", &v2, "lm"), Err(ContainerError::Version { found: 2, .. })));
    }
}
