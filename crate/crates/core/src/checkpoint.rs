//! Parameter checkpoint container.
//!
//! Layout:
//!
//! ```text
//! b"KSIMCKPT"                 8-byte magic
//! u32 LE                      header length H
//! H bytes                     UTF-8 JSON header
//! N × f64 LE                  parameter vector, N = header.n_params
//! ```
//!
//! The header carries `format_version`, a `kind` tag, a free-form
//! `architecture` object and `n_params`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"KSIMCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("expected a {expected} checkpoint, found {found}")]
    Kind { expected: String, found: String },
    #[error("truncated checkpoint")]
    Truncated,
    #[error("header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format_version: u32,
    pub kind: String,
    pub architecture: serde_json::Value,
    pub n_params: usize,
}

pub fn encode(
    kind: &str,
    architecture: serde_json::Value,
    params: &[f64],
) -> Result<Vec<u8>, CheckpointError> {
    let header = Header {
        format_version: FORMAT_VERSION,
        kind: kind.to_string(),
        architecture,
        n_params: params.len(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(12 + json.len() + 8 * params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8], expected_kind: &str) -> Result<(Header, Vec<f64>), CheckpointError> {
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = bytes.get(12..12 + hlen).ok_or(CheckpointError::Truncated)?;
    let header: Header = serde_json::from_slice(body)?;
    if header.format_version != FORMAT_VERSION {
        return Err(CheckpointError::Version(header.format_version));
    }
    if header.kind != expected_kind {
        return Err(CheckpointError::Kind {
            expected: expected_kind.into(),
            found: header.kind,
        });
    }
    let data = &bytes[12 + hlen..];
    if data.len() != 8 * header.n_params {
        return Err(CheckpointError::Truncated);
    }
    let params = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, params))
}

pub fn write(
    path: &Path,
    kind: &str,
    architecture: serde_json::Value,
    params: &[f64],
) -> Result<(), CheckpointError> {
    let bytes = encode(kind, architecture, params)?;
    std::fs::write(path, bytes).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read(path: &Path, expected_kind: &str) -> Result<(Header, Vec<f64>), CheckpointError> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode(&bytes, expected_kind)
}
