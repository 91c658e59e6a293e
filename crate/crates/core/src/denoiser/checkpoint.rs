//! Parameter checkpoints.
//!
//! Binary layout, all integers little-endian:
//!
//! | offset     | size | field                               |
//! |------------|------|-------------------------------------|
//! | 0          | 4    | magic `RSMC`                        |
//! | 4          | 4    | u32 format version (1)              |
//! | 8          | 20   | u32 x5: in_channels, hidden, depth, kernel, embed_dim |
//! | 28         | 8    | u64 parameter count `n`             |
//! | 36         | 8n   | f64 parameters in flatten order     |
//! | 36 + 8n    | 32   | SHA-256 of all preceding bytes      |
//!
//! The metadata sidecar lives next to the checkpoint as `<path>.meta.json`.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DenoiserParams, LayerSpec, LossMode};
use crate::error::{Error, Result};
use crate::schedule::ScheduleParams;
use crate::train::TrainConfig;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RSMC";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 36;
const DIGEST_LEN: usize = 32;

pub fn write_checkpoint(params: &DenoiserParams, path: &Path) -> Result<()> {
    let spec = params.spec();
    let flat = params.flatten();
    let mut buf = Vec::with_capacity(HEADER_LEN + 8 * flat.len() + DIGEST_LEN);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    let fields = [
        VERSION,
        spec.in_channels as u32,
        spec.hidden as u32,
        spec.depth as u32,
        spec.kernel as u32,
        spec.embed_dim as u32,
    ];
    for v in fields {
        buf.write_u32::<LittleEndian>(v).expect("write to Vec");
    }
    buf.write_u64::<LittleEndian>(flat.len() as u64).expect("write to Vec");
    for v in &flat {
        buf.write_f64::<LittleEndian>(*v).expect("write to Vec");
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<DenoiserParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let format_err = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    if bytes.len() < HEADER_LEN + DIGEST_LEN {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            offset: 0,
            expected: (HEADER_LEN + DIGEST_LEN) as u64,
            found: bytes.len() as u64,
        });
    }
    if &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            offset: 0,
            found: String::from_utf8_lossy(&bytes[..4]).into_owned(),
        });
    }
    let mut cur = Cursor::new(&bytes[4..]);
    let mut next_u32 = || cur.read_u32::<LittleEndian>().map(|v| v as usize);
    let version = next_u32().map_err(|e| Error::io(path, e))?;
    if version != VERSION as usize {
        return Err(Error::Unsupported {
            path: path.to_path_buf(),
            offset: 4,
            what: format!("checkpoint version {version}"),
        });
    }
    let mut dims = [0usize; 5];
    for d in &mut dims {
        *d = next_u32().map_err(|e| Error::io(path, e))?;
    }
    let spec = LayerSpec {
        in_channels: dims[0],
        hidden: dims[1],
        depth: dims[2],
        kernel: dims[3],
        embed_dim: dims[4],
    };
    spec.validate().map_err(|e| format_err(format!("bad layer spec: {e}")))?;
    let n = u64::from_le_bytes(bytes[28..36].try_into().expect("8 bytes")) as usize;
    if n != spec.param_count() {
        return Err(format_err(format!(
            "parameter count {n} does not match layer spec ({})",
            spec.param_count()
        )));
    }
    let body_end = HEADER_LEN + 8 * n;
    if bytes.len() != body_end + DIGEST_LEN {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            offset: HEADER_LEN as u64,
            expected: (8 * n + DIGEST_LEN) as u64,
            found: (bytes.len() - HEADER_LEN) as u64,
        });
    }
    let digest = Sha256::digest(&bytes[..body_end]);
    if digest.as_slice() != &bytes[body_end..] {
        return Err(Error::ChecksumMismatch);
    }
    let mut flat = vec![0.0; n];
    let mut body = &bytes[HEADER_LEN..body_end];
    body.read_f64_into::<LittleEndian>(&mut flat)
        .map_err(|e| Error::io(path, e))?;
    DenoiserParams::unflatten(spec, &flat)
}

/// Plain-text (JSON) description of how a checkpoint was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub layer_spec: LayerSpec,
    /// Schedule the network was trained against.
    pub schedule: ScheduleParams,
    pub loss_mode: LossMode,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch: Option<usize>,
}

pub fn meta_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

pub fn write_meta(meta: &CheckpointMeta, checkpoint: &Path) -> Result<()> {
    let path = meta_path(checkpoint);
    let text = serde_json::to_string_pretty(meta)?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_meta(checkpoint: &Path) -> Result<CheckpointMeta> {
    let path = meta_path(checkpoint);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}
