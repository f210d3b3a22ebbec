//! Binary parameter checkpoints.
//!
//! Layout: a 4-byte magic, a format version, the SHA-256 of the model
//! config's TOML serialization, then each tensor in layout order as
//! `name length, name, rank, dims, little-endian f32 data`. Values are
//! stored as `f32`; loading widens back to `f64`, so a save/load cycle
//! rounds once and is a fixpoint afterwards.
//!
//! The config hash makes a checkpoint refuse to load into a model it was
//! not trained for instead of producing silently wrong output.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{ModelConfig, Parameters};
use crate::error::{Error, Result};

const MAGIC: [u8; 4] = *b"ACDP";
const VERSION: u32 = 1;

/// SHA-256 over the config's TOML form, hex-encoded. Any field change,
/// including the head variant, changes the hash.
pub fn config_hash(cfg: &ModelConfig) -> String {
    let text = toml::to_string(cfg).expect("model config serializes");
    hex(&Sha256::digest(text.as_bytes()))
}

/// Hash over everything except the head, so two configs that differ only
/// in output head compare equal. Used to confirm that compared variants
/// really share a trunk.
pub fn trunk_hash(cfg: &ModelConfig) -> String {
    let mut hasher = Sha256::new();
    for entry in cfg.layout() {
        if !entry.trunk {
            continue;
        }
        hasher.update(entry.name.as_bytes());
        for d in &entry.shape {
            hasher.update((*d as u64).to_le_bytes());
        }
    }
    hex(&hasher.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn digest_bytes(cfg: &ModelConfig) -> [u8; 32] {
    let text = toml::to_string(cfg).expect("model config serializes");
    Sha256::digest(text.as_bytes()).into()
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    cfg: &ModelConfig,
    params: &Parameters,
) -> Result<()> {
    let path = path.as_ref();
    if params.len() != cfg.count_parameters() {
        return Err(Error::Shape(format!(
            "checkpoint save: {} values for a {}-parameter config",
            params.len(),
            cfg.count_parameters()
        )));
    }
    let layout = cfg.layout();
    let mut buf = Vec::new();
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&digest_bytes(cfg));
    buf.extend_from_slice(&(layout.len() as u32).to_le_bytes());
    for entry in &layout {
        buf.extend_from_slice(&(entry.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(entry.name.as_bytes());
        buf.extend_from_slice(&(entry.shape.len() as u32).to_le_bytes());
        for d in &entry.shape {
            buf.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for &v in &params.values()[entry.offset..entry.offset + entry.len()] {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>, cfg: &ModelConfig) -> Result<Parameters> {
    let path = path.as_ref();
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::Format {
        path: path.display().to_string(),
        msg: msg.to_string(),
    };
    let mut cur = Cursor::new(data.as_slice());
    let mut magic = [0u8; 4];
    cur.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if magic != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = read_u32(&mut cur).ok_or_else(|| bad("truncated header"))?;
    if version != VERSION {
        return Err(Error::CheckpointMismatch(format!(
            "format version {version}, this build reads {VERSION}"
        )));
    }
    let mut digest = [0u8; 32];
    cur.read_exact(&mut digest).map_err(|_| bad("truncated header"))?;
    if digest != digest_bytes(cfg) {
        return Err(Error::CheckpointMismatch(format!(
            "config hash {} does not match this config's {}",
            hex(&digest),
            config_hash(cfg)
        )));
    }
    let layout = cfg.layout();
    let count = read_u32(&mut cur).ok_or_else(|| bad("truncated header"))? as usize;
    if count != layout.len() {
        return Err(Error::CheckpointMismatch(format!(
            "{count} tensors, config has {}",
            layout.len()
        )));
    }
    let mut values = vec![0.0f64; cfg.count_parameters()];
    for entry in &layout {
        let name_len = read_u32(&mut cur).ok_or_else(|| bad("truncated tensor"))? as usize;
        if name_len > 4096 {
            return Err(bad("unreasonable tensor name length"));
        }
        let mut name = vec![0u8; name_len];
        cur.read_exact(&mut name).map_err(|_| bad("truncated tensor"))?;
        if name != entry.name.as_bytes() {
            return Err(Error::CheckpointMismatch(format!(
                "tensor {} where {} was expected",
                String::from_utf8_lossy(&name),
                entry.name
            )));
        }
        let rank = read_u32(&mut cur).ok_or_else(|| bad("truncated tensor"))? as usize;
        if rank != entry.shape.len() {
            return Err(Error::CheckpointMismatch(format!(
                "tensor {} has rank {rank}, expected {}",
                entry.name,
                entry.shape.len()
            )));
        }
        for &expect in &entry.shape {
            let got = read_u32(&mut cur).ok_or_else(|| bad("truncated tensor"))? as usize;
            if got != expect {
                return Err(Error::CheckpointMismatch(format!(
                    "tensor {} dim {got}, expected {expect}",
                    entry.name
                )));
            }
        }
        for v in &mut values[entry.offset..entry.offset + entry.len()] {
            let mut raw = [0u8; 4];
            cur.read_exact(&mut raw).map_err(|_| bad("truncated tensor data"))?;
            *v = f32::from_le_bytes(raw) as f64;
        }
    }
    if cur.position() != data.len() as u64 {
        return Err(bad("trailing bytes after the last tensor"));
    }
    Parameters::from_values(cfg, values)
}

fn read_u32(cur: &mut Cursor<&[u8]>) -> Option<u32> {
    let mut raw = [0u8; 4];
    cur.read_exact(&mut raw).ok()?;
    Some(u32::from_le_bytes(raw))
}
