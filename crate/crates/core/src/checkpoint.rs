//! Binary checkpoint format and its metadata sidecar.
//!
//! Layout (little-endian): magic `TOGS`, format version `u32`, count `N`
//! `u64`, table length `L` `u32`, then `f32` columns in this order:
//! position (3N), rotation (4N), log_scale (3N), opacity_logit (N),
//! offset_table (L·N), intensity_logit (N). Nothing follows the last column.
//!
//! The sidecar `<checkpoint>.meta.json` records the iteration and a SHA-256
//! of the training configuration.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, IoContext, Result};
use crate::math::Real;
use crate::model::{GaussianCloud, ParamGroup, Params};

pub const MAGIC: [u8; 4] = *b"TOGS";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 4;

/// Serializes the cloud's parameters (as `f32`).
pub fn encode<T: Real>(cloud: &GaussianCloud<T>) -> Vec<u8> {
    let p = cloud.params();
    let scalars: usize = ParamGroup::ALL.iter().map(|&g| p.column(g).len()).sum();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * scalars);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(cloud.len() as u64).to_le_bytes());
    out.extend_from_slice(&(cloud.table_len() as u32).to_le_bytes());
    for group in ParamGroup::ALL {
        for v in p.column(group) {
            out.extend_from_slice(&(v.f64() as f32).to_le_bytes());
        }
    }
    out
}

/// Parses a checkpoint; nothing is returned unless the whole buffer is valid.
pub fn decode(bytes: &[u8]) -> Result<GaussianCloud<f32>> {
    if bytes.len() < 4 {
        return Err(Error::Truncated(format!("{} bytes is shorter than the magic", bytes.len())));
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated(format!("{} bytes is shorter than the header", bytes.len())));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let l = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
    if l == 0 {
        return Err(Error::EmptyTable);
    }
    let per_row = (3 + 4 + 3 + 1 + l + 1) as u64;
    let expected = n
        .checked_mul(per_row * 4)
        .and_then(|b| b.checked_add(HEADER_LEN as u64))
        .ok_or_else(|| Error::Truncated(format!("implausible count {n}")))?;
    if (bytes.len() as u64) < expected {
        return Err(Error::Truncated(format!(
            "expected {expected} bytes for N = {n}, L = {l}, found {}",
            bytes.len()
        )));
    }
    if (bytes.len() as u64) > expected {
        return Err(Error::Truncated(format!(
            "{} trailing bytes after the last column",
            bytes.len() as u64 - expected
        )));
    }
    let n = n as usize;
    let mut params = Params::<f32>::zeros(n, l);
    let mut pos = HEADER_LEN;
    for group in ParamGroup::ALL {
        for v in params.column_mut(group).iter_mut() {
            *v = f32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap());
            pos += 4;
        }
    }
    Ok(GaussianCloud::from_params(params))
}

/// SHA-256 of the encoded checkpoint, hex.
pub fn checkpoint_hash<T: Real>(cloud: &GaussianCloud<T>) -> String {
    hex::encode(Sha256::digest(encode(cloud)))
}

/// SHA-256 of arbitrary text (used for configuration hashes), hex.
pub fn text_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

pub fn save<T: Real>(cloud: &GaussianCloud<T>, path: &Path) -> Result<()> {
    fs::write(path, encode(cloud)).with_path(path)
}

pub fn load(path: &Path) -> Result<GaussianCloud<f32>> {
    decode(&fs::read(path).with_path(path)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub count: u64,
    pub table_len: u32,
    pub iteration: u64,
    pub config_hash: String,
}

pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    checkpoint.with_file_name(name)
}

/// Writes the checkpoint and its sidecar.
pub fn save_with_meta<T: Real>(cloud: &GaussianCloud<T>, path: &Path, iteration: u64, config_hash: &str) -> Result<()> {
    save(cloud, path)?;
    let meta = CheckpointMeta {
        format_version: FORMAT_VERSION,
        count: cloud.len() as u64,
        table_len: cloud.table_len() as u32,
        iteration,
        config_hash: config_hash.to_owned(),
    };
    let side = sidecar_path(path);
    let mut text = serde_json::to_string_pretty(&meta)?;
    text.push('\n');
    fs::write(&side, text).with_path(&side)
}

/// Reads the sidecar if present.
pub fn load_meta(path: &Path) -> Result<Option<CheckpointMeta>> {
    let side = sidecar_path(path);
    if !side.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&side).with_path(&side)?;
    Ok(Some(serde_json::from_str(&text)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::render;
    use crate::synthetic::{frontal_camera, random_scene, SceneParams};

    fn cloud(n: usize) -> GaussianCloud<f32> {
        random_scene(5, &SceneParams { count: n, ..SceneParams::default() })
    }

    #[test]
    fn roundtrip_columns_and_render() {
        let c = cloud(1000);
        let back = decode(&encode(&c)).unwrap();
        assert_eq!(back.params(), c.params());
        let cam = frontal_camera(32, 32);
        assert_eq!(render(&c, &cam, 0.3).unwrap(), render(&back, &cam, 0.3).unwrap());
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&cloud(2));
        assert_eq!(&bytes[..4], b"TOGS");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), FORMAT_VERSION);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 5);
        assert_eq!(bytes.len(), 20 + 4 * 2 * (3 + 4 + 3 + 1 + 5 + 1));
    }

    #[test]
    fn corrupt_inputs() {
        let good = encode(&cloud(3));
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(Error::BadMagic(_))));
        let mut v = good.clone();
        v[4..8].copy_from_slice(&7u32.to_le_bytes());
        let err = decode(&v).unwrap_err();
        assert!(matches!(err, Error::VersionMismatch { found: 7, expected: 1 }));
        assert!(err.to_string().contains('7') && err.to_string().contains('1'));
        assert!(matches!(decode(&good[..good.len() - 1]), Err(Error::Truncated(_))));
        assert!(matches!(decode(&good[..10]), Err(Error::Truncated(_))));
        let mut long = good;
        long.push(0);
        assert!(matches!(decode(&long), Err(Error::Truncated(_))));
    }

    #[test]
    fn sidecar_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_with_meta(&cloud(4), &path, 1234, &text_hash("a = 1")).unwrap();
        let meta = load_meta(&path).unwrap().unwrap();
        assert_eq!(meta.iteration, 1234);
        assert_eq!(meta.count, 4);
        assert_eq!(meta.config_hash.len(), 64);
        assert_eq!(load(&path).unwrap().len(), 4);
        assert!(dir.path().join("model.ckpt.meta.json").exists());
    }
}
