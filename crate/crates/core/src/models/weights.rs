//! Binary weight files.
//!
//! Layout (little endian): magic `GMW1`, `u32` version, `u8` kind
//! (1 dense, 2 album), `u32` spec length, spec JSON, `u64` value count,
//! trainable parameters then running statistics as `f64`, and a trailing
//! `u64` holding the first eight bytes of the SHA-256 of everything before it.

use super::album_net::{AlbumNet, AlbumNetSpec};
use super::dense_net::{DenseNet, DenseNetSpec};
use super::{ModelError, Network};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use std::io::{Cursor, Read};
use std::path::Path;

pub const WEIGHTS_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"GMW1";

#[derive(Debug, Clone, PartialEq)]
pub enum SavedModel {
    Dense(DenseNet),
    Album(AlbumNet),
}

fn digest(bytes: &[u8]) -> u64 {
    let hash = Sha256::digest(bytes);
    u64::from_le_bytes(hash[..8].try_into().expect("eight bytes"))
}

fn write_values<N: Network>(out: &mut Vec<u8>, model: &N) {
    let slices: Vec<&[f64]> = model.params().into_iter().chain(model.running()).collect();
    let count: usize = slices.iter().map(|s| s.len()).sum();
    out.write_u64::<LittleEndian>(count as u64).expect("vec write");
    for v in slices.into_iter().flatten() {
        out.write_f64::<LittleEndian>(*v).expect("vec write");
    }
}

fn read_values<N: Network>(cursor: &mut Cursor<&[u8]>, model: &mut N) -> Result<(), ModelError> {
    let count = cursor.read_u64::<LittleEndian>().map_err(truncated)? as usize;
    let expected: usize = model.params().iter().chain(model.running().iter()).map(|s| s.len()).sum();
    if count != expected {
        return Err(ModelError::Malformed(format!(
            "{count} stored values, spec needs {expected}"
        )));
    }
    for slice in model.params_mut() {
        cursor.read_f64_into::<LittleEndian>(slice).map_err(truncated)?;
    }
    for slice in model.running_mut() {
        cursor.read_f64_into::<LittleEndian>(slice).map_err(truncated)?;
    }
    Ok(())
}

fn truncated(_: std::io::Error) -> ModelError {
    ModelError::Malformed("truncated".into())
}

pub fn encode_weights(model: &SavedModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.write_u32::<LittleEndian>(WEIGHTS_VERSION).expect("vec write");
    let (kind, spec) = match model {
        SavedModel::Dense(m) => (1u8, serde_json::to_vec(&m.spec)),
        SavedModel::Album(m) => (2u8, serde_json::to_vec(&m.spec)),
    };
    let spec = spec.expect("spec serialises");
    out.write_u8(kind).expect("vec write");
    out.write_u32::<LittleEndian>(spec.len() as u32).expect("vec write");
    out.extend_from_slice(&spec);
    match model {
        SavedModel::Dense(m) => write_values(&mut out, m),
        SavedModel::Album(m) => write_values(&mut out, m),
    }
    let sum = digest(&out);
    out.write_u64::<LittleEndian>(sum).expect("vec write");
    out
}

pub fn decode_weights(bytes: &[u8]) -> Result<SavedModel, ModelError> {
    if bytes.len() < 4 + 4 + 1 + 4 + 8 + 8 || &bytes[..4] != MAGIC {
        return Err(ModelError::Malformed("missing header".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("four bytes"));
    if version != WEIGHTS_VERSION {
        return Err(ModelError::VersionMismatch {
            found: version,
            expected: WEIGHTS_VERSION,
        });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    if digest(body) != u64::from_le_bytes(tail.try_into().expect("eight bytes")) {
        return Err(ModelError::Checksum);
    }
    let mut cursor = Cursor::new(body);
    cursor.set_position(8);
    let kind = cursor.read_u8().map_err(truncated)?;
    let len = cursor.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    let mut spec = vec![0u8; len];
    cursor.read_exact(&mut spec).map_err(truncated)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let model = match kind {
        1 => {
            let spec: DenseNetSpec =
                serde_json::from_slice(&spec).map_err(|e| ModelError::Malformed(e.to_string()))?;
            let mut m = DenseNet::new(spec, &mut rng);
            read_values(&mut cursor, &mut m)?;
            SavedModel::Dense(m)
        }
        2 => {
            let spec: AlbumNetSpec =
                serde_json::from_slice(&spec).map_err(|e| ModelError::Malformed(e.to_string()))?;
            let mut m = AlbumNet::new(spec, &mut rng);
            read_values(&mut cursor, &mut m)?;
            SavedModel::Album(m)
        }
        other => return Err(ModelError::Malformed(format!("unknown model kind {other}"))),
    };
    if cursor.position() as usize != body.len() {
        return Err(ModelError::Malformed("trailing bytes".into()));
    }
    Ok(model)
}

pub fn save_weights(model: &SavedModel, path: &Path) -> Result<(), ModelError> {
    std::fs::write(path, encode_weights(model))?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<SavedModel, ModelError> {
    decode_weights(&std::fs::read(path)?)
}
