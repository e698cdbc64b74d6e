//! Binary probability matrix: `GMPB`, u32 version, u32 columns, u64 rows,
//! row-major f32 LE values, then the first 8 bytes of the SHA-256 of
//! everything before it.

use super::DataError;
use byteorder::{ByteOrder, LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;
use sha2::{Digest, Sha256};
use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

pub const PROBS_MAGIC: &[u8; 4] = b"GMPB";
pub const PROBS_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 8;

fn digest64(bytes: &[u8]) -> u64 {
    LittleEndian::read_u64(&Sha256::digest(bytes)[..8])
}

pub fn encode_probs(matrix: &Array2<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + matrix.len() * 4 + 8);
    out.extend_from_slice(PROBS_MAGIC);
    out.write_u32::<LittleEndian>(PROBS_VERSION).unwrap();
    out.write_u32::<LittleEndian>(matrix.ncols() as u32).unwrap();
    out.write_u64::<LittleEndian>(matrix.nrows() as u64).unwrap();
    for v in matrix.iter() {
        out.write_f32::<LittleEndian>(*v).unwrap();
    }
    let checksum = digest64(&out);
    out.write_u64::<LittleEndian>(checksum).unwrap();
    out
}

pub fn decode_probs(bytes: &[u8]) -> Result<Array2<f32>, DataError> {
    let bad = |m: &str| DataError::ProbsFormat(m.to_string());
    if bytes.len() < HEADER_LEN + 8 {
        return Err(bad("file shorter than header"));
    }
    if &bytes[..4] != PROBS_MAGIC {
        return Err(bad("bad magic"));
    }
    let mut cur = Cursor::new(&bytes[4..HEADER_LEN]);
    let version = cur.read_u32::<LittleEndian>()?;
    if version != PROBS_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let cols = cur.read_u32::<LittleEndian>()? as usize;
    let rows = cur.read_u64::<LittleEndian>()? as usize;
    let body = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| bad("header sizes overflow"))?;
    if bytes.len() != HEADER_LEN + body + 8 {
        return Err(bad(&format!(
            "header declares {rows}x{cols} but body holds {} bytes",
            bytes.len().saturating_sub(HEADER_LEN + 8)
        )));
    }
    let stored = LittleEndian::read_u64(&bytes[HEADER_LEN + body..]);
    if stored != digest64(&bytes[..HEADER_LEN + body]) {
        return Err(DataError::Checksum);
    }
    let mut values = vec![0f32; rows * cols];
    Cursor::new(&bytes[HEADER_LEN..HEADER_LEN + body]).read_f32_into::<LittleEndian>(&mut values)?;
    Array2::from_shape_vec((rows, cols), values).map_err(|e| bad(&e.to_string()))
}

pub fn save_probs(path: &Path, matrix: &Array2<f32>) -> Result<(), DataError> {
    fs::write(path, encode_probs(matrix))?;
    Ok(())
}

pub fn load_probs(path: &Path) -> Result<Array2<f32>, DataError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_probs(&bytes)
}

/// Loads and checks the column count against the mesh class count.
pub fn load_probs_for(path: &Path, num_classes: usize) -> Result<Array2<f32>, DataError> {
    let m = load_probs(path)?;
    if m.ncols() != num_classes {
        return Err(DataError::Dimension {
            expected: num_classes,
            found: m.ncols(),
        });
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Array2<f32> {
        Array2::from_shape_fn((7, 5), |(i, j)| (i * 5 + j) as f32 / 35.0 + 1e-7)
    }

    #[test]
    fn round_trip_is_exact() {
        let m = sample();
        let decoded = decode_probs(&encode_probs(&m)).unwrap();
        assert_eq!(
            decoded.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            m.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(decoded.dim(), (7, 5));
    }

    #[test]
    fn truncation_and_corruption_are_detected() {
        let bytes = encode_probs(&sample());
        assert!(matches!(decode_probs(&bytes[..bytes.len() - 3]), Err(DataError::ProbsFormat(_))));
        assert!(matches!(decode_probs(&bytes[..10]), Err(DataError::ProbsFormat(_))));
        let mut flipped = bytes.clone();
        flipped[HEADER_LEN + 2] ^= 0x40;
        assert!(matches!(decode_probs(&flipped), Err(DataError::Checksum)));
    }

    #[test]
    fn class_count_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        save_probs(&path, &sample()).unwrap();
        assert!(load_probs_for(&path, 5).is_ok());
        assert!(matches!(
            load_probs_for(&path, 6),
            Err(DataError::Dimension { expected: 6, found: 5 })
        ));
    }
}
