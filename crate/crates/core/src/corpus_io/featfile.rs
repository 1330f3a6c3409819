//! Binary feature files: `TDSV` magic, format version (u16), rows (u32),
//! cols (u32), then a row-major little-endian `f32` payload.

use std::io::{Read, Write};
use std::path::Path;

use super::IoError;
use crate::features::{FeatureKind, FeatureMatrix};

pub const FEATURE_MAGIC: &[u8; 4] = b"TDSV";
pub const FEATURE_FORMAT_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 + 4;

pub fn encode_features(matrix: &FeatureMatrix) -> Result<Vec<u8>, IoError> {
    let rows = u32::try_from(matrix.num_frames()).map_err(|_| IoError::DimensionOverflow)?;
    let cols = u32::try_from(matrix.dim()).map_err(|_| IoError::DimensionOverflow)?;
    let mut buf = Vec::with_capacity(HEADER_LEN + matrix.as_slice().len() * 4);
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&FEATURE_FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&rows.to_le_bytes());
    buf.extend_from_slice(&cols.to_le_bytes());
    for &v in matrix.as_slice() {
        let narrow = v as f32;
        if !narrow.is_finite() {
            return Err(IoError::ValueOutOfRange(v));
        }
        buf.extend_from_slice(&narrow.to_le_bytes());
    }
    Ok(buf)
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureMatrix, IoError> {
    if bytes.len() < 4 || &bytes[..4] != FEATURE_MAGIC {
        return Err(IoError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(IoError::Truncated {
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FEATURE_FORMAT_VERSION {
        return Err(IoError::VersionMismatch {
            found: version as u32,
            supported: FEATURE_FORMAT_VERSION as u32,
        });
    }
    let rows = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
    let payload = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or(IoError::DimensionOverflow)?;
    let expected = HEADER_LEN.checked_add(payload).ok_or(IoError::DimensionOverflow)?;
    if bytes.len() < expected {
        return Err(IoError::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(IoError::Corrupt(format!(
            "{} trailing bytes after payload",
            bytes.len() - expected
        )));
    }
    let data: Vec<f64> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(FeatureMatrix::new(rows, cols, data, FeatureKind::External)?)
}

/// Values are stored as `f32`; matrices holding `f32`-representable values
/// round-trip bit-exactly.
pub fn write_feature_file(path: impl AsRef<Path>, matrix: &FeatureMatrix) -> Result<(), IoError> {
    let path = path.as_ref();
    let bytes = encode_features(matrix)?;
    let mut file = std::fs::File::create(path).map_err(|e| IoError::io(path, e))?;
    file.write_all(&bytes).map_err(|e| IoError::io(path, e))
}

pub fn read_feature_file(path: impl AsRef<Path>) -> Result<FeatureMatrix, IoError> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| IoError::io(path, e))?;
    decode_features(&bytes)
}
