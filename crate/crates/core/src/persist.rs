//! Binary embedding file.
//!
//! Layout, all little-endian:
//!
//! | offset | size | field                     |
//! |--------|------|---------------------------|
//! | 0      | 4    | magic `CMLE`              |
//! | 4      | 4    | version (`u32`, = 1)      |
//! | 8      | 4    | users N (`u32`)           |
//! | 12     | 4    | items M (`u32`)           |
//! | 16     | 4    | dim d (`u32`)             |
//! | 20     | 4·N·d| raw user matrix, row-major `f32` |
//! | ...    | 4·M·d| raw item matrix, row-major `f32` |

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::model::ModelParams;

pub const MAGIC: [u8; 4] = *b"CMLE";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 20;

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("bad magic bytes {0:?}, expected \"CMLE\"")]
    BadMagic([u8; 4]),
    #[error("unsupported embedding file version {0}")]
    UnsupportedVersion(u32),
    #[error("file is {actual} bytes, header implies {expected}")]
    Length { expected: usize, actual: usize },
    #[error("dimension {0} does not fit the file format")]
    TooLarge(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn encode(params: &ModelParams) -> Result<Vec<u8>, PersistError> {
    let to_u32 = |v: usize| u32::try_from(v).map_err(|_| PersistError::TooLarge(v));
    let (n, m, d) = (params.num_users(), params.num_items(), params.dim());
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * d * (n + m));
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&to_u32(n)?.to_le_bytes());
    out.extend_from_slice(&to_u32(m)?.to_le_bytes());
    out.extend_from_slice(&to_u32(d)?.to_le_bytes());
    for &v in params.user_raw.iter().chain(&params.item_raw) {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

/// Header fields `(users, items, dim)` without decoding the matrices.
pub fn decode_header(bytes: &[u8]) -> Result<(usize, usize, usize), PersistError> {
    if bytes.len() < HEADER_LEN {
        return Err(PersistError::Length {
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(PersistError::BadMagic(magic));
    }
    let version = read_u32(bytes, 4);
    if version != VERSION {
        return Err(PersistError::UnsupportedVersion(version));
    }
    let (n, m, d) = (
        read_u32(bytes, 8) as usize,
        read_u32(bytes, 12) as usize,
        read_u32(bytes, 16) as usize,
    );
    let expected = HEADER_LEN + 4 * d * (n + m);
    if bytes.len() != expected {
        return Err(PersistError::Length {
            expected,
            actual: bytes.len(),
        });
    }
    Ok((n, m, d))
}

pub fn decode(bytes: &[u8]) -> Result<ModelParams, PersistError> {
    let (n, m, d) = decode_header(bytes)?;
    let mut values = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64);
    let user_raw = values.by_ref().take(n * d).collect();
    let item_raw = values.collect();
    Ok(ModelParams::from_raw(n, m, d, user_raw, item_raw))
}

pub fn save(params: &ModelParams, path: &Path) -> Result<(), PersistError> {
    fs::write(path, encode(params)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ModelParams, PersistError> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_and_length() {
        let p = ModelParams::init(2, 3, 4, 0);
        let bytes = encode(&p).unwrap();
        assert_eq!(bytes.len(), 16 + 4 + 4 * 4 * (2 + 3));
        assert_eq!(&bytes[..4], b"CMLE");
        assert_eq!(read_u32(&bytes, 4), 1);
        assert_eq!(decode_header(&bytes).unwrap(), (2, 3, 4));
        assert_eq!(
            f32::from_le_bytes(bytes[20..24].try_into().unwrap()),
            p.user_raw[0] as f32
        );
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let p = ModelParams::init(3, 5, 7, 11);
        let first = encode(&p).unwrap();
        let loaded = decode(&first).unwrap();
        assert_eq!(encode(&loaded).unwrap(), first);
        for (a, b) in loaded.item_raw.iter().zip(&p.item_raw) {
            assert_eq!(*a as f32, *b as f32);
        }
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let mut bytes = encode(&ModelParams::init(1, 1, 2, 0)).unwrap();
        let truncated = &bytes[..bytes.len() - 1];
        assert!(matches!(
            decode(truncated),
            Err(PersistError::Length { .. })
        ));
        bytes[4] = 2;
        assert!(matches!(
            decode(&bytes),
            Err(PersistError::UnsupportedVersion(2))
        ));
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(PersistError::BadMagic(_))));
        assert!(matches!(decode(b"CML"), Err(PersistError::Length { .. })));
    }
}
