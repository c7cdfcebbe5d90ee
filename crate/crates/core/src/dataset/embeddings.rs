//! EMB1: the on-disk representation table.
//!
//! Layout (little-endian, no padding, no footer):
//!
//! | offset | size      | field                         |
//! |--------|-----------|-------------------------------|
//! | 0      | 4         | magic `b"PREP"`               |
//! | 4      | 4         | format version, `u32` = 1     |
//! | 8      | 8         | rows `n`, `u64`               |
//! | 16     | 8         | dims `d`, `u64`               |
//! | 24     | 4·n·d     | `f32` values, row-major       |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"PREP";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 24;

/// Precomputed representations, one fixed row per document.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dims: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, dims: usize, data: Vec<f32>) -> Result<Self> {
        if rows == 0 || dims == 0 {
            return Err(Error::Validation(format!(
                "embedding matrix must be non-empty, got {rows}x{dims}"
            )));
        }
        if rows.checked_mul(dims) != Some(data.len()) {
            return Err(Error::Validation(format!(
                "{} values cannot fill a {rows}x{dims} matrix",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite value {} at row {}, column {}",
                data[pos],
                pos / dims,
                pos % dims
            )));
        }
        Ok(Self { rows, dims, data })
    }

    /// Rounds a 64-bit matrix to file precision.
    pub fn from_f64(values: ArrayView2<'_, f64>) -> Result<Self> {
        let (rows, dims) = values.dim();
        let data = values.iter().map(|&v| v as f32).collect();
        Self::new(rows, dims, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dims..(i + 1) * self.dims]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Widens to the 64-bit working precision used by training and scoring.
    pub fn to_f64(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.rows, self.dims), |(i, j)| {
            self.data[i * self.dims + j] as f64
        })
    }

    pub fn read_from<R: Read>(mut reader: R) -> Result<Self> {
        let mut header = [0u8; HEADER_LEN];
        reader
            .read_exact(&mut header)
            .map_err(|_| Error::Format("file shorter than the 24-byte EMB1 header".into()))?;
        if header[0..4] != MAGIC {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                &header[0..4],
                MAGIC
            )));
        }
        let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported EMB1 version {version}"
            )));
        }
        let rows = u64::from_le_bytes(header[8..16].try_into().unwrap());
        let dims = u64::from_le_bytes(header[16..24].try_into().unwrap());
        let expected = rows
            .checked_mul(dims)
            .and_then(|c| c.checked_mul(4))
            .ok_or_else(|| Error::Format(format!("header dimensions {rows}x{dims} overflow")))?;

        let mut payload = Vec::new();
        reader
            .read_to_end(&mut payload)
            .map_err(|e| Error::Format(format!("failed reading payload: {e}")))?;
        if payload.len() as u64 != expected {
            return Err(Error::SizeMismatch {
                expected,
                found: payload.len() as u64,
            });
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::new(rows as usize, dims as usize, data)
    }

    pub fn write_to<W: Write>(&self, mut writer: W) -> std::io::Result<()> {
        writer.write_all(&MAGIC)?;
        writer.write_all(&VERSION.to_le_bytes())?;
        writer.write_all(&(self.rows as u64).to_le_bytes())?;
        writer.write_all(&(self.dims as u64).to_le_bytes())?;
        for v in &self.data {
            writer.write_all(&v.to_le_bytes())?;
        }
        writer.flush()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.data.len());
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    EmbeddingMatrix::read_from(BufReader::new(file))
}

pub fn save_embeddings(path: impl AsRef<Path>, matrix: &EmbeddingMatrix) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    matrix
        .write_to(BufWriter::new(file))
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> EmbeddingMatrix {
        EmbeddingMatrix::new(2, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap()
    }

    #[test]
    fn loads_identity_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.emb");
        save_embeddings(&path, &sample()).unwrap();
        let loaded = load_embeddings(&path).unwrap();
        assert_eq!(loaded.rows(), 2);
        assert_eq!(loaded.dims(), 3);
        assert_eq!(loaded.row(0), &[1.0, 0.0, 0.0]);
        assert_eq!(loaded.row(1), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn file_round_trip_is_byte_exact() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.emb");
        let b = dir.path().join("b.emb");
        std::fs::write(&a, sample().to_bytes()).unwrap();
        save_embeddings(&b, &load_embeddings(&a).unwrap()).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn header_layout() {
        let bytes = sample().to_bytes();
        assert_eq!(&bytes[0..4], b"PREP");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 3);
        assert_eq!(bytes.len(), 24 + 6 * 4);
    }

    #[test]
    fn missing_row_is_size_mismatch() {
        let m = EmbeddingMatrix::new(4, 2, vec![0.5; 8]).unwrap();
        let mut bytes = m.to_bytes();
        bytes[8..16].copy_from_slice(&5u64.to_le_bytes());
        match EmbeddingMatrix::read_from(bytes.as_slice()) {
            Err(Error::SizeMismatch { expected, found }) => {
                assert_eq!(expected, 40);
                assert_eq!(found, 32);
            }
            other => panic!("expected size mismatch, got {other:?}"),
        }
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = sample().to_bytes();
        bytes.push(0);
        assert!(matches!(
            EmbeddingMatrix::read_from(bytes.as_slice()),
            Err(Error::SizeMismatch { .. })
        ));
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = sample().to_bytes();
        bytes[0] = b'X';
        assert!(matches!(
            EmbeddingMatrix::read_from(bytes.as_slice()),
            Err(Error::Format(_))
        ));
        let mut bytes = sample().to_bytes();
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            EmbeddingMatrix::read_from(bytes.as_slice()),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            EmbeddingMatrix::read_from(&b"PRE"[..]),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn non_finite_payload_rejected() {
        let mut bytes = sample().to_bytes();
        bytes[24..28].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            EmbeddingMatrix::read_from(bytes.as_slice()),
            Err(Error::Validation(_))
        ));
        assert!(EmbeddingMatrix::new(1, 1, vec![f32::INFINITY]).is_err());
    }

    #[test]
    fn empty_matrix_rejected() {
        assert!(EmbeddingMatrix::new(0, 3, vec![]).is_err());
        assert!(EmbeddingMatrix::new(3, 0, vec![]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_arbitrary_finite(
            (rows, dims, data) in (1usize..12, 1usize..12).prop_flat_map(|(r, d)| {
                (Just(r), Just(d), proptest::collection::vec(
                    proptest::num::f32::NORMAL | proptest::num::f32::SUBNORMAL | proptest::num::f32::ZERO,
                    r * d,
                ))
            })
        ) {
            let m = EmbeddingMatrix::new(rows, dims, data).unwrap();
            let bytes = m.to_bytes();
            let back = EmbeddingMatrix::read_from(bytes.as_slice()).unwrap();
            prop_assert_eq!(back.to_bytes(), bytes);
        }
    }
}
