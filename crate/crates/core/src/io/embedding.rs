use std::path::Path;

use ndarray::Array2;

use super::IoError;
use crate::tensor::{FeatureTensor, GridDims};

pub const MAGIC: [u8; 4] = *b"GRCE";
pub const VERSION: u32 = 1;

/// Decoded embedding file: a token matrix (rank 2) or a feature grid (rank 4).
#[derive(Debug, Clone, PartialEq)]
pub enum Embedding {
    Matrix(Array2<f64>),
    Tensor(FeatureTensor),
}

impl Embedding {
    pub fn shape(&self) -> Vec<usize> {
        match self {
            Embedding::Matrix(m) => vec![m.nrows(), m.ncols()],
            Embedding::Tensor(t) => t.dims().as_array().to_vec(),
        }
    }
}

/// Layout: magic, `u32` version, `u32` rank, `rank × u32` dims, then
/// row-major `f32` payload, all little-endian.
pub fn encode_embedding(shape: &[usize], values: &[f64]) -> Result<Vec<u8>, IoError> {
    if shape.len() != 2 && shape.len() != 4 {
        return Err(IoError::BadRank(shape.len() as u32));
    }
    let count: usize = shape.iter().product();
    if count != values.len() {
        return Err(IoError::Inconsistent(format!(
            "shape {shape:?} holds {count} values, got {}",
            values.len()
        )));
    }
    let mut out = Vec::with_capacity(12 + 4 * shape.len() + 4 * count);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        let d = u32::try_from(d).map_err(|_| IoError::Inconsistent(format!("dim {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

fn take_u32(bytes: &[u8], at: usize) -> Result<u32, IoError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("4-byte slice")))
        .ok_or(IoError::TruncatedPayload {
            expected: at + 4,
            actual: bytes.len(),
        })
}

pub fn decode_embedding(bytes: &[u8]) -> Result<Embedding, IoError> {
    let magic: [u8; 4] = bytes
        .get(..4)
        .ok_or(IoError::TruncatedPayload {
            expected: 4,
            actual: bytes.len(),
        })?
        .try_into()
        .expect("4-byte slice");
    if magic != MAGIC {
        return Err(IoError::BadMagic(magic));
    }
    let version = take_u32(bytes, 4)?;
    if version != VERSION {
        return Err(IoError::BadVersion(version));
    }
    let rank = take_u32(bytes, 8)?;
    if rank != 2 && rank != 4 {
        return Err(IoError::BadRank(rank));
    }
    let mut dims = Vec::with_capacity(rank as usize);
    for r in 0..rank as usize {
        dims.push(take_u32(bytes, 12 + 4 * r)? as usize);
    }
    let header = 12 + 4 * rank as usize;
    let count: usize = dims.iter().product();
    let expected = header + 4 * count;
    if bytes.len() < expected {
        return Err(IoError::TruncatedPayload {
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(IoError::TrailingBytes(bytes.len() - expected));
    }
    let values: Vec<f64> = bytes[header..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64)
        .collect();
    if rank == 2 {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(crate::tensor::TensorError::NonFinite(i).into());
        }
        let m = Array2::from_shape_vec((dims[0], dims[1]), values)
            .map_err(|e| IoError::Inconsistent(e.to_string()))?;
        Ok(Embedding::Matrix(m))
    } else {
        let t = FeatureTensor::new(GridDims::new(dims[0], dims[1], dims[2], dims[3]), values)?;
        Ok(Embedding::Tensor(t))
    }
}

pub fn read_embedding(path: &Path) -> Result<Embedding, IoError> {
    let bytes = std::fs::read(path).map_err(|e| IoError::io(path, e))?;
    decode_embedding(&bytes)
}

pub fn write_embedding(path: &Path, shape: &[usize], values: &[f64]) -> Result<(), IoError> {
    let bytes = encode_embedding(shape, values)?;
    super::write_atomic(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_file_decodes() {
        let bytes = encode_embedding(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(&bytes[..4], b"GRCE");
        assert_eq!(bytes.len(), 12 + 8 + 24);
        match decode_embedding(&bytes).unwrap() {
            Embedding::Matrix(m) => {
                assert_eq!(m.dim(), (2, 3));
                assert_eq!(m[[1, 2]], 6.0);
            }
            other => panic!("expected matrix, got {other:?}"),
        }
    }

    #[test]
    fn header_layout_is_little_endian() {
        let bytes = encode_embedding(&[1, 1, 1, 2], &[1.0, -2.0]).unwrap();
        let expected: Vec<u8> = [
            &b"GRCE"[..],
            &[1, 0, 0, 0],
            &[4, 0, 0, 0],
            &[1, 0, 0, 0],
            &[1, 0, 0, 0],
            &[1, 0, 0, 0],
            &[2, 0, 0, 0],
            &1.0f32.to_le_bytes(),
            &(-2.0f32).to_le_bytes(),
        ]
        .concat();
        assert_eq!(bytes, expected);
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = encode_embedding(&[1, 1], &[1.0]).unwrap();
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_embedding(&bytes), Err(IoError::BadMagic(m)) if &m == b"XXXX"));
        let mut bytes = encode_embedding(&[1, 1], &[1.0]).unwrap();
        bytes[4] = 2;
        assert!(matches!(decode_embedding(&bytes), Err(IoError::BadVersion(2))));
        let mut bytes = encode_embedding(&[1, 1], &[1.0]).unwrap();
        bytes[8] = 3;
        assert!(matches!(decode_embedding(&bytes), Err(IoError::BadRank(3))));
    }

    #[test]
    fn truncated_and_trailing_payload() {
        let bytes = encode_embedding(&[2, 2, 2, 2], &[0.5; 16]).unwrap();
        let short = &bytes[..bytes.len() - 4];
        assert!(matches!(
            decode_embedding(short),
            Err(IoError::TruncatedPayload { expected, actual }) if expected == bytes.len() && actual == bytes.len() - 4
        ));
        let mut long = bytes.clone();
        long.extend_from_slice(&[0, 0]);
        assert!(matches!(decode_embedding(&long), Err(IoError::TrailingBytes(2))));
        assert!(matches!(decode_embedding(b"GR"), Err(IoError::TruncatedPayload { .. })));
    }

    #[test]
    fn nan_payload_rejected() {
        let bytes = encode_embedding(&[1, 1, 1, 1], &[f64::NAN]).unwrap();
        assert!(matches!(decode_embedding(&bytes), Err(IoError::Tensor(_))));
    }

    proptest::proptest! {
        #[test]
        fn round_trip_is_exact_at_f32(values in proptest::collection::vec(-1e6f32..1e6, 1..40)) {
            let n = values.len();
            let wide: Vec<f64> = values.iter().map(|&v| v as f64).collect();
            let decoded = decode_embedding(&encode_embedding(&[1, n], &wide).unwrap()).unwrap();
            match decoded {
                Embedding::Matrix(m) => proptest::prop_assert_eq!(m.into_raw_vec_and_offset().0, wide.clone()),
                _ => proptest::prop_assert!(false),
            }
            let grid = decode_embedding(&encode_embedding(&[1, 1, n, 1], &wide).unwrap()).unwrap();
            match grid {
                Embedding::Tensor(t) => proptest::prop_assert_eq!(t.data(), wide.as_slice()),
                _ => proptest::prop_assert!(false),
            }
        }
    }
}
