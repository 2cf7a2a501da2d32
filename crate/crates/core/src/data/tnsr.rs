//! `TNSR` container: a fixed little-endian header followed by the payload.
//!
//! ```text
//! offset  size       field
//! 0       4          magic "TNSR"
//! 4       1          version (1)
//! 5       1          dtype (0 = f32, 1 = f64)
//! 6       1          rank r
//! 7       8·r        dims, u64 little-endian
//! 7+8r    n·size     row-major payload, little-endian
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"TNSR";
pub const VERSION: u8 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Dtype {
    F32,
    #[default]
    F64,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

pub fn encode(t: &Tensor, dtype: Dtype) -> Result<Vec<u8>> {
    let rank = u8::try_from(t.rank())
        .map_err(|_| Error::dim("tnsr::encode", format!("rank {} exceeds 255", t.rank())))?;
    let mut out = Vec::with_capacity(7 + 8 * t.rank() + t.numel() * dtype.size());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(dtype.code());
    out.push(rank);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match dtype {
        Dtype::F64 => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        Dtype::F32 => t
            .data()
            .iter()
            .for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
    }
    Ok(out)
}

fn format_err(offset: usize, detail: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        detail: detail.into(),
    }
}

pub fn decode(bytes: &[u8]) -> Result<(Tensor, Dtype)> {
    if bytes.len() < 4 {
        return Err(format_err(bytes.len(), "truncated magic"));
    }
    if &bytes[..4] != MAGIC {
        return Err(format_err(0, format!("bad magic {:?}", &bytes[..4])));
    }
    let header = |i: usize| bytes.get(i).copied().ok_or_else(|| format_err(i, "truncated header"));
    let version = header(4)?;
    if version != VERSION {
        return Err(format_err(4, format!("unsupported version {version}")));
    }
    let dtype = match header(5)? {
        0 => Dtype::F32,
        1 => Dtype::F64,
        other => return Err(format_err(5, format!("unknown dtype {other}"))),
    };
    let rank = header(6)? as usize;
    let mut pos = 7;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let raw = bytes
            .get(pos..pos + 8)
            .ok_or_else(|| format_err(bytes.len(), "truncated dims"))?;
        let d = u64::from_le_bytes(raw.try_into().expect("8 bytes"));
        shape.push(usize::try_from(d).map_err(|_| format_err(pos, "dimension overflows usize"))?);
        pos += 8;
    }
    let n = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| format_err(7, "element count overflows"))?;
    let need = n
        .checked_mul(dtype.size())
        .ok_or_else(|| format_err(7, "payload size overflows"))?;
    let payload = &bytes[pos..];
    if payload.len() < need {
        return Err(format_err(
            bytes.len(),
            format!("truncated payload: need {need} bytes, have {}", payload.len()),
        ));
    }
    if payload.len() > need {
        return Err(format_err(pos + need, "trailing bytes after payload"));
    }
    let data = match dtype {
        Dtype::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect(),
    };
    Ok((Tensor::new(shape, data)?, dtype))
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    write_tensor_as(path, t, Dtype::F64)
}

pub fn write_tensor_as(path: impl AsRef<Path>, t: &Tensor, dtype: Dtype) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(t, dtype)?).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode(&bytes).map(|(t, _)| t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_matches_hand_built_bytes() {
        let mut bytes = b"TNSR".to_vec();
        bytes.extend_from_slice(&[1, 1, 0]);
        bytes.extend_from_slice(&0x3FF0_0000_0000_0000u64.to_le_bytes());
        assert_eq!(bytes.len(), 15);
        assert_eq!(encode(&Tensor::scalar(1.0), Dtype::F64).unwrap(), bytes);
        let (t, dtype) = decode(&bytes).unwrap();
        assert_eq!(dtype, Dtype::F64);
        assert_eq!(t.shape(), &[] as &[usize]);
        assert_eq!(t.item().unwrap(), 1.0);
    }

    #[test]
    fn truncation_is_a_format_error() {
        let t = Tensor::new([2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let bytes = encode(&t, Dtype::F64).unwrap();
        for cut in [1, 9, bytes.len() - 1] {
            let err = decode(&bytes[..bytes.len() - cut]).unwrap_err();
            assert!(matches!(err, Error::Format { .. }), "{err}");
        }
    }

    #[test]
    fn header_errors_carry_offsets() {
        let mut bytes = encode(&Tensor::zeros([2]), Dtype::F64).unwrap();
        bytes[5] = 9;
        match decode(&bytes).unwrap_err() {
            Error::Format { offset, .. } => assert_eq!(offset, 5),
            e => panic!("{e}"),
        }
        bytes[0] = b'X';
        match decode(&bytes).unwrap_err() {
            Error::Format { offset, .. } => assert_eq!(offset, 0),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn f32_payload_rounds_values() {
        let t = Tensor::new([3], vec![0.1, -2.5, 1e-3]).unwrap();
        let (back, dtype) = decode(&encode(&t, Dtype::F32).unwrap()).unwrap();
        assert_eq!(dtype, Dtype::F32);
        for (a, b) in back.data().iter().zip(t.data()) {
            assert_eq!(*a, *b as f32 as f64);
        }
    }
}
