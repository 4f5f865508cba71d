//! `DBGT` tensor container.
//!
//! Layout, all little-endian:
//!
//! | bytes        | field                                   |
//! |--------------|-----------------------------------------|
//! | 4            | magic `DBGT`                            |
//! | 2            | version (u16, currently 1)              |
//! | 1            | dtype: 0 = f32, 1 = i32, 2 = u16, 3 = u8|
//! | 1            | rank                                    |
//! | 8 × rank     | dims (u64)                              |
//! | remainder    | row-major payload                       |

use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DBGT";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32 = 0,
    I32 = 1,
    U16 = 2,
    U8 = 3,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 | DType::I32 => 4,
            DType::U16 => 2,
            DType::U8 => 1,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => DType::F32,
            1 => DType::I32,
            2 => DType::U16,
            3 => DType::U8,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    I32(Vec<i32>),
    U16(Vec<u16>),
    U8(Vec<u8>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::I32(_) => DType::I32,
            TensorData::U16(_) => DType::U16,
            TensorData::U8(_) => DType::U8,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::I32(v) => v.len(),
            TensorData::U16(v) => v.len(),
            TensorData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<u64>,
    data: TensorData,
}

impl Tensor {
    pub fn new(dims: Vec<u64>, data: TensorData) -> Result<Self> {
        let expected: u64 = dims.iter().product();
        if dims.len() > u8::MAX as usize || expected != data.len() as u64 {
            return Err(Error::DimensionMismatch(format!(
                "tensor dims {dims:?} hold {expected} elements, data has {}",
                data.len()
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn f32(dims: &[usize], data: Vec<f32>) -> Result<Self> {
        Self::new(dims.iter().map(|&d| d as u64).collect(), TensorData::F32(data))
    }

    pub fn i32(dims: &[usize], data: Vec<i32>) -> Result<Self> {
        Self::new(dims.iter().map(|&d| d as u64).collect(), TensorData::I32(data))
    }

    pub fn u16(dims: &[usize], data: Vec<u16>) -> Result<Self> {
        Self::new(dims.iter().map(|&d| d as u64).collect(), TensorData::U16(data))
    }

    pub fn dims(&self) -> &[u64] {
        &self.dims
    }

    pub fn dims_usize(&self) -> Vec<usize> {
        self.dims.iter().map(|&d| d as usize).collect()
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn into_data(self) -> TensorData {
        self.data
    }

    pub fn encode(&self) -> Vec<u8> {
        let dtype = self.dtype();
        let mut out = Vec::with_capacity(8 + 8 * self.dims.len() + self.data.len() * dtype.size());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(dtype as u8);
        out.push(self.dims.len() as u8);
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::I32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::U16(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::U8(v) => out.extend_from_slice(v),
        }
        out
    }

    /// Parses a container; `origin` names the source in errors.
    pub fn decode(bytes: &[u8], origin: &str) -> Result<Self> {
        let err = |offset: usize, reason: String| Error::parse(origin, offset as u64, reason);
        if bytes.len() < 8 {
            return Err(err(bytes.len(), format!("truncated header ({} bytes)", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(err(0, "missing DBGT magic".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(err(4, format!("unsupported version {version}")));
        }
        let dtype = DType::from_code(bytes[6]).ok_or_else(|| err(6, format!("unknown dtype code {}", bytes[6])))?;
        let rank = bytes[7] as usize;
        let header = 8 + 8 * rank;
        if bytes.len() < header {
            return Err(err(bytes.len(), format!("truncated dims: rank {rank} needs {header} header bytes")));
        }
        let dims: Vec<u64> = (0..rank)
            .map(|i| u64::from_le_bytes(bytes[8 + 8 * i..16 + 8 * i].try_into().unwrap()))
            .collect();
        let count = dims
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| err(8, format!("dims {dims:?} overflow")))?;
        let payload = &bytes[header..];
        let expected = count.checked_mul(dtype.size() as u64);
        if expected != Some(payload.len() as u64) {
            return Err(err(
                bytes.len(),
                format!(
                    "payload is {} bytes, dims {dims:?} of {dtype:?} need {}",
                    payload.len(),
                    expected.map_or("overflow".to_string(), |e| e.to_string())
                ),
            ));
        }
        let data = match dtype {
            DType::F32 => TensorData::F32(
                payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect(),
            ),
            DType::I32 => TensorData::I32(
                payload.chunks_exact(4).map(|c| i32::from_le_bytes(c.try_into().unwrap())).collect(),
            ),
            DType::U16 => TensorData::U16(
                payload.chunks_exact(2).map(|c| u16::from_le_bytes(c.try_into().unwrap())).collect(),
            ),
            DType::U8 => TensorData::U8(payload.to_vec()),
        };
        Ok(Tensor { dims, data })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, &path.display().to_string())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    fn wrong(&self, origin: &str, want: &str) -> Error {
        Error::parse(origin, 6, format!("expected {want} tensor, found {:?} {:?}", self.dtype(), self.dims))
    }

    pub fn expect_f32(self, origin: &str, rank: usize) -> Result<(Vec<usize>, Vec<f32>)> {
        if self.dims.len() != rank {
            return Err(self.wrong(origin, &format!("rank-{rank} f32")));
        }
        let dims = self.dims_usize();
        match self.data {
            TensorData::F32(v) => Ok((dims, v)),
            _ => Err(Tensor { dims: self.dims, data: self.data }.wrong(origin, "f32")),
        }
    }

    pub fn expect_i32(self, origin: &str, rank: usize) -> Result<(Vec<usize>, Vec<i32>)> {
        if self.dims.len() != rank {
            return Err(self.wrong(origin, &format!("rank-{rank} i32")));
        }
        let dims = self.dims_usize();
        match self.data {
            TensorData::I32(v) => Ok((dims, v)),
            _ => Err(Tensor { dims: self.dims, data: self.data }.wrong(origin, "i32")),
        }
    }

    pub fn expect_u16(self, origin: &str, rank: usize) -> Result<(Vec<usize>, Vec<u16>)> {
        if self.dims.len() != rank {
            return Err(self.wrong(origin, &format!("rank-{rank} u16")));
        }
        let dims = self.dims_usize();
        match self.data {
            TensorData::U16(v) => Ok((dims, v)),
            _ => Err(Tensor { dims: self.dims, data: self.data }.wrong(origin, "u16")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_bit_exact() {
        let t = Tensor::u16(&[1, 2], vec![0x0102, 0xA0B0]).unwrap();
        assert_eq!(
            t.encode(),
            vec![
                b'D', b'B', b'G', b'T', 1, 0, 2, 2, //
                1, 0, 0, 0, 0, 0, 0, 0, //
                2, 0, 0, 0, 0, 0, 0, 0, //
                0x02, 0x01, 0xB0, 0xA0,
            ]
        );
    }

    #[test]
    fn rejects_malformed_input() {
        let good = Tensor::i32(&[3], vec![1, 2, 3]).unwrap().encode();
        let truncated = Tensor::decode(&good[..good.len() - 1], "x.dbgt").unwrap_err();
        assert!(truncated.to_string().contains("x.dbgt"));
        let mut trailing = good.clone();
        trailing.push(0);
        assert!(Tensor::decode(&trailing, "t").is_err());
        let mut magic = good.clone();
        magic[0] = b'X';
        assert!(Tensor::decode(&magic, "t").is_err());
        let mut dtype = good.clone();
        dtype[6] = 9;
        assert!(Tensor::decode(&dtype, "t").is_err());
        let mut version = good;
        version[4] = 2;
        assert!(Tensor::decode(&version, "t").is_err());
        assert!(Tensor::decode(b"DBG", "t").is_err());
        assert!(Tensor::i32(&[2, 2], vec![1]).is_err());
    }

    #[test]
    fn type_expectations() {
        let t = Tensor::f32(&[2, 1], vec![1.0, 2.0]).unwrap();
        assert!(t.clone().expect_i32("t", 2).is_err());
        assert!(t.clone().expect_f32("t", 1).is_err());
        assert_eq!(t.expect_f32("t", 2).unwrap(), (vec![2, 1], vec![1.0, 2.0]));
    }

    proptest! {
        #[test]
        fn round_trip(rows in 0usize..6, cols in 0usize..6, seed in any::<u64>(), code in 0u8..4) {
            let n = rows * cols;
            let data = match code {
                0 => TensorData::F32((0..n).map(|i| f32::from_bits((seed as u32).wrapping_add((i as u32).wrapping_mul(2654435761)))).collect()),
                1 => TensorData::I32((0..n).map(|i| (seed as i32).wrapping_mul(i as i32 + 1)).collect()),
                2 => TensorData::U16((0..n).map(|i| (seed as u16).wrapping_add(i as u16)).collect()),
                _ => TensorData::U8((0..n).map(|i| (seed as u8) ^ i as u8).collect()),
            };
            let t = Tensor::new(vec![rows as u64, cols as u64], data).unwrap();
            let back = Tensor::decode(&t.encode(), "p").unwrap();
            prop_assert_eq!(back.encode(), t.encode());
        }
    }
}
