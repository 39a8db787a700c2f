use std::path::Path;

use nalgebra::DMatrix;

use super::{read_bytes, write_all, IoError, Reader};

pub const TENSOR_MAGIC: &[u8; 4] = b"CCT1";
pub const MAX_RANK: u32 = 8;

/// Dense row-major f64 tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self, IoError> {
        let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        if n != Some(data.len()) {
            return Err(IoError::BadHeader(format!(
                "dims {dims:?} do not match {} values",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let data = m.transpose().as_slice().to_vec();
        Self {
            dims: vec![m.nrows(), m.ncols()],
            data,
        }
    }

    /// Rank-2 tensors only.
    pub fn to_matrix(&self) -> Option<DMatrix<f64>> {
        match self.dims[..] {
            [r, c] => Some(DMatrix::from_row_slice(r, c, &self.data)),
            _ => None,
        }
    }
}

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * t.dims.len() + 8 * t.data.len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
    for &d in &t.dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor, IoError> {
    let mut r = Reader::new(bytes);
    r.magic(TENSOR_MAGIC)?;
    let rank = r.u32()?;
    if rank > MAX_RANK {
        return Err(IoError::BadHeader(format!(
            "rank {rank} exceeds {MAX_RANK}"
        )));
    }
    let mut dims = Vec::with_capacity(rank as usize);
    for _ in 0..rank {
        dims.push(r.u32()? as usize);
    }
    let bytes_needed = dims
        .iter()
        .try_fold(8usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| IoError::BadHeader(format!("dims {dims:?} overflow")))?;
    let payload = r.take(bytes_needed)?;
    r.finish()?;
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(Tensor { dims, data })
}

pub fn read_tensor(path: &Path) -> Result<Tensor, IoError> {
    decode_tensor(&read_bytes(path)?)
}

pub fn write_tensor(path: &Path, t: &Tensor) -> Result<(), IoError> {
    write_all(path, &encode_tensor(t))
}
