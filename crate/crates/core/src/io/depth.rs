use std::path::Path;

use super::{read_bytes, write_all, IoError, Reader};
use crate::camera::DepthMap;

pub const DEPTH_MAGIC: &[u8; 4] = b"CCD1";

/// `CCD1`, u32 width, u32 height, then width·height little-endian f32 meters.
///
/// Values are stored as f32, so maps holding values that are not exactly
/// representable in f32 are rounded.
pub fn encode_depth(depth: &DepthMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * depth.values().len());
    out.extend_from_slice(DEPTH_MAGIC);
    out.extend_from_slice(&depth.width().to_le_bytes());
    out.extend_from_slice(&depth.height().to_le_bytes());
    for &v in depth.values() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_depth(bytes: &[u8]) -> Result<DepthMap, IoError> {
    let mut r = Reader::new(bytes);
    r.magic(DEPTH_MAGIC)?;
    let w = r.u32()?;
    let h = r.u32()?;
    let n = (w as usize)
        .checked_mul(h as usize)
        .and_then(|n| n.checked_mul(4).map(|b| (n, b)))
        .ok_or_else(|| IoError::BadHeader(format!("size {w}x{h} overflows")))?;
    let payload = r.take(n.1)?;
    r.finish()?;
    let mut values = Vec::with_capacity(n.0);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        if !v.is_finite() || v < 0.0 {
            return Err(IoError::InvalidDepth { index: i, value: v });
        }
        values.push(v as f64);
    }
    Ok(DepthMap::new(w, h, values).expect("validated above"))
}

pub fn read_depth(path: &Path) -> Result<DepthMap, IoError> {
    decode_depth(&read_bytes(path)?)
}

pub fn write_depth(path: &Path, depth: &DepthMap) -> Result<(), IoError> {
    write_all(path, &encode_depth(depth))
}
