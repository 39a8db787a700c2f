//! File formats: text poses and intrinsics, binary depth maps and tensors,
//! JSONL manifests, and the on-disk scene layout.
//!
//! Every reader has a byte- or string-level variant so malformed input can be
//! exercised without touching the filesystem. Failures are typed and carry a
//! location where one exists.

use std::path::{Path, PathBuf};

use thiserror::Error;

mod depth;
mod intrinsics;
mod manifest;
mod pose;
mod scene_dir;
mod tensor;

pub use depth::{decode_depth, encode_depth, read_depth, write_depth, DEPTH_MAGIC};
pub use intrinsics::{format_intrinsics, parse_intrinsics, read_intrinsics, write_intrinsics};
pub use manifest::{format_manifest, parse_manifest, read_manifest, write_manifest, ManifestEntry};
pub use pose::{
    format_pose, parse_pose, read_pose_file, write_pose_file, PoseRead, PoseWarning, HARD_RIGID_TOL,
};
pub use scene_dir::{
    load_scene, write_frame, write_scene_meta, DepthIngest, LoadedScene, SceneLayout, DEPTH_DIR,
    INTRINSICS_FILE, POSE_DIR, SCENE_FILE,
};
pub use tensor::{
    decode_tensor, encode_tensor, read_tensor, write_tensor, Tensor, MAX_RANK, TENSOR_MAGIC,
};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed pose (line {line}): {reason}")]
    MalformedPose { line: usize, reason: String },
    #[error("intrinsics: missing key '{0}'")]
    MissingKey(String),
    #[error("intrinsics: focal length {key}={value} is not positive")]
    NonPositiveFocal { key: String, value: f64 },
    #[error("intrinsics (line {line}): {reason}")]
    MalformedIntrinsics { line: usize, reason: String },
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: String },
    #[error("truncated payload: need {expected} bytes, have {actual}")]
    TruncatedPayload { expected: usize, actual: usize },
    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("bad header: {0}")]
    BadHeader(String),
    #[error("invalid depth value at index {index}: {value}")]
    InvalidDepth { index: usize, value: f32 },
    #[error("manifest line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("malformed scene: {0}")]
    MalformedScene(String),
}

impl IoError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>, IoError> {
    std::fs::read(path).map_err(|e| IoError::io(path, e))
}

pub(crate) fn read_text(path: &Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))
}

pub(crate) fn write_all(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    std::fs::write(path, bytes).map_err(|e| IoError::io(path, e))
}

/// Little-endian cursor over a byte slice.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], IoError> {
        if self.remaining() < n {
            return Err(IoError::TruncatedPayload {
                expected: self.pos + n,
                actual: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn magic(&mut self, magic: &[u8; 4]) -> Result<(), IoError> {
        let bad = || IoError::BadMagic {
            expected: String::from_utf8_lossy(magic).into_owned(),
        };
        let got = self.take(4).map_err(|_| bad())?;
        if got != magic {
            return Err(bad());
        }
        Ok(())
    }

    pub(crate) fn u32(&mut self) -> Result<u32, IoError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    pub(crate) fn finish(&self) -> Result<(), IoError> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(IoError::TrailingBytes(n)),
        }
    }
}
