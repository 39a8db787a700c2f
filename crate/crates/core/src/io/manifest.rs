use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_text, write_all, IoError};
use crate::camera::{CameraError, CameraPose, RawPose};
use crate::selection::ViewGroup;

pub const CONTEXTS_PER_ENTRY: usize = 4;

/// One line of a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub scene: String,
    pub target: u32,
    pub contexts: Vec<u32>,
    pub coverage: f64,
    /// Row-major 4x4. Not required to be rigid, so predictions fit too.
    pub target_pose: [f64; 16],
}

impl ManifestEntry {
    pub fn from_group(scene: &str, g: &ViewGroup) -> Self {
        Self {
            scene: scene.into(),
            target: g.target_id,
            contexts: g.context_ids.clone(),
            coverage: g.coverage,
            target_pose: g.target_pose.to_row_major(),
        }
    }

    pub fn raw_pose(&self) -> RawPose {
        RawPose::from_row_major(&self.target_pose).expect("validated on read")
    }

    pub fn pose(&self) -> Result<CameraPose, CameraError> {
        CameraPose::from_matrix(*self.raw_pose().matrix())
    }

    fn validate(&self) -> Result<(), String> {
        if self.contexts.len() != CONTEXTS_PER_ENTRY {
            return Err(format!(
                "expected {CONTEXTS_PER_ENTRY} contexts, found {}",
                self.contexts.len()
            ));
        }
        if !(0.0..=1.0).contains(&self.coverage) {
            return Err(format!("coverage {} outside [0, 1]", self.coverage));
        }
        if self.target_pose.iter().any(|v| !v.is_finite()) {
            return Err("non-finite target_pose".into());
        }
        Ok(())
    }
}

/// Empty lines are skipped; line numbers are 1-based.
pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>, IoError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| IoError::MalformedLine {
            line: i + 1,
            reason,
        };
        let entry: ManifestEntry = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        entry.validate().map_err(bad)?;
        out.push(entry);
    }
    Ok(out)
}

pub fn format_manifest(entries: &[ManifestEntry]) -> String {
    let mut s = String::new();
    for e in entries {
        s.push_str(&serde_json::to_string(e).expect("plain data"));
        s.push('\n');
    }
    s
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, IoError> {
    parse_manifest(&read_text(path)?)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<(), IoError> {
    write_all(path, format_manifest(entries).as_bytes())
}
