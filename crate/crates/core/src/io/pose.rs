use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use super::{read_text, write_all, IoError};
use crate::camera::{decompose, orthonormalize, recompose, rigidity_residual, CameraPose, RawPose};

/// Beyond this rigidity residual a pose file is rejected.
pub const HARD_RIGID_TOL: f64 = 1e-4;
/// Beyond this (and within [`HARD_RIGID_TOL`]) the pose is orthonormalized.
const SOFT_RIGID_TOL: f64 = 1e-9;

/// Record of a pose that was repaired on read.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseWarning {
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseRead {
    pub pose: CameraPose,
    pub warning: Option<PoseWarning>,
}

/// Parses 16 whitespace-separated floats, row-major, camera-to-world.
pub fn parse_pose(text: &str) -> Result<PoseRead, IoError> {
    let mut vals = [0.0f64; 16];
    let mut n = 0;
    for (li, line) in text.lines().enumerate() {
        for tok in line.split_whitespace() {
            let bad = |reason: String| IoError::MalformedPose {
                line: li + 1,
                reason,
            };
            if n == 16 {
                return Err(bad("more than 16 values".into()));
            }
            let v: f64 = tok
                .parse()
                .map_err(|_| bad(format!("not a number: {tok:?}")))?;
            if !v.is_finite() {
                return Err(bad(format!("non-finite value {tok}")));
            }
            vals[n] = v;
            n += 1;
        }
    }
    if n != 16 {
        return Err(IoError::MalformedPose {
            line: text.lines().count(),
            reason: format!("expected 16 values, found {n}"),
        });
    }
    let raw = RawPose::from_row_major(&vals).expect("finite");
    let residual = rigidity_residual(raw.matrix());
    if residual > HARD_RIGID_TOL {
        return Err(IoError::MalformedPose {
            line: 0,
            reason: format!("not rigid (residual {residual:.3e})"),
        });
    }
    if residual <= SOFT_RIGID_TOL {
        let pose = CameraPose::from_matrix(*raw.matrix()).expect("within tolerance");
        return Ok(PoseRead {
            pose,
            warning: None,
        });
    }
    let parts = decompose(&raw);
    let r = orthonormalize(&parts.rotation).map_err(|e| IoError::MalformedPose {
        line: 0,
        reason: e.to_string(),
    })?;
    let pose = CameraPose::from_matrix(recompose(&r, &parts.translation)).map_err(|e| {
        IoError::MalformedPose {
            line: 0,
            reason: e.to_string(),
        }
    })?;
    Ok(PoseRead {
        pose,
        warning: Some(PoseWarning { residual }),
    })
}

/// Four lines of four values with 17 significant digits.
pub fn format_pose(pose: &CameraPose) -> String {
    let v = pose.to_row_major();
    let mut s = String::with_capacity(16 * 25);
    for r in 0..4 {
        let row: Vec<String> = (0..4).map(|c| format!("{:.16e}", v[4 * r + c])).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

pub fn read_pose_file(path: &Path) -> Result<PoseRead, IoError> {
    let read = parse_pose(&read_text(path)?)?;
    if let Some(w) = read.warning {
        warn!(
            "{}: pose orthonormalized (rigidity residual {:.3e})",
            path.display(),
            w.residual
        );
    }
    Ok(read)
}

pub fn write_pose_file(path: &Path, pose: &CameraPose) -> Result<(), IoError> {
    write_all(path, format_pose(pose).as_bytes())
}
