use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::depth::{read_depth, write_depth};
use super::intrinsics::{read_intrinsics, write_intrinsics};
use super::pose::{read_pose_file, write_pose_file, PoseWarning};
use super::{write_all, IoError};
use crate::camera::{CameraIntrinsics, CameraPose, DepthMap};
use crate::selection::Frame;
use crate::synth::Scene;

pub const POSE_DIR: &str = "pose";
pub const DEPTH_DIR: &str = "depth";
pub const INTRINSICS_FILE: &str = "intrinsics.txt";
pub const SCENE_FILE: &str = "scene.json";

/// Paths inside a scene directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SceneLayout {
    pub root: PathBuf,
}

impl SceneLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn pose_path(&self, id: u32) -> PathBuf {
        self.root.join(POSE_DIR).join(format!("{id:06}.txt"))
    }

    pub fn depth_path(&self, id: u32) -> PathBuf {
        self.root.join(DEPTH_DIR).join(format!("{id:06}.ccd"))
    }

    pub fn intrinsics_path(&self) -> PathBuf {
        self.root.join(INTRINSICS_FILE)
    }

    pub fn scene_path(&self) -> PathBuf {
        self.root.join(SCENE_FILE)
    }

    /// Directory name, used as the scene id in manifests.
    pub fn name(&self) -> String {
        self.root
            .canonicalize()
            .ok()
            .as_deref()
            .unwrap_or(&self.root)
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scene".into())
    }

    /// Creates the root and its frame subdirectories.
    pub fn create(&self) -> Result<(), IoError> {
        for d in [
            self.root.clone(),
            self.root.join(POSE_DIR),
            self.root.join(DEPTH_DIR),
        ] {
            std::fs::create_dir_all(&d).map_err(|e| IoError::io(&d, e))?;
        }
        Ok(())
    }
}

/// Alternative depth reader for files with another extension, tried when
/// the native `.ccd` file is absent.
pub trait DepthIngest: Sync {
    fn extension(&self) -> &str;
    fn read(&self, path: &Path) -> Result<DepthMap, IoError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedScene {
    pub name: String,
    pub intrinsics: CameraIntrinsics,
    /// Sorted by id.
    pub frames: Vec<Frame>,
    pub warnings: Vec<(u32, PoseWarning)>,
}

pub fn write_frame(
    layout: &SceneLayout,
    id: u32,
    pose: &CameraPose,
    depth: &DepthMap,
) -> Result<(), IoError> {
    write_pose_file(&layout.pose_path(id), pose)?;
    write_depth(&layout.depth_path(id), depth)
}

/// Writes `intrinsics.txt` and, when given, the analytic scene description.
pub fn write_scene_meta(
    layout: &SceneLayout,
    k: &CameraIntrinsics,
    scene: Option<&Scene>,
) -> Result<(), IoError> {
    write_intrinsics(&layout.intrinsics_path(), k)?;
    if let Some(s) = scene {
        let json = serde_json::to_string_pretty(s).expect("plain data");
        write_all(&layout.scene_path(), format!("{json}\n").as_bytes())?;
    }
    Ok(())
}

fn ids_in(dir: &Path, ext: Option<&str>) -> Result<BTreeMap<u32, PathBuf>, IoError> {
    let mut out = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| IoError::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| IoError::io(dir, e))?.path();
        let (Some(stem), Some(e)) = (path.file_stem(), path.extension()) else {
            continue;
        };
        if ext.is_some_and(|x| x != e) {
            continue;
        }
        let stem = stem.to_string_lossy();
        let id: u32 = stem.parse().map_err(|_| {
            IoError::MalformedScene(format!("{}: file name is not a frame id", path.display()))
        })?;
        if let Some(prev) = out.insert(id, path.clone()) {
            return Err(IoError::MalformedScene(format!(
                "frame {id} appears twice: {} and {}",
                prev.display(),
                path.display()
            )));
        }
    }
    Ok(out)
}

/// Loads every frame listed in `pose/`. Each needs a depth map of the
/// intrinsics' resolution.
pub fn load_scene(root: &Path, ingest: Option<&dyn DepthIngest>) -> Result<LoadedScene, IoError> {
    let layout = SceneLayout::new(root);
    if !root.is_dir() {
        return Err(IoError::MalformedScene(format!(
            "{} is not a directory",
            root.display()
        )));
    }
    let kpath = layout.intrinsics_path();
    if !kpath.is_file() {
        return Err(IoError::MalformedScene(format!(
            "missing {}",
            kpath.display()
        )));
    }
    let k = read_intrinsics(&kpath)?;
    let pose_dir = root.join(POSE_DIR);
    if !pose_dir.is_dir() {
        return Err(IoError::MalformedScene(format!(
            "missing {}",
            pose_dir.display()
        )));
    }
    let poses = ids_in(&pose_dir, Some("txt"))?;
    let depth_dir = root.join(DEPTH_DIR);
    let native = if depth_dir.is_dir() {
        ids_in(&depth_dir, Some("ccd"))?
    } else {
        BTreeMap::new()
    };
    let alt = match (ingest, depth_dir.is_dir()) {
        (Some(i), true) => ids_in(&depth_dir, Some(i.extension()))?,
        _ => BTreeMap::new(),
    };
    if let Some(id) = native
        .keys()
        .chain(alt.keys())
        .find(|id| !poses.contains_key(id))
    {
        return Err(IoError::MalformedScene(format!(
            "depth for frame {id} has no pose file"
        )));
    }

    let loaded: Vec<Result<(Frame, Option<PoseWarning>), IoError>> = poses
        .par_iter()
        .map(|(&id, ppath)| {
            let read = read_pose_file(ppath)?;
            let depth = match (native.get(&id), alt.get(&id), ingest) {
                (Some(p), _, _) => read_depth(p)?,
                (None, Some(p), Some(i)) => i.read(p)?,
                _ => {
                    return Err(IoError::MalformedScene(format!(
                        "frame {id}: missing depth file"
                    )))
                }
            };
            if !depth.matches(&k) {
                return Err(IoError::MalformedScene(format!(
                    "frame {id}: depth is {}x{}, intrinsics say {}x{}",
                    depth.width(),
                    depth.height(),
                    k.width,
                    k.height
                )));
            }
            Ok((
                Frame {
                    id,
                    pose: read.pose,
                    intrinsics: k,
                    depth,
                },
                read.warning,
            ))
        })
        .collect();
    let mut frames = Vec::with_capacity(loaded.len());
    let mut warnings = Vec::new();
    for r in loaded {
        let (f, w) = r?;
        if let Some(w) = w {
            warnings.push((f.id, w));
        }
        frames.push(f);
    }
    Ok(LoadedScene {
        name: layout.name(),
        intrinsics: k,
        frames,
        warnings,
    })
}
