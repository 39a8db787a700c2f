//! Multi-view pose grounding toolkit.
//!
//! - [`camera`]: pinhole model and SE(3) utilities
//! - [`plucker`]: Plücker ray maps and patch tokens
//! - [`net`]: pose-aware fusion, the query-attention pose head, losses and gradients
//! - [`selection`]: depth-visibility based context-view selection
//! - [`eval`]: thresholded pose accuracy
//! - [`synth`]: analytic box scenes used as ground truth
//! - [`io`]: file formats

pub mod camera;
pub mod eval;
mod init;
pub mod io;
pub mod net;
pub mod plucker;
pub mod selection;
pub mod synth;

pub use camera::{CameraIntrinsics, CameraPose, DepthMap, RawPose};
pub use plucker::{PatchConfig, RayMap, TokenGrid};
