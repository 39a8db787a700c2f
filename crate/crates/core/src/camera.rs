//! Pinhole camera model and SE(3) pose primitives.
//!
//! Conventions used throughout the crate:
//! - poses are camera-to-world; the translation column is the camera center,
//! - the camera frame is x right, y down, z forward,
//! - pixel `(u, v)` has its center at `(u + 0.5, v + 0.5)` in continuous
//!   image coordinates, so pixel `i` spans `[i, i + 1)`.

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Camera-frame depths at or below this are treated as behind the camera.
pub const MIN_CAMERA_Z: f64 = 1e-6;

const RIGID_TOL: f64 = 1e-9;
const ROTATION_INPUT_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CameraError {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("matrix is not a rigid transform (residual {residual:.3e})")]
    NotRigid { residual: f64 },
    #[error("matrix has non-finite entries")]
    NonFinite,
    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("point is behind the camera (z_cam = {z:.3e})")]
    BehindCamera { z: f64 },
    #[error("matrix is not a rotation (residual {residual:.3e})")]
    NotARotation { residual: f64 },
    #[error("matrix is singular")]
    SingularMatrix,
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, CameraError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Intrinsics with a centered principal point and the given horizontal field of view.
    pub fn from_fov(hfov_deg: f64, width: u32, height: u32) -> Result<Self, CameraError> {
        let f = 0.5 * width as f64 / (0.5 * hfov_deg.to_radians()).tan();
        Self::new(f, f, width as f64 / 2.0, height as f64 / 2.0, width, height)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        let finite = [self.fx, self.fy, self.cx, self.cy]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(CameraError::InvalidIntrinsics(
                "non-finite parameter".into(),
            ));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(CameraError::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(CameraError::InvalidIntrinsics(
                "image size must be at least 1x1".into(),
            ));
        }
        if !(0.0..=self.width as f64).contains(&self.cx)
            || !(0.0..=self.height as f64).contains(&self.cy)
        {
            return Err(CameraError::InvalidIntrinsics(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    /// Rescales to a `width x height` pixel grid covering the same field of view.
    pub fn scaled_to(&self, width: u32, height: u32) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
            width,
            height,
        }
    }

    /// Camera-frame direction (z = 1) through the center of pixel `(u, v)`.
    pub fn pixel_ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new(
            (u + 0.5 - self.cx) / self.fx,
            (v + 0.5 - self.cy) / self.fy,
            1.0,
        )
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }
}

/// Camera-to-world rigid transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose(Matrix4<f64>);

impl CameraPose {
    pub fn identity() -> Self {
        Self(Matrix4::identity())
    }

    /// Validates that `m` is rigid: orthonormal rotation block with det +1 and
    /// a canonical last row, all within 1e-9.
    pub fn from_matrix(m: Matrix4<f64>) -> Result<Self, CameraError> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(CameraError::NonFinite);
        }
        let residual = rigidity_residual(&m);
        if residual > RIGID_TOL {
            return Err(CameraError::NotRigid { residual });
        }
        Ok(Self(m))
    }

    /// Builds a pose from a rotation block and a translation. The rotation is
    /// checked like [`CameraPose::from_matrix`].
    pub fn from_parts(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self, CameraError> {
        Self::from_matrix(recompose(&rotation, &translation))
    }

    /// Camera at `eye` looking at `target`, with image "up" as close to `up` as possible.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
    ) -> Result<Self, CameraError> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or(CameraError::SingularMatrix)?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or(CameraError::SingularMatrix)?;
        let down = forward.cross(&right);
        let r = Matrix3::from_columns(&[right, down, forward]);
        Self::from_parts(r, eye)
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.0
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.0.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.0.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        self.translation()
    }

    /// Optical axis in world coordinates.
    pub fn forward(&self) -> Vector3<f64> {
        self.0.fixed_view::<3, 1>(0, 2).into_owned()
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation().transpose();
        let t = -(rt * self.translation());
        Self(recompose(&rt, &t))
    }

    /// `self * other`: applies `other` first.
    pub fn compose(&self, other: &CameraPose) -> Self {
        Self(self.0 * other.0)
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * p + self.translation()
    }

    /// World point into the camera frame.
    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation().transpose() * (p - self.translation())
    }

    /// Row-major 16 entries.
    pub fn to_row_major(&self) -> [f64; 16] {
        row_major(&self.0)
    }
}

/// Network output reshaped to 4x4; no rigidity guarantee.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawPose(Matrix4<f64>);

impl RawPose {
    pub fn new(m: Matrix4<f64>) -> Result<Self, CameraError> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(CameraError::NonFinite);
        }
        Ok(Self(m))
    }

    pub fn from_row_major(values: &[f64; 16]) -> Result<Self, CameraError> {
        Self::new(Matrix4::from_row_slice(values))
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.0
    }

    pub fn to_row_major(&self) -> [f64; 16] {
        row_major(&self.0)
    }
}

impl From<CameraPose> for RawPose {
    fn from(p: CameraPose) -> Self {
        RawPose(p.0)
    }
}

/// Rotation and translation blocks of a 4x4 matrix, taken verbatim.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseDecomposition {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

pub trait AsPoseMatrix {
    fn pose_matrix(&self) -> &Matrix4<f64>;
}

impl AsPoseMatrix for CameraPose {
    fn pose_matrix(&self) -> &Matrix4<f64> {
        &self.0
    }
}

impl AsPoseMatrix for RawPose {
    fn pose_matrix(&self) -> &Matrix4<f64> {
        &self.0
    }
}

pub fn decompose<P: AsPoseMatrix>(pose: &P) -> PoseDecomposition {
    let m = pose.pose_matrix();
    PoseDecomposition {
        rotation: m.fixed_view::<3, 3>(0, 0).into_owned(),
        translation: m.fixed_view::<3, 1>(0, 3).into_owned(),
    }
}

/// Inverse of [`decompose`] for matrices with the canonical last row.
pub fn recompose(rotation: &Matrix3<f64>, translation: &Vector3<f64>) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(rotation);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(translation);
    m
}

pub(crate) fn row_major(m: &Matrix4<f64>) -> [f64; 16] {
    let mut out = [0.0; 16];
    for r in 0..4 {
        for c in 0..4 {
            out[4 * r + c] = m[(r, c)];
        }
    }
    out
}

/// Max deviation of `m` from a rigid transform: orthonormality of the
/// rotation block, det - 1, and the last row.
pub fn rigidity_residual(m: &Matrix4<f64>) -> f64 {
    let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
    let last = [m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)] - 1.0];
    let row_err = last.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    rotation_residual(&r).max(row_err)
}

/// Max of `|RᵀR - I|` entries and `|det R - 1|`.
pub fn rotation_residual(r: &Matrix3<f64>) -> f64 {
    let ortho = (r.transpose() * r - Matrix3::identity()).amax();
    ortho.max((r.determinant() - 1.0).abs())
}

/// Back-projects pixel `(u, v)` at camera-frame depth `depth` to world coordinates.
pub fn back_project(
    u: f64,
    v: f64,
    depth: f64,
    pose: &CameraPose,
    k: &CameraIntrinsics,
) -> Result<Vector3<f64>, CameraError> {
    if !(depth > 0.0) {
        return Err(CameraError::NonPositiveDepth(depth));
    }
    Ok(pose.transform_point(&(k.pixel_ray(u, v) * depth)))
}

/// Result of projecting a world point into a camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Pixel coordinates in the same convention as [`back_project`] input.
    pub u: f64,
    pub v: f64,
    /// Camera-frame depth.
    pub z: f64,
}

impl Projection {
    /// Integer pixel containing the projection, or `None` when off-image.
    pub fn pixel(&self, k: &CameraIntrinsics) -> Option<(u32, u32)> {
        let x = self.u + 0.5;
        let y = self.v + 0.5;
        if x >= 0.0 && y >= 0.0 && x < k.width as f64 && y < k.height as f64 {
            Some((x.floor() as u32, y.floor() as u32))
        } else {
            None
        }
    }
}

pub fn project(
    x: &Vector3<f64>,
    pose: &CameraPose,
    k: &CameraIntrinsics,
) -> Result<Projection, CameraError> {
    let pc = pose.world_to_camera(x);
    if pc.z <= MIN_CAMERA_Z {
        return Err(CameraError::BehindCamera { z: pc.z });
    }
    Ok(Projection {
        u: k.fx * pc.x / pc.z + k.cx - 0.5,
        v: k.fy * pc.y / pc.z + k.cy - 0.5,
        z: pc.z,
    })
}

/// Geodesic angle between two rotations in degrees, in `[0, 180]`.
pub fn rotation_geodesic_deg(ra: &Matrix3<f64>, rb: &Matrix3<f64>) -> Result<f64, CameraError> {
    for r in [ra, rb] {
        let residual = rotation_residual(r);
        if !(residual <= ROTATION_INPUT_TOL) {
            return Err(CameraError::NotARotation { residual });
        }
    }
    Ok(geodesic_deg_unchecked(ra, rb))
}

pub(crate) fn geodesic_deg_unchecked(ra: &Matrix3<f64>, rb: &Matrix3<f64>) -> f64 {
    let c = (((ra.transpose() * rb).trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    c.acos().to_degrees()
}

/// Nearest rotation in Frobenius norm (orthogonal polar factor with det +1).
pub fn orthonormalize(m: &Matrix3<f64>) -> Result<Matrix3<f64>, CameraError> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(CameraError::SingularMatrix);
    }
    let svd = m.svd(true, true);
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(CameraError::SingularMatrix),
    };
    let s = svd.singular_values;
    let smax = s.max();
    if !(smax > 0.0) || s.min() <= smax * 1e-12 {
        return Err(CameraError::SingularMatrix);
    }
    // Flip the direction of the smallest singular value when det(UVᵀ) < 0.
    let mut u = u;
    if (u * vt).determinant() < 0.0 {
        let (imin, _) = s.argmin();
        u.column_mut(imin).neg_mut();
    }
    Ok(u * vt)
}

/// Rotation of `angle_deg` about `axis` (normalized internally).
pub fn axis_angle(axis: &Vector3<f64>, angle_deg: f64) -> Matrix3<f64> {
    let a = nalgebra::Unit::new_normalize(*axis);
    nalgebra::Rotation3::from_axis_angle(&a, angle_deg.to_radians()).into_inner()
}

/// Row-major depth in meters; `0.0` marks an invalid pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    values: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: u32, height: u32, values: Vec<f64>) -> Result<Self, CameraError> {
        if values.len() != width as usize * height as usize {
            return Err(CameraError::InvalidIntrinsics(format!(
                "depth buffer has {} values for a {width}x{height} map",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(CameraError::NonFinite);
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn zeros(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, u: u32, v: u32) -> f64 {
        self.values[v as usize * self.width as usize + u as usize]
    }

    /// Depth at `(u, v)` when in bounds and valid.
    pub fn valid(&self, u: u32, v: u32) -> Option<f64> {
        if u < self.width && v < self.height {
            let d = self.get(u, v);
            (d > 0.0).then_some(d)
        } else {
            None
        }
    }

    pub fn matches(&self, k: &CameraIntrinsics) -> bool {
        self.width == k.width && self.height == k.height
    }
}
