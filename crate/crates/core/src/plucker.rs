//! Pixel-aligned Plücker ray maps and their patch tokenization.

use nalgebra::{DMatrix, DVector, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{CameraIntrinsics, CameraPose};
use crate::init::uniform_matrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PluckerError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid patch config: {0}")]
    InvalidConfig(String),
}

pub const RAY_CHANNELS: usize = 6;

/// Per-pixel `(dx, dy, dz, mx, my, mz)`, row-major over `(row, col)`.
///
/// `d` is the unit viewing direction and `m = o × d` the moment about the
/// world origin, `o` being the camera center.
#[derive(Debug, Clone, PartialEq)]
pub struct RayMap {
    width: u32,
    height: u32,
    center: Vector3<f64>,
    data: Vec<f64>,
}

impl RayMap {
    /// Wraps raw channel data. `center` is the camera center used to
    /// recompute moments on resize.
    pub fn from_raw(
        width: u32,
        height: u32,
        center: Vector3<f64>,
        data: Vec<f64>,
    ) -> Result<Self, PluckerError> {
        let want = width as usize * height as usize * RAY_CHANNELS;
        if data.len() != want {
            return Err(PluckerError::ShapeMismatch(format!(
                "ray map {width}x{height} needs {want} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            center,
            data,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn center(&self) -> Vector3<f64> {
        self.center
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * RAY_CHANNELS
    }

    pub fn direction(&self, x: u32, y: u32) -> Vector3<f64> {
        let o = self.offset(x, y);
        Vector3::new(self.data[o], self.data[o + 1], self.data[o + 2])
    }

    pub fn moment(&self, x: u32, y: u32) -> Vector3<f64> {
        let o = self.offset(x, y) + 3;
        Vector3::new(self.data[o], self.data[o + 1], self.data[o + 2])
    }

    /// Largest violation of `‖d‖ = 1` and `d·m = 0` over all pixels.
    pub fn invariant_residual(&self) -> f64 {
        self.data
            .chunks_exact(RAY_CHANNELS)
            .map(|px| {
                let d = Vector3::new(px[0], px[1], px[2]);
                let m = Vector3::new(px[3], px[4], px[5]);
                (d.norm() - 1.0).abs().max(d.dot(&m).abs())
            })
            .fold(0.0, f64::max)
    }
}

fn write_ray(out: &mut [f64], center: &Vector3<f64>, d: &Vector3<f64>) {
    let m = center.cross(d);
    out[..3].copy_from_slice(d.as_slice());
    out[3..].copy_from_slice(m.as_slice());
}

/// Plücker ray map of a camera sampled on an `out_w x out_h` grid.
///
/// The intrinsics are rescaled to the output grid so the map covers the
/// camera's full field of view regardless of output resolution.
pub fn ray_map(pose: &CameraPose, k: &CameraIntrinsics, out_w: u32, out_h: u32) -> RayMap {
    let k = k.scaled_to(out_w, out_h);
    let rot = pose.rotation();
    let center = pose.center();
    let mut data = vec![0.0; out_w as usize * out_h as usize * RAY_CHANNELS];
    data.par_chunks_mut(out_w as usize * RAY_CHANNELS)
        .enumerate()
        .for_each(|(y, row)| {
            for (x, px) in row.chunks_exact_mut(RAY_CHANNELS).enumerate() {
                let d = (rot * k.pixel_ray(x as f64, y as f64)).normalize();
                write_ray(px, &center, &d);
            }
        });
    RayMap {
        width: out_w,
        height: out_h,
        center,
        data,
    }
}

/// Canonical resolution, patch size and token width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PatchConfig {
    pub canonical_width: u32,
    pub canonical_height: u32,
    pub patch_size: u32,
    pub token_dim: usize,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self {
            canonical_width: 448,
            canonical_height: 448,
            patch_size: 14,
            token_dim: 64,
        }
    }
}

impl PatchConfig {
    pub fn validate(&self) -> Result<(), PluckerError> {
        let p = self.patch_size;
        if p == 0 || self.canonical_width == 0 || self.canonical_height == 0 {
            return Err(PluckerError::InvalidConfig("sizes must be positive".into()));
        }
        if !self.canonical_width.is_multiple_of(p) || !self.canonical_height.is_multiple_of(p) {
            return Err(PluckerError::InvalidConfig(format!(
                "patch size {p} does not divide {}x{}",
                self.canonical_width, self.canonical_height
            )));
        }
        if self.token_dim == 0 {
            return Err(PluckerError::InvalidConfig(
                "token_dim must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn patches_wide(&self) -> usize {
        (self.canonical_width / self.patch_size) as usize
    }

    pub fn patches_high(&self) -> usize {
        (self.canonical_height / self.patch_size) as usize
    }

    /// Number of tokens per view.
    pub fn num_tokens(&self) -> usize {
        self.patches_wide() * self.patches_high()
    }

    /// Flattened length of one ray patch.
    pub fn patch_len(&self) -> usize {
        RAY_CHANNELS * (self.patch_size * self.patch_size) as usize
    }
}

/// Bilinear resize to the canonical resolution.
///
/// Directions are interpolated and re-normalized; moments are recomputed from
/// the camera center so the line constraints keep holding.
pub fn resize_ray_map(map: &RayMap, cfg: &PatchConfig) -> RayMap {
    let (ow, oh) = (cfg.canonical_width, cfg.canonical_height);
    if ow == map.width && oh == map.height {
        return map.clone();
    }
    let sx = map.width as f64 / ow as f64;
    let sy = map.height as f64 / oh as f64;
    let center = map.center;
    let mut data = vec![0.0; ow as usize * oh as usize * RAY_CHANNELS];
    data.par_chunks_mut(ow as usize * RAY_CHANNELS)
        .enumerate()
        .for_each(|(y, row)| {
            let (y0, y1, fy) = bilinear_taps(y, sy, map.height);
            for (x, px) in row.chunks_exact_mut(RAY_CHANNELS).enumerate() {
                let (x0, x1, fx) = bilinear_taps(x, sx, map.width);
                let d = map.direction(x0, y0) * ((1.0 - fx) * (1.0 - fy))
                    + map.direction(x1, y0) * (fx * (1.0 - fy))
                    + map.direction(x0, y1) * ((1.0 - fx) * fy)
                    + map.direction(x1, y1) * (fx * fy);
                write_ray(px, &center, &d.normalize());
            }
        });
    RayMap {
        width: ow,
        height: oh,
        center,
        data,
    }
}

// Half-pixel-center sampling, clamped at the borders.
fn bilinear_taps(dst: usize, scale: f64, src_len: u32) -> (u32, u32, f64) {
    let max = (src_len - 1) as f64;
    let s = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, max);
    let i0 = s.floor();
    let i1 = (i0 + 1.0).min(max);
    (i0 as u32, i1 as u32, s - i0)
}

/// Linear patch embedding `token = weight · patch + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedParams {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl EmbedParams {
    /// Seeded uniform init in `±1/√fan_in`.
    pub fn seeded(cfg: &PatchConfig, seed: u64) -> Self {
        let fan_in = cfg.patch_len();
        let mut rng = crate::init::rng(seed);
        let weight = uniform_matrix(&mut rng, cfg.token_dim, fan_in, fan_in);
        let bias = DVector::from_column_slice(
            uniform_matrix(&mut rng, cfg.token_dim, 1, fan_in).as_slice(),
        );
        Self { weight, bias }
    }
}

/// Patch tokens, one row per token, rows in row-major patch order.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGrid {
    pub tokens: DMatrix<f64>,
}

impl TokenGrid {
    pub fn new(tokens: DMatrix<f64>) -> Self {
        Self { tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.tokens.ncols()
    }
}

/// Flattens non-overlapping patches in (row, col, channel) order, one row per patch.
pub fn patchify(map: &RayMap, cfg: &PatchConfig) -> Result<DMatrix<f64>, PluckerError> {
    cfg.validate()?;
    if map.width != cfg.canonical_width || map.height != cfg.canonical_height {
        return Err(PluckerError::ShapeMismatch(format!(
            "ray map is {}x{}, canonical size is {}x{}",
            map.width, map.height, cfg.canonical_width, cfg.canonical_height
        )));
    }
    let p = cfg.patch_size as usize;
    let (pw, ph) = (cfg.patches_wide(), cfg.patches_high());
    let row_len = map.width as usize * RAY_CHANNELS;
    let mut patches = DMatrix::zeros(pw * ph, cfg.patch_len());
    for py in 0..ph {
        for px in 0..pw {
            let token = py * pw + px;
            let mut col = 0;
            for r in 0..p {
                let start = (py * p + r) * row_len + px * p * RAY_CHANNELS;
                for &v in &map.data[start..start + p * RAY_CHANNELS] {
                    patches[(token, col)] = v;
                    col += 1;
                }
            }
        }
    }
    Ok(patches)
}

pub fn patchify_embed(
    map: &RayMap,
    cfg: &PatchConfig,
    params: &EmbedParams,
) -> Result<TokenGrid, PluckerError> {
    let patches = patchify(map, cfg)?;
    if params.weight.nrows() != cfg.token_dim
        || params.weight.ncols() != cfg.patch_len()
        || params.bias.len() != cfg.token_dim
    {
        return Err(PluckerError::ShapeMismatch(format!(
            "embedding is {}x{} (+{}), expected {}x{}",
            params.weight.nrows(),
            params.weight.ncols(),
            params.bias.len(),
            cfg.token_dim,
            cfg.patch_len()
        )));
    }
    let mut tokens = patches * params.weight.transpose();
    for mut row in tokens.row_iter_mut() {
        row += params.bias.transpose();
    }
    Ok(TokenGrid::new(tokens))
}

/// Ray map, canonical resize and embedding in one step.
pub fn encode_camera(
    pose: &CameraPose,
    k: &CameraIntrinsics,
    cfg: &PatchConfig,
    params: &EmbedParams,
) -> Result<TokenGrid, PluckerError> {
    let map = ray_map(pose, k, cfg.canonical_width, cfg.canonical_height);
    patchify_embed(&map, cfg, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::axis_angle;
    use nalgebra::Matrix3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(50.0, 50.0, 32.0, 24.0, 64, 48).unwrap()
    }

    #[test]
    fn principal_ray_through_origin() {
        // odd size, so the principal point is a pixel center
        let k1 = CameraIntrinsics::new(10.0, 10.0, 2.5, 2.5, 5, 5).unwrap();
        let m1 = ray_map(&CameraPose::identity(), &k1, 5, 5);
        assert_eq!(m1.direction(2, 2), Vector3::new(0.0, 0.0, 1.0));
        assert_eq!(m1.moment(2, 2), Vector3::zeros());
        assert!(m1.invariant_residual() < 1e-12);
    }

    #[test]
    fn translated_camera_moment() {
        let k1 = CameraIntrinsics::new(10.0, 10.0, 2.5, 2.5, 5, 5).unwrap();
        let pose =
            CameraPose::from_parts(Matrix3::identity(), Vector3::new(1.0, 0.0, 0.0)).unwrap();
        let m = ray_map(&pose, &k1, 5, 5);
        assert_eq!(m.direction(2, 2), Vector3::new(0.0, 0.0, 1.0));
        assert_eq!(m.moment(2, 2), Vector3::new(0.0, -1.0, 0.0));
    }

    #[test]
    fn moment_is_independent_of_point_on_line() {
        let pose = CameraPose::from_parts(
            axis_angle(&Vector3::new(1.0, 2.0, 0.5), 40.0),
            Vector3::new(0.3, -1.2, 2.0),
        )
        .unwrap();
        let map = ray_map(&pose, &k(), 64, 48);
        let o = pose.center();
        for (x, y) in [(0, 0), (10, 33), (63, 47), (31, 24)] {
            let d = map.direction(x, y);
            let m = map.moment(x, y);
            for s in [0.5, 1.0, 10.0] {
                let p = o + d * s;
                assert!((p.cross(&d) - m).amax() < 1e-9);
            }
        }
    }

    #[test]
    fn fov_preserving_rescale_gives_same_rays() {
        let pose =
            CameraPose::from_parts(axis_angle(&Vector3::y(), 25.0), Vector3::new(1.0, 2.0, 3.0))
                .unwrap();
        let k = k();
        let k2 = k.scaled_to(128, 96);
        let a = ray_map(&pose, &k, 32, 24);
        let b = ray_map(&pose, &k2, 32, 24);
        let diff = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-12);
    }

    #[test]
    fn resize_identity_is_bitwise() {
        let map = ray_map(&CameraPose::identity(), &k(), 28, 28);
        let cfg = PatchConfig {
            canonical_width: 28,
            canonical_height: 28,
            patch_size: 14,
            token_dim: 4,
        };
        assert_eq!(resize_ray_map(&map, &cfg), map);
    }

    #[test]
    fn resize_constant_map_stays_constant() {
        let d = Vector3::new(1.0, 2.0, 2.0) / 3.0;
        let c = Vector3::new(0.5, -1.0, 2.0);
        let mut data = Vec::new();
        for _ in 0..(8 * 8) {
            data.extend_from_slice(d.as_slice());
            data.extend_from_slice(c.cross(&d).as_slice());
        }
        let map = RayMap::from_raw(8, 8, c, data).unwrap();
        let cfg = PatchConfig {
            canonical_width: 4,
            canonical_height: 4,
            patch_size: 2,
            token_dim: 3,
        };
        let small = resize_ray_map(&map, &cfg);
        for y in 0..4 {
            for x in 0..4 {
                assert!((small.direction(x, y) - d).amax() < 1e-15);
                assert!((small.moment(x, y) - c.cross(&d)).amax() < 1e-15);
            }
        }
    }

    #[test]
    fn resize_preserves_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let axis = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                1.0,
            );
            let t = Vector3::new(
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
            );
            let pose =
                CameraPose::from_parts(axis_angle(&axis, rng.random_range(-180.0..180.0)), t)
                    .unwrap();
            let map = ray_map(&pose, &k(), 64, 48);
            for (w, h) in [(28, 28), (70, 42), (14, 14)] {
                let cfg = PatchConfig {
                    canonical_width: w,
                    canonical_height: h,
                    patch_size: 14,
                    token_dim: 4,
                };
                assert!(resize_ray_map(&map, &cfg).invariant_residual() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_weight_gives_bias() {
        let cfg = PatchConfig {
            canonical_width: 8,
            canonical_height: 4,
            patch_size: 4,
            token_dim: 3,
        };
        let map = ray_map(&CameraPose::identity(), &k(), 8, 4);
        let b = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let params = EmbedParams {
            weight: DMatrix::zeros(3, cfg.patch_len()),
            bias: b.clone(),
        };
        let grid = patchify_embed(&map, &cfg, &params).unwrap();
        assert_eq!(grid.len(), 2);
        for r in 0..2 {
            assert_eq!(grid.tokens.row(r).transpose(), b);
        }
    }

    #[test]
    fn identity_embedding_returns_patch_prefix() {
        let cfg = PatchConfig {
            canonical_width: 2,
            canonical_height: 2,
            patch_size: 2,
            token_dim: 10,
        };
        let map = ray_map(&CameraPose::identity(), &k(), 2, 2);
        let params = EmbedParams {
            weight: DMatrix::identity(10, cfg.patch_len()),
            bias: DVector::zeros(10),
        };
        let grid = patchify_embed(&map, &cfg, &params).unwrap();
        assert_eq!(grid.len(), 1);
        // full-image patch flattened row-major is exactly the raw buffer
        for i in 0..10 {
            assert_eq!(grid.tokens[(0, i)], map.data()[i]);
        }
    }

    #[test]
    fn patch_flatten_order() {
        // 4x4 map, p=2: token 1 is the top-right patch, whose first element is pixel (2, 0)
        let data: Vec<f64> = (0..4 * 4 * 6).map(|i| i as f64).collect();
        let map = RayMap::from_raw(4, 4, Vector3::zeros(), data).unwrap();
        let cfg = PatchConfig {
            canonical_width: 4,
            canonical_height: 4,
            patch_size: 2,
            token_dim: 1,
        };
        let p = patchify(&map, &cfg).unwrap();
        assert_eq!(p.nrows(), 4);
        let expect_first = |x: usize, y: usize| ((y * 4 + x) * 6) as f64;
        assert_eq!(p[(1, 0)], expect_first(2, 0));
        assert_eq!(p[(1, 6)], expect_first(3, 0));
        assert_eq!(p[(1, 12)], expect_first(2, 1));
        assert_eq!(p[(2, 0)], expect_first(0, 2));
    }

    #[test]
    fn embed_is_affine_in_map() {
        let cfg = PatchConfig {
            canonical_width: 8,
            canonical_height: 8,
            patch_size: 4,
            token_dim: 5,
        };
        let params = EmbedParams::seeded(&cfg, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 8 * 8 * 6;
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (alpha, beta) = (0.7, -1.3);
        let mix: Vec<f64> = a
            .iter()
            .zip(&b)
            .map(|(x, y)| alpha * x + beta * y)
            .collect();
        let mk = |v: Vec<f64>| RayMap::from_raw(8, 8, Vector3::zeros(), v).unwrap();
        let ea = patchify_embed(&mk(a), &cfg, &params).unwrap().tokens;
        let eb = patchify_embed(&mk(b), &cfg, &params).unwrap().tokens;
        let em = patchify_embed(&mk(mix), &cfg, &params).unwrap().tokens;
        let mut bias = DMatrix::zeros(4, 5);
        for mut r in bias.row_iter_mut() {
            r += params.bias.transpose();
        }
        // embed(αa+βb) = α·embed(a) + β·embed(b) + (1-α-β)·bias
        let expect = ea * alpha + eb * beta + bias * (1.0 - alpha - beta);
        assert!((em - expect).amax() < 1e-12);
    }

    #[test]
    fn patch_shape_errors() {
        let cfg = PatchConfig {
            canonical_width: 8,
            canonical_height: 8,
            patch_size: 4,
            token_dim: 5,
        };
        let map = ray_map(&CameraPose::identity(), &k(), 16, 8);
        let params = EmbedParams::seeded(&cfg, 0);
        assert!(matches!(
            patchify_embed(&map, &cfg, &params),
            Err(PluckerError::ShapeMismatch(_))
        ));
        let bad = PatchConfig {
            patch_size: 3,
            ..cfg
        };
        assert!(matches!(
            bad.validate(),
            Err(PluckerError::InvalidConfig(_))
        ));
        assert_eq!(PatchConfig::default().num_tokens(), 1024);
    }
}
