//! Procedural box-room scenes with closed-form depth and visibility.
//!
//! A scene is the interior of an axis-aligned room plus axis-aligned box
//! obstacles. Every quantity here is computed analytically, so these scenes
//! serve as ground truth for the depth-based visibility test.

use nalgebra::Vector3;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{back_project, project, CameraError, CameraIntrinsics, CameraPose, DepthMap};
use crate::selection::{Frame, SampleSet};

/// Segment-occlusion slack of the visibility oracle, in meters.
pub const OCCLUSION_SLACK: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("camera center {0:?} is outside the room")]
    CameraOutsideRoom([f64; 3]),
    #[error("camera center {0:?} is inside obstacle {1}")]
    CameraInsideObstacle([f64; 3], u32),
    #[error("could not place {0} disjoint obstacles")]
    Crowded(usize),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error(transparent)]
    Camera(#[from] CameraError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>) -> Self {
        Self {
            min: min.into(),
            max: max.into(),
        }
    }

    pub fn min(&self) -> Vector3<f64> {
        self.min.into()
    }

    pub fn max(&self) -> Vector3<f64> {
        self.max.into()
    }

    pub fn center(&self) -> Vector3<f64> {
        (self.min() + self.max()) / 2.0
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.max() - self.min()
    }

    pub fn is_degenerate(&self) -> bool {
        (0..3).any(|i| !(self.max[i] > self.min[i]))
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn contains_strictly(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] > self.min[i] && p[i] < self.max[i])
    }

    /// `other` lies strictly inside `self`.
    pub fn encloses_strictly(&self, other: &Aabb) -> bool {
        (0..3).all(|i| other.min[i] > self.min[i] && other.max[i] < self.max[i])
    }

    /// Boxes overlap once each is inflated by `gap / 2`.
    pub fn overlaps(&self, other: &Aabb, gap: f64) -> bool {
        (0..3).all(|i| self.min[i] < other.max[i] + gap && other.min[i] < self.max[i] + gap)
    }

    pub fn expanded(&self, margin: f64) -> Aabb {
        let m = Vector3::repeat(margin);
        Aabb::new(self.min() - m, self.max() + m)
    }

    /// Slab intersection of `o + s·dir`: the parameter interval inside the box,
    /// or `None` when the line misses it.
    pub fn slab(&self, o: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, f64)> {
        let mut near = f64::NEG_INFINITY;
        let mut far = f64::INFINITY;
        for i in 0..3 {
            if dir[i] == 0.0 {
                if o[i] < self.min[i] || o[i] > self.max[i] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[i];
            let (mut a, mut b) = ((self.min[i] - o[i]) * inv, (self.max[i] - o[i]) * inv);
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            near = near.max(a);
            far = far.min(b);
        }
        (near <= far).then_some((near, far))
    }

    /// Distance from `p` to the box surface.
    pub fn boundary_distance(&self, p: &Vector3<f64>) -> f64 {
        if self.contains(p) {
            (0..3)
                .map(|i| (p[i] - self.min[i]).min(self.max[i] - p[i]))
                .fold(f64::INFINITY, f64::min)
        } else {
            let mut sq = 0.0;
            for i in 0..3 {
                let d = (self.min[i] - p[i]).max(p[i] - self.max[i]).max(0.0);
                sq += d * d;
            }
            sq.sqrt()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub id: u32,
    pub bounds: Aabb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub room: Aabb,
    pub obstacles: Vec<Obstacle>,
    pub seed: u64,
}

const ORBIT_EYE_HEIGHT: f64 = 1.5;
const ORBIT_LOOK_HEIGHT: f64 = 0.9;
const OBSTACLE_CLEARANCE: f64 = 0.5;

impl Scene {
    /// Validates that obstacles are non-degenerate and strictly inside the room.
    pub fn new(room: Aabb, obstacles: Vec<Obstacle>, seed: u64) -> Result<Self, SynthError> {
        if room.is_degenerate() {
            return Err(SynthError::InvalidScene("degenerate room".into()));
        }
        for o in &obstacles {
            if o.bounds.is_degenerate() {
                return Err(SynthError::InvalidScene(format!(
                    "obstacle {} is degenerate",
                    o.id
                )));
            }
            if !room.encloses_strictly(&o.bounds) {
                return Err(SynthError::InvalidScene(format!(
                    "obstacle {} is not strictly inside the room",
                    o.id
                )));
            }
        }
        Ok(Self {
            room,
            obstacles,
            seed,
        })
    }

    /// Radius of the orbit trajectory around the room center.
    pub fn orbit_radius(&self) -> f64 {
        let e = self.room.extent();
        0.38 * e.x.min(e.y)
    }

    /// Point the orbit cameras look at.
    pub fn orbit_target(&self) -> Vector3<f64> {
        let c = self.room.center();
        Vector3::new(
            c.x,
            c.y,
            self.room.min[2] + ORBIT_LOOK_HEIGHT.min(0.5 * self.room.extent().z),
        )
    }

    pub fn is_free(&self, p: &Vector3<f64>, margin: f64) -> bool {
        self.room.expanded(-margin).contains_strictly(p)
            && self
                .obstacles
                .iter()
                .all(|o| !o.bounds.expanded(margin).contains(p))
    }

    /// Nearest hit parameter of `o + s·dir` for `s > 0`. `o` must be inside
    /// the room and outside every obstacle.
    pub fn cast(&self, o: &Vector3<f64>, dir: &Vector3<f64>) -> f64 {
        let mut best = match self.room.slab(o, dir) {
            Some((_, far)) => far,
            None => f64::INFINITY,
        };
        for ob in &self.obstacles {
            if let Some((near, far)) = ob.bounds.slab(o, dir) {
                if near > 0.0 && near <= far && near < best {
                    best = near;
                }
            }
        }
        best
    }

    /// Distance from `p` to the nearest scene surface.
    pub fn surface_residual(&self, p: &Vector3<f64>) -> f64 {
        self.obstacles
            .iter()
            .map(|o| o.bounds.boundary_distance(p))
            .fold(self.room.boundary_distance(p), f64::min)
    }

    pub fn check_camera(&self, c: &Vector3<f64>) -> Result<(), SynthError> {
        if !self.room.contains_strictly(c) {
            return Err(SynthError::CameraOutsideRoom((*c).into()));
        }
        if let Some(o) = self.obstacles.iter().find(|o| o.bounds.contains(c)) {
            return Err(SynthError::CameraInsideObstacle((*c).into(), o.id));
        }
        Ok(())
    }
}

/// Deterministic scene: a room of random size with `n_obstacles` disjoint
/// boxes kept clear of the orbit trajectory.
pub fn make_scene(seed: u64, n_obstacles: usize) -> Result<Scene, SynthError> {
    let mut rng = crate::init::rng(seed);
    let extent = Vector3::new(
        rng.random_range(5.0..7.0),
        rng.random_range(4.0..6.0),
        rng.random_range(2.6..3.2),
    );
    let room = Aabb::new(Vector3::zeros(), extent);
    let mut scene = Scene {
        room,
        obstacles: Vec::with_capacity(n_obstacles),
        seed,
    };
    let center = room.center();
    let reach = scene.orbit_radius() - OBSTACLE_CLEARANCE;
    let mut attempts = 0;
    while scene.obstacles.len() < n_obstacles {
        attempts += 1;
        if attempts > 20_000 {
            return Err(SynthError::Crowded(n_obstacles));
        }
        let size = Vector3::new(
            rng.random_range(0.25..0.8),
            rng.random_range(0.25..0.8),
            rng.random_range(0.3..1.2),
        );
        let cx = center.x + rng.random_range(-reach..reach);
        let cy = center.y + rng.random_range(-reach..reach);
        let z0 = rng.random_range(0.02..(extent.z - size.z - 0.02));
        let min = Vector3::new(cx - size.x / 2.0, cy - size.y / 2.0, z0);
        let bounds = Aabb::new(min, min + size);
        // every footprint corner stays within the clearance disk
        let corners_ok = [
            (min.x, min.y),
            (min.x + size.x, min.y),
            (min.x, min.y + size.y),
            (min.x + size.x, min.y + size.y),
        ]
        .iter()
        .all(|(x, y)| ((x - center.x).powi(2) + (y - center.y).powi(2)).sqrt() <= reach);
        if !corners_ok || !room.encloses_strictly(&bounds) {
            continue;
        }
        if scene
            .obstacles
            .iter()
            .any(|o| o.bounds.overlaps(&bounds, 0.05))
        {
            continue;
        }
        let id = scene.obstacles.len() as u32;
        scene.obstacles.push(Obstacle { id, bounds });
    }
    Ok(scene)
}

/// Exact depth map: per pixel, the camera-frame z of the nearest surface.
///
/// `k` is rescaled to `width x height` when sizes differ.
pub fn render_depth(
    scene: &Scene,
    pose: &CameraPose,
    k: &CameraIntrinsics,
    width: u32,
    height: u32,
) -> Result<DepthMap, SynthError> {
    let o = pose.center();
    scene.check_camera(&o)?;
    let k = k.scaled_to(width, height);
    let rot = pose.rotation();
    let mut values = vec![0.0; width as usize * height as usize];
    values
        .par_chunks_mut(width as usize)
        .enumerate()
        .for_each(|(v, row)| {
            for (u, out) in row.iter_mut().enumerate() {
                // camera-frame ray with z = 1, so the hit parameter is the depth
                let dir = rot * k.pixel_ray(u as f64, v as f64);
                let s = scene.cast(&o, &dir);
                *out = if s.is_finite() && s > 0.0 { s } else { 0.0 };
            }
        });
    Ok(DepthMap::new(width, height, values)?)
}

/// Ground-truth visibility of target samples in a context view by exact
/// segment casting. Returns indices into `samples.pixels`.
pub fn oracle_visibility(
    scene: &Scene,
    samples: &SampleSet,
    target: &Frame,
    context: &Frame,
) -> Vec<usize> {
    let c = context.pose.center();
    samples
        .pixels
        .iter()
        .enumerate()
        .filter_map(|(i, &(u, v))| {
            let depth = target.depth.get(u, v);
            let x =
                back_project(u as f64, v as f64, depth, &target.pose, &target.intrinsics).ok()?;
            let p = project(&x, &context.pose, &context.intrinsics).ok()?;
            p.pixel(&context.intrinsics)?;
            (!segment_occluded(scene, &c, &x)).then_some(i)
        })
        .collect()
}

/// True when an obstacle surface lies on the segment strictly before `to`.
pub fn segment_occluded(scene: &Scene, from: &Vector3<f64>, to: &Vector3<f64>) -> bool {
    let dir = to - from;
    let len = dir.norm();
    if len == 0.0 {
        return false;
    }
    let limit = 1.0 - OCCLUSION_SLACK / len;
    scene
        .obstacles
        .iter()
        .any(|o| match o.bounds.slab(from, &dir) {
            Some((near, far)) => far > 0.0 && near < limit && near.max(0.0) <= far,
            None => false,
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrajectoryPattern {
    Orbit,
    RandomWalk,
}

impl std::str::FromStr for TrajectoryPattern {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "orbit" => Ok(Self::Orbit),
            "random-walk" => Ok(Self::RandomWalk),
            other => Err(format!(
                "unknown trajectory pattern '{other}' (orbit|random-walk)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub frames: Vec<(u32, CameraPose)>,
}

/// Camera at `position` with heading `yaw` (about world z, from +x),
/// `pitch` (positive looks up) and `roll` about the optical axis; degrees.
pub fn pose_from_angles(
    position: Vector3<f64>,
    yaw: f64,
    pitch: f64,
    roll: f64,
) -> Result<CameraPose, CameraError> {
    let (y, p) = (yaw.to_radians(), pitch.to_radians());
    let forward = Vector3::new(p.cos() * y.cos(), p.cos() * y.sin(), p.sin());
    let base = CameraPose::look_at(position, position + forward, Vector3::z())?;
    let r = base.rotation() * crate::camera::axis_angle(&Vector3::z(), roll);
    CameraPose::from_parts(r, position)
}

/// Inverse of [`pose_from_angles`]: `(yaw, pitch, roll)` in degrees.
pub fn pose_angles(pose: &CameraPose) -> (f64, f64, f64) {
    let r = pose.rotation();
    let f: Vector3<f64> = r.column(2).into_owned();
    let yaw = f.y.atan2(f.x).to_degrees();
    let pitch = f.z.clamp(-1.0, 1.0).asin().to_degrees();
    let right = f.cross(&Vector3::z());
    let roll = if right.norm() < 1e-12 {
        0.0
    } else {
        let right = right.normalize();
        let down = f.cross(&right);
        let x: Vector3<f64> = r.column(0).into_owned();
        x.dot(&down).atan2(x.dot(&right)).to_degrees()
    };
    (yaw, pitch, roll)
}

pub fn sample_trajectory(
    scene: &Scene,
    n: usize,
    seed: u64,
    pattern: TrajectoryPattern,
) -> Result<Trajectory, SynthError> {
    let mut rng = crate::init::rng(seed.wrapping_add(0x5eed));
    let frames = match pattern {
        TrajectoryPattern::Orbit => orbit(scene, n, &mut rng)?,
        TrajectoryPattern::RandomWalk => random_walk(scene, n, &mut rng)?,
    };
    Ok(Trajectory { frames })
}

fn orbit(
    scene: &Scene,
    n: usize,
    rng: &mut impl Rng,
) -> Result<Vec<(u32, CameraPose)>, SynthError> {
    let target = scene.orbit_target();
    let r = scene.orbit_radius();
    let height = scene.room.min[2] + ORBIT_EYE_HEIGHT.min(0.6 * scene.room.extent().z);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    (0..n)
        .map(|i| {
            let a = phase + std::f64::consts::TAU * i as f64 / n as f64;
            let eye = Vector3::new(target.x + r * a.cos(), target.y + r * a.sin(), height);
            scene.check_camera(&eye)?;
            Ok((i as u32, CameraPose::look_at(eye, target, Vector3::z())?))
        })
        .collect()
}

fn random_walk(
    scene: &Scene,
    n: usize,
    rng: &mut impl Rng,
) -> Result<Vec<(u32, CameraPose)>, SynthError> {
    const MARGIN: f64 = 0.3;
    const STEP: f64 = 0.3;
    if n == 0 {
        return Ok(Vec::new());
    }
    let lo = scene.room.min() + Vector3::repeat(MARGIN);
    let hi = scene.room.max() - Vector3::repeat(MARGIN);
    let mut pos = None;
    for _ in 0..10_000 {
        let p = Vector3::new(
            rng.random_range(lo.x..hi.x),
            rng.random_range(lo.y..hi.y),
            rng.random_range(1.0f64.min(hi.z - 0.01)..1.8f64.min(hi.z)),
        );
        if scene.is_free(&p, MARGIN) {
            pos = Some(p);
            break;
        }
    }
    let mut pos =
        pos.ok_or_else(|| SynthError::InvalidScene("no free space for a camera".into()))?;
    let mut heading: f64 = rng.random_range(0.0..360.0);
    let mut frames = Vec::with_capacity(n);
    for i in 0..n {
        if i > 0 {
            for attempt in 0..50 {
                let turn = if attempt == 0 {
                    rng.random_range(-25.0..25.0)
                } else {
                    rng.random_range(-180.0..180.0)
                };
                let h = heading + turn;
                let cand = pos
                    + Vector3::new(
                        h.to_radians().cos(),
                        h.to_radians().sin(),
                        rng.random_range(-0.05..0.05),
                    ) * STEP;
                if scene.is_free(&cand, MARGIN) {
                    pos = cand;
                    heading = h;
                    break;
                }
            }
        }
        let yaw = heading + rng.random_range(-10.0..10.0);
        let pitch = rng.random_range(-20.0..5.0);
        frames.push((i as u32, pose_from_angles(pos, yaw, pitch, 0.0)?));
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selection::target_samples;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::from_fov(70.0, 64, 48).unwrap()
    }

    fn frame(scene: &Scene, id: u32, pose: CameraPose) -> Frame {
        let k = k();
        let depth = render_depth(scene, &pose, &k, k.width, k.height).unwrap();
        Frame {
            id,
            pose,
            intrinsics: k,
            depth,
        }
    }

    #[test]
    fn angles_round_trip() {
        for (yaw, pitch, roll) in [
            (0.0, 0.0, 0.0),
            (30.0, -20.0, 4.0),
            (-170.0, 60.0, -45.0),
            (95.0, -80.0, 170.0),
        ] {
            let pose = pose_from_angles(Vector3::new(1.0, 2.0, 1.5), yaw, pitch, roll).unwrap();
            let (y, p, r) = pose_angles(&pose);
            assert!(
                (y - yaw).abs() < 1e-9 && (p - pitch).abs() < 1e-9 && (r - roll).abs() < 1e-9,
                "{y} {p} {r}"
            );
        }
    }

    #[test]
    fn scenes_are_deterministic() {
        assert_eq!(make_scene(7, 4).unwrap(), make_scene(7, 4).unwrap());
        assert_ne!(make_scene(7, 4).unwrap(), make_scene(8, 4).unwrap());
        assert!(make_scene(3, 0).unwrap().obstacles.is_empty());
    }

    #[test]
    fn obstacles_are_disjoint_and_inside() {
        for seed in 0..20 {
            let s = make_scene(seed, 5).unwrap();
            assert_eq!(s.obstacles.len(), 5);
            for (i, a) in s.obstacles.iter().enumerate() {
                assert!(s.room.encloses_strictly(&a.bounds));
                for b in &s.obstacles[i + 1..] {
                    assert!(!a.bounds.overlaps(&b.bounds, 0.0));
                }
            }
        }
    }

    #[test]
    fn wall_depth_at_principal_pixel() {
        let room = Aabb::new(Vector3::new(-3.0, -3.0, -3.0), Vector3::new(3.0, 3.0, 3.0));
        let scene = Scene::new(room, vec![], 0).unwrap();
        let k = CameraIntrinsics::new(40.0, 40.0, 5.5, 5.5, 11, 11).unwrap();
        let d = render_depth(&scene, &CameraPose::identity(), &k, 11, 11).unwrap();
        assert_eq!(d.get(5, 5), 3.0);
        assert!(d.values().iter().all(|&v| v >= 3.0 - 1e-12));
    }

    #[test]
    fn camera_outside_room_is_rejected() {
        let scene = make_scene(0, 0).unwrap();
        let pose =
            CameraPose::from_parts(nalgebra::Matrix3::identity(), Vector3::new(-1.0, 1.0, 1.0))
                .unwrap();
        assert!(matches!(
            render_depth(&scene, &pose, &k(), 64, 48),
            Err(SynthError::CameraOutsideRoom(_))
        ));
    }

    #[test]
    fn rendered_points_lie_on_surfaces() {
        let scene = make_scene(11, 6).unwrap();
        let traj = sample_trajectory(&scene, 6, 1, TrajectoryPattern::Orbit).unwrap();
        let diag = scene.room.extent().norm();
        for (_, pose) in traj.frames {
            let d = render_depth(&scene, &pose, &k(), 64, 48).unwrap();
            for v in 0..48 {
                for u in 0..64 {
                    let z = d.get(u, v);
                    assert!(z > 0.0 && z <= diag);
                    let x = back_project(u as f64, v as f64, z, &pose, &k()).unwrap();
                    assert!(scene.surface_residual(&x) < 1e-6);
                }
            }
        }
    }

    #[test]
    fn orbit_looks_at_center_and_stays_inside() {
        let scene = make_scene(2, 5).unwrap();
        let traj = sample_trajectory(&scene, 24, 3, TrajectoryPattern::Orbit).unwrap();
        assert_eq!(traj.frames.len(), 24);
        let target = scene.orbit_target();
        for (_, p) in &traj.frames {
            let pc = p.world_to_camera(&target);
            assert!(pc.x.abs() < 1e-9 && pc.y.abs() < 1e-9 && pc.z > 0.0);
            assert!(scene.is_free(&p.center(), 0.0));
        }
        assert!(sample_trajectory(&scene, 0, 3, TrajectoryPattern::Orbit)
            .unwrap()
            .frames
            .is_empty());
    }

    #[test]
    fn random_walk_respects_collisions() {
        let scene = make_scene(4, 6).unwrap();
        let traj = sample_trajectory(&scene, 50, 9, TrajectoryPattern::RandomWalk).unwrap();
        assert_eq!(traj.frames.len(), 50);
        for (_, p) in &traj.frames {
            assert!(scene.is_free(&p.center(), 0.29));
        }
        let again = sample_trajectory(&scene, 50, 9, TrajectoryPattern::RandomWalk).unwrap();
        assert_eq!(traj.frames, again.frames);
        assert!(
            sample_trajectory(&scene, 0, 9, TrajectoryPattern::RandomWalk)
                .unwrap()
                .frames
                .is_empty()
        );
    }

    #[test]
    fn oracle_self_visibility_is_everything() {
        let scene = make_scene(5, 4).unwrap();
        let traj = sample_trajectory(&scene, 4, 0, TrajectoryPattern::Orbit).unwrap();
        let f = frame(&scene, 0, traj.frames[0].1);
        let p = target_samples(&f, 4).unwrap();
        assert_eq!(oracle_visibility(&scene, &p, &f, &f).len(), p.pixels.len());
    }

    #[test]
    fn hand_placed_occluder_blocks_the_middle() {
        // two cameras side by side look at the far wall x=+3; a box sits in front of B
        let room = Aabb::new(Vector3::new(-3.0, -3.0, -3.0), Vector3::new(3.0, 3.0, 3.0));
        let occ = Obstacle {
            id: 0,
            bounds: Aabb::new(Vector3::new(0.0, 0.6, -0.3), Vector3::new(0.4, 1.4, 0.3)),
        };
        let scene = Scene::new(room, vec![occ], 0).unwrap();
        let a = pose_from_angles(Vector3::new(-2.0, 0.0, 0.0), 0.0, 0.0, 0.0).unwrap();
        let b = pose_from_angles(Vector3::new(-2.0, 1.0, 0.0), 0.0, 0.0, 0.0).unwrap();
        let k = CameraIntrinsics::from_fov(60.0, 32, 32).unwrap();
        let mk = |id, pose| Frame {
            id,
            pose,
            intrinsics: k,
            depth: render_depth(&scene, &pose, &k, 32, 32).unwrap(),
        };
        let (fa, fb) = (mk(0, a), mk(1, b));
        let p = target_samples(&fa, 1).unwrap();
        let vis = oracle_visibility(&scene, &p, &fa, &fb);
        // brute-force expectation from the geometry
        let expect: Vec<usize> = p
            .pixels
            .iter()
            .enumerate()
            .filter(|(_, &(u, v))| {
                let x = back_project(u as f64, v as f64, fa.depth.get(u, v), &a, &k).unwrap();
                let in_view = project(&x, &b, &k)
                    .ok()
                    .and_then(|pr| pr.pixel(&k))
                    .is_some();
                // B starts inside the box's y/z span, so the segment can only enter
                // through the front plane x=0
                let c = b.center();
                let s = (0.0 - c.x) / (x.x - c.x);
                let hit = c + (x - c) * s;
                let before_end = s < 1.0 - OCCLUSION_SLACK / (x - c).norm();
                let blocked = s > 0.0
                    && before_end
                    && (0.6..=1.4).contains(&hit.y)
                    && (-0.3..=0.3).contains(&hit.z);
                in_view && !blocked
            })
            .map(|(i, _)| i)
            .collect();
        assert!(vis.len() < p.pixels.len());
        assert_eq!(vis, expect);
    }

    #[test]
    fn shrinking_an_occluder_never_removes_visibility() {
        let room = Aabb::new(Vector3::new(-3.0, -3.0, -3.0), Vector3::new(3.0, 3.0, 3.0));
        let big = Aabb::new(Vector3::new(-0.5, -0.5, -0.5), Vector3::new(0.5, 0.5, 0.5));
        let small = Aabb::new(Vector3::new(-0.3, -0.3, -0.3), Vector3::new(0.3, 0.3, 0.3));
        let s_big = Scene::new(room, vec![Obstacle { id: 0, bounds: big }], 0).unwrap();
        let s_small = Scene::new(
            room,
            vec![Obstacle {
                id: 0,
                bounds: small,
            }],
            0,
        )
        .unwrap();
        let k = CameraIntrinsics::from_fov(80.0, 32, 24).unwrap();
        let t = pose_from_angles(Vector3::new(-2.0, -1.5, 0.5), 30.0, -5.0, 0.0).unwrap();
        let c = pose_from_angles(Vector3::new(-2.0, 1.5, 0.2), -25.0, 0.0, 0.0).unwrap();
        // target depth from the big scene; the small box is nested in it, so the
        // big-scene surface points stay valid world points for both oracles
        let tf = Frame {
            id: 0,
            pose: t,
            intrinsics: k,
            depth: render_depth(&s_big, &t, &k, 32, 24).unwrap(),
        };
        let cf = Frame {
            id: 1,
            pose: c,
            intrinsics: k,
            depth: render_depth(&s_big, &c, &k, 32, 24).unwrap(),
        };
        let p = target_samples(&tf, 1).unwrap();
        let vb = oracle_visibility(&s_big, &p, &tf, &cf);
        let vs = oracle_visibility(&s_small, &p, &tf, &cf);
        assert!(vb.iter().all(|i| vs.contains(i)));
    }

    #[test]
    fn slab_handles_axis_parallel_rays() {
        let b = Aabb::new(Vector3::new(0.0, 0.0, 0.0), Vector3::new(1.0, 1.0, 1.0));
        assert_eq!(
            b.slab(&Vector3::new(-1.0, 0.5, 0.5), &Vector3::x()),
            Some((1.0, 2.0))
        );
        assert_eq!(b.slab(&Vector3::new(-1.0, 1.5, 0.5), &Vector3::x()), None);
        assert_eq!(
            b.slab(&Vector3::new(0.5, 0.5, 0.5), &Vector3::z()),
            Some((-0.5, 0.5))
        );
    }
}
