//! Toy end-to-end training of the fusion layer and pose head.
//!
//! Each sample is a target camera on a ring around a synthetic room's
//! center. The four context cameras sit on the same ring at fixed angular
//! offsets from the target. Camera tokens come from their Plücker ray maps,
//! image tokens from a fixed random projection of their rendered depth, and
//! the text tokens stand in for language hidden states. Each text token is a
//! fixed random projection of a sinusoidal embedding of the target pose, plus
//! a per-token offset and noise. Only the pose term of the objective is
//! trained; the language term is fed as zero.

use nalgebra::{DMatrix, Vector3};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::pose_loss_weighted;
use super::{
    backward, forward, pose_loss, pose_loss_grad, total_loss, AdapterConfig, LossConfig, NetError,
    PoseHead, PoseSample,
};
use crate::camera::{CameraIntrinsics, CameraPose};
use crate::eval::{accuracy_report, pose_errors, PoseAccuracyReport, PoseErrorSample, Thresholds};
use crate::init::uniform_matrix;
use crate::plucker::{encode_camera, EmbedParams, PatchConfig};
use crate::synth::{make_scene, pose_angles, pose_from_angles, render_depth, Scene};

/// Angular offsets of the context cameras along the ring, degrees.
const CONTEXT_OFFSETS: [f64; 4] = [-40.0, -20.0, 20.0, 40.0];
const FREQUENCIES: [f64; 3] = [0.5, 1.0, 2.0];
/// Rendered depth is divided by this before projection.
const DEPTH_SCALE: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub steps: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub train_samples: usize,
    pub heldout_samples: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub query_out_dim: usize,
    pub text_tokens: usize,
    /// Std-dev-like amplitude of the uniform noise added to text tokens.
    pub text_noise: f64,
    pub obstacles: usize,
    /// Side of the square canonical ray map and depth render.
    pub image_size: u32,
    pub patch_size: u32,
    /// Held-out evaluation cadence; step 0 and the last step are always logged.
    pub log_every: usize,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            steps: 2000,
            lr: 3e-3,
            beta1: 0.9,
            beta2: 0.999,
            train_samples: 64,
            heldout_samples: 32,
            model_dim: 16,
            heads: 4,
            query_out_dim: 32,
            text_tokens: 12,
            text_noise: 0.05,
            obstacles: 4,
            image_size: 16,
            patch_size: 8,
            log_every: 100,
            loss: LossConfig {
                lambda_lang: 1.0,
                lambda_pose: 0.2,
                bottom_row_weight: 1.0,
            },
        }
    }
}

impl TrainConfig {
    pub fn adapter(&self) -> AdapterConfig {
        AdapterConfig {
            n_queries: 16,
            heads: self.heads,
            model_dim: self.model_dim,
            query_out_dim: self.query_out_dim,
            pose_output: true,
        }
    }

    pub fn patch(&self) -> PatchConfig {
        PatchConfig {
            canonical_width: self.image_size,
            canonical_height: self.image_size,
            patch_size: self.patch_size,
            token_dim: self.model_dim,
        }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        self.adapter().validate()?;
        self.patch()
            .validate()
            .map_err(|e| NetError::ConfigError(e.to_string()))?;
        if self.train_samples == 0 || self.heldout_samples == 0 || self.text_tokens == 0 {
            return Err(NetError::ConfigError(
                "sample and token counts must be positive".into(),
            ));
        }
        if !(self.lr > 0.0)
            || !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
        {
            return Err(NetError::ConfigError(
                "need lr > 0 and betas in [0, 1)".into(),
            ));
        }
        if self.log_every == 0 {
            return Err(NetError::ConfigError("log_every must be positive".into()));
        }
        Ok(())
    }
}

/// One logged step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogEntry {
    pub step: usize,
    /// Mean rotation + translation MSE over the training set.
    pub pose_loss: f64,
    /// Weighted objective that is optimized.
    pub objective: f64,
    pub heldout_median_rot_deg: f64,
    pub heldout_median_trans: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub config: TrainConfig,
    pub log: Vec<TrainLogEntry>,
    /// Held-out accuracy after the last step.
    pub final_accuracy: PoseAccuracyReport,
    /// Held-out predictions whose rotation block was singular; scored as 180°.
    pub singular_predictions: usize,
}

impl TrainingReport {
    pub fn initial(&self) -> &TrainLogEntry {
        self.log.first().expect("step 0 is always logged")
    }

    pub fn last(&self) -> &TrainLogEntry {
        self.log.last().expect("step 0 is always logged")
    }
}

struct Featurizer {
    k: CameraIntrinsics,
    patch: PatchConfig,
    embed: EmbedParams,
    depth_proj: DMatrix<f64>,
    text_proj: Vec<DMatrix<f64>>,
    text_offset: DMatrix<f64>,
}

fn pose_embedding(pose: &CameraPose) -> Vec<f64> {
    let t = pose.translation();
    let (yaw, pitch, roll) = pose_angles(pose);
    let (yaw, pitch, roll) = (yaw.to_radians(), pitch.to_radians(), roll.to_radians());
    let mut out = Vec::with_capacity(6 * 2 * FREQUENCIES.len());
    for x in [t.x, t.y, t.z, yaw, pitch, roll] {
        for w in FREQUENCIES {
            out.push((w * x).sin());
            out.push((w * x).cos());
        }
    }
    out
}

impl Featurizer {
    fn new(cfg: &TrainConfig) -> Result<Self, NetError> {
        let patch = cfg.patch();
        let k = CameraIntrinsics::from_fov(70.0, cfg.image_size, cfg.image_size)?;
        let mut rng = crate::init::rng(cfg.seed ^ 0xfea7);
        let p = cfg.patch_size as usize;
        let depth_proj = uniform_matrix(&mut rng, cfg.model_dim, p * p, p * p) * 3.0;
        let emb_len = 6 * 2 * FREQUENCIES.len();
        let text_proj = (0..cfg.text_tokens)
            .map(|_| uniform_matrix(&mut rng, cfg.model_dim, emb_len, emb_len) * 2.0)
            .collect();
        let text_offset = uniform_matrix(&mut rng, cfg.text_tokens, cfg.model_dim, 1);
        let embed = EmbedParams::seeded(&patch, cfg.seed ^ 0x91c);
        Ok(Self {
            k,
            patch,
            embed,
            depth_proj,
            text_proj,
            text_offset,
        })
    }

    fn depth_tokens(&self, scene: &Scene, pose: &CameraPose) -> Result<DMatrix<f64>, NetError> {
        let s = self.patch.canonical_width;
        let depth = render_depth(scene, pose, &self.k, s, s)
            .map_err(|e| NetError::ConfigError(e.to_string()))?;
        let p = self.patch.patch_size as usize;
        let (pw, ph) = (self.patch.patches_wide(), self.patch.patches_high());
        let mut patches = DMatrix::zeros(pw * ph, p * p);
        for py in 0..ph {
            for px in 0..pw {
                for r in 0..p {
                    for c in 0..p {
                        let v = depth.get((px * p + c) as u32, (py * p + r) as u32);
                        patches[(py * pw + px, r * p + c)] = v / DEPTH_SCALE - 1.0;
                    }
                }
            }
        }
        Ok((patches * self.depth_proj.transpose()).map(f64::tanh))
    }

    fn text_tokens(&self, target: &CameraPose, noise: f64, rng: &mut impl Rng) -> DMatrix<f64> {
        let e = nalgebra::DVector::from_vec(pose_embedding(target));
        let d = self.text_offset.ncols();
        let mut h = DMatrix::zeros(self.text_proj.len(), d);
        for (j, p) in self.text_proj.iter().enumerate() {
            let row = p * &e;
            for c in 0..d {
                h[(j, c)] = row[c] + self.text_offset[(j, c)] + noise * rng.random_range(-1.0..1.0);
            }
        }
        h
    }
}

fn ring_pose(
    scene: &Scene,
    angle_deg: f64,
    radius: f64,
    dz: f64,
    yaw_jitter: f64,
    pitch: f64,
    roll: f64,
) -> Result<CameraPose, NetError> {
    let c = scene.orbit_target();
    let a = angle_deg.to_radians();
    let eye = Vector3::new(
        c.x + radius * a.cos(),
        c.y + radius * a.sin(),
        scene.room.min[2] + 1.5 + dz,
    );
    scene
        .check_camera(&eye)
        .map_err(|e| NetError::ConfigError(e.to_string()))?;
    let to_center = c - eye;
    let yaw = to_center.y.atan2(to_center.x).to_degrees() + yaw_jitter;
    Ok(pose_from_angles(eye, yaw, pitch, roll)?)
}

fn build_samples(
    scene: &Scene,
    feat: &Featurizer,
    cfg: &TrainConfig,
    n: usize,
    rng: &mut impl Rng,
) -> Result<Vec<PoseSample>, NetError> {
    let r0 = scene.orbit_radius();
    (0..n)
        .map(|_| {
            let angle = rng.random_range(0.0..360.0);
            let target = ring_pose(
                scene,
                angle,
                r0 * rng.random_range(0.85..1.0),
                rng.random_range(-0.1..0.1),
                rng.random_range(-10.0..10.0),
                rng.random_range(-25.0..-15.0),
                rng.random_range(-5.0..5.0),
            )?;
            let text = feat.text_tokens(&target, cfg.text_noise, rng);
            let views = CONTEXT_OFFSETS
                .iter()
                .map(|off| {
                    let pose = ring_pose(scene, angle + off, r0, 0.0, 0.0, -20.0, 0.0)?;
                    let z = encode_camera(&pose, &feat.k, &feat.patch, &feat.embed)
                        .map_err(|e| NetError::ConfigError(e.to_string()))?
                        .tokens;
                    Ok((feat.depth_tokens(scene, &pose)?, z))
                })
                .collect::<Result<Vec<_>, NetError>>()?;
            Ok(PoseSample {
                text,
                views,
                target,
            })
        })
        .collect()
}

struct Adam {
    m: Vec<DMatrix<f64>>,
    v: Vec<DMatrix<f64>>,
    t: i32,
}

impl Adam {
    fn new(head: &PoseHead) -> Self {
        let zeros: Vec<_> = head
            .tensors()
            .iter()
            .map(|t| DMatrix::zeros(t.nrows(), t.ncols()))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    fn step(&mut self, head: &mut PoseHead, grads: &PoseHead, cfg: &TrainConfig) {
        const EPS: f64 = 1e-8;
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for (i, (p, g)) in head
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .enumerate()
        {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
                v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
                p[j] -= cfg.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + EPS);
            }
        }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Held-out errors; singular rotation blocks count as 180°.
fn evaluate(
    head: &PoseHead,
    acfg: &AdapterConfig,
    set: &[PoseSample],
) -> Result<(Vec<PoseErrorSample>, usize), NetError> {
    let preds: Vec<_> = set
        .par_iter()
        .map(|s| forward(head, acfg, &s.text, &s.views).map(|t| t.pred))
        .collect::<Result<_, _>>()?;
    let mut singular = 0;
    let errs = preds
        .iter()
        .zip(set)
        .map(|(p, s)| {
            pose_errors(p, &s.target).unwrap_or_else(|_| {
                singular += 1;
                PoseErrorSample {
                    rot_err_deg: 180.0,
                    trans_err: (p.matrix().fixed_view::<3, 1>(0, 3) - s.target.translation())
                        .norm(),
                    raw_rot_residual: f64::NAN,
                }
            })
        })
        .collect();
    Ok((errs, singular))
}

/// Mean losses and summed gradients over `set`; the reduction order is fixed.
fn batch_step(
    head: &PoseHead,
    acfg: &AdapterConfig,
    loss: &LossConfig,
    set: &[PoseSample],
) -> Result<(f64, f64, PoseHead), NetError> {
    let scale = 1.0 / set.len() as f64;
    let per: Vec<(f64, f64, PoseHead)> = set
        .par_iter()
        .map(|s| {
            let trace = forward(head, acfg, &s.text, &s.views)?;
            let plain = pose_loss(&trace.pred, &s.target);
            let weighted = pose_loss_weighted(&trace.pred, &s.target, loss.bottom_row_weight);
            let up = pose_loss_grad(&trace.pred, &s.target, loss.bottom_row_weight)
                * (loss.lambda_pose * scale);
            Ok((plain, weighted, backward(head, acfg, &trace, &up).head))
        })
        .collect::<Result<_, NetError>>()?;
    let mut acc = PoseHead::zeros(acfg);
    let (mut plain, mut weighted) = (0.0, 0.0);
    for (p, w, g) in per {
        plain += p * scale;
        weighted += w * scale;
        for (a, b) in acc.tensors_mut().into_iter().zip(g.tensors()) {
            *a += b;
        }
    }
    // the language term is out of scope and enters as zero
    Ok((plain, total_loss(0.0, weighted, loss), acc))
}

/// Trains with Adam on a fixed synthetic set and logs held-out errors.
pub fn train_adapter_demo(cfg: &TrainConfig) -> Result<TrainingReport, NetError> {
    cfg.validate()?;
    let acfg = cfg.adapter();
    let scene =
        make_scene(cfg.seed, cfg.obstacles).map_err(|e| NetError::ConfigError(e.to_string()))?;
    let feat = Featurizer::new(cfg)?;
    let mut rng = crate::init::rng(cfg.seed ^ 0xda7a);
    let train = build_samples(&scene, &feat, cfg, cfg.train_samples, &mut rng)?;
    let heldout = build_samples(&scene, &feat, cfg, cfg.heldout_samples, &mut rng)?;

    let mut head = PoseHead::seeded(&acfg, cfg.seed);
    let mut adam = Adam::new(&head);
    let mut log = Vec::new();
    let mut last_eval = None;
    for step in 0..=cfg.steps {
        let (plain, objective, grads) = match batch_step(&head, &acfg, &cfg.loss, &train) {
            Err(NetError::NonFinite) => return Err(NetError::DivergedLoss { step }),
            r => r?,
        };
        if !plain.is_finite() || !objective.is_finite() {
            return Err(NetError::DivergedLoss { step });
        }
        if step % cfg.log_every == 0 || step == cfg.steps {
            let (errs, singular) = evaluate(&head, &acfg, &heldout)?;
            let entry = TrainLogEntry {
                step,
                pose_loss: plain,
                objective,
                heldout_median_rot_deg: median(errs.iter().map(|e| e.rot_err_deg).collect()),
                heldout_median_trans: median(errs.iter().map(|e| e.trans_err).collect()),
            };
            log::debug!(
                "step {step}: pose loss {plain:.5}, held-out median rot {:.2}°",
                entry.heldout_median_rot_deg
            );
            log.push(entry);
            last_eval = Some((errs, singular));
        }
        if step < cfg.steps {
            adam.step(&mut head, &grads, cfg);
        }
    }
    let (errs, singular_predictions) = last_eval.expect("final step is logged");
    let final_accuracy =
        accuracy_report(&errs, &Thresholds::default()).expect("held-out set is nonempty");
    Ok(TrainingReport {
        config: *cfg,
        log,
        final_accuracy,
        singular_predictions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> TrainConfig {
        TrainConfig {
            train_samples: 8,
            heldout_samples: 4,
            ..Default::default()
        }
    }

    #[test]
    fn zero_steps_logs_only_initial() {
        let r = train_adapter_demo(&TrainConfig {
            steps: 0,
            ..small()
        })
        .unwrap();
        assert_eq!(r.log.len(), 1);
        assert_eq!(r.log[0].step, 0);
        assert_eq!(r.final_accuracy.n, 4);
    }

    #[test]
    fn deterministic() {
        let cfg = TrainConfig {
            steps: 20,
            log_every: 10,
            ..small()
        };
        assert_eq!(
            train_adapter_demo(&cfg).unwrap(),
            train_adapter_demo(&cfg).unwrap()
        );
    }

    #[test]
    fn short_run_reduces_loss() {
        let r = train_adapter_demo(&TrainConfig {
            steps: 100,
            ..small()
        })
        .unwrap();
        assert!(r.last().pose_loss < r.initial().pose_loss);
        assert_eq!(
            r.log.iter().map(|e| e.step).collect::<Vec<_>>(),
            vec![0, 100]
        );
    }

    #[test]
    fn huge_learning_rate_diverges_or_errors() {
        let cfg = TrainConfig {
            steps: 50,
            lr: 1e300,
            ..small()
        };
        match train_adapter_demo(&cfg) {
            Err(NetError::DivergedLoss { step }) => assert!(step > 0),
            Ok(r) => assert!(r.log.iter().all(|e| e.pose_loss.is_finite())),
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn embedding_recovers_angles() {
        let pose = pose_from_angles(Vector3::new(1.0, 2.0, 1.5), 30.0, -20.0, 4.0).unwrap();
        let e = pose_embedding(&pose);
        let n = 2 * FREQUENCIES.len();
        // frequency 1.0 sits at offset 2 within each block
        let angle = |block: usize| e[block * n + 2].atan2(e[block * n + 3]).to_degrees();
        assert!((angle(3) - 30.0).abs() < 1e-9);
        assert!((angle(4) + 20.0).abs() < 1e-9);
        assert!((angle(5) - 4.0).abs() < 1e-9);
    }
}
