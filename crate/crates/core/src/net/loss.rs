use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraPose, RawPose};

/// Weights of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub lambda_lang: f64,
    pub lambda_pose: f64,
    /// Extra weight on the MSE of the homogeneous bottom row of the
    /// prediction against `(0, 0, 0, 1)`. Zero leaves the pose loss as the
    /// plain rotation + translation MSE.
    pub bottom_row_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_lang: 1.0,
            lambda_pose: 0.2,
            bottom_row_weight: 0.0,
        }
    }
}

/// `MSE(t̂, t) + MSE(R̂, R)` over the raw 3x3 and 3x1 blocks.
pub fn pose_loss(pred: &RawPose, gt: &CameraPose) -> f64 {
    pose_loss_weighted(pred, gt, 0.0)
}

pub(crate) fn pose_loss_weighted(pred: &RawPose, gt: &CameraPose, bottom_row_weight: f64) -> f64 {
    let (p, g) = (pred.matrix(), gt.matrix());
    let mut rot = 0.0;
    let mut trans = 0.0;
    let mut bottom = 0.0;
    for r in 0..4 {
        for c in 0..4 {
            let e = (p[(r, c)] - g[(r, c)]).powi(2);
            match (r, c) {
                (3, _) => bottom += e,
                (_, 3) => trans += e,
                _ => rot += e,
            }
        }
    }
    trans / 3.0 + rot / 9.0 + bottom_row_weight * bottom / 4.0
}

/// Gradient of [`pose_loss`] (plus the optional bottom-row term) w.r.t. the prediction.
pub fn pose_loss_grad(pred: &RawPose, gt: &CameraPose, bottom_row_weight: f64) -> Matrix4<f64> {
    let diff = pred.matrix() - gt.matrix();
    Matrix4::from_fn(|r, c| {
        let scale = match (r, c) {
            (3, _) => bottom_row_weight / 4.0,
            (_, 3) => 1.0 / 3.0,
            _ => 1.0 / 9.0,
        };
        2.0 * scale * diff[(r, c)]
    })
}

/// `λ_lang · lang + λ_pose · pose`.
pub fn total_loss(lang_loss: f64, pose_loss: f64, cfg: &LossConfig) -> f64 {
    cfg.lambda_lang * lang_loss + cfg.lambda_pose * pose_loss
}
