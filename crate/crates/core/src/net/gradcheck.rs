//! Central finite-difference check of the analytic backward pass.

use nalgebra::{DMatrix, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::pose_loss_weighted;
use super::{
    backward, forward, pose_loss_grad, total_loss, AdapterConfig, LossConfig, NetError, PoseHead,
};
use crate::camera::{axis_angle, CameraPose};

pub const FD_STEP: f64 = 1e-5;
pub const MAX_RELATIVE_ERROR: f64 = 1e-4;

/// Denominator floor of [`relative_error`]; gradients smaller than this are
/// compared in absolute terms.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GradCheckDims {
    /// Tokens per view.
    pub tokens: usize,
    pub dim: usize,
    pub text_tokens: usize,
    pub views: usize,
    pub heads: usize,
    pub query_out_dim: usize,
}

impl GradCheckDims {
    /// Random small shapes: `S ≤ 8`, `d ≤ 16`.
    pub fn random<R: Rng>(rng: &mut R) -> Self {
        let heads = [1, 2, 4][rng.random_range(0..3)];
        let dim = heads * rng.random_range(1..=16 / heads);
        Self {
            tokens: rng.random_range(1..=8),
            dim,
            text_tokens: rng.random_range(1..=4),
            views: rng.random_range(1..=2),
            heads,
            query_out_dim: rng.random_range(1..=8),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub seed: u64,
    pub dims: GradCheckDims,
    pub checked: usize,
    pub max_relative_error: f64,
    /// Tensor and flat index of the worst entry.
    pub worst: String,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_relative_error < MAX_RELATIVE_ERROR
    }
}

/// Generator for [`GradCheckDims::random`] keyed by the check seed.
pub fn dims_rng(seed: u64) -> impl Rng {
    crate::init::rng(seed.wrapping_mul(0x2545_f491_4f6c_dd1d) ^ 0xd1b5)
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

struct Problem {
    cfg: AdapterConfig,
    loss: LossConfig,
    text: DMatrix<f64>,
    views: Vec<(DMatrix<f64>, DMatrix<f64>)>,
    target: CameraPose,
}

impl Problem {
    fn objective(
        &self,
        head: &PoseHead,
        text: &DMatrix<f64>,
        views: &[(DMatrix<f64>, DMatrix<f64>)],
    ) -> f64 {
        let trace = forward(head, &self.cfg, text, views).expect("shapes fixed by construction");
        let pose = pose_loss_weighted(&trace.pred, &self.target, self.loss.bottom_row_weight);
        total_loss(0.0, pose, &self.loss)
    }
}

fn view_entry(
    views: &mut [(DMatrix<f64>, DMatrix<f64>)],
    v: usize,
    which: usize,
    i: usize,
) -> &mut f64 {
    if which == 0 {
        &mut views[v].0[i]
    } else {
        &mut views[v].1[i]
    }
}

fn central_difference(mut f: impl FnMut(f64) -> f64, x: f64) -> f64 {
    (f(x + FD_STEP) - f(x - FD_STEP)) / (2.0 * FD_STEP)
}

/// Compares analytic and numeric gradients of `λ_pose · pose_loss` for every
/// parameter and every input entry.
pub fn grad_check(seed: u64, dims: GradCheckDims) -> Result<GradCheckReport, NetError> {
    let cfg = AdapterConfig {
        n_queries: 16,
        heads: dims.heads,
        model_dim: dims.dim,
        query_out_dim: dims.query_out_dim,
        pose_output: true,
    };
    cfg.validate()?;
    let mut rng = crate::init::rng(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut head = PoseHead::seeded(&cfg, seed);
    // larger weights than the default init so the softmax is far from uniform
    for t in head.tensors_mut() {
        *t *= 3.0;
    }
    let mut mat = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
    let text = mat(dims.text_tokens, dims.dim);
    let views: Vec<_> = (0..dims.views)
        .map(|_| (mat(dims.tokens, dims.dim), mat(dims.tokens, dims.dim)))
        .collect();
    let axis = Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        1.0,
    );
    let target = CameraPose::from_parts(
        axis_angle(&axis, rng.random_range(-90.0..90.0)),
        Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ),
    )?;
    let loss = LossConfig {
        lambda_lang: 1.0,
        lambda_pose: 0.2,
        bottom_row_weight: 1.0,
    };
    let problem = Problem {
        cfg,
        loss,
        text,
        views,
        target,
    };

    let trace = forward(&head, &problem.cfg, &problem.text, &problem.views)?;
    let upstream =
        pose_loss_grad(&trace.pred, &problem.target, loss.bottom_row_weight) * loss.lambda_pose;
    let grads = backward(&head, &problem.cfg, &trace, &upstream);

    let mut worst = (0.0f64, String::new());
    let mut checked = 0usize;
    let mut record = |name: String, analytic: f64, numeric: f64| {
        let e = relative_error(analytic, numeric);
        checked += 1;
        if e > worst.0 || worst.1.is_empty() {
            worst = (e, name);
        }
    };

    let analytic_params = grads.head.tensors().map(|t| t.clone());
    for (ti, name) in PoseHead::TENSOR_NAMES.iter().enumerate() {
        for i in 0..analytic_params[ti].len() {
            let x0 = head.tensors()[ti][i];
            let numeric = central_difference(
                |x| {
                    head.tensors_mut()[ti][i] = x;
                    problem.objective(&head, &problem.text, &problem.views)
                },
                x0,
            );
            head.tensors_mut()[ti][i] = x0;
            record(format!("{name}[{i}]"), analytic_params[ti][i], numeric);
        }
    }

    let mut text = problem.text.clone();
    for i in 0..text.len() {
        let x0 = text[i];
        let numeric = central_difference(
            |x| {
                text[i] = x;
                problem.objective(&head, &text, &problem.views)
            },
            x0,
        );
        text[i] = x0;
        record(format!("text[{i}]"), grads.text[i], numeric);
    }

    let mut views = problem.views.clone();
    for v in 0..views.len() {
        for which in 0..2 {
            for i in 0..views[v].0.len() {
                let x0 = *view_entry(&mut views, v, which, i);
                let numeric = central_difference(
                    |x| {
                        *view_entry(&mut views, v, which, i) = x;
                        problem.objective(&head, &problem.text, &views)
                    },
                    x0,
                );
                *view_entry(&mut views, v, which, i) = x0;
                let (analytic, label) = if which == 0 {
                    (grads.views[v].0[i], "x")
                } else {
                    (grads.views[v].1[i], "z")
                };
                record(format!("view{v}.{label}[{i}]"), analytic, numeric);
            }
        }
    }

    Ok(GradCheckReport {
        seed,
        dims,
        checked,
        max_relative_error: worst.0,
        worst: worst.1,
    })
}
