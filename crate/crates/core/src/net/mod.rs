//! Pose-aware token fusion and the query-attention pose head.
//!
//! Tokens are rows. For one sample with text states `H` and views
//! `(X_i, Z_i)`:
//!
//! ```text
//! X̃_i  = X_i + [Z_i  X_i] Wᵀ
//! Y    = MHA(Q0, [H; X̃_1; …; X̃_V])        (keys = values)
//! U    = Y ψᵀ + b_ψ
//! s    = U gᵀ + b_g                        (one scalar per query)
//! pred = reshape_row_major(s) ∈ R^{4×4}
//! ```
//!
//! The attention block has no residual path and no normalization.

mod backward;
pub mod gradcheck;
mod loss;
pub mod train;

pub use backward::{backward, Gradients};
pub use loss::{pose_loss, pose_loss_grad, total_loss, LossConfig};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{CameraError, CameraPose, RawPose};
use crate::init::uniform_matrix;
use crate::plucker::TokenGrid;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("config error: {0}")]
    ConfigError(String),
    #[error("non-finite network output")]
    NonFinite,
    #[error("loss diverged at step {step}")]
    DivergedLoss { step: usize },
    #[error(transparent)]
    Camera(#[from] CameraError),
}

/// Residual fusion weight, `d x 2d`; the first `d` columns act on the camera tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    pub w: DMatrix<f64>,
}

impl FusionParams {
    pub fn zeros(d: usize) -> Self {
        Self {
            w: DMatrix::zeros(d, 2 * d),
        }
    }
}

/// `X̃ = X + [Z X] Wᵀ`.
pub fn fuse(x: &TokenGrid, z: &TokenGrid, params: &FusionParams) -> Result<TokenGrid, NetError> {
    let (s, d) = x.tokens.shape();
    if z.tokens.shape() != (s, d) {
        return Err(NetError::ShapeMismatch(format!(
            "image tokens are {s}x{d}, camera tokens are {}x{}",
            z.len(),
            z.dim()
        )));
    }
    if params.w.shape() != (d, 2 * d) {
        return Err(NetError::ShapeMismatch(format!(
            "fusion weight is {:?}, expected ({d}, {})",
            params.w.shape(),
            2 * d
        )));
    }
    let cat = concat_features(&z.tokens, &x.tokens);
    Ok(TokenGrid::new(&x.tokens + cat * params.w.transpose()))
}

fn concat_features(z: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    let (s, d) = x.shape();
    let mut cat = DMatrix::zeros(s, 2 * d);
    cat.columns_mut(0, d).copy_from(z);
    cat.columns_mut(d, d).copy_from(x);
    cat
}

fn stack_rows(parts: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let d = parts.first().map_or(0, |p| p.ncols());
    let total = parts.iter().map(|p| p.nrows()).sum();
    let mut out = DMatrix::zeros(total, d);
    let mut r = 0;
    for p in parts {
        out.rows_mut(r, p.nrows()).copy_from(*p);
        r += p.nrows();
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdapterConfig {
    pub n_queries: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub query_out_dim: usize,
    /// Reshape the per-query scalars into a 4x4 pose (requires 16 queries).
    pub pose_output: bool,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self {
            n_queries: 16,
            heads: 4,
            model_dim: 64,
            query_out_dim: 32,
            pose_output: true,
        }
    }
}

impl AdapterConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        if self.n_queries == 0 || self.heads == 0 || self.model_dim == 0 || self.query_out_dim == 0
        {
            return Err(NetError::ConfigError(
                "adapter sizes must be positive".into(),
            ));
        }
        if !self.model_dim.is_multiple_of(self.heads) {
            return Err(NetError::ConfigError(format!(
                "model_dim {} is not divisible by {} heads",
                self.model_dim, self.heads
            )));
        }
        if self.pose_output && self.n_queries != 16 {
            return Err(NetError::ConfigError(format!(
                "pose output needs 16 queries, got {}",
                self.n_queries
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterParams {
    /// Learnable queries, `N x d`.
    pub q0: DMatrix<f64>,
    pub wq: DMatrix<f64>,
    pub wk: DMatrix<f64>,
    pub wv: DMatrix<f64>,
    pub wo: DMatrix<f64>,
    /// `d_q x d`
    pub psi_w: DMatrix<f64>,
    /// `1 x d_q`
    pub psi_b: DMatrix<f64>,
    /// `1 x d_q`
    pub g_w: DMatrix<f64>,
    /// `1 x 1`
    pub g_b: DMatrix<f64>,
}

impl AdapterParams {
    pub fn zeros(cfg: &AdapterConfig) -> Self {
        let (n, d, dq) = (cfg.n_queries, cfg.model_dim, cfg.query_out_dim);
        Self {
            q0: DMatrix::zeros(n, d),
            wq: DMatrix::zeros(d, d),
            wk: DMatrix::zeros(d, d),
            wv: DMatrix::zeros(d, d),
            wo: DMatrix::zeros(d, d),
            psi_w: DMatrix::zeros(dq, d),
            psi_b: DMatrix::zeros(1, dq),
            g_w: DMatrix::zeros(1, dq),
            g_b: DMatrix::zeros(1, 1),
        }
    }
}

/// Fusion weight plus adapter; the full trainable state of the head.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseHead {
    pub fusion: FusionParams,
    pub adapter: AdapterParams,
}

impl PoseHead {
    pub fn zeros(cfg: &AdapterConfig) -> Self {
        Self {
            fusion: FusionParams::zeros(cfg.model_dim),
            adapter: AdapterParams::zeros(cfg),
        }
    }

    /// Seeded uniform init in `±1/√fan_in` per tensor.
    pub fn seeded(cfg: &AdapterConfig, seed: u64) -> Self {
        let (n, d, dq) = (cfg.n_queries, cfg.model_dim, cfg.query_out_dim);
        let mut rng = crate::init::rng(seed);
        let fusion = FusionParams {
            w: uniform_matrix(&mut rng, d, 2 * d, 2 * d),
        };
        let adapter = AdapterParams {
            q0: uniform_matrix(&mut rng, n, d, d),
            wq: uniform_matrix(&mut rng, d, d, d),
            wk: uniform_matrix(&mut rng, d, d, d),
            wv: uniform_matrix(&mut rng, d, d, d),
            wo: uniform_matrix(&mut rng, d, d, d),
            psi_w: uniform_matrix(&mut rng, dq, d, d),
            psi_b: uniform_matrix(&mut rng, 1, dq, d),
            g_w: uniform_matrix(&mut rng, 1, dq, dq),
            g_b: uniform_matrix(&mut rng, 1, 1, dq),
        };
        Self { fusion, adapter }
    }

    pub const TENSOR_NAMES: [&'static str; 10] = [
        "fusion.w", "q0", "wq", "wk", "wv", "wo", "psi.w", "psi.b", "g.w", "g.b",
    ];

    /// All tensors in [`PoseHead::TENSOR_NAMES`] order.
    pub fn tensors(&self) -> [&DMatrix<f64>; 10] {
        let a = &self.adapter;
        [
            &self.fusion.w,
            &a.q0,
            &a.wq,
            &a.wk,
            &a.wv,
            &a.wo,
            &a.psi_w,
            &a.psi_b,
            &a.g_w,
            &a.g_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut DMatrix<f64>; 10] {
        let a = &mut self.adapter;
        [
            &mut self.fusion.w,
            &mut a.q0,
            &mut a.wq,
            &mut a.wk,
            &mut a.wv,
            &mut a.wo,
            &mut a.psi_w,
            &mut a.psi_b,
            &mut a.g_w,
            &mut a.g_b,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn check_shapes(&self, cfg: &AdapterConfig) -> Result<(), NetError> {
        let zero = Self::zeros(cfg);
        for ((name, have), want) in Self::TENSOR_NAMES
            .iter()
            .zip(self.tensors())
            .zip(zero.tensors())
        {
            if have.shape() != want.shape() {
                return Err(NetError::ShapeMismatch(format!(
                    "{name} is {:?}, expected {:?}",
                    have.shape(),
                    want.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Output of the pose adapter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterOutput {
    /// Attended queries, `N x d`.
    pub y: DMatrix<f64>,
    /// Pose query tokens, `N x d_q`.
    pub u: DMatrix<f64>,
    /// One scalar per query.
    pub scalars: Vec<f64>,
    /// Row-major reshape of the scalars when pose output is enabled.
    pub pred: Option<RawPose>,
}

/// Intermediate values of one attention pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct AttentionTrace {
    pub seq: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub v: DMatrix<f64>,
    /// Per-head softmax weights, each `N x T`.
    pub weights: Vec<DMatrix<f64>>,
    /// Concatenated head outputs before `Wo`, `N x d`.
    pub o: DMatrix<f64>,
}

pub(crate) fn softmax_rows(m: &mut DMatrix<f64>) {
    for mut row in m.row_iter_mut() {
        let max = row.max();
        row.apply(|v| *v = (*v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

/// Multi-head scaled dot-product attention of the learned queries over `seq`.
pub(crate) fn attend(
    seq: DMatrix<f64>,
    cfg: &AdapterConfig,
    a: &AdapterParams,
) -> (DMatrix<f64>, AttentionTrace) {
    let q = &a.q0 * a.wq.transpose();
    let k = &seq * a.wk.transpose();
    let v = &seq * a.wv.transpose();
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut o = DMatrix::zeros(q.nrows(), cfg.model_dim);
    let mut weights = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let c = h * dh;
        let mut logits = q.columns(c, dh) * k.columns(c, dh).transpose() * scale;
        softmax_rows(&mut logits);
        o.columns_mut(c, dh)
            .copy_from(&(&logits * v.columns(c, dh)));
        weights.push(logits);
    }
    let y = &o * a.wo.transpose();
    (
        y,
        AttentionTrace {
            seq,
            q,
            k,
            v,
            weights,
            o,
        },
    )
}

fn head_outputs(y: &DMatrix<f64>, a: &AdapterParams) -> (DMatrix<f64>, Vec<f64>) {
    let mut u = y * a.psi_w.transpose();
    for mut row in u.row_iter_mut() {
        row += &a.psi_b;
    }
    let s = &u * a.g_w.transpose();
    let scalars = s.iter().map(|v| v + a.g_b[(0, 0)]).collect();
    (u, scalars)
}

fn reshape_pose(scalars: &[f64]) -> Result<RawPose, NetError> {
    let arr: [f64; 16] = scalars
        .try_into()
        .map_err(|_| NetError::ConfigError(format!("need 16 scalars, got {}", scalars.len())))?;
    RawPose::from_row_major(&arr).map_err(|_| NetError::NonFinite)
}

/// Query attention over `[H; X̃]`, projection `ψ`, scalar head `g`, reshape.
pub fn adapter_forward(
    h: &TokenGrid,
    xt: &TokenGrid,
    cfg: &AdapterConfig,
    params: &AdapterParams,
) -> Result<AdapterOutput, NetError> {
    cfg.validate()?;
    let d = cfg.model_dim;
    if h.dim() != d || xt.dim() != d {
        return Err(NetError::ShapeMismatch(format!(
            "token widths {} (text) and {} (visual), model_dim {d}",
            h.dim(),
            xt.dim()
        )));
    }
    if h.len() + xt.len() == 0 {
        return Err(NetError::ShapeMismatch("empty key sequence".into()));
    }
    PoseHead {
        fusion: FusionParams::zeros(d),
        adapter: params.clone(),
    }
    .check_shapes(cfg)?;
    let seq = stack_rows(&[&h.tokens, &xt.tokens]);
    let (y, _) = attend(seq, cfg, params);
    let (u, scalars) = head_outputs(&y, params);
    let pred = if cfg.pose_output {
        Some(reshape_pose(&scalars)?)
    } else {
        None
    };
    Ok(AdapterOutput {
        y,
        u,
        scalars,
        pred,
    })
}

/// One training/evaluation example for the pose head.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSample {
    /// Text hidden states `H`, `T_text x d`.
    pub text: DMatrix<f64>,
    /// Per-view `(X_i, Z_i)` image and camera tokens, each `S x d`.
    pub views: Vec<(DMatrix<f64>, DMatrix<f64>)>,
    pub target: CameraPose,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub(crate) cats: Vec<DMatrix<f64>>,
    pub(crate) view_rows: Vec<usize>,
    pub(crate) text_rows: usize,
    pub(crate) attention: AttentionTrace,
    pub(crate) y: DMatrix<f64>,
    pub(crate) u: DMatrix<f64>,
    pub scalars: Vec<f64>,
    pub pred: RawPose,
}

/// Fuses every view, runs the adapter, and records intermediates.
pub fn forward(
    head: &PoseHead,
    cfg: &AdapterConfig,
    text: &DMatrix<f64>,
    views: &[(DMatrix<f64>, DMatrix<f64>)],
) -> Result<ForwardTrace, NetError> {
    cfg.validate()?;
    if !cfg.pose_output {
        return Err(NetError::ConfigError(
            "training needs pose output enabled".into(),
        ));
    }
    head.check_shapes(cfg)?;
    let d = cfg.model_dim;
    if text.ncols() != d {
        return Err(NetError::ShapeMismatch(format!(
            "text width {} != {d}",
            text.ncols()
        )));
    }
    let mut cats = Vec::with_capacity(views.len());
    let mut fused = Vec::with_capacity(views.len());
    for (x, z) in views {
        let xt = fuse(
            &TokenGrid::new(x.clone()),
            &TokenGrid::new(z.clone()),
            &head.fusion,
        )?;
        cats.push(concat_features(z, x));
        fused.push(xt.tokens);
    }
    let view_rows = fused.iter().map(|f| f.nrows()).collect();
    let mut parts: Vec<&DMatrix<f64>> = vec![text];
    parts.extend(fused.iter());
    let seq = stack_rows(&parts);
    if seq.nrows() == 0 {
        return Err(NetError::ShapeMismatch("empty key sequence".into()));
    }
    let (y, attention) = attend(seq, cfg, &head.adapter);
    let (u, scalars) = head_outputs(&y, &head.adapter);
    let pred = reshape_pose(&scalars)?;
    Ok(ForwardTrace {
        cats,
        view_rows,
        text_rows: text.nrows(),
        attention,
        y,
        u,
        scalars,
        pred,
    })
}
