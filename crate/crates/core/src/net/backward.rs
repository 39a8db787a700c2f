use nalgebra::{DMatrix, Matrix4};

use super::{AdapterConfig, ForwardTrace, PoseHead};

/// Gradients of a scalar objective for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    /// Same layout as the parameters.
    pub head: PoseHead,
    pub text: DMatrix<f64>,
    /// Per view `(dX_i, dZ_i)`.
    pub views: Vec<(DMatrix<f64>, DMatrix<f64>)>,
}

/// Chain rule from `d objective / d pred` back to every parameter and input.
pub fn backward(
    head: &PoseHead,
    cfg: &AdapterConfig,
    trace: &ForwardTrace,
    dpred: &Matrix4<f64>,
) -> Gradients {
    let a = &head.adapter;
    let d = cfg.model_dim;
    let n = cfg.n_queries;
    let att = &trace.attention;

    // reshape: scalar i is pred[i / 4, i % 4]
    let ds = DMatrix::from_fn(n, 1, |i, _| dpred[(i / 4, i % 4)]);

    // s = U gᵀ + b_g
    let dg_w = ds.transpose() * &trace.u;
    let dg_b = DMatrix::from_element(1, 1, ds.sum());
    let du = &ds * &a.g_w;

    // U = Y ψᵀ + b_ψ
    let dpsi_w = du.transpose() * &trace.y;
    let dpsi_b = DMatrix::from_fn(1, du.ncols(), |_, c| du.column(c).sum());
    let dy = &du * &a.psi_w;

    // Y = O Woᵀ
    let dwo = dy.transpose() * &att.o;
    let do_ = &dy * &a.wo;

    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let t = att.seq.nrows();
    let mut dq = DMatrix::zeros(n, d);
    let mut dk = DMatrix::zeros(t, d);
    let mut dv = DMatrix::zeros(t, d);
    for (h, weights) in att.weights.iter().enumerate() {
        let c = h * dh;
        let do_h = do_.columns(c, dh);
        let dweights = do_h * att.v.columns(c, dh).transpose();
        dv.columns_mut(c, dh)
            .copy_from(&(weights.transpose() * do_h));
        // softmax Jacobian, row by row
        let mut dlogits = dweights.component_mul(weights);
        for (mut row, w) in dlogits.row_iter_mut().zip(weights.row_iter()) {
            let dot = row.sum();
            row -= w * dot;
        }
        dlogits *= scale;
        dq.columns_mut(c, dh)
            .copy_from(&(&dlogits * att.k.columns(c, dh)));
        dk.columns_mut(c, dh)
            .copy_from(&(dlogits.transpose() * att.q.columns(c, dh)));
    }

    let dwq = dq.transpose() * &a.q0;
    let dq0 = &dq * &a.wq;
    let dwk = dk.transpose() * &att.seq;
    let dwv = dv.transpose() * &att.seq;
    let dseq = &dk * &a.wk + &dv * &a.wv;

    let dtext = dseq.rows(0, trace.text_rows).into_owned();
    let mut dfusion = DMatrix::zeros(d, 2 * d);
    let mut views = Vec::with_capacity(trace.cats.len());
    let mut row = trace.text_rows;
    for (cat, &rows) in trace.cats.iter().zip(&trace.view_rows) {
        let dxt = dseq.rows(row, rows);
        row += rows;
        // X̃ = X + cat Wᵀ
        dfusion += dxt.transpose() * cat;
        let dcat = dxt * &head.fusion.w;
        let dz = dcat.columns(0, d).into_owned();
        let dx = dxt + dcat.columns(d, d);
        views.push((dx, dz));
    }

    let mut grads = PoseHead::zeros(cfg);
    grads.fusion.w = dfusion;
    let g = &mut grads.adapter;
    g.q0 = dq0;
    g.wq = dwq;
    g.wk = dwk;
    g.wv = dwv;
    g.wo = dwo;
    g.psi_w = dpsi_w;
    g.psi_b = dpsi_b;
    g.g_w = dg_w;
    g.g_b = dg_b;
    Gradients {
        head: grads,
        text: dtext,
        views,
    }
}

#[cfg(test)]
mod tests {
    use super::super::{forward, pose_loss, pose_loss_grad};
    use super::*;
    use crate::camera::CameraPose;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let cfg = AdapterConfig {
            model_dim: 8,
            query_out_dim: 4,
            heads: 2,
            ..Default::default()
        };
        let head = PoseHead::seeded(&cfg, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let text = DMatrix::from_fn(3, 8, |_, _| rng.random_range(-1.0..1.0));
        let views = vec![(
            DMatrix::from_fn(4, 8, |_, _| rng.random_range(-1.0..1.0)),
            DMatrix::from_fn(4, 8, |_, _| rng.random_range(-1.0..1.0)),
        )];
        let trace = forward(&head, &cfg, &text, &views).unwrap();
        let g = backward(&head, &cfg, &trace, &Matrix4::zeros());
        assert!(g.head.tensors().iter().all(|t| t.iter().all(|v| *v == 0.0)));
        assert!(g.text.iter().all(|v| *v == 0.0));
        assert!(g
            .views
            .iter()
            .all(|(x, z)| x.iter().chain(z.iter()).all(|v| *v == 0.0)));
    }

    #[test]
    fn pose_loss_is_stationary_at_target() {
        let gt = CameraPose::identity();
        assert_eq!(pose_loss(&gt.into(), &gt), 0.0);
        assert_eq!(pose_loss_grad(&gt.into(), &gt, 0.0), Matrix4::zeros());
    }
}
