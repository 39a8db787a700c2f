//! Thresholded pose accuracy over (predicted, ground-truth) pairs.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{decompose, geodesic_deg_unchecked, orthonormalize, CameraPose, RawPose};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("predicted rotation block is singular")]
    SingularRotation,
    #[error("no samples to evaluate")]
    EmptySampleSet,
    #[error("invalid threshold {0}")]
    InvalidThreshold(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseErrorSample {
    /// Geodesic distance after projecting the predicted block onto SO(3).
    pub rot_err_deg: f64,
    pub trans_err: f64,
    /// Frobenius distance between the raw predicted block and the true rotation.
    pub raw_rot_residual: f64,
}

pub fn pose_errors(pred: &RawPose, gt: &CameraPose) -> Result<PoseErrorSample, EvalError> {
    let p = decompose(pred);
    let g = gt.rotation();
    let r = orthonormalize(&p.rotation).map_err(|_| EvalError::SingularRotation)?;
    Ok(PoseErrorSample {
        rot_err_deg: geodesic_deg_unchecked(&r, &g),
        trans_err: (p.translation - gt.translation()).norm(),
        raw_rot_residual: (p.rotation - g).norm(),
    })
}

/// Threshold sets for the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    pub rot_deg: Vec<f64>,
    pub trans: Vec<f64>,
    pub unit: String,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            rot_deg: vec![5.0, 10.0, 20.0],
            trans: vec![0.1, 0.3, 0.5],
            unit: "m".into(),
        }
    }
}

/// Percent of samples within each threshold, keyed by the threshold as written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseAccuracyReport {
    pub n: usize,
    pub unit: String,
    pub rot: IndexMap<String, f64>,
    pub trans: IndexMap<String, f64>,
}

fn percent_within(errs: &[f64], tau: f64) -> f64 {
    100.0 * errs.iter().filter(|&&e| e <= tau).count() as f64 / errs.len() as f64
}

pub fn accuracy_report(
    samples: &[PoseErrorSample],
    thresholds: &Thresholds,
) -> Result<PoseAccuracyReport, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::EmptySampleSet);
    }
    if let Some(&t) = thresholds
        .rot_deg
        .iter()
        .chain(&thresholds.trans)
        .find(|t| !(t.is_finite() && **t >= 0.0))
    {
        return Err(EvalError::InvalidThreshold(t));
    }
    let rot: Vec<f64> = samples.iter().map(|s| s.rot_err_deg).collect();
    let trans: Vec<f64> = samples.iter().map(|s| s.trans_err).collect();
    let table = |errs: &[f64], taus: &[f64]| {
        taus.iter()
            .map(|&t| (format!("{t}"), percent_within(errs, t)))
            .collect()
    };
    Ok(PoseAccuracyReport {
        n: samples.len(),
        unit: thresholds.unit.clone(),
        rot: table(&rot, &thresholds.rot_deg),
        trans: table(&trans, &thresholds.trans),
    })
}

/// Errors for paired lists, failing on the first singular prediction.
pub fn evaluate_pairs(
    preds: &[RawPose],
    gts: &[CameraPose],
) -> Result<Vec<PoseErrorSample>, EvalError> {
    preds
        .iter()
        .zip(gts)
        .map(|(p, g)| pose_errors(p, g))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{axis_angle, recompose};
    use nalgebra::{Matrix3, Vector3};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gt() -> CameraPose {
        CameraPose::from_parts(
            axis_angle(&Vector3::new(0.2, 1.0, -0.4), 70.0),
            Vector3::new(1.0, 2.0, 0.5),
        )
        .unwrap()
    }

    fn sample(rot: f64, trans: f64) -> PoseErrorSample {
        PoseErrorSample {
            rot_err_deg: rot,
            trans_err: trans,
            raw_rot_residual: 0.0,
        }
    }

    #[test]
    fn exact_prediction() {
        let e = pose_errors(&gt().into(), &gt()).unwrap();
        assert!(e.rot_err_deg < 1e-6);
        assert_eq!(e.trans_err, 0.0);
    }

    #[test]
    fn known_perturbation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let axis = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let dir = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
            .normalize();
            let r = axis_angle(&axis, 12.0) * gt().rotation();
            let t = gt().translation() + dir * 0.2;
            let pred = RawPose::new(recompose(&r, &t)).unwrap();
            let e = pose_errors(&pred, &gt()).unwrap();
            assert!((e.rot_err_deg - 12.0).abs() < 1e-6, "{}", e.rot_err_deg);
            assert!((e.trans_err - 0.2).abs() < 1e-9);
        }
    }

    #[test]
    fn scale_invariance() {
        let r = axis_angle(&Vector3::new(1.0, 0.0, 1.0), 25.0) * gt().rotation();
        let base = pose_errors(
            &RawPose::new(recompose(&r, &gt().translation())).unwrap(),
            &gt(),
        )
        .unwrap();
        for s in [0.01, 0.5, 1.3, 7.0] {
            let e = pose_errors(
                &RawPose::new(recompose(&(r * s), &gt().translation())).unwrap(),
                &gt(),
            )
            .unwrap();
            assert!((e.rot_err_deg - base.rot_err_deg).abs() < 1e-9);
        }
    }

    #[test]
    fn singular_prediction() {
        let pred = RawPose::new(recompose(&Matrix3::zeros(), &Vector3::zeros())).unwrap();
        assert_eq!(pose_errors(&pred, &gt()), Err(EvalError::SingularRotation));
    }

    #[test]
    fn hand_counted_rotation_percentages() {
        let s: Vec<_> = [4.0, 9.0, 19.0, 30.0]
            .iter()
            .map(|&r| sample(r, 0.0))
            .collect();
        let rep = accuracy_report(&s, &Thresholds::default()).unwrap();
        assert_eq!(rep.rot["5"], 25.0);
        assert_eq!(rep.rot["10"], 50.0);
        assert_eq!(rep.rot["20"], 75.0);
        assert_eq!(rep.trans["0.1"], 100.0);
    }

    #[test]
    fn inclusive_boundary() {
        let rep = accuracy_report(&[sample(5.0, 0.1)], &Thresholds::default()).unwrap();
        assert_eq!(rep.rot["5"], 100.0);
        assert_eq!(rep.trans["0.1"], 100.0);
    }

    #[test]
    fn empty_is_error() {
        assert_eq!(
            accuracy_report(&[], &Thresholds::default()),
            Err(EvalError::EmptySampleSet)
        );
    }

    #[test]
    fn json_layout() {
        let rep = accuracy_report(&[sample(0.0, 0.0)], &Thresholds::default()).unwrap();
        let json = serde_json::to_string(&rep).unwrap();
        assert_eq!(
            json,
            r#"{"n":1,"unit":"m","rot":{"5":100.0,"10":100.0,"20":100.0},"trans":{"0.1":100.0,"0.3":100.0,"0.5":100.0}}"#
        );
    }

    proptest! {
        #[test]
        fn monotone_and_order_invariant(errs in proptest::collection::vec((0.0f64..180.0, 0.0f64..2.0), 1..60)) {
            let mut s: Vec<_> = errs.iter().map(|&(r, t)| sample(r, t)).collect();
            let th = Thresholds::default();
            let a = accuracy_report(&s, &th).unwrap();
            let rot: Vec<f64> = a.rot.values().copied().collect();
            let trans: Vec<f64> = a.trans.values().copied().collect();
            prop_assert!(rot.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(trans.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(rot.iter().chain(&trans).all(|p| (0.0..=100.0).contains(p)));
            s.reverse();
            prop_assert_eq!(accuracy_report(&s, &th).unwrap(), a);
        }
    }
}
