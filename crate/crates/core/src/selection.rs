//! Context-view selection for a target view.
//!
//! For each target frame: keep candidate frames within a translation band
//! that are distinct enough from the target, greedily pick the `k` contexts
//! that cover the most target depth samples under a depth-based visibility
//! test, gate on the covered fraction, and drop targets too close in pose to
//! an already accepted one.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{
    back_project, geodesic_deg_unchecked, project, CameraIntrinsics, CameraPose, DepthMap,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SelectionError {
    #[error("target frame has no valid depth samples")]
    EmptySamples,
    #[error("need {need} candidates, have {have}")]
    InsufficientCandidates { have: usize, need: usize },
    #[error("invalid selection config: {0}")]
    InvalidConfig(String),
}

/// How the near-duplicate heuristic is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Distinctness {
    /// Each candidate must differ enough from the target.
    #[default]
    TargetRelative,
    /// Candidates (in id order) must differ enough from every candidate kept before them.
    CandidatePairwise,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionConfig {
    /// Translation band to the target, meters (exclusive bounds).
    pub d_min: f64,
    pub d_max: f64,
    /// Distinctness: translation above `distinct_d` or rotation above `distinct_theta`.
    pub distinct_d: f64,
    pub distinct_theta: f64,
    /// Number of context views.
    pub k: usize,
    /// Minimum covered fraction of target samples.
    pub gamma: f64,
    /// A target is redundant when within both `tau_t` meters and `tau_theta` degrees of an accepted one.
    pub tau_t: f64,
    pub tau_theta: f64,
    /// Depth tolerance of the visibility test, meters.
    pub epsilon: f64,
    /// Target sampling grid stride, pixels.
    pub sample_stride: u32,
    pub distinctness: Distinctness,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            d_min: 0.4,
            d_max: 2.5,
            distinct_d: 0.6,
            distinct_theta: 15.0,
            k: 4,
            gamma: 0.80,
            tau_t: 0.5,
            tau_theta: 45.0,
            epsilon: 0.05,
            sample_stride: 8,
            distinctness: Distinctness::TargetRelative,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<(), SelectionError> {
        let bad = |m: &str| Err(SelectionError::InvalidConfig(m.into()));
        if !(self.d_min > 0.0 && self.d_min < self.d_max) {
            return bad("need 0 < d_min < d_max");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("need 0 < gamma <= 1");
        }
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if self.sample_stride == 0 {
            return bad("sample_stride must be at least 1");
        }
        if !(self.distinct_d >= 0.0
            && self.distinct_theta >= 0.0
            && self.tau_t >= 0.0
            && self.tau_theta >= 0.0)
        {
            return bad("thresholds must be non-negative");
        }
        Ok(())
    }
}

/// One posed RGB-D frame (only depth is used).
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub id: u32,
    pub pose: CameraPose,
    pub intrinsics: CameraIntrinsics,
    pub depth: DepthMap,
}

/// Translation distance and rotation angle (degrees) between two poses.
pub fn pose_delta(a: &CameraPose, b: &CameraPose) -> (f64, f64) {
    let dt = (a.translation() - b.translation()).norm();
    let dtheta = geodesic_deg_unchecked(&a.rotation(), &b.rotation());
    (dt, dtheta)
}

fn in_band(dt: f64, cfg: &SelectionConfig) -> bool {
    dt > cfg.d_min && dt < cfg.d_max
}

fn distinct(dt: f64, dtheta: f64, cfg: &SelectionConfig) -> bool {
    dt > cfg.distinct_d || dtheta > cfg.distinct_theta
}

/// Candidate test relative to the target: inside the translation band and distinct.
pub fn pose_filter(target: &Frame, cand: &Frame, cfg: &SelectionConfig) -> bool {
    let (dt, dtheta) = pose_delta(&target.pose, &cand.pose);
    in_band(dt, cfg) && distinct(dt, dtheta, cfg)
}

/// Candidate contexts for `target` under the configured distinctness mode, in id order.
pub fn candidate_pool<'a>(
    target: &Frame,
    frames: &'a [Frame],
    cfg: &SelectionConfig,
) -> Vec<&'a Frame> {
    let mut sorted: Vec<&Frame> = frames.iter().filter(|f| f.id != target.id).collect();
    sorted.sort_by_key(|f| f.id);
    match cfg.distinctness {
        Distinctness::TargetRelative => sorted
            .into_iter()
            .filter(|c| pose_filter(target, c, cfg))
            .collect(),
        Distinctness::CandidatePairwise => {
            let mut kept: Vec<&Frame> = Vec::new();
            for c in sorted {
                if !in_band(pose_delta(&target.pose, &c.pose).0, cfg) {
                    continue;
                }
                let ok = kept.iter().all(|k| {
                    let (dt, dtheta) = pose_delta(&k.pose, &c.pose);
                    distinct(dt, dtheta, cfg)
                });
                if ok {
                    kept.push(c);
                }
            }
            kept
        }
    }
}

/// Target pixels used as coverage samples, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleSet {
    pub pixels: Vec<(u32, u32)>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

/// Every `stride`-th pixel in both directions that has valid depth.
pub fn target_samples(target: &Frame, stride: u32) -> Result<SampleSet, SelectionError> {
    if stride == 0 {
        return Err(SelectionError::InvalidConfig(
            "stride must be at least 1".into(),
        ));
    }
    let d = &target.depth;
    let pixels: Vec<_> = (0..d.height())
        .step_by(stride as usize)
        .flat_map(|v| (0..d.width()).step_by(stride as usize).map(move |u| (u, v)))
        .filter(|&(u, v)| d.get(u, v) > 0.0)
        .collect();
    if pixels.is_empty() {
        return Err(SelectionError::EmptySamples);
    }
    Ok(SampleSet { pixels })
}

/// Depth-based visibility of target samples in `context`.
///
/// A sample is kept when its back-projected point lands inside the context
/// image in front of the camera, the context depth at the containing pixel
/// is valid, and the point is not behind that depth by more than `epsilon`.
/// Returns indices into `samples.pixels`, ascending.
pub fn visibility(
    samples: &SampleSet,
    target: &Frame,
    context: &Frame,
    epsilon: f64,
) -> Vec<usize> {
    samples
        .pixels
        .iter()
        .enumerate()
        .filter_map(|(i, &(u, v))| {
            let x = back_project(
                u as f64,
                v as f64,
                target.depth.get(u, v),
                &target.pose,
                &target.intrinsics,
            )
            .ok()?;
            let p = project(&x, &context.pose, &context.intrinsics).ok()?;
            let (cu, cv) = p.pixel(&context.intrinsics)?;
            let dc = context.depth.valid(cu, cv)?;
            (p.z <= dc + epsilon).then_some(i)
        })
        .collect()
}

/// Outcome of the greedy context pick.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedyPick {
    /// Chosen ids in pick order.
    pub chosen: Vec<u32>,
    /// New samples covered by each pick.
    pub gains: Vec<usize>,
    /// Union of covered sample indices, ascending.
    pub covered: Vec<usize>,
}

/// Greedy max-coverage over candidate sets of sample indices `< universe`.
///
/// Each of `k` rounds picks the unchosen candidate with the largest number of
/// not-yet-covered elements; ties go to the smallest id.
pub fn greedy_max_cover(
    sets: &[(u32, Vec<usize>)],
    universe: usize,
    k: usize,
) -> Result<GreedyPick, SelectionError> {
    if sets.len() < k {
        return Err(SelectionError::InsufficientCandidates {
            have: sets.len(),
            need: k,
        });
    }
    let mut order: Vec<usize> = (0..sets.len()).collect();
    order.sort_by_key(|&i| sets[i].0);
    let mut covered = vec![false; universe];
    let mut taken = vec![false; sets.len()];
    let mut pick = GreedyPick {
        chosen: Vec::with_capacity(k),
        gains: Vec::with_capacity(k),
        covered: Vec::new(),
    };
    for _ in 0..k {
        let mut best: Option<(usize, usize)> = None;
        for &i in &order {
            if taken[i] {
                continue;
            }
            let gain = sets[i].1.iter().filter(|&&e| !covered[e]).count();
            if best.is_none_or(|(_, g)| gain > g) {
                best = Some((i, gain));
            }
        }
        let (i, gain) = best.expect("at least k candidates");
        taken[i] = true;
        for &e in &sets[i].1 {
            covered[e] = true;
        }
        pick.chosen.push(sets[i].0);
        pick.gains.push(gain);
    }
    pick.covered = covered
        .iter()
        .enumerate()
        .filter_map(|(i, &c)| c.then_some(i))
        .collect();
    Ok(pick)
}

/// Greedy context selection for one target over the given candidates.
pub fn greedy_select(
    target: &Frame,
    candidates: &[&Frame],
    samples: &SampleSet,
    cfg: &SelectionConfig,
) -> Result<GreedyPick, SelectionError> {
    if candidates.len() < cfg.k {
        return Err(SelectionError::InsufficientCandidates {
            have: candidates.len(),
            need: cfg.k,
        });
    }
    let sets: Vec<(u32, Vec<usize>)> = candidates
        .par_iter()
        .map(|c| (c.id, visibility(samples, target, c, cfg.epsilon)))
        .collect();
    greedy_max_cover(&sets, samples.len(), cfg.k)
}

/// One accepted target with its contexts.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewGroup {
    pub target_id: u32,
    pub target_pose: CameraPose,
    pub context_ids: Vec<u32>,
    /// Covered fraction of target samples.
    pub coverage: f64,
    /// Marginal new coverage of each context, in pick order.
    pub gains: Vec<usize>,
    pub covered: usize,
    pub samples: usize,
}

/// True when an accepted target lies within both `tau_t` and `tau_theta` of `target_pose`.
pub fn redundant(target_pose: &CameraPose, accepted: &[ViewGroup], cfg: &SelectionConfig) -> bool {
    accepted.iter().any(|g| {
        let (dt, dtheta) = pose_delta(target_pose, &g.target_pose);
        dt < cfg.tau_t && dtheta < cfg.tau_theta
    })
}

/// Why a target frame did not produce a group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rejection {
    /// No candidate passed the pose filter.
    PoseFilter,
    /// Some candidates passed, fewer than `k`.
    TooFewCandidates,
    /// Target has no valid depth samples.
    NoSamples,
    Coverage,
    Redundancy,
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rejection::PoseFilter => "pose-filter",
            Rejection::TooFewCandidates => "too-few-candidates",
            Rejection::NoSamples => "no-samples",
            Rejection::Coverage => "coverage",
            Rejection::Redundancy => "redundancy",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroupSelection {
    /// Accepted groups in target-id order.
    pub groups: Vec<ViewGroup>,
    pub rejections: Vec<(u32, Rejection)>,
}

impl GroupSelection {
    pub fn histogram(&self) -> BTreeMap<Rejection, usize> {
        let mut h = BTreeMap::new();
        for (_, r) in &self.rejections {
            *h.entry(*r).or_insert(0) += 1;
        }
        h
    }
}

fn propose(
    target: &Frame,
    frames: &[Frame],
    cfg: &SelectionConfig,
) -> Result<ViewGroup, Rejection> {
    let pool = candidate_pool(target, frames, cfg);
    if pool.is_empty() {
        return Err(Rejection::PoseFilter);
    }
    if pool.len() < cfg.k {
        return Err(Rejection::TooFewCandidates);
    }
    let samples = target_samples(target, cfg.sample_stride).map_err(|_| Rejection::NoSamples)?;
    let pick =
        greedy_select(target, &pool, &samples, cfg).map_err(|_| Rejection::TooFewCandidates)?;
    let coverage = pick.covered.len() as f64 / samples.len() as f64;
    if coverage < cfg.gamma {
        return Err(Rejection::Coverage);
    }
    Ok(ViewGroup {
        target_id: target.id,
        target_pose: target.pose,
        context_ids: pick.chosen,
        coverage,
        gains: pick.gains,
        covered: pick.covered.len(),
        samples: samples.len(),
    })
}

/// Full group selection over one scene's frames.
///
/// Targets are proposed independently (in parallel) and then committed in
/// ascending id order through the redundancy gate, so the result does not
/// depend on the worker count.
pub fn build_groups(
    frames: &[Frame],
    cfg: &SelectionConfig,
) -> Result<GroupSelection, SelectionError> {
    cfg.validate()?;
    let mut sorted: Vec<&Frame> = frames.iter().collect();
    sorted.sort_by_key(|f| f.id);
    let proposals: Vec<(u32, Result<ViewGroup, Rejection>)> = sorted
        .par_iter()
        .map(|t| (t.id, propose(t, frames, cfg)))
        .collect();
    let mut out = GroupSelection::default();
    for (id, p) in proposals {
        match p {
            Ok(group) if redundant(&group.target_pose, &out.groups, cfg) => {
                out.rejections.push((id, Rejection::Redundancy))
            }
            Ok(group) => out.groups.push(group),
            Err(r) => out.rejections.push((id, r)),
        }
    }
    Ok(out)
}
