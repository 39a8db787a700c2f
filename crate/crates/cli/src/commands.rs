use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, ensure, Context, Result};
use camcue_core::camera::CameraPose;
use camcue_core::eval::{accuracy_report, pose_errors};
use camcue_core::io::{
    decode_tensor, load_scene, parse_manifest, write_frame, write_manifest, write_scene_meta,
    write_tensor, ManifestEntry, SceneLayout, Tensor, TENSOR_MAGIC,
};
use camcue_core::net::gradcheck::{grad_check, GradCheckDims, MAX_RELATIVE_ERROR};
use camcue_core::net::train::train_adapter_demo;
use camcue_core::plucker::{patchify_embed, ray_map, resize_ray_map, EmbedParams, RAY_CHANNELS};
use camcue_core::selection::build_groups;
use camcue_core::synth::{make_scene, render_depth, sample_trajectory, TrajectoryPattern};
use camcue_core::{CameraIntrinsics, RawPose};
use clap::Args;

use crate::config::RunConfig;
use crate::png_depth::PngDepth;
use crate::CheckFailed;

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    obstacles: Option<usize>,
    /// orbit | random-walk
    #[arg(long)]
    pattern: Option<TrajectoryPattern>,
    #[arg(long)]
    out: PathBuf,
}

pub fn synth(a: SynthArgs, mut cfg: RunConfig) -> Result<()> {
    let s = &mut cfg.synth;
    let seed = a.seed.unwrap_or(cfg.seed);
    s.frames = a.frames.unwrap_or(s.frames);
    s.obstacles = a.obstacles.unwrap_or(s.obstacles);
    s.pattern = a.pattern.unwrap_or(s.pattern);
    let k = CameraIntrinsics::from_fov(s.hfov_deg, s.width, s.height)?;
    let scene = make_scene(seed, s.obstacles)?;
    let traj = sample_trajectory(&scene, s.frames, seed, s.pattern)?;
    let layout = SceneLayout::new(&a.out);
    layout.create()?;
    write_scene_meta(&layout, &k, Some(&scene))?;
    for (id, pose) in &traj.frames {
        let depth = render_depth(&scene, pose, &k, k.width, k.height)?;
        write_frame(&layout, *id, pose, &depth)?;
    }
    println!(
        "wrote {} frames ({} obstacles, seed {seed}) to {}",
        traj.frames.len(),
        scene.obstacles.len(),
        a.out.display()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct SelectArgs {
    #[arg(long)]
    scene_dir: PathBuf,
    /// Manifest path (default: <scene-dir>/manifest.jsonl).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    sample_stride: Option<u32>,
}

pub fn select(a: SelectArgs, mut cfg: RunConfig) -> Result<()> {
    let sel = &mut cfg.selection;
    sel.gamma = a.gamma.unwrap_or(sel.gamma);
    sel.epsilon = a.epsilon.unwrap_or(sel.epsilon);
    sel.k = a.k.unwrap_or(sel.k);
    sel.sample_stride = a.sample_stride.unwrap_or(sel.sample_stride);
    let scene = load_scene(&a.scene_dir, Some(&PngDepth))?;
    for (id, w) in &scene.warnings {
        println!(
            "frame {id}: pose orthonormalized (residual {:.3e})",
            w.residual
        );
    }
    let result = build_groups(&scene.frames, sel)?;
    let entries: Vec<_> = result
        .groups
        .iter()
        .map(|g| ManifestEntry::from_group(&scene.name, g))
        .collect();
    let out = a.out.unwrap_or_else(|| a.scene_dir.join("manifest.jsonl"));
    write_manifest(&out, &entries)?;
    println!(
        "{} frames: {} groups accepted, {} targets rejected",
        scene.frames.len(),
        result.groups.len(),
        result.rejections.len()
    );
    for (reason, n) in result.histogram() {
        println!("  {reason}: {n}");
    }
    println!("manifest: {}", out.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct PluckerArgs {
    #[arg(long)]
    scene_dir: PathBuf,
    #[arg(long)]
    frame: u32,
    /// Output directory for raymap.cct and tokens.cct.
    #[arg(long)]
    out: PathBuf,
    /// Seed of the patch embedding (default: config seed).
    #[arg(long)]
    seed: Option<u64>,
}

pub fn plucker(a: PluckerArgs, cfg: RunConfig) -> Result<()> {
    cfg.patch.validate()?;
    let scene = load_scene(&a.scene_dir, Some(&PngDepth))?;
    let frame = scene
        .frames
        .iter()
        .find(|f| f.id == a.frame)
        .ok_or_else(|| anyhow!("frame {} not found in {}", a.frame, a.scene_dir.display()))?;
    let native = ray_map(
        &frame.pose,
        &frame.intrinsics,
        frame.intrinsics.width,
        frame.intrinsics.height,
    );
    let map = resize_ray_map(&native, &cfg.patch);
    let params = EmbedParams::seeded(&cfg.patch, a.seed.unwrap_or(cfg.seed));
    let tokens = patchify_embed(&map, &cfg.patch, &params)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let dims = vec![map.height() as usize, map.width() as usize, RAY_CHANNELS];
    write_tensor(
        &a.out.join("raymap.cct"),
        &Tensor::new(dims, map.data().to_vec())?,
    )?;
    write_tensor(
        &a.out.join("tokens.cct"),
        &Tensor::from_matrix(&tokens.tokens),
    )?;
    println!(
        "frame {}: ray map {}x{}x{}, invariant residual {:.2e}; tokens {}x{}",
        a.frame,
        map.height(),
        map.width(),
        RAY_CHANNELS,
        map.invariant_residual(),
        tokens.len(),
        tokens.dim()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of consecutive seeds to check.
    #[arg(long, default_value_t = 1)]
    count: u64,
    /// Fixed "S,d" (tokens per view, model width); random small shapes otherwise.
    #[arg(long)]
    dims: Option<String>,
    /// Optional JSON report.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_dims(s: &str) -> Result<(usize, usize)> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| anyhow!("--dims expects S,d"))?;
    Ok((
        a.trim().parse().context("S")?,
        b.trim().parse().context("d")?,
    ))
}

pub fn gradcheck(a: GradcheckArgs, _cfg: RunConfig) -> Result<()> {
    let fixed = a.dims.as_deref().map(parse_dims).transpose()?;
    let mut reports = Vec::new();
    for seed in a.seed..a.seed.saturating_add(a.count) {
        let mut rng = camcue_core::net::gradcheck::dims_rng(seed);
        let mut dims = GradCheckDims::random(&mut rng);
        if let Some((s, d)) = fixed {
            ensure!(s > 0 && d > 0, "--dims must be positive");
            dims.tokens = s;
            dims.dim = d;
            dims.heads = [4, 2, 1].into_iter().find(|h| d % h == 0).unwrap_or(1);
        }
        let r = grad_check(seed, dims)?;
        println!(
            "seed {seed}: S={} d={} heads={} entries={} max rel err {:.3e} at {} [{}]",
            dims.tokens,
            dims.dim,
            dims.heads,
            r.checked,
            r.max_relative_error,
            r.worst,
            if r.passed() { "ok" } else { "FAIL" }
        );
        reports.push(r);
    }
    if let Some(out) = &a.out {
        std::fs::write(out, serde_json::to_string_pretty(&reports)? + "\n")
            .with_context(|| format!("writing {}", out.display()))?;
    }
    let failed = reports.iter().filter(|r| !r.passed()).count();
    if failed > 0 {
        return Err(CheckFailed(format!(
            "{failed} of {} seeds exceed {MAX_RELATIVE_ERROR:e}",
            reports.len()
        ))
        .into());
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    /// JSONL: one line per logged step, then a summary line.
    #[arg(long)]
    out: PathBuf,
}

pub fn train_demo(a: TrainArgs, cfg: RunConfig) -> Result<()> {
    let mut t = cfg.train;
    t.steps = a.steps.unwrap_or(t.steps);
    t.seed = a.seed.unwrap_or(t.seed);
    t.lr = a.lr.unwrap_or(t.lr);
    let report = train_adapter_demo(&t)?;
    let mut text = String::new();
    for e in &report.log {
        writeln!(text, "{}", serde_json::to_string(e)?)?;
    }
    let summary = serde_json::json!({
        "final_accuracy": report.final_accuracy,
        "singular_predictions": report.singular_predictions,
        "config": report.config,
    });
    writeln!(text, "{summary}")?;
    std::fs::write(&a.out, text).with_context(|| format!("writing {}", a.out.display()))?;
    let (first, last) = (report.initial(), report.last());
    println!(
        "steps {}: pose loss {:.4} -> {:.4}, held-out median rotation {:.2}° -> {:.2}°, translation {:.3} -> {:.3}",
        t.steps,
        first.pose_loss,
        last.pose_loss,
        first.heldout_median_rot_deg,
        last.heldout_median_rot_deg,
        first.heldout_median_trans,
        last.heldout_median_trans
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Predictions: manifest (target_pose) or CCT1 tensor of n x 4 x 4.
    #[arg(long)]
    pred: PathBuf,
    /// Ground truth in the same formats; poses must be rigid.
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn load_poses(path: &Path) -> Result<Vec<RawPose>> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if bytes.starts_with(TENSOR_MAGIC) {
        let t = decode_tensor(&bytes).with_context(|| path.display().to_string())?;
        let n = match t.dims[..] {
            [4, 4] => 1,
            [n, 4, 4] => n,
            _ => bail!(
                "{}: expected n x 4 x 4 tensor, got {:?}",
                path.display(),
                t.dims
            ),
        };
        return (0..n)
            .map(|i| {
                let vals: [f64; 16] = t.data[16 * i..16 * (i + 1)].try_into().expect("16 values");
                RawPose::from_row_major(&vals)
                    .map_err(|e| anyhow!("{} pose {i}: {e}", path.display()))
            })
            .collect();
    }
    let text = String::from_utf8(bytes)
        .map_err(|_| anyhow!("{}: neither CCT1 nor UTF-8 manifest", path.display()))?;
    let entries = parse_manifest(&text).with_context(|| path.display().to_string())?;
    Ok(entries.iter().map(|e| e.raw_pose()).collect())
}

pub fn eval_pose(a: EvalArgs, cfg: RunConfig) -> Result<()> {
    let preds = load_poses(&a.pred)?;
    let gts = load_poses(&a.gt)?;
    ensure!(
        preds.len() == gts.len(),
        "{} predictions but {} ground-truth poses",
        preds.len(),
        gts.len()
    );
    let samples = preds
        .iter()
        .zip(&gts)
        .enumerate()
        .map(|(i, (p, g))| {
            let g = CameraPose::from_matrix(*g.matrix())
                .map_err(|e| anyhow!("ground truth {i}: {e}"))?;
            pose_errors(p, &g).map_err(|e| anyhow!("prediction {i}: {e}"))
        })
        .collect::<Result<Vec<_>>>()?;
    let report = accuracy_report(&samples, &cfg.eval)?;
    let json = serde_json::to_string(&report)?;
    std::fs::write(&a.out, format!("{json}\n"))
        .with_context(|| format!("writing {}", a.out.display()))?;
    println!("n = {}", report.n);
    for (t, p) in &report.rot {
        println!("  R@{t}°: {p:.1}%");
    }
    for (t, p) in &report.trans {
        println!("  t@{t}{}: {p:.1}%", report.unit);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims_flag() {
        assert_eq!(parse_dims("8, 16").unwrap(), (8, 16));
        assert!(parse_dims("8").is_err());
        assert!(parse_dims("a,3").is_err());
    }
}
