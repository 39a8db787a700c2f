//! Run configuration shared by every subcommand.

use std::path::Path;

use anyhow::{Context, Result};
use camcue_core::eval::Thresholds;
use camcue_core::net::train::TrainConfig;
use camcue_core::selection::SelectionConfig;
use camcue_core::synth::TrajectoryPattern;
use camcue_core::PatchConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub frames: usize,
    pub obstacles: usize,
    pub pattern: TrajectoryPattern,
    pub width: u32,
    pub height: u32,
    pub hfov_deg: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            frames: 60,
            obstacles: 4,
            pattern: TrajectoryPattern::Orbit,
            width: 64,
            height: 48,
            hfov_deg: 70.0,
        }
    }
}

/// Loaded from `--config`; command-line flags override individual fields.
/// Adapter and loss settings live under `train`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub synth: SynthConfig,
    pub selection: SelectionConfig,
    pub patch: PatchConfig,
    pub train: TrainConfig,
    pub eval: Thresholds,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}
