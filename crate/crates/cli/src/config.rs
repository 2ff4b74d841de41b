//! Run configuration shared by every command. A JSON file supplies the base
//! values; command-line flags are applied on top.

use std::path::{Path, PathBuf};

use grace_core::losses::{LossWeights, Mixup};
use grace_core::motion::{MotionMode, DEFAULT_FLOOR};
use grace_core::ot::SinkhornConfig;
use grace_core::span::DEFAULT_KEY_FRAMES;
use grace_core::tensor::BASIC_EMOTIONS;
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::synth::SyntheticSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionConfig {
    pub mode: MotionMode,
    pub floor: f64,
}

impl Default for MotionConfig {
    fn default() -> Self {
        Self {
            mode: MotionMode::default(),
            floor: DEFAULT_FLOOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub gamma: f64,
    pub alpha: f64,
    pub temperature: f64,
    pub weights: LossWeights,
    /// Per-category training counts; turned into inverse-root class weights.
    pub class_counts: Option<Vec<u64>>,
    pub mixup: Option<Mixup>,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            gamma: 2.0,
            alpha: 1.0,
            temperature: grace_core::losses::DEFAULT_TEMPERATURE,
            weights: LossWeights::default(),
            class_counts: None,
            mixup: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub manifest: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub motion: MotionConfig,
    pub sinkhorn: SinkhornConfig,
    /// Use saliency-proportional patch marginals instead of uniform ones.
    pub saliency_marginal: bool,
    pub key_frames: usize,
    pub losses: LossConfig,
    pub top_k: usize,
    /// Category names, index order.
    pub labels: Vec<String>,
    pub synth: SyntheticSpec,
    pub paths: Paths,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            motion: MotionConfig::default(),
            sinkhorn: SinkhornConfig::default(),
            saliency_marginal: false,
            key_frames: DEFAULT_KEY_FRAMES,
            losses: LossConfig::default(),
            top_k: 3,
            labels: BASIC_EMOTIONS.iter().map(|s| s.to_string()).collect(),
            synth: SyntheticSpec::default(),
            paths: Paths::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    /// The file at `path` if given, defaults otherwise.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self, CliError> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |m: String| Err(CliError::Usage(m));
        self.sinkhorn.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        if !(self.motion.floor > 0.0 && self.motion.floor < 1.0) {
            return usage(format!("motion floor {} outside (0, 1)", self.motion.floor));
        }
        if self.key_frames == 0 {
            return usage("key_frames must be at least 1".into());
        }
        if self.top_k == 0 {
            return usage("top_k must be at least 1".into());
        }
        if self.labels.is_empty() {
            return usage("labels must not be empty".into());
        }
        let l = &self.losses;
        if !(l.gamma >= 0.0 && l.gamma.is_finite()) {
            return usage(format!("gamma {} must be >= 0", l.gamma));
        }
        if !(l.alpha > 0.0 && l.alpha <= 1.0) {
            return usage(format!("alpha {} outside (0, 1]", l.alpha));
        }
        if !(l.temperature > 0.0 && l.temperature.is_finite()) {
            return usage(format!("temperature {} must be positive", l.temperature));
        }
        l.weights.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        if let Some(m) = &l.mixup {
            if !(m.alpha > 0.0 && m.alpha.is_finite()) {
                return usage(format!("mixup alpha {} must be positive", m.alpha));
            }
        }
        self.synth.validate()?;
        Ok(())
    }
}
