use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, io_err, Error, Result};
use crate::heatmap::{CenterDefinition, DEFAULT_MIN_IOU};
use crate::losses::JointLimits;

/// Multipliers of the individual loss terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub rep: f64,
    pub reg: f64,
    pub con: f64,
    pub pho: f64,
    pub j3d: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            rep: 1.0,
            reg: 1.0,
            // kept below rep / scale-bone length so local keypoints never outvote labels
            con: 0.01,
            pho: 1.0,
            j3d: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub weights: LossWeights,
    pub stage1_iters: usize,
    /// Leading stage-1 iterations that move only the global rotation and translation.
    pub rigid_iters: usize,
    pub stage2_iters: usize,
    pub learning_rate: f64,
    /// Step multiplier for the translation coordinates.
    pub translation_rate_scale: f64,
    pub decay_milestones: Vec<usize>,
    pub decay_factor: f64,
    pub stage2_learning_rate: f64,
    pub stage2_decay_milestones: Vec<usize>,
    pub fd_step: f64,
    pub line_search_halvings: usize,
    pub limits: JointLimits,
    pub w_pose: f64,
    pub w_shape: f64,
    /// Depth (m) of the initial translation along the detection ray.
    pub init_depth: f64,
    pub init_albedo: [f64; 3],
    pub init_ambient: f64,
    pub seed: u64,
    pub center_definition: CenterDefinition,
    pub min_iou: f64,
    pub decode_threshold: f64,
    pub max_hands: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            stage1_iters: 300,
            rigid_iters: 40,
            stage2_iters: 300,
            learning_rate: 0.02,
            translation_rate_scale: 0.5,
            decay_milestones: vec![180, 260],
            decay_factor: 0.1,
            stage2_learning_rate: 0.02,
            stage2_decay_milestones: vec![200],
            fd_step: 1e-5,
            line_search_halvings: 8,
            limits: JointLimits::default(),
            w_pose: 1.0,
            w_shape: 0.1,
            init_depth: 0.6,
            init_albedo: [0.5, 0.5, 0.5],
            init_ambient: 1.0,
            seed: 0,
            center_definition: CenterDefinition::VisibleMean,
            min_iou: DEFAULT_MIN_IOU,
            decode_threshold: 0.5,
            max_hands: 10,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("stage2_learning_rate", self.stage2_learning_rate),
            ("translation_rate_scale", self.translation_rate_scale),
            ("fd_step", self.fd_step),
            ("init_depth", self.init_depth),
            ("decay_factor", self.decay_factor),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("`{name}` must be positive, got {v}")));
            }
        }
        let w = &self.weights;
        for (name, v) in [("rep", w.rep), ("reg", w.reg), ("con", w.con), ("pho", w.pho), ("j3d", w.j3d)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("weight `{name}` must be non-negative, got {v}")));
            }
        }
        if self.rigid_iters > self.stage1_iters {
            return Err(Error::Config("`rigid_iters` exceeds `stage1_iters`".into()));
        }
        if !(0.0..=1.0).contains(&self.decode_threshold) {
            return Err(Error::Config("`decode_threshold` must lie in [0, 1]".into()));
        }
        if !(self.min_iou > 0.0 && self.min_iou < 1.0) {
            return Err(Error::Config("`min_iou` must lie in (0, 1)".into()));
        }
        if self.init_albedo.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Config("`init_albedo` must lie in [0, 1]".into()));
        }
        self.limits
            .validate()
            .map_err(|e| Error::Config(format!("limits: {e}")))
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: FitConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| invalid("config", e.to_string()))
    }

    /// Learning rate after the decays whose milestone lies at or before `iteration`.
    pub(crate) fn rate_at(base: f64, milestones: &[usize], factor: f64, iteration: usize) -> f64 {
        let passed = milestones.iter().filter(|m| **m <= iteration).count();
        base * factor.powi(passed as i32)
    }
}
