use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the class prior is built from the fitted classes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorKind {
    /// Equal mass on every augmentable class, oversampling rare ones.
    #[default]
    Uniform,
    /// Mass proportional to annotation counts.
    Frequency,
}

/// Every tunable of a fit/augment/eval run. Serialized as flat JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Semantic label indices treated as drivable space (road, sidewalk,
    /// terrain in Cityscapes train ids).
    pub drivable_classes: Vec<u8>,
    /// Placement band half-width in disparity units.
    pub tau: f64,
    pub n_objects: usize,
    pub show_prob: f64,
    /// Aspect-ratio histogram bins.
    pub n_bins: usize,
    /// Depth window width for height statistics.
    pub window: f64,
    pub stride: f64,
    /// Minimum annotations per (camera, class) before falling back to the
    /// pooled model.
    pub min_samples: usize,
    pub min_window_count: usize,
    /// Minimum in-frame area fraction of a proposal box.
    pub min_visible_frac: f64,
    pub max_attempts: u32,
    /// Minimum unoccluded mask fraction after compositing.
    pub min_visible: f64,
    /// Depth PGM scale: disparity = raw * depth_scale.
    pub depth_scale: f64,
    pub seed: u64,
    pub prior: PriorKind,
    /// Classes eligible for augmentation; empty means every fitted class.
    pub augment_classes: Vec<u32>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            drivable_classes: vec![0, 1, 9],
            tau: 5.0,
            n_objects: 12,
            show_prob: 0.5,
            n_bins: 50,
            window: 2.0,
            stride: 1.0,
            min_samples: 30,
            min_window_count: 10,
            min_visible_frac: 0.25,
            max_attempts: 25,
            min_visible: 0.2,
            depth_scale: 1.0 / 256.0,
            seed: 0,
            prior: PriorKind::Uniform,
            augment_classes: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.drivable_classes.is_empty() {
            return bad("drivable_classes must not be empty".into());
        }
        if !(self.tau > 0.0) {
            return bad(format!("tau must be > 0, got {}", self.tau));
        }
        if !(0.0..=1.0).contains(&self.show_prob) {
            return bad(format!("show_prob must be in [0, 1], got {}", self.show_prob));
        }
        if self.n_bins == 0 {
            return bad("n_bins must be >= 1".into());
        }
        if !(self.window > 0.0) || !(self.stride > 0.0) {
            return bad("window and stride must be > 0".into());
        }
        if !(0.0..=1.0).contains(&self.min_visible_frac) || !(0.0..=1.0).contains(&self.min_visible) {
            return bad("visibility thresholds must be in [0, 1]".into());
        }
        if self.max_attempts == 0 {
            return bad("max_attempts must be >= 1".into());
        }
        if !(self.depth_scale > 0.0) || !self.depth_scale.is_finite() {
            return bad(format!("depth_scale must be > 0, got {}", self.depth_scale));
        }
        Ok(())
    }

    pub fn drivable_set(&self) -> BTreeSet<u8> {
        self.drivable_classes.iter().copied().collect()
    }
}
