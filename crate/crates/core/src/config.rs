//! Pipeline configuration, loaded from TOML.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::backend::{DetectorThresholds, OracleDetector, OracleLandmarkBackend, Tier, DETECTOR_SIMULATED_COST};
use crate::detector::AnchorConfig;
use crate::error::{Error, Result};
use crate::gesture::GestureConfig;
use crate::pipeline::{HandPipeline, PipelineComponents};
use crate::tracker::TrackerConfig;

/// Configs shipped with the crate, by file name.
pub const SHIPPED_CONFIGS: [(&str, &str); 2] = [
    ("default.toml", include_str!("../configs/default.toml")),
    ("fast.toml", include_str!("../configs/fast.toml")),
];

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

/// Everything needed to build a pipeline. `seed` has no default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    #[serde(default)]
    pub tier: Tier,
    /// Multiplies the landmark tier noise; 0 gives exact landmarks.
    #[serde(default = "one")]
    pub noise_scale: f64,
    /// Regression noise of the detector oracle, in anchor units.
    #[serde(default)]
    pub detector_sigma: f64,
    /// Busy-wait for each model's nominal cost.
    #[serde(default = "yes")]
    pub simulate_latency: bool,
    /// Graph text file, relative to the config file. The shipped
    /// hand-tracking graph when absent.
    #[serde(default)]
    pub graph: Option<PathBuf>,
    #[serde(default)]
    pub anchors: AnchorConfig,
    #[serde(default)]
    pub detector: DetectorThresholds,
    #[serde(default)]
    pub tracker: TrackerConfig,
    #[serde(default)]
    pub gesture: GestureConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            tier: Tier::default(),
            noise_scale: 1.0,
            detector_sigma: 0.0,
            simulate_latency: true,
            graph: None,
            anchors: AnchorConfig::default(),
            detector: DetectorThresholds::default(),
            tracker: TrackerConfig::default(),
            gesture: GestureConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("detector.score", self.detector.score),
            ("detector.nms_iou", self.detector.nms_iou),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} {v} outside [0, 1]")));
            }
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::Config(format!("noise_scale {} must be a non-negative number", self.noise_scale)));
        }
        if !(self.detector_sigma >= 0.0 && self.detector_sigma.is_finite()) {
            return Err(Error::Config(format!(
                "detector_sigma {} must be a non-negative number",
                self.detector_sigma
            )));
        }
        self.anchors.validate()?;
        self.tracker.validate()?;
        self.gesture.validate()
    }

    pub fn components(&self) -> Result<PipelineComponents> {
        self.validate()?;
        let backend = OracleLandmarkBackend {
            crop: self.tracker.crop,
            simulate_latency: self.simulate_latency,
            ..OracleLandmarkBackend::new(self.tier, self.noise_scale, self.seed)
        };
        let mut detector = OracleDetector::new(&self.anchors, self.detector)?;
        detector.sigma = self.detector_sigma;
        detector.seed = self.seed;
        if self.simulate_latency {
            detector.simulated_cost = DETECTOR_SIMULATED_COST;
        }
        Ok(PipelineComponents {
            backend: Arc::new(backend),
            detector: Arc::new(detector),
            tracker: self.tracker,
            gesture: self.gesture.clone(),
        })
    }

    /// Builds the pipeline; a relative `graph` path resolves against `base`.
    pub fn build(&self, base: Option<&Path>) -> Result<HandPipeline> {
        let text = match &self.graph {
            None => None,
            Some(p) => {
                let path = match base {
                    Some(b) if p.is_relative() => b.join(p),
                    _ => p.clone(),
                };
                Some(std::fs::read_to_string(&path).map_err(|e| {
                    Error::Config(format!("cannot read graph file {}: {e}", path.display()))
                })?)
            }
        };
        HandPipeline::new(self.components()?, text.as_deref())
    }
}
