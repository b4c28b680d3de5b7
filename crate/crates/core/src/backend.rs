//! Inference contracts for the two pipeline models, and oracle
//! implementations driven by simulator ground truth.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::crop::{
    landmarks_to_crop_space, landmarks_to_image_space, make_crop_transform, rect_from_detection, rect_from_landmarks,
    CropConfig,
};
use crate::detector::{decode_boxes, generate_anchors, non_max_suppression_with, Anchor, AnchorConfig, NmsMode, RawDetectorOutput};
use crate::error::{Error, Result};
use crate::simulator::project::{project, ProjectedHand};
use crate::simulator::synth::synthesize_raw_output;
use crate::types::{landmark, rect_iou, Finger, HandLandmarks, HandScene, Handedness, Landmark, OrientedRect, NUM_LANDMARKS};
use crate::types::Detection;

/// Simulated compute tier of the landmark model. Lighter tiers are cheaper
/// and noisier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Light,
    #[default]
    Full,
    Heavy,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::Light, Tier::Full, Tier::Heavy];

    /// Landmark noise std in crop units (crop side = 1).
    pub fn noise_sigma(self) -> f64 {
        match self {
            Tier::Light => 0.02,
            Tier::Full => 0.01,
            Tier::Heavy => 0.005,
        }
    }

    pub fn handedness_flip_probability(self) -> f64 {
        match self {
            Tier::Light => 0.04,
            Tier::Full => 0.02,
            Tier::Heavy => 0.01,
        }
    }

    /// Synthetic cost of one landmark inference.
    pub fn simulated_cost(self) -> Duration {
        match self {
            Tier::Light => Duration::from_micros(66),
            Tier::Full => Duration::from_micros(161),
            Tier::Heavy => Duration::from_micros(369),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Light => "light",
            Tier::Full => "full",
            Tier::Heavy => "heavy",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.as_str() == s)
    }
}

/// One landmark inference request. The scene is ground truth and only
/// oracle backends may look at it.
#[derive(Debug, Clone, Copy)]
pub struct BackendRequest<'a> {
    pub rect: OrientedRect,
    pub scene: &'a HandScene,
    pub timestamp_us: i64,
}

/// The landmark model: 21 points, presence and handedness for a crop.
pub trait LandmarkBackend: Send + Sync {
    fn infer(&self, req: &BackendRequest<'_>) -> Result<HandLandmarks>;
}

/// The palm detector over a full frame.
pub trait PalmDetector: Send + Sync {
    fn detect(&self, scene: &HandScene) -> Result<Vec<Detection>>;
}

/// Busy-waits so that simulated costs are not rounded up by the scheduler.
pub(crate) fn spin_for(d: Duration) {
    if d.is_zero() {
        return;
    }
    let start = Instant::now();
    while start.elapsed() < d {
        std::hint::spin_loop();
    }
}

pub(crate) fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut x = seed ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x ^= x >> 31;
    x = x.wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^= x >> 29;
    x
}

/// Handedness confidence of the oracle for a correct label. A power of two
/// fraction so that `1 - p` is exact.
pub const HANDEDNESS_CONFIDENCE: f64 = 31.0 / 32.0;

/// IoU between a crop and a ground-truth hand rect above which the hand
/// counts as reasonably aligned.
pub const ALIGNED_IOU: f64 = 0.5;

/// Presence score for a crop overlapping its best hand with `iou`. Monotone
/// in `iou`; at least 0.95 when aligned, at most 0.1 otherwise.
pub fn presence_from_iou(iou: f64) -> f64 {
    let iou = iou.clamp(0.0, 1.0);
    if iou >= ALIGNED_IOU {
        0.95 + 0.05 * (iou - ALIGNED_IOU) / (1.0 - ALIGNED_IOU)
    } else {
        0.1 * iou / ALIGNED_IOU
    }
}

/// Landmark oracle: projects ground truth into the requested crop, adds
/// tier noise there and maps back.
#[derive(Debug, Clone)]
pub struct OracleLandmarkBackend {
    pub tier: Tier,
    /// Multiplies the tier's noise and handedness flip rate; 0 is exact.
    pub noise_scale: f64,
    pub seed: u64,
    pub crop: CropConfig,
    pub simulate_latency: bool,
}

impl OracleLandmarkBackend {
    pub fn new(tier: Tier, noise_scale: f64, seed: u64) -> Self {
        Self {
            tier,
            noise_scale,
            seed,
            crop: CropConfig::default(),
            simulate_latency: false,
        }
    }

    pub fn exact() -> Self {
        Self::new(Tier::Full, 0.0, 0)
    }

    pub fn sigma(&self) -> f64 {
        self.tier.noise_sigma() * self.noise_scale
    }

    /// The two reference rects of a ground-truth hand: the one a perfect
    /// palm detection yields and the one its landmarks yield.
    fn reference_rects(&self, hand: &ProjectedHand) -> Vec<OrientedRect> {
        [
            rect_from_detection(&hand.palm, self.crop.detection_expand, self.crop.detection_shift),
            rect_from_landmarks(&hand.landmarks, self.crop.landmark_expand),
        ]
        .into_iter()
        .flatten()
        .collect()
    }

    /// Best-aligned ground-truth hand for `rect` and its IoU.
    pub fn alignment(&self, rect: &OrientedRect, hands: &[ProjectedHand]) -> Option<(usize, f64)> {
        hands
            .iter()
            .enumerate()
            .map(|(i, h)| {
                let iou = self
                    .reference_rects(h)
                    .iter()
                    .map(|r| rect_iou(rect, r))
                    .fold(0.0, f64::max);
                (i, iou)
            })
            .filter(|(_, iou)| *iou > 0.0)
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
    }
}

impl LandmarkBackend for OracleLandmarkBackend {
    fn infer(&self, req: &BackendRequest<'_>) -> Result<HandLandmarks> {
        let transform = make_crop_transform(&req.rect)?;
        if self.simulate_latency {
            spin_for(self.tier.simulated_cost());
        }
        let hands = project(req.scene)?;
        let Some((best, iou)) = self.alignment(&req.rect, &hands) else {
            let crop = HandLandmarks {
                points: crop_template(),
                presence: 0.0,
                handedness: 0.5,
            };
            return Ok(landmarks_to_image_space(&crop, &transform));
        };
        let gt = &hands[best];
        let presence = presence_from_iou(iou);
        let sigma = self.sigma();

        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed, req.timestamp_us as u64, best as u64));
        let flip = self.tier.handedness_flip_probability() * self.noise_scale;
        let mut label = gt.handedness;
        if flip > 0.0 && rng.random_bool(flip.min(1.0)) {
            label = label.flipped();
        }
        let handedness = match label {
            Handedness::Right => HANDEDNESS_CONFIDENCE,
            Handedness::Left => 1.0 - HANDEDNESS_CONFIDENCE,
        };

        if sigma <= 0.0 {
            return Ok(HandLandmarks {
                points: gt.landmarks.points,
                presence,
                handedness,
            });
        }

        let mut crop = landmarks_to_crop_space(&gt.landmarks, &transform);
        let normal = Normal::new(0.0, sigma).expect("finite sigma");
        for p in &mut crop.points {
            p.x += normal.sample(&mut rng);
            p.y += normal.sample(&mut rng);
            p.z += normal.sample(&mut rng);
        }
        let mut out = landmarks_to_image_space(&crop, &transform);
        let wrist_z = out.points[landmark::WRIST].z;
        for p in &mut out.points {
            p.z -= wrist_z;
        }
        out.points[landmark::WRIST].z = 0.0;
        out.presence = presence;
        out.handedness = handedness;
        Ok(out)
    }
}

/// Canonical upright open hand in crop coordinates, returned when a crop
/// holds no hand at all.
fn crop_template() -> [Landmark; NUM_LANDMARKS] {
    let mut p = [Landmark::default(); NUM_LANDMARKS];
    p[landmark::WRIST] = Landmark::new(0.5, 0.85, 0.0);
    for f in Finger::ALL {
        let spread = (f.index() as f64 - 2.5) * 0.09;
        for (k, j) in f.joints().into_iter().enumerate() {
            let t = (k + 1) as f64 / 4.0;
            p[j] = Landmark::new(0.5 + spread * t, 0.85 - 0.7 * t, 0.0);
        }
    }
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorThresholds {
    pub score: f64,
    pub nms_iou: f64,
    pub nms_mode: NmsMode,
}

impl Default for DetectorThresholds {
    fn default() -> Self {
        Self {
            score: 0.5,
            nms_iou: 0.3,
            nms_mode: NmsMode::Greedy,
        }
    }
}

impl DetectorThresholds {
    pub fn apply(&self, raw: &RawDetectorOutput, anchors: &[Anchor]) -> Result<Vec<Detection>> {
        let decoded = decode_boxes(raw, anchors, self.score)?;
        Ok(non_max_suppression_with(&decoded, self.nms_iou, self.nms_mode))
    }
}

/// Palm detector oracle: synthesizes raw outputs from ground truth, then
/// runs the real decode and NMS.
#[derive(Debug, Clone)]
pub struct OracleDetector {
    pub anchors: Vec<Anchor>,
    pub thresholds: DetectorThresholds,
    /// Regression noise in anchor units.
    pub sigma: f64,
    pub seed: u64,
    pub simulated_cost: Duration,
}

impl OracleDetector {
    pub fn new(anchor_config: &AnchorConfig, thresholds: DetectorThresholds) -> Result<Self> {
        Ok(Self {
            anchors: generate_anchors(anchor_config)?,
            thresholds,
            sigma: 0.0,
            seed: 0,
            simulated_cost: Duration::ZERO,
        })
    }

    pub fn raw_output(&self, scene: &HandScene) -> Result<RawDetectorOutput> {
        synthesize_raw_output(
            scene,
            &self.anchors,
            self.sigma,
            mix_seed(self.seed, scene.timestamp_us as u64, 0xd7),
        )
    }
}

/// Default synthetic cost of one palm detector pass.
pub const DETECTOR_SIMULATED_COST: Duration = Duration::from_micros(600);

impl PalmDetector for OracleDetector {
    fn detect(&self, scene: &HandScene) -> Result<Vec<Detection>> {
        spin_for(self.simulated_cost);
        let raw = self.raw_output(scene)?;
        self.thresholds.apply(&raw, &self.anchors)
    }
}

/// Replays raw detector outputs recorded from an external model, keyed by
/// frame timestamp.
#[derive(Debug, Clone)]
pub struct ReplayDetector {
    pub anchors: Vec<Anchor>,
    pub thresholds: DetectorThresholds,
    pub frames: BTreeMap<i64, RawDetectorOutput>,
}

impl PalmDetector for ReplayDetector {
    fn detect(&self, scene: &HandScene) -> Result<Vec<Detection>> {
        let raw = self.frames.get(&scene.timestamp_us).ok_or_else(|| {
            Error::Mismatch(format!(
                "no recorded detector output for t_us={}",
                scene.timestamp_us
            ))
        })?;
        self.thresholds.apply(raw, &self.anchors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presence_curve() {
        assert!(presence_from_iou(1.0) >= 0.95 && presence_from_iou(1.0) <= 1.0);
        assert!(presence_from_iou(0.5) >= 0.95);
        assert!(presence_from_iou(0.49) <= 0.1);
        assert_eq!(presence_from_iou(0.0), 0.0);
        let mut prev = -1.0;
        for k in 0..=100 {
            let p = presence_from_iou(k as f64 / 100.0);
            assert!(p >= prev);
            prev = p;
        }
    }

    #[test]
    fn tier_ordering() {
        assert!(Tier::Light.noise_sigma() > Tier::Full.noise_sigma());
        assert!(Tier::Full.noise_sigma() > Tier::Heavy.noise_sigma());
        assert!(Tier::Light.simulated_cost() < Tier::Heavy.simulated_cost());
        assert_eq!(Tier::parse("heavy"), Some(Tier::Heavy));
    }

    #[test]
    fn handedness_confidence_is_exactly_complementary() {
        assert_eq!(1.0 - (1.0 - HANDEDNESS_CONFIDENCE), HANDEDNESS_CONFIDENCE);
    }
}
