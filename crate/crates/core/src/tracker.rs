//! Detector-gated multi-hand tracking.
//!
//! Each frame the landmark model runs on every tracked hand's crop, which
//! was derived from that hand's landmarks in the previous frame. The palm
//! detector only runs on the first frame, after a hand is lost, when a
//! lost-hand probe sees the hand again, or while nothing at all is being
//! tracked or probed.
//!
//! A lost hand leaves a probe behind: its last crop keeps being checked by
//! the landmark model for `lost_probe_frames` frames. A probe reporting a
//! present hand triggers one detector pass to re-acquire it.

use log::debug;
use serde::{Deserialize, Serialize};

use crate::backend::{BackendRequest, LandmarkBackend, PalmDetector};
use crate::crop::{palm_detection_from_landmarks, rect_from_detection, rect_from_landmarks, CropConfig};
use crate::error::{Error, Result};
use crate::types::{rect_iou, Detection, HandLandmarks, HandScene, OrientedRect};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub max_hands: usize,
    /// Hands whose presence falls below this are dropped.
    pub presence_threshold: f64,
    /// Oriented-rect IoU (on axis-aligned bounds) for a detection to count
    /// as an already tracked hand.
    pub association_iou: f64,
    /// Frames a lost hand's last crop keeps being probed.
    pub lost_probe_frames: u64,
    /// Extra detector pass every N frames while below capacity.
    pub refresh_interval: Option<u64>,
    /// With gating off the detector runs on every frame.
    pub gating: bool,
    pub crop: CropConfig,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            max_hands: 2,
            presence_threshold: 0.5,
            association_iou: 0.5,
            lost_probe_frames: 90,
            refresh_interval: None,
            gating: true,
            crop: CropConfig::default(),
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_hands == 0 {
            return Err(Error::Config("max_hands must be at least 1".into()));
        }
        for (name, v) in [
            ("presence_threshold", self.presence_threshold),
            ("association_iou", self.association_iou),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} {v} outside [0, 1]")));
            }
        }
        if self.refresh_interval == Some(0) {
            return Err(Error::Config("refresh_interval must be positive".into()));
        }
        self.crop.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackedHand {
    pub id: u64,
    /// Crop for the next frame.
    pub rect: OrientedRect,
    pub last_landmarks: HandLandmarks,
    /// Frames this hand has been tracked, including the current one.
    pub age: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LostHand {
    pub rect: OrientedRect,
    pub lost_at: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerState {
    pub hands: Vec<TrackedHand>,
    pub probes: Vec<LostHand>,
    pub config: TrackerConfig,
    pub frame_index: u64,
    pub next_id: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackStepReport {
    pub timestamp_us: i64,
    pub frame_index: u64,
    /// Tracked hands after this frame, ordered by id.
    pub outputs: Vec<(u64, HandLandmarks)>,
    pub detector_ran: bool,
    pub hands_added: usize,
    pub hands_dropped: usize,
}

impl TrackerState {
    pub fn new(config: TrackerConfig) -> Self {
        Self {
            hands: Vec::new(),
            probes: Vec::new(),
            config,
            frame_index: 0,
            next_id: 0,
        }
    }

    pub fn max_hands(&self) -> usize {
        self.config.max_hands
    }

    pub fn presence_threshold(&self) -> f64 {
        self.config.presence_threshold
    }

    /// Landmark pass over tracked hands and probes; decides whether the
    /// detector must run on this frame.
    pub fn observe(&self, frame: &HandScene, backend: &dyn LandmarkBackend) -> Result<LandmarkPhase> {
        let cfg = &self.config;
        let req = |rect| BackendRequest {
            rect,
            scene: frame,
            timestamp_us: frame.timestamp_us,
        };

        let mut survivors = Vec::with_capacity(self.hands.len());
        let mut probes = Vec::new();
        let mut dropped = 0;
        for hand in &self.hands {
            let lm = backend.infer(&req(hand.rect))?;
            if lm.presence >= cfg.presence_threshold {
                survivors.push((hand.clone(), lm));
            } else {
                dropped += 1;
                debug!(
                    "frame {}: hand {} lost (presence {:.3})",
                    self.frame_index, hand.id, lm.presence
                );
                probes.push(LostHand {
                    rect: hand.rect,
                    lost_at: self.frame_index,
                });
            }
        }

        let mut reacquired = false;
        if survivors.len() < cfg.max_hands {
            for probe in &self.probes {
                if self.frame_index.saturating_sub(probe.lost_at) > cfg.lost_probe_frames {
                    continue;
                }
                let lm = backend.infer(&req(probe.rect))?;
                if lm.presence >= cfg.presence_threshold {
                    reacquired = true;
                } else {
                    probes.push(*probe);
                }
            }
        }

        let below_capacity = survivors.len() < cfg.max_hands;
        let refresh = below_capacity
            && cfg
                .refresh_interval
                .is_some_and(|n| self.frame_index % n == 0);
        let run_detector = !cfg.gating
            || self.frame_index == 0
            || dropped > 0
            || reacquired
            || refresh
            || (survivors.is_empty() && probes.is_empty());

        Ok(LandmarkPhase {
            frame_index: self.frame_index,
            timestamp_us: frame.timestamp_us,
            config: *cfg,
            next_id: self.next_id,
            survivors,
            probes,
            dropped,
            run_detector,
        })
    }
}

/// Tracker state between the landmark pass and the (optional) detector
/// pass of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkPhase {
    pub frame_index: u64,
    pub timestamp_us: i64,
    config: TrackerConfig,
    next_id: u64,
    survivors: Vec<(TrackedHand, HandLandmarks)>,
    probes: Vec<LostHand>,
    dropped: usize,
    run_detector: bool,
}

/// Result of matching detections to tracked hands.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Assignment {
    /// `(detection, hand)` index pairs.
    pub matches: Vec<(usize, usize)>,
    /// Detections matching no tracked hand, in input order.
    pub new: Vec<usize>,
}

/// Greedy best-IoU matching: pairs are taken in decreasing IoU (ties by
/// detection then hand index) while both sides are free and the IoU reaches
/// `iou_threshold`.
pub fn associate_rects(dets: &[OrientedRect], tracked: &[OrientedRect], iou_threshold: f64) -> Assignment {
    let mut pairs = Vec::new();
    for (d, dr) in dets.iter().enumerate() {
        for (h, hr) in tracked.iter().enumerate() {
            let iou = rect_iou(dr, hr);
            if iou >= iou_threshold && iou > 0.0 {
                pairs.push((iou, d, h));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut det_used = vec![false; dets.len()];
    let mut hand_used = vec![false; tracked.len()];
    let mut matches = Vec::new();
    for (_, d, h) in pairs {
        if !det_used[d] && !hand_used[h] {
            det_used[d] = true;
            hand_used[h] = true;
            matches.push((d, h));
        }
    }
    matches.sort_unstable();
    Assignment {
        matches,
        new: (0..dets.len()).filter(|&d| !det_used[d]).collect(),
    }
}

/// The palm-level rect of a tracked hand, comparable with rects derived
/// from fresh detections.
pub fn palm_rect(lm: &HandLandmarks, crop: &CropConfig) -> Result<OrientedRect> {
    rect_from_detection(
        &palm_detection_from_landmarks(lm, lm.presence),
        crop.detection_expand,
        crop.detection_shift,
    )
}

/// Matches detections against tracked hands by their palm-level rects.
pub fn associate(dets: &[Detection], hands: &[TrackedHand], crop: &CropConfig, iou_threshold: f64) -> Result<Assignment> {
    let det_rects = dets
        .iter()
        .map(|d| rect_from_detection(d, crop.detection_expand, crop.detection_shift))
        .collect::<Result<Vec<_>>>()?;
    let hand_rects = hands
        .iter()
        .map(|h| palm_rect(&h.last_landmarks, crop))
        .collect::<Result<Vec<_>>>()?;
    Ok(associate_rects(&det_rects, &hand_rects, iou_threshold))
}

impl LandmarkPhase {
    pub fn needs_detection(&self) -> bool {
        self.run_detector
    }

    /// Completes the frame. `detections` must be `Some` exactly when
    /// [`needs_detection`](Self::needs_detection) is true.
    pub fn finish(
        self,
        detections: Option<&[Detection]>,
        frame: &HandScene,
        backend: &dyn LandmarkBackend,
    ) -> Result<(TrackerState, TrackStepReport)> {
        if detections.is_some() != self.run_detector {
            return Err(Error::Mismatch(format!(
                "frame {}: detector output {} but gating decided {}",
                self.frame_index,
                if detections.is_some() { "present" } else { "absent" },
                if self.run_detector { "run" } else { "skip" }
            )));
        }
        let cfg = self.config;
        let crop = cfg.crop;
        let mut next_id = self.next_id;
        let mut dropped = self.dropped;

        let mut hands: Vec<TrackedHand> = Vec::with_capacity(cfg.max_hands);
        for (hand, lm) in self.survivors {
            match rect_from_landmarks(&lm, crop.landmark_expand) {
                Ok(rect) => hands.push(TrackedHand {
                    id: hand.id,
                    rect,
                    last_landmarks: lm,
                    age: hand.age + 1,
                }),
                Err(e) => {
                    debug!("frame {}: hand {} dropped: {e}", self.frame_index, hand.id);
                    dropped += 1;
                }
            }
        }

        let mut probes = self.probes;
        let mut added = 0;
        if let Some(dets) = detections {
            let assignment = associate(dets, &hands, &crop, cfg.association_iou)?;
            for d in assignment.new {
                if hands.len() >= cfg.max_hands {
                    break;
                }
                let det_rect = rect_from_detection(&dets[d], crop.detection_expand, crop.detection_shift)?;
                let lm = backend.infer(&BackendRequest {
                    rect: det_rect,
                    scene: frame,
                    timestamp_us: frame.timestamp_us,
                })?;
                if lm.presence < cfg.presence_threshold {
                    continue;
                }
                let Ok(rect) = rect_from_landmarks(&lm, crop.landmark_expand) else {
                    continue;
                };
                probes.retain(|p| rect_iou(&p.rect, &rect) < cfg.association_iou && rect_iou(&p.rect, &det_rect) < cfg.association_iou);
                hands.push(TrackedHand {
                    id: next_id,
                    rect,
                    last_landmarks: lm,
                    age: 1,
                });
                next_id += 1;
                added += 1;
            }
        }
        if hands.len() >= cfg.max_hands {
            probes.clear();
        }

        hands.sort_by_key(|h| h.id);
        let report = TrackStepReport {
            timestamp_us: self.timestamp_us,
            frame_index: self.frame_index,
            outputs: hands.iter().map(|h| (h.id, h.last_landmarks.clone())).collect(),
            detector_ran: self.run_detector,
            hands_added: added,
            hands_dropped: dropped,
        };
        let state = TrackerState {
            hands,
            probes,
            config: cfg,
            frame_index: self.frame_index + 1,
            next_id,
        };
        Ok((state, report))
    }
}

/// One full tracking step: landmarks, gated detection, bookkeeping.
pub fn track_step(
    state: &TrackerState,
    frame: &HandScene,
    backend: &dyn LandmarkBackend,
    detector: &dyn PalmDetector,
) -> Result<(TrackerState, TrackStepReport)> {
    let phase = state.observe(frame, backend)?;
    let detections = if phase.needs_detection() {
        Some(detector.detect(frame)?)
    } else {
        None
    };
    phase.finish(detections.as_deref(), frame, backend)
}

/// Runs the tracker over a whole sequence from a fresh state.
pub fn track_sequence(
    config: TrackerConfig,
    frames: &[HandScene],
    backend: &dyn LandmarkBackend,
    detector: &dyn PalmDetector,
) -> Result<Vec<TrackStepReport>> {
    let mut state = TrackerState::new(config);
    let mut reports = Vec::with_capacity(frames.len());
    for frame in frames {
        let (next, report) = track_step(&state, frame, backend, detector)?;
        state = next;
        reports.push(report);
    }
    Ok(reports)
}
