#![allow(dead_code)]

use std::sync::Arc;

use handpipe::backend::{DetectorThresholds, OracleDetector, OracleLandmarkBackend, Tier};
use handpipe::detector::AnchorConfig;
use handpipe::gesture::GestureConfig;
use handpipe::pipeline::{HandPipeline, PipelineComponents};
use handpipe::simulator::{run_script, EventKind, HandTrackScript, Keyframe, PoseFamily, SequenceScript, VisibilityEvent};
use handpipe::tracker::TrackerConfig;
use handpipe::types::{Camera, HandScene, Handedness};

pub fn one_hand_script(frames: u32, events: Vec<VisibilityEvent>) -> SequenceScript {
    let mut end = Keyframe::new(frames.saturating_sub(1), PoseFamily::Victory);
    end.position = [0.03, 0.06, 0.5];
    end.in_plane_deg = 20.0;
    SequenceScript {
        frames,
        seed: 11,
        hands: vec![HandTrackScript {
            handedness: Handedness::Right,
            keyframes: vec![Keyframe::new(0, PoseFamily::Open), end],
            events,
        }],
        ..SequenceScript::default()
    }
}

pub fn always_visible(frames: u32) -> Vec<HandScene> {
    run_script(&one_hand_script(frames, Vec::new())).unwrap()
}

pub fn exit_and_reenter() -> Vec<HandScene> {
    let events = vec![
        VisibilityEvent {
            frame: 150,
            kind: EventKind::Exit,
        },
        VisibilityEvent {
            frame: 200,
            kind: EventKind::Enter,
        },
    ];
    run_script(&one_hand_script(300, events)).unwrap()
}

pub fn empty_scenes(frames: usize) -> Vec<HandScene> {
    (0..frames)
        .map(|i| HandScene::empty(i as i64 * 33_333, Camera::default()))
        .collect()
}

pub fn components(tier: Tier, noise_scale: f64, gating: bool) -> PipelineComponents {
    let detector = OracleDetector::new(&AnchorConfig::default(), DetectorThresholds::default()).unwrap();
    PipelineComponents {
        backend: Arc::new(OracleLandmarkBackend::new(tier, noise_scale, 5)),
        detector: Arc::new(detector),
        tracker: TrackerConfig {
            gating,
            ..TrackerConfig::default()
        },
        gesture: GestureConfig::default(),
    }
}

pub fn pipeline(tier: Tier, noise_scale: f64, gating: bool) -> HandPipeline {
    HandPipeline::new(components(tier, noise_scale, gating), None).unwrap()
}

pub fn detector_frames(frames: &[handpipe::pipeline::FrameResult]) -> Vec<usize> {
    frames
        .iter()
        .enumerate()
        .filter(|(_, f)| f.report.detector_ran)
        .map(|(i, _)| i)
        .collect()
}
