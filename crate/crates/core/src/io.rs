//! On-disk record formats. Streams are JSONL with a schema header line;
//! floats are rounded to 9 significant digits when records are built, so
//! emitting and re-parsing a record gives back the same value.

use std::io::Write;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::detector::{BoxOffsets, RawDetectorOutput};
use crate::error::{Error, Result};
use crate::gesture::GestureLabel;
use crate::pipeline::FrameResult;
use crate::types::{Camera, HandLandmarks, HandScene, Handedness, Landmark, SceneHand};

pub const SCHEMA: &str = "handpipe/v1";

/// `x` rounded to 9 significant digits. Negative zero becomes zero.
pub fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { 0.0 } else { x };
    }
    format!("{x:.8e}").parse().expect("formatted float parses")
}

fn round3(p: [f64; 3]) -> [f64; 3] {
    p.map(round_sig)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    schema: String,
}

/// Header line followed by one compact JSON object per record.
pub fn write_jsonl<W: Write, T: Serialize>(mut out: W, records: &[T]) -> Result<()> {
    let header = serde_json::to_string(&Header {
        schema: SCHEMA.to_string(),
    })
    .map_err(|e| Error::Format(e.to_string()))?;
    writeln!(out, "{header}")?;
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn to_jsonl<T: Serialize>(records: &[T]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_jsonl(&mut buf, records)?;
    Ok(buf)
}

/// Parses a JSONL stream. Blank lines are ignored; an entirely empty input
/// holds no records. Errors carry 1-based line numbers.
pub fn read_jsonl<T: DeserializeOwned>(text: &str) -> Result<Vec<T>> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let Some((n, first)) = lines.next() else {
        return Ok(Vec::new());
    };
    match serde_json::from_str::<Header>(first) {
        Ok(h) if h.schema == SCHEMA => {}
        Ok(h) => {
            return Err(Error::Format(format!(
                "line {n}: unsupported schema `{}` (expected `{SCHEMA}`)",
                h.schema
            )))
        }
        Err(_) => {
            return Err(Error::Format(format!(
                "line {n}: expected header {{\"schema\":\"{SCHEMA}\"}}"
            )))
        }
    }
    lines
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| Error::Format(format!("line {n}: {e}"))))
        .collect()
}

/// Scene with every float rounded for output.
pub fn round_scene(scene: &HandScene) -> HandScene {
    let c = scene.camera;
    HandScene {
        timestamp_us: scene.timestamp_us,
        hands: scene
            .hands
            .iter()
            .map(|h| SceneHand {
                joints3d: h.joints3d.iter().map(|&j| round3(j)).collect(),
                handedness: h.handedness,
            })
            .collect(),
        camera: Camera {
            fx: round_sig(c.fx),
            fy: round_sig(c.fy),
            cx: round_sig(c.cx),
            cy: round_sig(c.cy),
            width: c.width,
            height: c.height,
        },
    }
}

pub fn read_scenes(text: &str) -> Result<Vec<HandScene>> {
    let scenes: Vec<HandScene> = read_jsonl(text)?;
    for (i, s) in scenes.iter().enumerate() {
        s.validate()
            .map_err(|e| Error::Format(format!("scene record {}: {e}", i + 1)))?;
    }
    Ok(scenes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackedHandRecord {
    pub id: u64,
    pub presence: f64,
    pub handedness: Handedness,
    pub landmarks: Vec<[f64; 3]>,
    pub gesture: GestureLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackRecord {
    #[serde(rename = "t_us")]
    pub timestamp_us: i64,
    pub detector_ran: bool,
    pub hands: Vec<TrackedHandRecord>,
}

impl TrackRecord {
    pub fn from_frame(frame: &FrameResult) -> Self {
        let r = &frame.report;
        Self {
            timestamp_us: r.timestamp_us,
            detector_ran: r.detector_ran,
            hands: r
                .outputs
                .iter()
                .zip(&frame.gestures)
                .map(|((id, lm), gesture)| TrackedHandRecord {
                    id: *id,
                    presence: round_sig(lm.presence),
                    handedness: lm.handedness_label(),
                    landmarks: lm.points.iter().map(|p| round3([p.x, p.y, p.z])).collect(),
                    gesture: *gesture,
                })
                .collect(),
        }
    }

    /// Landmarks of every hand; handedness becomes a hard 0/1 probability.
    pub fn landmarks(&self) -> Result<Vec<HandLandmarks>> {
        self.hands
            .iter()
            .map(|h| {
                let pts: Vec<Landmark> = h.landmarks.iter().map(|&[x, y, z]| Landmark::new(x, y, z)).collect();
                let right = match h.handedness {
                    Handedness::Right => 1.0,
                    Handedness::Left => 0.0,
                };
                HandLandmarks::from_slice(&pts, h.presence, right)
                    .map_err(|e| Error::Format(format!("hand {} at t_us={}: {e}", h.id, self.timestamp_us)))
            })
            .collect()
    }
}

pub fn track_records(frames: &[FrameResult]) -> Vec<TrackRecord> {
    frames.iter().map(TrackRecord::from_frame).collect()
}

/// Raw outputs of an external palm detector for one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawDetectorRecord {
    #[serde(rename = "t_us")]
    pub timestamp_us: i64,
    pub logits: Vec<f64>,
    pub offsets: Vec<BoxOffsets>,
}

impl RawDetectorRecord {
    pub fn into_output(self) -> (i64, RawDetectorOutput) {
        (
            self.timestamp_us,
            RawDetectorOutput {
                logits: self.logits,
                offsets: self.offsets,
            },
        )
    }
}
