//! Scripted motion sequences: keyframed hands with enter/exit events,
//! sampled at a fixed frame interval.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{forward_kinematics, FingerPose, HandModel, PoseParams};
use super::pose::{sample_pose, view_rotation, PoseFamily, DEFAULT_POSITION, DEFAULT_VIEW_YAW_DEG};
use crate::error::{Error, Result};
use crate::types::{Camera, HandScene, Handedness, SceneHand};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceScript {
    #[serde(default)]
    pub frames: u32,
    #[serde(default = "default_interval")]
    pub frame_interval_us: i64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub camera: Camera,
    /// Per-frame uniform jitter on every joint angle, degrees.
    #[serde(default)]
    pub pose_jitter_deg: f64,
    #[serde(default)]
    pub model: Option<HandModel>,
    #[serde(default)]
    pub hands: Vec<HandTrackScript>,
}

fn default_interval() -> i64 {
    33_333
}

impl Default for SequenceScript {
    fn default() -> Self {
        Self {
            frames: 0,
            frame_interval_us: default_interval(),
            seed: 0,
            camera: Camera::default(),
            pose_jitter_deg: 0.0,
            model: None,
            hands: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HandTrackScript {
    pub handedness: Handedness,
    pub keyframes: Vec<Keyframe>,
    #[serde(default)]
    pub events: Vec<VisibilityEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Keyframe {
    pub frame: u32,
    /// Finger articulation from a pose family (sampled with the script seed).
    #[serde(default)]
    pub family: Option<PoseFamily>,
    /// Explicit finger angles in degrees: `[abduction, flex0, flex1, flex2]`
    /// per finger, thumb first. Overrides `family`.
    #[serde(default)]
    pub fingers_deg: Option<[[f64; 4]; 5]>,
    #[serde(default = "default_position")]
    pub position: [f64; 3],
    /// Explicit roll/pitch/yaw in degrees. Overrides the view angles below.
    #[serde(default)]
    pub rotation_deg: Option<[f64; 3]>,
    /// Screen-space counterclockwise rotation of the hand, degrees.
    #[serde(default)]
    pub in_plane_deg: f64,
    #[serde(default = "default_yaw")]
    pub yaw_deg: f64,
}

fn default_position() -> [f64; 3] {
    DEFAULT_POSITION
}

fn default_yaw() -> f64 {
    DEFAULT_VIEW_YAW_DEG
}

impl Keyframe {
    pub fn new(frame: u32, family: PoseFamily) -> Self {
        Self {
            frame,
            family: Some(family),
            fingers_deg: None,
            position: DEFAULT_POSITION,
            rotation_deg: None,
            in_plane_deg: 0.0,
            yaw_deg: DEFAULT_VIEW_YAW_DEG,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Enter,
    Exit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VisibilityEvent {
    pub frame: u32,
    pub kind: EventKind,
}

impl HandTrackScript {
    /// A track starts visible unless its earliest event is an `enter`.
    pub fn visible_at(&self, frame: u32) -> bool {
        let mut events = self.events.clone();
        events.sort_by_key(|e| e.frame);
        let mut visible = events.first().is_none_or(|e| e.kind != EventKind::Enter);
        for e in events.iter().take_while(|e| e.frame <= frame) {
            visible = e.kind == EventKind::Enter;
        }
        visible
    }
}

impl SequenceScript {
    pub fn from_json(text: &str) -> Result<Self> {
        if text.trim().is_empty() {
            return Ok(Self::default());
        }
        let script: SequenceScript = serde_json::from_str(text).map_err(|e| {
            Error::Format(format!("script line {} column {}: {e}", e.line(), e.column()))
        })?;
        script.validate()?;
        Ok(script)
    }

    pub fn model(&self) -> HandModel {
        self.model.clone().unwrap_or_default()
    }

    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        if self.frame_interval_us <= 0 {
            return Err(Error::Format("frame_interval_us must be positive".into()));
        }
        if !(self.pose_jitter_deg >= 0.0) {
            return Err(Error::Format("pose_jitter_deg must be non-negative".into()));
        }
        let model = self.model();
        model.validate()?;
        for (h, track) in self.hands.iter().enumerate() {
            if track.keyframes.is_empty() {
                return Err(Error::Format(format!("hands[{h}]: no keyframes")));
            }
            for (k, pair) in track.keyframes.windows(2).enumerate() {
                if pair[1].frame <= pair[0].frame {
                    return Err(Error::Format(format!(
                        "hands[{h}].keyframes[{}]: frame {} does not follow frame {}",
                        k + 1,
                        pair[1].frame,
                        pair[0].frame
                    )));
                }
            }
            for (k, kf) in track.keyframes.iter().enumerate() {
                if kf.family.is_none() && kf.fingers_deg.is_none() {
                    return Err(Error::Format(format!(
                        "hands[{h}].keyframes[{k}]: needs `family` or `fingers_deg`"
                    )));
                }
                if !(kf.position[2] > 0.0) {
                    return Err(Error::Format(format!(
                        "hands[{h}].keyframes[{k}]: position must be in front of the camera"
                    )));
                }
                self.keyframe_pose(&model, h, k, track.handedness)
                    .check_limits(&model)
                    .map_err(|e| Error::Format(format!("hands[{h}].keyframes[{k}]: {e}")))?;
            }
        }
        Ok(())
    }

    fn keyframe_pose(&self, model: &HandModel, hand: usize, key: usize, handedness: Handedness) -> PoseParams {
        let kf = &self.hands[hand].keyframes[key];
        let fingers = match (kf.fingers_deg, kf.family) {
            (Some(angles), _) => angles.map(|[a, f0, f1, f2]| FingerPose {
                abduction: a.to_radians(),
                flexion: [f0.to_radians(), f1.to_radians(), f2.to_radians()],
            }),
            (None, Some(fam)) => sample_pose(model, fam, mix(self.seed, hand as u64, key as u64)).fingers,
            (None, None) => [FingerPose::default(); 5],
        };
        let rotation = match kf.rotation_deg {
            Some(r) => r.map(f64::to_radians),
            None => view_rotation(kf.in_plane_deg.to_radians(), kf.yaw_deg.to_radians()),
        };
        PoseParams {
            fingers,
            rotation,
            position: kf.position,
            handedness,
        }
    }

    /// Interpolated pose of `hand` at `frame`, before per-frame jitter.
    pub fn pose_at(&self, model: &HandModel, hand: usize, frame: u32) -> PoseParams {
        let track = &self.hands[hand];
        let keys = &track.keyframes;
        let after = keys.iter().position(|k| k.frame >= frame);
        match after {
            None => self.keyframe_pose(model, hand, keys.len() - 1, track.handedness),
            Some(0) => self.keyframe_pose(model, hand, 0, track.handedness),
            Some(i) => {
                let (a, b) = (&keys[i - 1], &keys[i]);
                let t = (frame - a.frame) as f64 / (b.frame - a.frame) as f64;
                let pa = self.keyframe_pose(model, hand, i - 1, track.handedness);
                let pb = self.keyframe_pose(model, hand, i, track.handedness);
                pa.lerp(&pb, t)
            }
        }
    }

    pub fn scene_at(&self, model: &HandModel, frame: u32) -> Result<HandScene> {
        let mut scene = HandScene::empty(frame as i64 * self.frame_interval_us, self.camera);
        for (h, track) in self.hands.iter().enumerate() {
            if !track.visible_at(frame) {
                continue;
            }
            let mut pose = self.pose_at(model, h, frame);
            if self.pose_jitter_deg > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(mix(self.seed, h as u64, 0x1000_0000 + frame as u64));
                let j = self.pose_jitter_deg.to_radians();
                for f in &mut pose.fingers {
                    f.abduction += rng.random_range(-j..=j);
                    for a in &mut f.flexion {
                        *a += rng.random_range(-j..=j);
                    }
                }
                pose = pose.clamped(model);
            }
            scene.hands.push(SceneHand {
                joints3d: forward_kinematics(model, &pose)?,
                handedness: track.handedness,
            });
        }
        scene.validate()?;
        Ok(scene)
    }
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut x = seed ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    x ^= x >> 33;
    x = x.wrapping_mul(0xff51_afd7_ed55_8ccd);
    x ^= x >> 33;
    x
}

/// All frames of the script in order.
pub fn run_script(script: &SequenceScript) -> Result<Vec<HandScene>> {
    script.validate()?;
    let model = script.model();
    (0..script.frames).map(|f| script.scene_at(&model, f)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hand(frames: u32, keys: Vec<Keyframe>, events: Vec<VisibilityEvent>) -> SequenceScript {
        SequenceScript {
            frames,
            hands: vec![HandTrackScript {
                handedness: Handedness::Right,
                keyframes: keys,
                events,
            }],
            ..SequenceScript::default()
        }
    }

    #[test]
    fn identical_keyframes_give_constant_scenes() {
        let s = one_hand(
            10,
            vec![Keyframe::new(0, PoseFamily::Open), Keyframe::new(9, PoseFamily::Open)],
            vec![],
        );
        // both keyframes sample with different keys, so pin the angles
        let mut s2 = s.clone();
        for k in &mut s2.hands[0].keyframes {
            k.family = None;
            k.fingers_deg = Some([[0.0, 5.0, 5.0, 5.0]; 5]);
        }
        let scenes = run_script(&s2).unwrap();
        assert_eq!(scenes.len(), 10);
        for w in scenes.windows(2) {
            assert_eq!(w[0].hands, w[1].hands);
            assert!(w[1].timestamp_us > w[0].timestamp_us);
        }
    }

    #[test]
    fn enter_event_hides_earlier_frames() {
        let s = one_hand(
            20,
            vec![Keyframe::new(0, PoseFamily::Open)],
            vec![VisibilityEvent {
                frame: 10,
                kind: EventKind::Enter,
            }],
        );
        let scenes = run_script(&s).unwrap();
        assert!(scenes[..10].iter().all(|s| s.hands.is_empty()));
        assert!(scenes[10..].iter().all(|s| s.hands.len() == 1));
    }

    #[test]
    fn exit_and_reenter() {
        let s = one_hand(
            30,
            vec![Keyframe::new(0, PoseFamily::Open)],
            vec![
                VisibilityEvent {
                    frame: 10,
                    kind: EventKind::Exit,
                },
                VisibilityEvent {
                    frame: 20,
                    kind: EventKind::Enter,
                },
            ],
        );
        let scenes = run_script(&s).unwrap();
        let counts: Vec<usize> = scenes.iter().map(|s| s.hands.len()).collect();
        assert_eq!(&counts[..10], &[1; 10]);
        assert_eq!(&counts[10..20], &[0; 10]);
        assert_eq!(&counts[20..], &[1; 10]);
    }

    #[test]
    fn malformed_keyframes_rejected() {
        let s = one_hand(
            5,
            vec![Keyframe::new(3, PoseFamily::Open), Keyframe::new(3, PoseFamily::Fist)],
            vec![],
        );
        assert!(matches!(run_script(&s), Err(Error::Format(_))));
        let none = one_hand(5, vec![], vec![]);
        assert!(run_script(&none).is_err());
    }

    #[test]
    fn json_errors_carry_location() {
        let err = SequenceScript::from_json("{\n  \"frames\": \"ten\"\n}").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert_eq!(SequenceScript::from_json("  \n").unwrap().frames, 0);
    }

    #[test]
    fn jitter_is_seeded() {
        let mut s = one_hand(5, vec![Keyframe::new(0, PoseFamily::Open)], vec![]);
        s.pose_jitter_deg = 2.0;
        s.seed = 9;
        assert_eq!(run_script(&s).unwrap(), run_script(&s).unwrap());
        let mut other = s.clone();
        other.seed = 10;
        assert_ne!(run_script(&s).unwrap(), run_script(&other).unwrap());
    }
}
