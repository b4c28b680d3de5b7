//! Kinematic hand model and forward kinematics.
//!
//! Hand-local frame: the palm lies in the x-y plane with fingers along +y,
//! the thumb on the +x side of a right hand, and fingers flexing toward +z.
//! A left hand is the x-mirror of a right hand with the same parameters.

use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Finger, Handedness, NUM_LANDMARKS};

/// Closed interval of allowed joint angles, radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub min: f64,
    pub max: f64,
}

impl Interval {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn degrees(min: f64, max: f64) -> Self {
        Self::new(min.to_radians(), max.to_radians())
    }

    pub fn contains(&self, v: f64) -> bool {
        // FK round trips through degrees; allow float slop at the edges
        v >= self.min - 1e-12 && v <= self.max + 1e-12
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.min, self.max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointLimits {
    /// Sideways rotation at the finger base, positive toward the thumb.
    pub abduction: Interval,
    /// Flexion at the base, middle and distal joints.
    pub flexion: [Interval; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FingerModel {
    /// Bone lengths in meters, from the wrist outward.
    pub bones: [f64; 4],
    pub limits: JointLimits,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandModel {
    /// Thumb, index, middle, ring, pinky.
    pub fingers: [FingerModel; 5],
    /// Spread of the four finger bases across the palm, meters.
    pub palm_width: f64,
    /// Angle of the thumb's first bone away from the middle finger, radians.
    pub thumb_splay: f64,
}

impl Default for HandModel {
    /// Average adult hand. Bone lengths in meters:
    ///
    /// | finger | wrist-base | proximal | middle | distal |
    /// |--------|-----------|----------|--------|--------|
    /// | thumb  | 0.035 | 0.045 | 0.032 | 0.027 |
    /// | index  | 0.068 | 0.040 | 0.023 | 0.018 |
    /// | middle | 0.065 | 0.045 | 0.027 | 0.019 |
    /// | ring   | 0.060 | 0.042 | 0.026 | 0.019 |
    /// | pinky  | 0.056 | 0.033 | 0.018 | 0.017 |
    fn default() -> Self {
        let finger_limits = JointLimits {
            abduction: Interval::degrees(-20.0, 20.0),
            flexion: [
                Interval::degrees(-10.0, 95.0),
                Interval::degrees(0.0, 110.0),
                Interval::degrees(0.0, 80.0),
            ],
        };
        let thumb_limits = JointLimits {
            abduction: Interval::degrees(-35.0, 40.0),
            flexion: [
                Interval::degrees(0.0, 60.0),
                Interval::degrees(0.0, 65.0),
                Interval::degrees(-10.0, 85.0),
            ],
        };
        let finger = |bones| FingerModel {
            bones,
            limits: finger_limits,
        };
        Self {
            fingers: [
                FingerModel {
                    bones: [0.035, 0.045, 0.032, 0.027],
                    limits: thumb_limits,
                },
                finger([0.068, 0.040, 0.023, 0.018]),
                finger([0.065, 0.045, 0.027, 0.019]),
                finger([0.060, 0.042, 0.026, 0.019]),
                finger([0.056, 0.033, 0.018, 0.017]),
            ],
            palm_width: 0.07,
            thumb_splay: 45f64.to_radians(),
        }
    }
}

/// Lateral position of each finger base as a fraction of palm width.
const BASE_SPREAD: [f64; 4] = [0.375, 0.125, -0.125, -0.375];

impl HandModel {
    pub fn validate(&self) -> Result<()> {
        for (f, m) in Finger::ALL.iter().zip(&self.fingers) {
            if m.bones.iter().any(|b| !(*b > 0.0)) {
                return Err(Error::invalid(format!("{} bone lengths must be positive", f.name())));
            }
            let ok = |i: &Interval| i.min <= i.max;
            if !ok(&m.limits.abduction) || !m.limits.flexion.iter().all(ok) {
                return Err(Error::invalid(format!("{} has an empty joint range", f.name())));
            }
        }
        if !(self.palm_width > 0.0) {
            return Err(Error::invalid("palm width must be positive"));
        }
        for (k, frac) in BASE_SPREAD.iter().enumerate() {
            if (frac * self.palm_width).abs() >= self.fingers[k + 1].bones[0] {
                return Err(Error::invalid("palm wider than the metacarpals allow"));
            }
        }
        Ok(())
    }

    /// In-palm angle of a finger's first bone from +y, positive toward +x.
    pub fn splay(&self, finger: Finger) -> f64 {
        match finger {
            Finger::Thumb => self.thumb_splay,
            _ => {
                let k = finger.index() - 1;
                (BASE_SPREAD[k] * self.palm_width / self.fingers[finger.index()].bones[0]).asin()
            }
        }
    }

    pub fn bone_lengths(&self, finger: Finger) -> [f64; 4] {
        self.fingers[finger.index()].bones
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FingerPose {
    pub abduction: f64,
    pub flexion: [f64; 3],
}

/// Full articulation plus the wrist's placement in camera space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseParams {
    pub fingers: [FingerPose; 5],
    /// Roll, pitch, yaw (radians) of the hand frame in camera space.
    pub rotation: [f64; 3],
    /// Wrist position in camera space, meters.
    pub position: [f64; 3],
    pub handedness: Handedness,
}

impl Default for PoseParams {
    fn default() -> Self {
        Self {
            fingers: [FingerPose::default(); 5],
            rotation: [0.0; 3],
            position: [0.0; 3],
            handedness: Handedness::Right,
        }
    }
}

impl PoseParams {
    pub fn check_limits(&self, model: &HandModel) -> Result<()> {
        for ((f, p), m) in Finger::ALL.iter().zip(&self.fingers).zip(&model.fingers) {
            if !m.limits.abduction.contains(p.abduction) {
                return Err(Error::PoseOutOfLimits(format!(
                    "{} abduction {:.2} deg",
                    f.name(),
                    p.abduction.to_degrees()
                )));
            }
            for (j, (a, lim)) in p.flexion.iter().zip(&m.limits.flexion).enumerate() {
                if !lim.contains(*a) {
                    return Err(Error::PoseOutOfLimits(format!(
                        "{} joint {j} flexion {:.2} deg",
                        f.name(),
                        a.to_degrees()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Clamps every joint angle into the model's limits.
    pub fn clamped(mut self, model: &HandModel) -> Self {
        for (p, m) in self.fingers.iter_mut().zip(&model.fingers) {
            p.abduction = m.limits.abduction.clamp(p.abduction);
            for (a, lim) in p.flexion.iter_mut().zip(&m.limits.flexion) {
                *a = lim.clamp(*a);
            }
        }
        self
    }

    pub fn rotation_matrix(&self) -> Rotation3<f64> {
        let [r, p, y] = self.rotation;
        Rotation3::from_euler_angles(r, p, y)
    }

    /// Component-wise linear interpolation in parameter space. Handedness is
    /// taken from `self`.
    pub fn lerp(&self, other: &PoseParams, t: f64) -> PoseParams {
        let l = |a: f64, b: f64| a + (b - a) * t;
        let mut out = *self;
        for (o, (a, b)) in out.fingers.iter_mut().zip(self.fingers.iter().zip(&other.fingers)) {
            o.abduction = l(a.abduction, b.abduction);
            for k in 0..3 {
                o.flexion[k] = l(a.flexion[k], b.flexion[k]);
            }
        }
        for k in 0..3 {
            out.rotation[k] = l(self.rotation[k], other.rotation[k]);
            out.position[k] = l(self.position[k], other.position[k]);
        }
        out
    }
}

/// Joint positions in the hand-local frame of a right hand.
pub fn local_joints(model: &HandModel, pose: &PoseParams) -> [Vector3<f64>; NUM_LANDMARKS] {
    let mut joints = [Vector3::zeros(); NUM_LANDMARKS];
    let normal = Vector3::z();
    for finger in Finger::ALL {
        let bones = model.bone_lengths(finger);
        let fp = &pose.fingers[finger.index()];
        let splay = model.splay(finger);
        let base_dir = Vector3::new(splay.sin(), splay.cos(), 0.0);
        let swung = splay + fp.abduction;
        let u = Vector3::new(swung.sin(), swung.cos(), 0.0);

        let idx = finger.joints();
        let mut p = base_dir * bones[0];
        joints[idx[0]] = p;
        let mut bend = 0.0;
        for k in 0..3 {
            bend += fp.flexion[k];
            let dir = u * bend.cos() + normal * bend.sin();
            p += dir * bones[k + 1];
            joints[idx[k + 1]] = p;
        }
    }
    joints
}

/// Camera-space joints for `pose`. Left hands are mirrored in the local
/// frame before the wrist transform is applied.
pub fn forward_kinematics(model: &HandModel, pose: &PoseParams) -> Result<Vec<[f64; 3]>> {
    pose.check_limits(model)?;
    let rot = pose.rotation_matrix();
    let t = Vector3::from(pose.position);
    let mirror = pose.handedness == Handedness::Left;
    Ok(local_joints(model, pose)
        .iter()
        .map(|p| {
            let mut q = *p;
            if mirror {
                q.x = -q.x;
            }
            let c = rot * q + t;
            [c.x, c.y, c.z]
        })
        .collect())
}
