//! Pose families and the seeded pose sampler.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{local_joints, FingerPose, HandModel, PoseParams};
use crate::error::Error;
use crate::types::{landmark, Finger, Handedness};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoseFamily {
    Open,
    Fist,
    Point,
    Victory,
    ThumbsUp,
    Ok,
    Random,
}

impl PoseFamily {
    /// The families with a canonical gesture.
    pub const NAMED: [PoseFamily; 6] = [
        PoseFamily::Open,
        PoseFamily::Fist,
        PoseFamily::Point,
        PoseFamily::Victory,
        PoseFamily::ThumbsUp,
        PoseFamily::Ok,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PoseFamily::Open => "open",
            PoseFamily::Fist => "fist",
            PoseFamily::Point => "point",
            PoseFamily::Victory => "victory",
            PoseFamily::ThumbsUp => "thumbs_up",
            PoseFamily::Ok => "ok",
            PoseFamily::Random => "random",
        }
    }
}

impl fmt::Display for PoseFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PoseFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        [PoseFamily::Random]
            .into_iter()
            .chain(PoseFamily::NAMED)
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown pose family `{s}`")))
    }
}

/// Default in-plane viewing yaw: the palm is turned this far from edge-on so
/// finger flexion stays mostly in the image plane.
pub const DEFAULT_VIEW_YAW_DEG: f64 = 35.0;

/// Default wrist position, meters. Puts an open hand near the image center
/// with the default camera.
pub const DEFAULT_POSITION: [f64; 3] = [0.0, 0.08, 0.55];

/// Euler angles for the standard viewing orientation: fingers up in the
/// image, flexion plane close to the image plane, then rotated
/// counterclockwise on screen by `in_plane` radians.
pub fn view_rotation(in_plane: f64, yaw: f64) -> [f64; 3] {
    // local x -> camera +z, local y -> camera -y, local z -> camera +x
    let profile = Rotation3::from_basis_unchecked(&[
        Vector3::new(0.0, 0.0, 1.0),
        Vector3::new(0.0, -1.0, 0.0),
        Vector3::new(1.0, 0.0, 0.0),
    ]);
    let turn = Rotation3::from_axis_angle(&Vector3::y_axis(), yaw);
    // screen counterclockwise is a negative rotation about the camera z axis
    // because image y points down
    let roll = Rotation3::from_axis_angle(&Vector3::z_axis(), -in_plane);
    let (r, p, y) = (roll * turn * profile).euler_angles();
    [r, p, y]
}

pub fn default_view() -> [f64; 3] {
    view_rotation(0.0, DEFAULT_VIEW_YAW_DEG.to_radians())
}

const JITTER_DEG: f64 = 3.0;

fn straight() -> FingerPose {
    deg(0.0, [2.0, 2.0, 2.0])
}

fn bent() -> FingerPose {
    deg(0.0, [85.0, 100.0, 65.0])
}

fn thumb_bent() -> FingerPose {
    deg(0.0, [45.0, 50.0, 60.0])
}

fn deg(abduction: f64, flexion: [f64; 3]) -> FingerPose {
    FingerPose {
        abduction: abduction.to_radians(),
        flexion: flexion.map(f64::to_radians),
    }
}

fn base_angles(family: PoseFamily) -> [FingerPose; 5] {
    use PoseFamily::*;
    let (s, b) = (straight(), bent());
    match family {
        Open => [s, s, s, s, s],
        Fist => [thumb_bent(), b, b, b, b],
        Point => [thumb_bent(), s, b, b, b],
        Victory => [thumb_bent(), s, s, b, b],
        ThumbsUp => [s, b, b, b, b],
        // thumb is solved against the index finger in `sample_pose`
        Ok => [s, deg(0.0, [45.0, 55.0, 35.0]), s, s, s],
        Random => [FingerPose::default(); 5],
    }
}

/// Deterministic pose for `(family, seed)`: the family's canonical angles
/// with a few degrees of jitter, or uniform within joint limits for
/// `Random`. The wrist uses the default view and position, right-handed.
pub fn sample_pose(model: &HandModel, family: PoseFamily, seed: u64) -> PoseParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut fingers = base_angles(family);
    for (p, m) in fingers.iter_mut().zip(&model.fingers) {
        if family == PoseFamily::Random {
            p.abduction = rng.random_range(m.limits.abduction.min..=m.limits.abduction.max);
            for (a, lim) in p.flexion.iter_mut().zip(&m.limits.flexion) {
                *a = rng.random_range(lim.min..=lim.max);
            }
        } else {
            let j = JITTER_DEG.to_radians();
            p.abduction += rng.random_range(-j..=j);
            for a in &mut p.flexion {
                *a += rng.random_range(-j..=j);
            }
        }
    }
    let mut pose = PoseParams {
        fingers,
        rotation: default_view(),
        position: DEFAULT_POSITION,
        handedness: Handedness::Right,
    }
    .clamped(model);
    if family == PoseFamily::Ok {
        pose.fingers[0] = solve_pinch(model, &pose);
    }
    pose
}

fn tip_gap(model: &HandModel, pose: &PoseParams) -> f64 {
    let j = local_joints(model, pose);
    (j[landmark::THUMB_TIP] - j[landmark::INDEX_TIP]).norm()
}

/// Thumb angles bringing the thumb tip onto the index tip. Pattern search
/// within the thumb's joint limits.
fn solve_pinch(model: &HandModel, pose: &PoseParams) -> FingerPose {
    let limits = model.fingers[Finger::Thumb.index()].limits;
    let mut trial = *pose;
    let mut best = deg(-10.0, [30.0, 30.0, 30.0]);
    trial.fingers[0] = best;
    let mut best_gap = tip_gap(model, &trial);
    let mut step = 16f64.to_radians();
    while step > 0.05f64.to_radians() {
        let mut improved = false;
        for axis in 0..4 {
            for sign in [-1.0, 1.0] {
                let mut cand = best;
                if axis == 0 {
                    cand.abduction = limits.abduction.clamp(cand.abduction + sign * step);
                } else {
                    let k = axis - 1;
                    cand.flexion[k] = limits.flexion[k].clamp(cand.flexion[k] + sign * step);
                }
                trial.fingers[0] = cand;
                let gap = tip_gap(model, &trial);
                if gap < best_gap - 1e-12 {
                    best = cand;
                    best_gap = gap;
                    improved = true;
                }
            }
        }
        if !improved {
            step /= 2.0;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_pose() {
        let m = HandModel::default();
        for fam in PoseFamily::NAMED.into_iter().chain([PoseFamily::Random]) {
            assert_eq!(sample_pose(&m, fam, 42), sample_pose(&m, fam, 42));
        }
        assert_ne!(
            sample_pose(&m, PoseFamily::Random, 1),
            sample_pose(&m, PoseFamily::Random, 2)
        );
    }

    #[test]
    fn samples_respect_limits() {
        let m = HandModel::default();
        for seed in 0..200 {
            for fam in PoseFamily::NAMED.into_iter().chain([PoseFamily::Random]) {
                sample_pose(&m, fam, seed).check_limits(&m).unwrap();
            }
        }
    }

    #[test]
    fn ok_pose_pinches() {
        let m = HandModel::default();
        for seed in 0..20 {
            let p = sample_pose(&m, PoseFamily::Ok, seed);
            assert!(tip_gap(&m, &p) < 0.01, "seed {seed}: {}", tip_gap(&m, &p));
        }
    }

    #[test]
    fn family_names_round_trip() {
        for fam in PoseFamily::NAMED {
            assert_eq!(fam.as_str().parse::<PoseFamily>().unwrap(), fam);
        }
        assert!("wave".parse::<PoseFamily>().is_err());
    }

    #[test]
    fn default_view_points_fingers_up() {
        let r = Rotation3::from_euler_angles(default_view()[0], default_view()[1], default_view()[2]);
        let up = r * Vector3::y();
        assert!((up - Vector3::new(0.0, -1.0, 0.0)).norm() < 1e-12);
    }
}
