//! Synthetic ground truth: a 20-bone kinematic hand, pinhole projection,
//! pose families, scripted sequences and the palm-detector oracle.

pub mod model;
pub mod pose;
pub mod project;
pub mod script;
pub mod synth;

pub use model::{forward_kinematics, FingerPose, HandModel, Interval, JointLimits, PoseParams};
pub use pose::{default_view, sample_pose, view_rotation, PoseFamily};
pub use project::{project, project_hand, ProjectedHand};
pub use script::{run_script, EventKind, HandTrackScript, Keyframe, SequenceScript, VisibilityEvent};
pub use synth::synthesize_raw_output;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::types::{box_iou, Camera, HandScene, Handedness, SceneHand};

/// Single-hand scene for `pose` under `camera`.
pub fn scene_from_pose(model: &HandModel, pose: &PoseParams, camera: Camera, timestamp_us: i64) -> Result<HandScene> {
    scenes_from_poses(model, std::slice::from_ref(pose), camera, timestamp_us)
}

pub fn scenes_from_poses(model: &HandModel, poses: &[PoseParams], camera: Camera, timestamp_us: i64) -> Result<HandScene> {
    let hands = poses
        .iter()
        .map(|p| {
            Ok(SceneHand {
                joints3d: forward_kinematics(model, p)?,
                handedness: p.handedness,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let scene = HandScene {
        timestamp_us,
        hands,
        camera,
    };
    scene.validate()?;
    Ok(scene)
}

/// A scene of `n_hands` hands with random named poses, placements, in-plane
/// angles and handedness. Palms lie inside the image and do not overlap.
pub fn random_scene(model: &HandModel, camera: Camera, n_hands: usize, seed: u64, timestamp_us: i64) -> Result<HandScene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ce4_e5ee_d000_0001);
    let mut hands: Vec<SceneHand> = Vec::with_capacity(n_hands);
    let mut palms = Vec::with_capacity(n_hands);
    for index in 0..n_hands {
        let mut placed = false;
        for _ in 0..200 {
            let family = PoseFamily::NAMED[rng.random_range(0..PoseFamily::NAMED.len())];
            let mut pose = sample_pose(model, family, rng.random());
            let in_plane = rng.random_range(-60f64..=60.0).to_radians();
            let yaw = (pose::DEFAULT_VIEW_YAW_DEG + rng.random_range(-10.0..=10.0)).to_radians();
            pose.rotation = view_rotation(in_plane, yaw);
            let depth = rng.random_range(0.45..=0.9);
            pose.position = [rng.random_range(-0.3..=0.3) * depth, rng.random_range(-0.2..=0.35) * depth, depth];
            if rng.random_bool(0.5) {
                pose.handedness = Handedness::Left;
            }
            let hand = SceneHand {
                joints3d: forward_kinematics(model, &pose)?,
                handedness: pose.handedness,
            };
            let Ok(proj) = project_hand(&camera, &hand, index) else {
                continue;
            };
            let inside = proj
                .landmarks
                .points
                .iter()
                .all(|p| (0.02..=0.98).contains(&p.x) && (0.02..=0.98).contains(&p.y));
            if !inside || palms.iter().any(|b| box_iou(b, &proj.palm.bbox) > 0.0) {
                continue;
            }
            palms.push(proj.palm.bbox);
            hands.push(hand);
            placed = true;
            break;
        }
        if !placed {
            return Err(Error::invalid(format!("could not place {n_hands} hands without overlap")));
        }
    }
    let scene = HandScene {
        timestamp_us,
        hands,
        camera,
    };
    scene.validate()?;
    Ok(scene)
}
