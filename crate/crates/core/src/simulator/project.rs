use crate::crop::palm_detection_from_landmarks;
use crate::error::{Error, Result};
use crate::types::{landmark, Camera, Detection, HandLandmarks, HandScene, Handedness, Landmark, SceneHand};

/// Image-space ground truth for one simulated hand.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedHand {
    /// Presence 1, handedness saturated to the true label.
    pub landmarks: HandLandmarks,
    /// Palm box over the wrist and finger bases, score 1.
    pub palm: Detection,
    pub handedness: Handedness,
}

fn to_pixels(camera: &Camera, p: &[f64; 3]) -> (f64, f64) {
    (
        camera.fx * p[0] / p[2] + camera.cx,
        camera.fy * p[1] / p[2] + camera.cy,
    )
}

/// Pinhole projection of one hand. Depth is measured from the wrist in units
/// of the projected wrist to middle-finger-base length.
pub fn project_hand(camera: &Camera, hand: &SceneHand, hand_index: usize) -> Result<ProjectedHand> {
    if hand.joints3d.len() != crate::types::NUM_LANDMARKS {
        return Err(Error::invalid(format!(
            "hand {hand_index} has {} joints",
            hand.joints3d.len()
        )));
    }
    if let Some(j) = hand.joints3d.iter().position(|p| !(p[2] > 0.0)) {
        return Err(Error::BehindCamera {
            hand: hand_index,
            joint: j,
        });
    }
    let px: Vec<(f64, f64)> = hand.joints3d.iter().map(|p| to_pixels(camera, p)).collect();
    let (wu, wv) = px[landmark::WRIST];
    let (mu, mv) = px[landmark::MIDDLE_MCP];
    let hand_size_px = (mu - wu).hypot(mv - wv);
    if !(hand_size_px > 0.0) {
        return Err(Error::Degenerate(format!(
            "hand {hand_index} palm projects to a point"
        )));
    }
    let wrist_depth = hand.joints3d[landmark::WRIST][2];
    let w = camera.width as f64;
    let h = camera.height as f64;
    let mut points = [Landmark::default(); crate::types::NUM_LANDMARKS];
    for (i, ((u, v), p)) in px.iter().zip(&hand.joints3d).enumerate() {
        let z = if i == landmark::WRIST {
            0.0
        } else {
            (p[2] - wrist_depth) * camera.fx / wrist_depth / hand_size_px
        };
        points[i] = Landmark::new(u / w, v / h, z);
    }
    let p_right = match hand.handedness {
        Handedness::Right => 1.0,
        Handedness::Left => 0.0,
    };
    let landmarks = HandLandmarks::new(points, 1.0, p_right)?;
    let palm = palm_detection_from_landmarks(&landmarks, 1.0);
    Ok(ProjectedHand {
        landmarks,
        palm,
        handedness: hand.handedness,
    })
}

/// Projects every hand in the scene.
pub fn project(scene: &HandScene) -> Result<Vec<ProjectedHand>> {
    scene.camera.validate()?;
    scene
        .hands
        .iter()
        .enumerate()
        .map(|(i, h)| project_hand(&scene.camera, h, i))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::model::{forward_kinematics, HandModel, PoseParams};
    use crate::types::NUM_LANDMARKS;

    #[test]
    fn optical_axis_hits_principal_point() {
        let cam = Camera::default();
        let mut joints = vec![[0.0, 0.0, 0.5]; NUM_LANDMARKS];
        joints[landmark::MIDDLE_MCP] = [0.0, -0.07, 0.5];
        let hand = SceneHand {
            joints3d: joints,
            handedness: Handedness::Right,
        };
        let p = project_hand(&cam, &hand, 0).unwrap();
        assert_eq!(p.landmarks.points[landmark::WRIST], Landmark::new(0.5, 0.5, 0.0));
    }

    #[test]
    fn behind_camera_rejected() {
        let mut joints = vec![[0.0, 0.0, 0.5]; NUM_LANDMARKS];
        joints[7][2] = -0.1;
        let hand = SceneHand {
            joints3d: joints,
            handedness: Handedness::Left,
        };
        assert!(matches!(
            project_hand(&Camera::default(), &hand, 3),
            Err(Error::BehindCamera { hand: 3, joint: 7 })
        ));
    }

    #[test]
    fn doubling_distance_halves_size() {
        let model = HandModel::default();
        let cam = Camera::default();
        let size = |depth: f64| {
            let pose = PoseParams {
                // fingers toward -y so the hand points up in the image
                rotation: [std::f64::consts::PI, 0.0, 0.0],
                position: [0.0, 0.0, depth],
                ..PoseParams::default()
            };
            let hand = SceneHand {
                joints3d: forward_kinematics(&model, &pose).unwrap(),
                handedness: Handedness::Right,
            };
            let p = project_hand(&cam, &hand, 0).unwrap();
            p.landmarks.point(landmark::WRIST).distance(p.landmarks.point(landmark::MIDDLE_TIP))
        };
        assert!((size(1.0) / size(0.5) - 0.5).abs() < 1e-6);
    }
}
