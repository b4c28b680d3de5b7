//! Oriented hand crops: deriving the rotated hand rectangle from a palm
//! detection or from the previous frame's landmarks, and the affine maps
//! between crop space and image space.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{
    keypoint, landmark, wrap_angle, AxisAlignedBox, Detection, HandLandmarks, Landmark, OrientedRect, Point2,
    NUM_KEYPOINTS,
};

/// Expansion factors for the two ways of deriving a hand rect. The values
/// are tuning defaults, not measured constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CropConfig {
    /// Palm box side to hand rect side.
    pub detection_expand: f64,
    /// Shift of the rect center toward the fingers, in palm box sides.
    pub detection_shift: f64,
    /// Growth of the landmark bounding box.
    pub landmark_expand: f64,
}

impl Default for CropConfig {
    fn default() -> Self {
        Self {
            detection_expand: 2.6,
            detection_shift: 0.5,
            landmark_expand: 1.3,
        }
    }
}

impl CropConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.detection_expand > 0.0 && self.landmark_expand > 0.0) {
            return Err(Error::Config("crop expansion factors must be positive".into()));
        }
        if !self.detection_shift.is_finite() {
            return Err(Error::Config("crop shift must be finite".into()));
        }
        Ok(())
    }
}

/// Rotates the screen-space offset `(dx, dy)` counterclockwise by `angle`
/// as seen on screen (y pointing down).
pub fn rotate_offset(dx: f64, dy: f64, angle: f64) -> (f64, f64) {
    let (s, c) = angle.sin_cos();
    (dx * c + dy * s, -dx * s + dy * c)
}

/// Rotates `p` about `center`, counterclockwise on screen.
pub fn rotate_about(p: Point2, center: Point2, angle: f64) -> Point2 {
    let (dx, dy) = rotate_offset(p.x - center.x, p.y - center.y, angle);
    Point2::new(center.x + dx, center.y + dy)
}

/// Rotation that brings the direction `from -> to` to point straight up.
pub fn hand_angle(from: Point2, to: Point2) -> Result<f64> {
    let dx = to.x - from.x;
    let dy = to.y - from.y;
    if dx.hypot(dy) < 1e-12 {
        return Err(Error::Degenerate(
            "wrist and middle-finger base coincide; hand direction undefined".into(),
        ));
    }
    wrap_angle((-dy).atan2(dx) - FRAC_PI_2)
}

/// Hand rect from a palm detection: oriented along wrist to middle-finger
/// base, shifted toward the fingers and grown to cover the whole hand.
pub fn rect_from_detection(det: &Detection, expand: f64, shift: f64) -> Result<OrientedRect> {
    let wrist = det.keypoints[keypoint::WRIST];
    let middle = det.keypoints[keypoint::MIDDLE_MCP];
    let theta = hand_angle(wrist, middle)?;
    let side = det.side();
    let len = wrist.distance(middle);
    let ux = (middle.x - wrist.x) / len;
    let uy = (middle.y - wrist.y) / len;
    let c = det.bbox.center();
    OrientedRect::new(
        c.x + shift * side * ux,
        c.y + shift * side * uy,
        side * expand,
        side * expand,
        theta,
    )
}

/// Hand rect for the next frame from this frame's landmarks: the tightest
/// box around all 21 points in the hand-aligned frame, grown by `expand`.
pub fn rect_from_landmarks(lm: &HandLandmarks, expand: f64) -> Result<OrientedRect> {
    let origin = lm.point(landmark::WRIST);
    let theta = hand_angle(origin, lm.point(landmark::MIDDLE_MCP))?;
    let local = lm.points.iter().map(|p| {
        let (a, b) = rotate_offset(p.x - origin.x, p.y - origin.y, -theta);
        Point2::new(a, b)
    });
    let b = AxisAlignedBox::bounding(local).expect("21 points");
    let (mut w, mut h) = (b.width(), b.height());
    if w <= 0.0 && h <= 0.0 {
        return Err(Error::Degenerate("all landmarks coincide".into()));
    }
    // collinear landmarks: borrow the other side so the rect stays usable
    if w <= 0.0 {
        w = h;
    } else if h <= 0.0 {
        h = w;
    }
    let lc = b.center();
    let (dx, dy) = rotate_offset(lc.x, lc.y, theta);
    OrientedRect::new(origin.x + dx, origin.y + dy, w * expand, h * expand, theta)
}

/// Square palm box over the wrist and finger bases, with the detector
/// keypoints filled in from the landmarks.
pub fn palm_detection_from_landmarks(lm: &HandLandmarks, score: f64) -> Detection {
    let bbox = AxisAlignedBox::bounding(landmark::PALM.iter().map(|&i| lm.point(i)))
        .expect("palm points")
        .to_square();
    let mut keypoints = [Point2::default(); NUM_KEYPOINTS];
    keypoints[keypoint::WRIST] = lm.point(landmark::WRIST);
    keypoints[keypoint::INDEX_MCP] = lm.point(landmark::INDEX_MCP);
    keypoints[keypoint::MIDDLE_MCP] = lm.point(landmark::MIDDLE_MCP);
    keypoints[keypoint::RING_MCP] = lm.point(landmark::RING_MCP);
    keypoints[keypoint::PINKY_MCP] = lm.point(landmark::PINKY_MCP);
    keypoints[keypoint::THUMB_CMC] = lm.point(landmark::THUMB_CMC);
    keypoints[keypoint::PALM_CENTER] = bbox.center();
    Detection {
        bbox,
        score,
        keypoints,
    }
}

/// Affine map from crop coordinates `[0,1]^2` to normalized image
/// coordinates, with its inverse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropTransform {
    /// Row-major 2x3, crop -> image.
    pub forward: [[f64; 3]; 2],
    /// Row-major 2x3, image -> crop.
    pub inverse: [[f64; 3]; 2],
    /// Rect orientation.
    pub theta: f64,
    /// Crop axis scales (rect width and height).
    pub scale: (f64, f64),
}

pub fn make_crop_transform(rect: &OrientedRect) -> Result<CropTransform> {
    if !(rect.w > 0.0 && rect.h > 0.0) {
        return Err(Error::Degenerate("crop rect has zero size".into()));
    }
    let (s, c) = rect.theta.sin_cos();
    let (w, h) = (rect.w, rect.h);
    // crop (u, v) -> local (a, b) = ((u - .5) w, (v - .5) h) -> rotated -> + center
    let m = [[w * c, h * s], [-w * s, h * c]];
    let t = [
        rect.cx - 0.5 * (m[0][0] + m[0][1]),
        rect.cy - 0.5 * (m[1][0] + m[1][1]),
    ];
    let forward = [[m[0][0], m[0][1], t[0]], [m[1][0], m[1][1], t[1]]];

    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let inv = [
        [m[1][1] / det, -m[0][1] / det],
        [-m[1][0] / det, m[0][0] / det],
    ];
    let inverse = [
        [inv[0][0], inv[0][1], -(inv[0][0] * t[0] + inv[0][1] * t[1])],
        [inv[1][0], inv[1][1], -(inv[1][0] * t[0] + inv[1][1] * t[1])],
    ];
    Ok(CropTransform {
        forward,
        inverse,
        theta: rect.theta,
        scale: (w, h),
    })
}

fn apply(m: &[[f64; 3]; 2], p: Point2) -> Point2 {
    Point2::new(
        m[0][0] * p.x + m[0][1] * p.y + m[0][2],
        m[1][0] * p.x + m[1][1] * p.y + m[1][2],
    )
}

impl CropTransform {
    pub fn identity() -> Self {
        let id = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        Self {
            forward: id,
            inverse: id,
            theta: 0.0,
            scale: (1.0, 1.0),
        }
    }

    pub fn to_image(&self, p: Point2) -> Point2 {
        apply(&self.forward, p)
    }

    pub fn to_crop(&self, p: Point2) -> Point2 {
        apply(&self.inverse, p)
    }

    /// Geometric mean of the axis scales; depth is scaled by this.
    pub fn isotropic_scale(&self) -> f64 {
        (self.scale.0 * self.scale.1).sqrt()
    }

    /// Rotation part of the forward map, with the axis scales divided out.
    pub fn rotation(&self) -> [[f64; 2]; 2] {
        let (sx, sy) = self.scale;
        [
            [self.forward[0][0] / sx, self.forward[0][1] / sy],
            [self.forward[1][0] / sx, self.forward[1][1] / sy],
        ]
    }
}

/// Maps crop-space landmarks into image space. Presence and handedness pass
/// through unchanged.
pub fn landmarks_to_image_space(lm_crop: &HandLandmarks, t: &CropTransform) -> HandLandmarks {
    let s = t.isotropic_scale();
    HandLandmarks {
        points: lm_crop.points.map(|p| {
            let q = t.to_image(p.xy());
            Landmark::new(q.x, q.y, p.z * s)
        }),
        presence: lm_crop.presence,
        handedness: lm_crop.handedness,
    }
}

/// Inverse of [`landmarks_to_image_space`].
pub fn landmarks_to_crop_space(lm_image: &HandLandmarks, t: &CropTransform) -> HandLandmarks {
    let s = t.isotropic_scale();
    HandLandmarks {
        points: lm_image.points.map(|p| {
            let q = t.to_crop(p.xy());
            Landmark::new(q.x, q.y, p.z / s)
        }),
        presence: lm_image.presence,
        handedness: lm_image.handedness,
    }
}
