//! Domain types shared by every stage of the pipeline.
//!
//! Image-space quantities are normalized to `[0, 1]` by the image width and
//! height. Only the simulator's camera space uses meters.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_LANDMARKS: usize = 21;

/// Landmark indices of the 21-point hand topology.
pub mod landmark {
    pub const WRIST: usize = 0;
    pub const THUMB_CMC: usize = 1;
    pub const THUMB_MCP: usize = 2;
    pub const THUMB_IP: usize = 3;
    pub const THUMB_TIP: usize = 4;
    pub const INDEX_MCP: usize = 5;
    pub const INDEX_PIP: usize = 6;
    pub const INDEX_DIP: usize = 7;
    pub const INDEX_TIP: usize = 8;
    pub const MIDDLE_MCP: usize = 9;
    pub const MIDDLE_PIP: usize = 10;
    pub const MIDDLE_DIP: usize = 11;
    pub const MIDDLE_TIP: usize = 12;
    pub const RING_MCP: usize = 13;
    pub const RING_PIP: usize = 14;
    pub const RING_DIP: usize = 15;
    pub const RING_TIP: usize = 16;
    pub const PINKY_MCP: usize = 17;
    pub const PINKY_PIP: usize = 18;
    pub const PINKY_DIP: usize = 19;
    pub const PINKY_TIP: usize = 20;

    pub const NAMES: [&str; super::NUM_LANDMARKS] = [
        "WRIST",
        "THUMB_CMC",
        "THUMB_MCP",
        "THUMB_IP",
        "THUMB_TIP",
        "INDEX_MCP",
        "INDEX_PIP",
        "INDEX_DIP",
        "INDEX_TIP",
        "MIDDLE_MCP",
        "MIDDLE_PIP",
        "MIDDLE_DIP",
        "MIDDLE_TIP",
        "RING_MCP",
        "RING_PIP",
        "RING_DIP",
        "RING_TIP",
        "PINKY_MCP",
        "PINKY_PIP",
        "PINKY_DIP",
        "PINKY_TIP",
    ];

    /// The wrist and the base joint of every finger. These bound the palm.
    pub const PALM: [usize; 6] = [WRIST, THUMB_MCP, INDEX_MCP, MIDDLE_MCP, RING_MCP, PINKY_MCP];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Finger {
    Thumb,
    Index,
    Middle,
    Ring,
    Pinky,
}

impl Finger {
    pub const ALL: [Finger; 5] = [
        Finger::Thumb,
        Finger::Index,
        Finger::Middle,
        Finger::Ring,
        Finger::Pinky,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// The four joints of this finger, base first. The shared wrist root is
    /// not included.
    pub fn joints(self) -> [usize; 4] {
        let base = 1 + 4 * self.index();
        [base, base + 1, base + 2, base + 3]
    }

    /// Wrist followed by the finger's four joints.
    pub fn chain(self) -> [usize; 5] {
        let j = self.joints();
        [landmark::WRIST, j[0], j[1], j[2], j[3]]
    }

    pub fn name(self) -> &'static str {
        match self {
            Finger::Thumb => "thumb",
            Finger::Index => "index",
            Finger::Middle => "middle",
            Finger::Ring => "ring",
            Finger::Pinky => "pinky",
        }
    }
}

/// Parent of each landmark in the skeleton; the wrist has none.
pub fn landmark_parent(index: usize) -> Option<usize> {
    match index {
        0 => None,
        i if (i - 1) % 4 == 0 => Some(landmark::WRIST),
        i => Some(i - 1),
    }
}

/// Skeleton edges `(parent, child)` in landmark order.
pub fn skeleton_edges() -> Vec<(usize, usize)> {
    (1..NUM_LANDMARKS)
        .filter_map(|i| landmark_parent(i).map(|p| (p, i)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Handedness {
    Left,
    Right,
}

impl Handedness {
    /// Label for a `P(Right)` score; ties go to `Right`.
    pub fn from_probability(p_right: f64) -> Self {
        if p_right >= 0.5 {
            Handedness::Right
        } else {
            Handedness::Left
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Handedness::Left => Handedness::Right,
            Handedness::Right => Handedness::Left,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Handedness::Left => "left",
            Handedness::Right => "right",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// A 2.5D landmark: normalized image position plus depth relative to the
/// wrist. Negative `z` is closer to the camera.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Landmark {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Landmark {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn xy(self) -> Point2 {
        Point2::new(self.x, self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// Output of the landmark stage for one hand.
#[derive(Debug, Clone, PartialEq)]
pub struct HandLandmarks {
    pub points: [Landmark; NUM_LANDMARKS],
    /// Probability that a reasonably aligned hand is present in the crop.
    pub presence: f64,
    /// Probability that the hand is a right hand.
    pub handedness: f64,
}

impl HandLandmarks {
    pub fn new(points: [Landmark; NUM_LANDMARKS], presence: f64, handedness: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&presence) {
            return Err(Error::invalid(format!("presence {presence} outside [0, 1]")));
        }
        if !(0.0..=1.0).contains(&handedness) {
            return Err(Error::invalid(format!("handedness {handedness} outside [0, 1]")));
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::invalid(format!("landmark {i} is not finite")));
        }
        Ok(Self {
            points,
            presence,
            handedness,
        })
    }

    pub fn from_slice(points: &[Landmark], presence: f64, handedness: f64) -> Result<Self> {
        let points: [Landmark; NUM_LANDMARKS] = points.try_into().map_err(|_| {
            Error::invalid(format!(
                "expected {NUM_LANDMARKS} landmarks, got {}",
                points.len()
            ))
        })?;
        Self::new(points, presence, handedness)
    }

    pub fn point(&self, index: usize) -> Point2 {
        self.points[index].xy()
    }

    pub fn handedness_label(&self) -> Handedness {
        Handedness::from_probability(self.handedness)
    }

    /// Wrist to middle-finger MCP distance in the image plane.
    pub fn palm_size(&self) -> f64 {
        self.point(landmark::WRIST)
            .distance(self.point(landmark::MIDDLE_MCP))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisAlignedBox {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl AxisAlignedBox {
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Result<Self> {
        if !(xmin <= xmax && ymin <= ymax) {
            return Err(Error::invalid(format!(
                "box ({xmin}, {ymin}, {xmax}, {ymax}) has inverted bounds"
            )));
        }
        Ok(Self {
            xmin,
            ymin,
            xmax,
            ymax,
        })
    }

    pub fn from_center(cx: f64, cy: f64, width: f64, height: f64) -> Self {
        Self {
            xmin: cx - width / 2.0,
            ymin: cy - height / 2.0,
            xmax: cx + width / 2.0,
            ymax: cy + height / 2.0,
        }
    }

    /// Smallest box containing all points. Returns `None` for an empty set.
    pub fn bounding(points: impl IntoIterator<Item = Point2>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let mut b = Self {
            xmin: first.x,
            ymin: first.y,
            xmax: first.x,
            ymax: first.y,
        };
        for p in it {
            b.xmin = b.xmin.min(p.x);
            b.ymin = b.ymin.min(p.y);
            b.xmax = b.xmax.max(p.x);
            b.ymax = b.ymax.max(p.y);
        }
        Some(b)
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> Point2 {
        Point2::new((self.xmin + self.xmax) / 2.0, (self.ymin + self.ymax) / 2.0)
    }

    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.xmin && p.x <= self.xmax && p.y >= self.ymin && p.y <= self.ymax
    }

    /// Square box with side `max(width, height)` sharing this box's center.
    pub fn to_square(&self) -> Self {
        let c = self.center();
        let side = self.width().max(self.height());
        Self::from_center(c.x, c.y, side, side)
    }
}

/// Intersection over union; zero for disjoint or degenerate pairs.
pub fn box_iou(a: &AxisAlignedBox, b: &AxisAlignedBox) -> f64 {
    let iw = (a.xmax.min(b.xmax) - a.xmin.max(b.xmin)).max(0.0);
    let ih = (a.ymax.min(b.ymax) - a.ymin.max(b.ymin)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 || inter <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

pub const NUM_KEYPOINTS: usize = 7;

/// Indices into [`Detection::keypoints`].
pub mod keypoint {
    pub const WRIST: usize = 0;
    pub const INDEX_MCP: usize = 1;
    pub const MIDDLE_MCP: usize = 2;
    pub const RING_MCP: usize = 3;
    pub const PINKY_MCP: usize = 4;
    pub const THUMB_CMC: usize = 5;
    pub const PALM_CENTER: usize = 6;
}

/// A scored square palm box with the keypoints used to orient the hand crop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: AxisAlignedBox,
    pub score: f64,
    pub keypoints: [Point2; NUM_KEYPOINTS],
}

impl Detection {
    pub const SQUARE_TOLERANCE: f64 = 1e-9;

    pub fn new(bbox: AxisAlignedBox, score: f64, keypoints: [Point2; NUM_KEYPOINTS]) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::invalid(format!("detection score {score} outside [0, 1]")));
        }
        if (bbox.width() - bbox.height()).abs() > Self::SQUARE_TOLERANCE {
            return Err(Error::invalid(format!(
                "palm box must be square, got {} x {}",
                bbox.width(),
                bbox.height()
            )));
        }
        Ok(Self {
            bbox,
            score,
            keypoints,
        })
    }

    pub fn side(&self) -> f64 {
        self.bbox.width()
    }

    pub fn is_square(&self) -> bool {
        (self.bbox.width() - self.bbox.height()).abs() <= Self::SQUARE_TOLERANCE
    }
}

/// Rotated hand region. `theta` is the counterclockwise rotation of the hand
/// from pointing straight up in the image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedRect {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub theta: f64,
}

impl OrientedRect {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64, theta: f64) -> Result<Self> {
        if !(w > 0.0 && h > 0.0) {
            return Err(Error::Degenerate(format!("rect size {w} x {h} must be positive")));
        }
        if !(cx.is_finite() && cy.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(Error::invalid("rect has non-finite fields"));
        }
        Ok(Self {
            cx,
            cy,
            w,
            h,
            theta: wrap_angle(theta)?,
        })
    }

    pub fn center(&self) -> Point2 {
        Point2::new(self.cx, self.cy)
    }

    /// Corners in image space, starting top-left of the upright rect and
    /// going clockwise on screen.
    pub fn corners(&self) -> [Point2; 4] {
        let (s, c) = self.theta.sin_cos();
        let hw = self.w / 2.0;
        let hh = self.h / 2.0;
        [(-hw, -hh), (hw, -hh), (hw, hh), (-hw, hh)].map(|(u, v)| {
            // Screen-space counterclockwise rotation with y pointing down.
            Point2::new(self.cx + u * c + v * s, self.cy - u * s + v * c)
        })
    }

    pub fn bounds(&self) -> AxisAlignedBox {
        AxisAlignedBox::bounding(self.corners()).expect("four corners")
    }
}

/// IoU of the axis-aligned bounds of two oriented rects.
pub fn rect_iou(a: &OrientedRect, b: &OrientedRect) -> f64 {
    box_iou(&a.bounds(), &b.bounds())
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> Result<f64> {
    if !theta.is_finite() {
        return Err(Error::invalid(format!("angle {theta} is not finite")));
    }
    let two_pi = 2.0 * PI;
    let mut r = theta.rem_euclid(two_pi);
    if r > PI {
        r -= two_pi;
    }
    // rem_euclid can land on -pi after subtraction only through rounding
    if r <= -PI {
        r += two_pi;
    }
    Ok(r)
}

/// Pinhole intrinsics. Focal lengths and principal point are in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(rename = "w")]
    pub width: u32,
    #[serde(rename = "h")]
    pub height: u32,
}

impl Default for Camera {
    fn default() -> Self {
        Self {
            fx: 600.0,
            fy: 600.0,
            cx: 320.0,
            cy: 320.0,
            width: 640,
            height: 640,
        }
    }
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid("camera focal length must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("camera image size must be positive"));
        }
        Ok(())
    }
}

/// Ground truth for one simulated hand: 21 camera-space joints in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneHand {
    pub joints3d: Vec<[f64; 3]>,
    pub handedness: Handedness,
}

/// One simulated frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandScene {
    #[serde(rename = "t_us")]
    pub timestamp_us: i64,
    pub hands: Vec<SceneHand>,
    pub camera: Camera,
}

impl HandScene {
    pub fn empty(timestamp_us: i64, camera: Camera) -> Self {
        Self {
            timestamp_us,
            hands: Vec::new(),
            camera,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        if self.timestamp_us < 0 {
            return Err(Error::invalid("scene timestamp must be non-negative"));
        }
        for (h, hand) in self.hands.iter().enumerate() {
            if hand.joints3d.len() != NUM_LANDMARKS {
                return Err(Error::invalid(format!(
                    "hand {h} has {} joints, expected {NUM_LANDMARKS}",
                    hand.joints3d.len()
                )));
            }
            if let Some(j) = hand.joints3d.iter().position(|p| !(p[2] > 0.0)) {
                return Err(Error::BehindCamera { hand: h, joint: j });
            }
        }
        Ok(())
    }

    /// Horizontal mirror image of the scene: camera-space x is negated, the
    /// principal point is reflected and every handedness label flips.
    pub fn mirrored(&self) -> Self {
        let mut camera = self.camera;
        camera.cx = camera.width as f64 - camera.cx;
        Self {
            timestamp_us: self.timestamp_us,
            camera,
            hands: self
                .hands
                .iter()
                .map(|h| SceneHand {
                    joints3d: h.joints3d.iter().map(|p| [-p[0], p[1], p[2]]).collect(),
                    handedness: h.handedness.flipped(),
                })
                .collect(),
        }
    }
}
