//! Static gesture recognition: each finger is classified straight or bent
//! from the summed bend angles along its chain, then the five finger states
//! are looked up in a gesture table.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{landmark, Finger, HandLandmarks};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FingerState {
    Straight,
    Bent,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GestureLabel {
    OpenPalm,
    Fist,
    PointingUp,
    Victory,
    ThumbsUp,
    Ok,
    Unknown,
}

impl GestureLabel {
    pub const ALL: [GestureLabel; 7] = [
        GestureLabel::OpenPalm,
        GestureLabel::Fist,
        GestureLabel::PointingUp,
        GestureLabel::Victory,
        GestureLabel::ThumbsUp,
        GestureLabel::Ok,
        GestureLabel::Unknown,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            GestureLabel::OpenPalm => "OPEN_PALM",
            GestureLabel::Fist => "FIST",
            GestureLabel::PointingUp => "POINTING_UP",
            GestureLabel::Victory => "VICTORY",
            GestureLabel::ThumbsUp => "THUMBS_UP",
            GestureLabel::Ok => "OK",
            GestureLabel::Unknown => "UNKNOWN",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|g| g.as_str() == s)
    }
}

impl fmt::Display for GestureLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-finger states and the accumulated flexion (degrees) behind them,
/// thumb first.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FingerStates {
    pub states: [FingerState; 5],
    pub flexion_deg: [f64; 5],
}

impl FingerStates {
    pub fn get(&self, finger: Finger) -> FingerState {
        self.states[finger.index()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatePattern {
    Straight,
    Bent,
    Any,
}

impl StatePattern {
    fn matches(self, s: FingerState) -> bool {
        match self {
            StatePattern::Any => true,
            StatePattern::Straight => s == FingerState::Straight,
            StatePattern::Bent => s == FingerState::Bent,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GestureRule {
    pub thumb: StatePattern,
    pub index: StatePattern,
    pub middle: StatePattern,
    pub ring: StatePattern,
    pub pinky: StatePattern,
    pub label: GestureLabel,
}

impl GestureRule {
    fn new(p: [StatePattern; 5], label: GestureLabel) -> Self {
        Self {
            thumb: p[0],
            index: p[1],
            middle: p[2],
            ring: p[3],
            pinky: p[4],
            label,
        }
    }

    fn patterns(&self) -> [StatePattern; 5] {
        [self.thumb, self.index, self.middle, self.ring, self.pinky]
    }

    pub fn matches(&self, states: &[FingerState; 5]) -> bool {
        self.patterns().iter().zip(states).all(|(p, s)| p.matches(*s))
    }
}

pub fn default_table() -> Vec<GestureRule> {
    use GestureLabel::*;
    use StatePattern::{Bent as B, Straight as S};
    vec![
        GestureRule::new([S, S, S, S, S], OpenPalm),
        GestureRule::new([B, B, B, B, B], Fist),
        GestureRule::new([B, S, B, B, B], PointingUp),
        GestureRule::new([B, S, S, B, B], Victory),
        GestureRule::new([S, B, B, B, B], ThumbsUp),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GestureConfig {
    /// A finger is straight below this accumulated flexion, degrees.
    pub straight_max_deg: f64,
    /// The thumb's straight limit; thumb chains are never collinear.
    pub thumb_straight_max_deg: f64,
    /// A finger is bent above this accumulated flexion, degrees.
    pub bent_min_deg: f64,
    /// OK needs the thumb and index tips closer than this many palm sizes.
    pub ok_distance_ratio: f64,
    /// First matching row wins.
    pub table: Vec<GestureRule>,
}

impl Default for GestureConfig {
    fn default() -> Self {
        Self {
            straight_max_deg: 60.0,
            thumb_straight_max_deg: 80.0,
            bent_min_deg: 120.0,
            ok_distance_ratio: 0.2,
            table: default_table(),
        }
    }
}

impl GestureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.straight_max_deg <= self.bent_min_deg && self.thumb_straight_max_deg <= self.bent_min_deg) {
            return Err(Error::Config("straight limits must not exceed bent_min_deg".into()));
        }
        if !(self.ok_distance_ratio >= 0.0) {
            return Err(Error::Config("ok_distance_ratio must be non-negative".into()));
        }
        Ok(())
    }
}

/// Sum of the bend angles at the three interior joints of `finger`'s chain,
/// in degrees, from the 2D landmark positions. Invariant to translation,
/// rotation and uniform scaling of the landmarks.
pub fn accumulated_flexion(lm: &HandLandmarks, finger: Finger) -> Result<f64> {
    let chain = finger.chain();
    let mut bones = [(0.0, 0.0); 4];
    for (k, bone) in bones.iter_mut().enumerate() {
        let a = lm.point(chain[k]);
        let b = lm.point(chain[k + 1]);
        let (dx, dy) = (b.x - a.x, b.y - a.y);
        if dx.hypot(dy) < 1e-12 {
            return Err(Error::Degenerate(format!(
                "{} bone {k} has zero length",
                finger.name()
            )));
        }
        *bone = (dx, dy);
    }
    Ok(bones
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            let cross = a.0 * b.1 - a.1 * b.0;
            let dot = a.0 * b.0 + a.1 * b.1;
            cross.abs().atan2(dot).to_degrees()
        })
        .sum())
}

pub fn finger_states(lm: &HandLandmarks, config: &GestureConfig) -> FingerStates {
    let mut states = [FingerState::Unknown; 5];
    let mut flexion_deg = [f64::NAN; 5];
    for f in Finger::ALL {
        let Ok(angle) = accumulated_flexion(lm, f) else {
            continue;
        };
        let straight_max = if f == Finger::Thumb {
            config.thumb_straight_max_deg
        } else {
            config.straight_max_deg
        };
        flexion_deg[f.index()] = angle;
        states[f.index()] = if angle < straight_max {
            FingerState::Straight
        } else if angle > config.bent_min_deg {
            FingerState::Bent
        } else {
            FingerState::Unknown
        };
    }
    FingerStates { states, flexion_deg }
}

/// Maps finger states to a gesture. The OK sign is geometric and checked
/// first, since its curled index is often in the dead band; otherwise any
/// undecided finger yields `Unknown`, and the first matching table row wins.
pub fn classify_gesture(states: &FingerStates, lm: &HandLandmarks, config: &GestureConfig) -> GestureLabel {
    let s = &states.states;
    let relaxed = [Finger::Middle, Finger::Ring, Finger::Pinky]
        .iter()
        .all(|f| s[f.index()] == FingerState::Straight);
    if relaxed {
        let pinch = lm
            .point(landmark::THUMB_TIP)
            .distance(lm.point(landmark::INDEX_TIP));
        if pinch < config.ok_distance_ratio * lm.palm_size() {
            return GestureLabel::Ok;
        }
    }
    if s.contains(&FingerState::Unknown) {
        return GestureLabel::Unknown;
    }
    config
        .table
        .iter()
        .find(|r| r.matches(s))
        .map_or(GestureLabel::Unknown, |r| r.label)
}

pub fn recognize(lm: &HandLandmarks, config: &GestureConfig) -> GestureLabel {
    classify_gesture(&finger_states(lm, config), lm, config)
}
