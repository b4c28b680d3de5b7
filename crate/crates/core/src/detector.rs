//! Single-shot palm detection geometry: square anchors, box regression
//! decoding, non-maximum suppression and the focal loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{box_iou, AxisAlignedBox, Detection, Point2, NUM_KEYPOINTS};

/// One feature-map layer of the anchor grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorLayer {
    /// Feature-map stride in input pixels.
    pub stride: u32,
    /// One anchor per scale per grid cell. Anchor side is
    /// `scale * stride / input_size`.
    pub scales: Vec<f64>,
}

impl AnchorLayer {
    pub fn anchors_per_cell(&self) -> usize {
        self.scales.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorConfig {
    /// Square network input size in pixels.
    pub input_size: u32,
    pub layers: Vec<AnchorLayer>,
}

impl Default for AnchorConfig {
    /// 192 px input; stride 8 with two scales and stride 16 with a
    /// geometric ladder of six, 2016 anchors in total.
    fn default() -> Self {
        Self {
            input_size: 192,
            layers: vec![
                AnchorLayer {
                    stride: 8,
                    scales: vec![1.0, 1.4],
                },
                AnchorLayer {
                    stride: 16,
                    scales: vec![1.0, 1.26, 1.59, 2.0, 2.52, 3.17],
                },
            ],
        }
    }
}

impl AnchorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 {
            return Err(Error::Config("anchor input_size must be positive".into()));
        }
        if self.layers.is_empty() {
            return Err(Error::Config("anchor config has no layers".into()));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.stride == 0 || self.input_size % layer.stride != 0 {
                return Err(Error::Config(format!(
                    "layer {i}: stride {} does not divide input size {}",
                    layer.stride, self.input_size
                )));
            }
            if layer.scales.is_empty() {
                return Err(Error::Config(format!("layer {i}: needs at least one anchor per cell")));
            }
            if layer.scales.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
                return Err(Error::Config(format!("layer {i}: anchor scales must be positive")));
            }
        }
        Ok(())
    }

    /// Grid side length of each layer.
    fn grid(&self, layer: &AnchorLayer) -> u32 {
        self.input_size / layer.stride
    }
}

/// A square prior box in normalized coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub cx: f64,
    pub cy: f64,
    pub side: f64,
}

impl Anchor {
    pub fn to_box(&self) -> AxisAlignedBox {
        AxisAlignedBox::from_center(self.cx, self.cy, self.side, self.side)
    }
}

/// Square-only anchors, row-major per layer, scales innermost.
pub fn generate_anchors(config: &AnchorConfig) -> Result<Vec<Anchor>> {
    config.validate()?;
    let input = config.input_size as f64;
    let mut anchors = Vec::new();
    for layer in &config.layers {
        let n = config.grid(layer);
        let stride = layer.stride as f64;
        for row in 0..n {
            for col in 0..n {
                let cx = (col as f64 + 0.5) * stride / input;
                let cy = (row as f64 + 0.5) * stride / input;
                for scale in &layer.scales {
                    anchors.push(Anchor {
                        cx,
                        cy,
                        side: scale * stride / input,
                    });
                }
            }
        }
    }
    Ok(anchors)
}

/// Conventional multi-aspect-ratio anchors over the same grid and scales:
/// every scale is emitted once per aspect ratio with `w/h = ratio` and area
/// equal to the square anchor's. Used to measure what square-only anchors
/// save.
pub fn generate_aspect_anchors(config: &AnchorConfig, aspect_ratios: &[f64]) -> Result<Vec<AxisAlignedBox>> {
    if aspect_ratios.is_empty() || aspect_ratios.iter().any(|r| !(*r > 0.0)) {
        return Err(Error::Config("aspect ratios must be positive and non-empty".into()));
    }
    let squares = generate_anchors(config)?;
    let mut boxes = Vec::with_capacity(squares.len() * aspect_ratios.len());
    for a in &squares {
        for r in aspect_ratios {
            let k = r.sqrt();
            boxes.push(AxisAlignedBox::from_center(a.cx, a.cy, a.side * k, a.side / k));
        }
    }
    Ok(boxes)
}

/// Box and keypoint regression targets for one anchor, in units of the
/// anchor side. `ds` is the log side ratio.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BoxOffsets {
    pub dx: f64,
    pub dy: f64,
    pub ds: f64,
    pub keypoints: [[f64; 2]; NUM_KEYPOINTS],
}

/// Raw per-anchor detector outputs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RawDetectorOutput {
    pub logits: Vec<f64>,
    pub offsets: Vec<BoxOffsets>,
}

impl RawDetectorOutput {
    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`sigmoid`] for `p` in `(0, 1)`.
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Decodes one anchor's regression into a detection.
pub fn decode_box(offsets: &BoxOffsets, anchor: &Anchor, score: f64) -> Detection {
    let cx = anchor.cx + offsets.dx * anchor.side;
    let cy = anchor.cy + offsets.dy * anchor.side;
    let side = anchor.side * offsets.ds.exp();
    let keypoints = offsets
        .keypoints
        .map(|[kx, ky]| Point2::new(anchor.cx + kx * anchor.side, anchor.cy + ky * anchor.side));
    Detection {
        bbox: AxisAlignedBox::from_center(cx, cy, side, side),
        score,
        keypoints,
    }
}

/// Decodes all anchors and drops detections scoring below `score_threshold`.
pub fn decode_boxes(raw: &RawDetectorOutput, anchors: &[Anchor], score_threshold: f64) -> Result<Vec<Detection>> {
    if raw.logits.len() != anchors.len() {
        return Err(Error::LengthMismatch {
            what: "detector logits vs anchors",
            expected: anchors.len(),
            actual: raw.logits.len(),
        });
    }
    if raw.offsets.len() != anchors.len() {
        return Err(Error::LengthMismatch {
            what: "detector offsets vs anchors",
            expected: anchors.len(),
            actual: raw.offsets.len(),
        });
    }
    Ok(raw
        .logits
        .iter()
        .zip(&raw.offsets)
        .zip(anchors)
        .filter_map(|((&l, off), anchor)| {
            let score = sigmoid(l);
            (score >= score_threshold).then(|| decode_box(off, anchor, score))
        })
        .collect())
}

/// Regression targets that make `decode_box` reproduce `gt` from `anchor`.
pub fn encode_boxes(gt: &Detection, anchor: &Anchor) -> Result<BoxOffsets> {
    if !(anchor.side > 0.0) {
        return Err(Error::Degenerate("anchor side must be positive".into()));
    }
    if !gt.is_square() || !(gt.side() > 0.0) {
        return Err(Error::invalid("ground-truth palm box must be a non-empty square"));
    }
    let c = gt.bbox.center();
    Ok(BoxOffsets {
        dx: (c.x - anchor.cx) / anchor.side,
        dy: (c.y - anchor.cy) / anchor.side,
        ds: (gt.side() / anchor.side).ln(),
        keypoints: gt
            .keypoints
            .map(|k| [(k.x - anchor.cx) / anchor.side, (k.y - anchor.cy) / anchor.side]),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NmsMode {
    /// Hard greedy suppression.
    #[default]
    Greedy,
    /// Kept boxes are replaced by the score-weighted mean of the cluster
    /// they suppressed.
    Weighted,
}

/// Greedy NMS. Scores sort descending with ties kept in input order; a
/// detection survives iff its IoU with every kept detection is below
/// `iou_threshold`.
pub fn non_max_suppression(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    non_max_suppression_with(dets, iou_threshold, NmsMode::Greedy)
}

pub fn non_max_suppression_with(dets: &[Detection], iou_threshold: f64, mode: NmsMode) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    // sort_by is stable, so equal scores keep input order
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));

    let mut kept: Vec<Detection> = Vec::new();
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for i in order {
        let d = &dets[i];
        match kept
            .iter()
            .position(|k| box_iou(&k.bbox, &d.bbox) >= iou_threshold)
        {
            None => {
                kept.push(*d);
                clusters.push(vec![i]);
            }
            Some(j) => clusters[j].push(i),
        }
    }
    if mode == NmsMode::Weighted {
        for (k, members) in kept.iter_mut().zip(&clusters) {
            *k = blend(dets, members, k.score);
        }
    }
    kept
}

fn blend(dets: &[Detection], members: &[usize], score: f64) -> Detection {
    let total: f64 = members.iter().map(|&i| dets[i].score).sum();
    if total <= 0.0 {
        return dets[members[0]];
    }
    let mut cx = 0.0;
    let mut cy = 0.0;
    let mut side = 0.0;
    let mut kps = [Point2::default(); NUM_KEYPOINTS];
    for &i in members {
        let w = dets[i].score / total;
        let c = dets[i].bbox.center();
        cx += w * c.x;
        cy += w * c.y;
        side += w * dets[i].side();
        for (acc, k) in kps.iter_mut().zip(&dets[i].keypoints) {
            acc.x += w * k.x;
            acc.y += w * k.y;
        }
    }
    Detection {
        bbox: AxisAlignedBox::from_center(cx, cy, side, side),
        score,
        keypoints: kps,
    }
}

pub const FOCAL_EPSILON: f64 = 1e-7;
pub const DEFAULT_FOCAL_ALPHA: f64 = 0.25;
pub const DEFAULT_FOCAL_GAMMA: f64 = 2.0;

fn clamp_probability(p: f64) -> f64 {
    p.clamp(FOCAL_EPSILON, 1.0 - FOCAL_EPSILON)
}

/// Binary cross entropy of probability `p` against label `positive`.
pub fn cross_entropy(p: f64, positive: bool) -> f64 {
    let p = clamp_probability(p);
    let pt = if positive { p } else { 1.0 - p };
    -pt.ln()
}

/// `-alpha * (1 - p_t)^gamma * ln(p_t)` where `p_t` is the probability
/// assigned to the true class. `p` is clamped to `[eps, 1 - eps]`.
pub fn focal_loss(p: f64, positive: bool, alpha: f64, gamma: f64) -> f64 {
    let p = clamp_probability(p);
    let pt = if positive { p } else { 1.0 - p };
    -alpha * (1.0 - pt).powf(gamma) * pt.ln()
}

/// Mean focal loss over a batch of anchor predictions.
pub fn mean_focal_loss(probs: &[f64], labels: &[bool], alpha: f64, gamma: f64) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::LengthMismatch {
            what: "focal loss labels",
            expected: probs.len(),
            actual: labels.len(),
        });
    }
    if probs.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| focal_loss(p, y, alpha, gamma))
        .sum();
    Ok(sum / probs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(cx: f64, cy: f64, side: f64, score: f64) -> Detection {
        Detection {
            bbox: AxisAlignedBox::from_center(cx, cy, side, side),
            score,
            keypoints: [Point2::new(cx, cy); NUM_KEYPOINTS],
        }
    }

    #[test]
    fn tiny_grid() {
        let cfg = AnchorConfig {
            input_size: 2,
            layers: vec![AnchorLayer {
                stride: 1,
                scales: vec![1.0],
            }],
        };
        let a = generate_anchors(&cfg).unwrap();
        let centers: Vec<(f64, f64)> = a.iter().map(|a| (a.cx, a.cy)).collect();
        assert_eq!(
            centers,
            vec![(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)]
        );
    }

    #[test]
    fn bad_stride_rejected() {
        let cfg = AnchorConfig {
            input_size: 192,
            layers: vec![AnchorLayer {
                stride: 7,
                scales: vec![1.0],
            }],
        };
        assert!(matches!(generate_anchors(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn identity_decode_and_zero_logit() {
        let anchor = Anchor {
            cx: 0.3,
            cy: 0.6,
            side: 0.1,
        };
        let raw = RawDetectorOutput {
            logits: vec![40.0],
            offsets: vec![BoxOffsets::default()],
        };
        let d = decode_boxes(&raw, &[anchor], 0.5).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].bbox, anchor.to_box());
        assert!(d[0].score > 1.0 - 1e-12);
        assert_eq!(sigmoid(0.0), 0.5);

        let zero = RawDetectorOutput {
            logits: vec![0.0],
            offsets: vec![BoxOffsets::default()],
        };
        assert_eq!(decode_boxes(&zero, &[anchor], 0.0).unwrap()[0].score, 0.5);
    }

    #[test]
    fn decode_length_mismatch() {
        let raw = RawDetectorOutput {
            logits: vec![0.0; 3],
            offsets: vec![BoxOffsets::default(); 3],
        };
        assert!(matches!(
            decode_boxes(&raw, &[], 0.5),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn encode_identity_and_log_side() {
        let anchor = Anchor {
            cx: 0.4,
            cy: 0.4,
            side: 0.2,
        };
        let same = det(0.4, 0.4, 0.2, 1.0);
        let o = encode_boxes(&same, &anchor).unwrap();
        assert!(o.dx.abs() < 1e-12 && o.dy.abs() < 1e-12 && o.ds.abs() < 1e-12);
        let bigger = det(0.4, 0.4, 0.2 * std::f64::consts::E, 1.0);
        assert!((encode_boxes(&bigger, &anchor).unwrap().ds - 1.0).abs() < 1e-12);
        let degenerate = Anchor { side: 0.0, ..anchor };
        assert!(encode_boxes(&same, &degenerate).is_err());
    }

    #[test]
    fn nms_basics() {
        let a = det(0.5, 0.5, 0.2, 0.9);
        assert_eq!(non_max_suppression(&[a], 0.5), vec![a]);
        let b = det(0.5, 0.5, 0.2, 0.8);
        assert_eq!(non_max_suppression(&[b, a], 0.5), vec![a]);
        assert!(non_max_suppression(&[], 0.5).is_empty());
    }

    #[test]
    fn nms_ties_keep_input_order() {
        let a = det(0.5, 0.5, 0.2, 0.7);
        let b = det(0.51, 0.5, 0.2, 0.7);
        assert_eq!(non_max_suppression(&[b, a], 0.3), vec![b]);
    }

    #[test]
    fn weighted_nms_blends_cluster() {
        let a = det(0.50, 0.5, 0.2, 0.75);
        let b = det(0.52, 0.5, 0.2, 0.25);
        let out = non_max_suppression_with(&[a, b], 0.3, NmsMode::Weighted);
        assert_eq!(out.len(), 1);
        assert!((out[0].bbox.center().x - 0.505).abs() < 1e-12);
        assert_eq!(out[0].score, 0.75);
        assert!(out[0].is_square());
    }

    #[test]
    fn focal_loss_examples() {
        assert!((focal_loss(0.5, true, 1.0, 0.0) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(focal_loss(1.0 - FOCAL_EPSILON, true, 0.25, 2.0) < 1e-12);
        let expected = 0.25 * 0.1f64.powi(2) * -(0.9f64.ln());
        assert!((focal_loss(0.9, true, 0.25, 2.0) - expected).abs() < 1e-15);
        assert!((expected - 2.634e-4).abs() < 1e-7);
        // clamped, not infinite
        assert!(focal_loss(0.0, true, 1.0, 0.0).is_finite());
    }
}
