//! Oracle stand-in for the palm detection network: raw per-anchor outputs
//! synthesized from ground-truth palm boxes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::project::project;
use crate::detector::{encode_boxes, logit, Anchor, BoxOffsets, RawDetectorOutput};
use crate::error::Result;
use crate::types::{box_iou, Detection, HandScene};

/// Score of the anchor responsible for a palm.
pub const POSITIVE_SCORE: f64 = 0.95;
/// Score of anchors overlapping no palm.
pub const BACKGROUND_SCORE: f64 = 0.01;
/// Anchors overlapping a palm below this IoU are background.
pub const NEGATIVE_IOU: f64 = 0.3;
const PARTIAL_LOW: f64 = 0.05;
const PARTIAL_HIGH: f64 = 0.9;

/// Raw detector output for the palms in `scene`. Each palm claims its best
/// unclaimed anchor at [`POSITIVE_SCORE`]; anchors partially overlapping a
/// palm score between 0.05 and 0.9 by IoU and regress toward it; all other
/// anchors score [`BACKGROUND_SCORE`]. Gaussian noise with std `sigma` (in
/// anchor units) perturbs every regression.
pub fn synthesize_raw_output(scene: &HandScene, anchors: &[Anchor], sigma: f64, seed: u64) -> Result<RawDetectorOutput> {
    let palms: Vec<Detection> = project(scene)?.into_iter().map(|p| p.palm).collect();
    synthesize_from_palms(&palms, anchors, sigma, seed)
}

pub fn synthesize_from_palms(palms: &[Detection], anchors: &[Anchor], sigma: f64, seed: u64) -> Result<RawDetectorOutput> {
    let n = anchors.len();
    let mut logits = vec![logit(BACKGROUND_SCORE); n];
    let mut offsets = vec![BoxOffsets::default(); n];
    if palms.is_empty() || n == 0 {
        return Ok(RawDetectorOutput { logits, offsets });
    }

    let ious: Vec<Vec<f64>> = palms
        .iter()
        .map(|p| anchors.iter().map(|a| box_iou(&p.bbox, &a.to_box())).collect())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("finite sigma"));
    let mut perturb = |mut o: BoxOffsets| {
        if let Some(d) = &noise {
            o.dx += d.sample(&mut rng);
            o.dy += d.sample(&mut rng);
            o.ds += d.sample(&mut rng);
            for k in &mut o.keypoints {
                k[0] += d.sample(&mut rng);
                k[1] += d.sample(&mut rng);
            }
        }
        o
    };

    let mut claimed = vec![false; n];
    let mut owners = Vec::with_capacity(palms.len());
    for row in &ious {
        let best = (0..n)
            .filter(|&i| !claimed[i])
            .max_by(|&a, &b| row[a].total_cmp(&row[b]).then(b.cmp(&a)))
            .expect("more anchors than palms");
        claimed[best] = true;
        owners.push(best);
    }

    for i in 0..n {
        if claimed[i] {
            continue;
        }
        let (palm, iou) = ious
            .iter()
            .enumerate()
            .map(|(p, row)| (p, row[i]))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .expect("non-empty palms");
        if iou < NEGATIVE_IOU {
            continue;
        }
        let t = (iou - NEGATIVE_IOU) / (1.0 - NEGATIVE_IOU);
        logits[i] = logit(PARTIAL_LOW + t * (PARTIAL_HIGH - PARTIAL_LOW));
        offsets[i] = perturb(encode_boxes(&palms[palm], &anchors[i])?);
    }
    for (palm, &a) in palms.iter().zip(&owners) {
        logits[a] = logit(POSITIVE_SCORE);
        offsets[a] = perturb(encode_boxes(palm, &anchors[a])?);
    }
    Ok(RawDetectorOutput { logits, offsets })
}
