//! Detection average precision, palm-normalized landmark error, frame-level
//! evaluation of tracking output, and pipeline benchmarks.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::crop::palm_detection_from_landmarks;
use crate::error::{Error, Result};
use crate::graph::RunOptions;
use crate::io::{round_sig, TrackRecord, SCHEMA};
use crate::pipeline::HandPipeline;
use crate::simulator::project;
use crate::types::{box_iou, landmark, AxisAlignedBox, HandLandmarks, HandScene};

pub const DEFAULT_MATCH_IOU: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    pub bbox: AxisAlignedBox,
    pub score: f64,
}

/// Greedy matching of score-ranked predictions to ground truth. Returns,
/// in rank order, each prediction as `(frame, index)` with the ground-truth
/// index it matched.
pub fn match_ranked(
    preds: &[Vec<ScoredBox>],
    gts: &[Vec<AxisAlignedBox>],
    iou_threshold: f64,
) -> Vec<((usize, usize), Option<usize>)> {
    let mut ranked: Vec<(usize, usize)> = preds
        .iter()
        .enumerate()
        .flat_map(|(f, p)| (0..p.len()).map(move |i| (f, i)))
        .collect();
    // Stable: ties keep frame, then within-frame order.
    ranked.sort_by(|a, b| preds[b.0][b.1].score.total_cmp(&preds[a.0][a.1].score));

    let mut taken: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
    ranked
        .into_iter()
        .map(|(f, i)| {
            let Some(frame_gts) = gts.get(f) else {
                return ((f, i), None);
            };
            let p = &preds[f][i].bbox;
            let mut best: Option<(usize, f64)> = None;
            for (g, b) in frame_gts.iter().enumerate() {
                let iou = box_iou(p, b);
                if !taken[f][g] && iou >= iou_threshold && best.is_none_or(|(_, v)| iou > v) {
                    best = Some((g, iou));
                }
            }
            if let Some((g, _)) = best {
                taken[f][g] = true;
            }
            ((f, i), best.map(|(g, _)| g))
        })
        .collect()
}

/// All-points interpolated area under the precision-recall curve.
/// `preds[f]` and `gts[f]` belong to frame `f`.
pub fn average_precision(preds: &[Vec<ScoredBox>], gts: &[Vec<AxisAlignedBox>], iou_threshold: f64) -> f64 {
    let total_gt: usize = gts.iter().map(Vec::len).sum();
    let total_pred: usize = preds.iter().map(Vec::len).sum();
    if total_gt == 0 {
        return if total_pred == 0 { 1.0 } else { 0.0 };
    }
    let ranked = match_ranked(preds, gts, iou_threshold);
    let mut tp = 0usize;
    let curve: Vec<(f64, f64)> = ranked
        .iter()
        .enumerate()
        .map(|(k, (_, hit))| {
            tp += hit.is_some() as usize;
            (tp as f64 / total_gt as f64, tp as f64 / (k + 1) as f64)
        })
        .collect();

    // Precision envelope from the right.
    let mut envelope = vec![0.0; curve.len()];
    let mut best = 0.0f64;
    for k in (0..curve.len()).rev() {
        best = best.max(curve[k].1);
        envelope[k] = best;
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (k, &(recall, _)) in curve.iter().enumerate() {
        if recall > prev_recall {
            ap += (recall - prev_recall) * envelope[k];
            prev_recall = recall;
        }
    }
    ap
}

/// Mean over the 21 landmarks of the squared 2D error, divided by the
/// squared ground-truth palm size. Multiply by 100 for percent.
pub fn normalized_landmark_error(pred: &HandLandmarks, gt: &HandLandmarks) -> Result<f64> {
    let palm = gt.palm_size();
    if !(palm > 0.0) {
        return Err(Error::Degenerate("ground-truth palm size is zero".into()));
    }
    let sum: f64 = pred
        .points
        .iter()
        .zip(&gt.points)
        .map(|(p, g)| (p.x - g.x).powi(2) + (p.y - g.y).powi(2))
        .sum();
    Ok(sum / pred.points.len() as f64 / (palm * palm))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSummary {
    pub average_precision: f64,
    pub iou_threshold: f64,
    pub predictions: usize,
    pub ground_truth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSummary {
    /// Mean normalized error over matched hands, as a fraction.
    pub mean_normalized_error: f64,
    pub mean_normalized_error_percent: f64,
    pub matched_hands: usize,
    pub missed_hands: usize,
    pub spurious_hands: usize,
    /// Matched hands whose handedness label agrees with ground truth.
    pub handedness_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema: String,
    pub frames: usize,
    pub detection: DetectionSummary,
    pub landmarks: LandmarkSummary,
    pub detector_invocations: usize,
    pub detector_invocation_rate: f64,
}

fn palm_box(lm: &HandLandmarks) -> AxisAlignedBox {
    palm_detection_from_landmarks(lm, lm.presence).bbox
}

/// Ground truth quantized like emitted landmarks, so an exact prediction
/// scores exactly zero.
fn at_output_precision(lm: &HandLandmarks) -> HandLandmarks {
    let mut out = lm.clone();
    for p in &mut out.points {
        p.x = round_sig(p.x);
        p.y = round_sig(p.y);
        p.z = round_sig(p.z);
    }
    out
}

/// Scores tracking output against simulator ground truth. Each tracked
/// hand counts as a palm prediction scored by its presence; hands match
/// ground truth greedily by palm-box IoU.
pub fn evaluate(scenes: &[HandScene], tracks: &[TrackRecord], iou_threshold: f64) -> Result<EvalReport> {
    if scenes.len() != tracks.len() {
        return Err(Error::Mismatch(format!(
            "{} scene frames but {} track frames",
            scenes.len(),
            tracks.len()
        )));
    }
    let mut preds = Vec::with_capacity(scenes.len());
    let mut gts = Vec::with_capacity(scenes.len());
    let (mut err_sum, mut matched, mut missed, mut spurious, mut same_hand) = (0.0, 0usize, 0usize, 0usize, 0usize);
    let mut invocations = 0;

    for (scene, track) in scenes.iter().zip(tracks) {
        if scene.timestamp_us != track.timestamp_us {
            return Err(Error::Mismatch(format!(
                "timestamp mismatch: scene t_us={} vs track t_us={}",
                scene.timestamp_us, track.timestamp_us
            )));
        }
        invocations += track.detector_ran as usize;
        let truth = project(scene)?;
        let predicted = track.landmarks()?;

        let gt_boxes: Vec<AxisAlignedBox> = truth.iter().map(|h| h.palm.bbox).collect();
        let pred_boxes: Vec<ScoredBox> = predicted
            .iter()
            .map(|lm| ScoredBox {
                bbox: palm_box(lm),
                score: lm.presence,
            })
            .collect();

        let frame_preds = std::slice::from_ref(&pred_boxes);
        let frame_gts = std::slice::from_ref(&gt_boxes);
        let mut taken = vec![false; gt_boxes.len()];
        for ((_, p), g) in match_ranked(frame_preds, frame_gts, iou_threshold) {
            let Some(g) = g else {
                spurious += 1;
                continue;
            };
            taken[g] = true;
            err_sum += normalized_landmark_error(&predicted[p], &at_output_precision(&truth[g].landmarks))?;
            matched += 1;
            same_hand += (predicted[p].handedness_label() == truth[g].handedness) as usize;
        }
        missed += taken.iter().filter(|t| !**t).count();
        preds.push(pred_boxes);
        gts.push(gt_boxes);
    }

    let mean = if matched > 0 { err_sum / matched as f64 } else { 0.0 };
    Ok(EvalReport {
        schema: SCHEMA.to_string(),
        frames: scenes.len(),
        detection: DetectionSummary {
            average_precision: average_precision(&preds, &gts, iou_threshold),
            iou_threshold,
            predictions: preds.iter().map(Vec::len).sum(),
            ground_truth: gts.iter().map(Vec::len).sum(),
        },
        landmarks: LandmarkSummary {
            mean_normalized_error: mean,
            mean_normalized_error_percent: mean * 100.0,
            matched_hands: matched,
            missed_hands: missed,
            spurious_hands: spurious,
            handedness_accuracy: if matched > 0 { same_hand as f64 / matched as f64 } else { 1.0 },
        },
        detector_invocations: invocations,
        detector_invocation_rate: if scenes.is_empty() { 0.0 } else { invocations as f64 / scenes.len() as f64 },
    })
}

/// Expected normalized error for isotropic Gaussian noise of `sigma` per
/// axis on every landmark.
pub fn expected_normalized_error(sigma: f64, palm_size: f64) -> f64 {
    2.0 * sigma * sigma / (palm_size * palm_size)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub fired: usize,
    pub p50_us: f64,
    pub p95_us: f64,
    pub mean_us: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema: String,
    pub frames: usize,
    pub repetitions: usize,
    pub gating: bool,
    pub detector_invocations: usize,
    pub detector_invocation_rate: f64,
    pub frames_per_second: f64,
    pub stages: BTreeMap<String, StageTiming>,
}

/// Nearest-rank percentile of an unsorted sample.
pub fn percentile(samples: &[Duration], q: f64) -> Duration {
    if samples.is_empty() {
        return Duration::ZERO;
    }
    let mut s = samples.to_vec();
    s.sort();
    let rank = ((q / 100.0) * s.len() as f64).ceil().max(1.0) as usize;
    s[rank.min(s.len()) - 1]
}

fn micros(d: Duration) -> f64 {
    d.as_secs_f64() * 1e6
}

/// Runs `pipeline` over `frames` `repetitions` times on one worker thread
/// and summarizes stage latencies and throughput.
pub fn bench_pipeline(pipeline: &HandPipeline, frames: &[HandScene], repetitions: usize) -> Result<BenchReport> {
    let options = RunOptions {
        threads: 1,
        ..RunOptions::default()
    };
    let repetitions = repetitions.max(1);
    let mut samples: BTreeMap<String, Vec<Duration>> = BTreeMap::new();
    let mut invocations = 0;
    let mut elapsed = Duration::ZERO;
    for _ in 0..repetitions {
        let t0 = Instant::now();
        let run = pipeline.run(frames, &options)?;
        elapsed += t0.elapsed();
        invocations = run.frames.iter().filter(|f| f.report.detector_ran).count();
        for node in &run.graph.nodes {
            samples.entry(node.name.clone()).or_default().extend(&node.durations);
        }
    }
    let stages = samples
        .into_iter()
        .map(|(name, d)| {
            let mean = if d.is_empty() {
                0.0
            } else {
                d.iter().map(|x| micros(*x)).sum::<f64>() / d.len() as f64
            };
            (
                name,
                StageTiming {
                    fired: d.len() / repetitions,
                    p50_us: micros(percentile(&d, 50.0)),
                    p95_us: micros(percentile(&d, 95.0)),
                    mean_us: mean,
                },
            )
        })
        .collect();
    let total_frames = frames.len() * repetitions;
    Ok(BenchReport {
        schema: SCHEMA.to_string(),
        frames: frames.len(),
        repetitions,
        gating: pipeline.components().tracker.gating,
        detector_invocations: invocations,
        detector_invocation_rate: if frames.is_empty() { 0.0 } else { invocations as f64 / frames.len() as f64 },
        frames_per_second: if elapsed.is_zero() { 0.0 } else { total_frames as f64 / elapsed.as_secs_f64() },
        stages,
    })
}

/// Wrist-relative depth check used by tests and the CLI.
pub fn wrist_depth_is_zero(lm: &HandLandmarks) -> bool {
    lm.points[landmark::WRIST].z == 0.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Landmark;

    fn bx(x: f64, y: f64, s: f64) -> AxisAlignedBox {
        AxisAlignedBox::new(x, y, x + s, y + s).unwrap()
    }

    #[test]
    fn ap_trivial_cases() {
        let g = vec![vec![bx(0.1, 0.1, 0.2)]];
        let exact = vec![vec![ScoredBox {
            bbox: bx(0.1, 0.1, 0.2),
            score: 0.9,
        }]];
        assert_eq!(average_precision(&exact, &g, 0.5), 1.0);
        assert_eq!(average_precision(&[vec![]], &g, 0.5), 0.0);
        assert_eq!(average_precision(&[vec![]], &[vec![]], 0.5), 1.0);
        assert_eq!(average_precision(&exact, &[vec![]], 0.5), 0.0);
    }

    #[test]
    fn ap_false_positive_ranked_first() {
        // FP at rank 1, TP at rank 2: precision 1/2 at full recall.
        let g = vec![vec![bx(0.1, 0.1, 0.2)]];
        let p = vec![vec![
            ScoredBox {
                bbox: bx(0.6, 0.6, 0.2),
                score: 0.9,
            },
            ScoredBox {
                bbox: bx(0.1, 0.1, 0.2),
                score: 0.8,
            },
        ]];
        assert!((average_precision(&p, &g, 0.5) - 0.5).abs() < 1e-12);
    }

    fn hand(offset: f64) -> HandLandmarks {
        let mut pts = [Landmark::default(); 21];
        for (i, p) in pts.iter_mut().enumerate() {
            *p = Landmark::new(0.3 + 0.01 * i as f64 + offset, 0.5 - 0.01 * i as f64, 0.0);
        }
        pts[landmark::WRIST] = Landmark::new(0.5 + offset, 0.8, 0.0);
        pts[landmark::MIDDLE_MCP] = Landmark::new(0.5 + offset, 0.6, 0.0);
        HandLandmarks::new(pts, 1.0, 1.0).unwrap()
    }

    #[test]
    fn normalized_error_examples() {
        let gt = hand(0.0);
        assert_eq!(normalized_landmark_error(&gt, &gt).unwrap(), 0.0);
        let shifted = hand(0.2);
        assert!((normalized_landmark_error(&shifted, &gt).unwrap() - 1.0).abs() < 1e-12);
        let mut flat = gt.clone();
        flat.points[landmark::MIDDLE_MCP] = flat.points[landmark::WRIST];
        assert!(normalized_landmark_error(&gt, &flat).is_err());
    }

    #[test]
    fn percentile_nearest_rank() {
        let d: Vec<Duration> = (1..=20).map(Duration::from_micros).collect();
        assert_eq!(percentile(&d, 50.0), Duration::from_micros(10));
        assert_eq!(percentile(&d, 95.0), Duration::from_micros(19));
        assert_eq!(percentile(&[], 50.0), Duration::ZERO);
    }
}
