//! Evaluation metrics and the attack-by-defense benchmark matrix.
//!
//! Detection metrics are single-class: greedy one-to-one matching at
//! IoU ≥ 0.5, all-point interpolated average precision, and precision /
//! recall at a fixed confidence threshold. Regression quality is reported
//! as mean signed error (attacked minus clean prediction) binned by the
//! clean prediction into four 20 m ranges.

mod matrix;

pub use matrix::{
    attacked_road_images, attacked_sign_images, cell_manifest, emit_report_csv,
    emit_report_markdown, emit_report_raw, parse_report_raw, run_benchmark_matrix,
    AttackSpec, BenchData, BenchModels, BenchOptions, CellOutcome, ReportTable,
};

use crate::error::{ArwError, Result};
use crate::geometry::Box2;
use crate::models::Detection;

/// Confidence threshold for precision/recall.
pub const PR_CONFIDENCE: f32 = 0.25;
/// IoU threshold for a detection to count as a true positive.
pub const MATCH_IOU: f32 = 0.5;

/// Intersection-over-union of two boxes, in [0,1].
pub fn iou(a: &Box2, b: &Box2) -> Result<f32> {
    if a.w <= 0.0 || a.h <= 0.0 || b.w <= 0.0 || b.h <= 0.0 {
        return Err(ArwError::contract(format!(
            "degenerate box in iou: {a:?} vs {b:?}"
        )));
    }
    let (ax0, ay0, ax1, ay1) = a.corners();
    let (bx0, by0, bx1, by1) = b.corners();
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    Ok(inter / union)
}

/// Greedy matching of score-sorted detections to ground truth. Returns,
/// per detection in global score order, whether it was a true positive.
fn greedy_match(
    detections: &[Vec<Detection>],
    gts: &[Vec<Box2>],
) -> (Vec<(f32, bool)>, usize) {
    assert_eq!(detections.len(), gts.len(), "image count mismatch");
    let total_gt: usize = gts.iter().map(|g| g.len()).sum();

    // flatten with image index, sort by score descending (stable)
    let mut flat: Vec<(usize, &Detection)> = Vec::new();
    for (img, dets) in detections.iter().enumerate() {
        for d in dets {
            flat.push((img, d));
        }
    }
    flat.sort_by(|a, b| {
        b.1.score
            .partial_cmp(&a.1.score)
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let mut used: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
    let mut outcomes = Vec::with_capacity(flat.len());
    for (img, det) in flat {
        let mut best: Option<(usize, f32)> = None;
        for (gi, gt) in gts[img].iter().enumerate() {
            if used[img][gi] {
                continue;
            }
            let overlap = iou(&det.bbox, gt).unwrap_or(0.0);
            if overlap >= MATCH_IOU && best.map_or(true, |(_, b)| overlap > b) {
                best = Some((gi, overlap));
            }
        }
        match best {
            Some((gi, _)) => {
                used[img][gi] = true;
                outcomes.push((det.score, true));
            }
            None => outcomes.push((det.score, false)),
        }
    }
    (outcomes, total_gt)
}

/// All-point interpolated average precision at IoU 0.5.
pub fn average_precision_50(detections: &[Vec<Detection>], gts: &[Vec<Box2>]) -> f32 {
    let (outcomes, total_gt) = greedy_match(detections, gts);
    if total_gt == 0 {
        return 0.0;
    }
    let mut precisions = Vec::with_capacity(outcomes.len());
    let mut recalls = Vec::with_capacity(outcomes.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for (_, is_tp) in &outcomes {
        if *is_tp {
            tp += 1;
        } else {
            fp += 1;
        }
        precisions.push(tp as f64 / (tp + fp) as f64);
        recalls.push(tp as f64 / total_gt as f64);
    }
    // precision envelope from the right
    for i in (0..precisions.len().saturating_sub(1)).rev() {
        precisions[i] = precisions[i].max(precisions[i + 1]);
    }
    let mut ap = 0.0f64;
    let mut prev_recall = 0.0f64;
    for i in 0..recalls.len() {
        if recalls[i] > prev_recall {
            ap += (recalls[i] - prev_recall) * precisions[i];
            prev_recall = recalls[i];
        }
    }
    ap as f32
}

/// Precision and recall at `conf` confidence. When there are neither
/// detections nor ground truths both are 1.0; any other empty numerator
/// yields 0.0.
pub fn precision_recall(
    detections: &[Vec<Detection>],
    gts: &[Vec<Box2>],
    conf: f32,
) -> (f32, f32) {
    let kept: Vec<Vec<Detection>> = detections
        .iter()
        .map(|d| d.iter().filter(|x| x.score >= conf).cloned().collect())
        .collect();
    let (outcomes, total_gt) = greedy_match(&kept, gts);
    let tp = outcomes.iter().filter(|(_, t)| *t).count();
    let n_det = outcomes.len();
    if n_det == 0 && total_gt == 0 {
        return (1.0, 1.0);
    }
    let precision = if n_det == 0 {
        0.0
    } else {
        tp as f32 / n_det as f32
    };
    let recall = if total_gt == 0 {
        0.0
    } else {
        tp as f32 / total_gt as f32
    };
    (precision, recall)
}

/// Detection metrics bundle for one evaluation pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionMetrics {
    pub map50: f32,
    pub precision: f32,
    pub recall: f32,
}

pub fn detection_metrics(detections: &[Vec<Detection>], gts: &[Vec<Box2>]) -> DetectionMetrics {
    DetectionMetrics {
        map50: average_precision_50(detections, gts),
        precision: precision_recall(detections, gts, PR_CONFIDENCE).0,
        recall: precision_recall(detections, gts, PR_CONFIDENCE).1,
    }
}

/// Fixed 20 m bins over the clean prediction: [0,20), [20,40), [40,60),
/// [60,80].
pub const RANGE_BIN_EDGES: [(f32, f32); 4] =
    [(0.0, 20.0), (20.0, 40.0), (40.0, 60.0), (60.0, 80.0)];

/// Mean signed prediction error per clean-prediction range bin.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RangeBinnedError {
    pub sums: [f64; 4],
    pub counts: [usize; 4],
}

impl RangeBinnedError {
    pub fn mean(&self, bin: usize) -> f32 {
        if self.counts[bin] == 0 {
            0.0
        } else {
            (self.sums[bin] / self.counts[bin] as f64) as f32
        }
    }

    pub fn mean_abs_of_means(&self) -> f32 {
        (0..4).map(|b| self.mean(b).abs()).sum::<f32>() / 4.0
    }

    pub fn merge(&mut self, other: &RangeBinnedError) {
        for b in 0..4 {
            self.sums[b] += other.sums[b];
            self.counts[b] += other.counts[b];
        }
    }
}

fn bin_of(clean: f32) -> usize {
    match clean {
        c if c < 20.0 => 0,
        c if c < 40.0 => 1,
        c if c < 60.0 => 2,
        _ => 3,
    }
}

/// Accumulates `conditioned - clean` errors into the bin of each frame's
/// clean prediction. Clean predictions must lie in [0,80].
pub fn binned_signed_error(clean_preds: &[f32], cond_preds: &[f32]) -> Result<RangeBinnedError> {
    if clean_preds.len() != cond_preds.len() {
        return Err(ArwError::contract(format!(
            "binned_signed_error: {} clean vs {} conditioned",
            clean_preds.len(),
            cond_preds.len()
        )));
    }
    let mut out = RangeBinnedError::default();
    for (&clean, &cond) in clean_preds.iter().zip(cond_preds) {
        if !(0.0..=80.0).contains(&clean) {
            return Err(ArwError::contract(format!(
                "clean prediction {clean} outside [0, 80]"
            )));
        }
        let b = bin_of(clean);
        out.sums[b] += (cond - clean) as f64;
        out.counts[b] += 1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(cx: f32, cy: f32, w: f32, h: f32, score: f32) -> Detection {
        Detection {
            bbox: Box2::new(cx, cy, w, h),
            score,
        }
    }

    #[test]
    fn iou_identical_and_disjoint() {
        let a = Box2::new(10.0, 10.0, 4.0, 4.0);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        let b = Box2::new(30.0, 30.0, 4.0, 4.0);
        assert_eq!(iou(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn iou_overlapping_corner_case() {
        // corner boxes (0,0,2,2) and (1,1,3,3) -> intersection 1, union 7
        let a = Box2::from_corners(0.0, 0.0, 2.0, 2.0);
        let b = Box2::from_corners(1.0, 1.0, 3.0, 3.0);
        let v = iou(&a, &b).unwrap();
        assert!((v - 1.0 / 7.0).abs() < 1e-6, "{v}");
    }

    #[test]
    fn iou_degenerate_is_contract_error() {
        let a = Box2::new(1.0, 1.0, 0.0, 2.0);
        let b = Box2::new(1.0, 1.0, 2.0, 2.0);
        assert!(iou(&a, &b).is_err());
    }

    #[test]
    fn ap_single_match_is_one() {
        let gts = vec![vec![Box2::new(10.0, 10.0, 8.0, 8.0)]];
        let dets = vec![vec![det(10.5, 10.0, 8.0, 8.0, 0.9)]];
        // IoU well above 0.5
        assert_eq!(average_precision_50(&dets, &gts), 1.0);
    }

    #[test]
    fn ap_no_detections_is_zero() {
        let gts = vec![vec![Box2::new(10.0, 10.0, 8.0, 8.0)]];
        let dets: Vec<Vec<Detection>> = vec![vec![]];
        assert_eq!(average_precision_50(&dets, &gts), 0.0);
    }

    #[test]
    fn ap_false_positive_first_matches_oracle() {
        // 2 GT in one image, 3 detections; highest-ranked is a false
        // positive. Points: (r=0, p=0), (r=0.5, p=1/2), (r=1, p=2/3).
        // Envelope: p(r<=0.5)=2/3? No: precisions after envelope from
        // right: [2/3, 2/3, 2/3] -> AP = 0.5*2/3 + 0.5*2/3 = 2/3.
        let gts = vec![vec![
            Box2::new(10.0, 10.0, 6.0, 6.0),
            Box2::new(40.0, 40.0, 6.0, 6.0),
        ]];
        let dets = vec![vec![
            det(25.0, 25.0, 6.0, 6.0, 0.95), // FP
            det(10.0, 10.0, 6.0, 6.0, 0.9),  // TP
            det(40.0, 40.0, 6.0, 6.0, 0.8),  // TP
        ]];
        let ap = average_precision_50(&dets, &gts);
        let oracle = brute_force_ap(&dets, &gts);
        assert!((ap - oracle).abs() < 1e-6, "ap={ap} oracle={oracle}");
        assert!((ap - 2.0 / 3.0).abs() < 1e-6);
    }

    /// Independent AP computation: recompute the PR curve from scratch at
    /// every prefix length and integrate the precision envelope.
    pub(crate) fn brute_force_ap(detections: &[Vec<Detection>], gts: &[Vec<Box2>]) -> f32 {
        let total_gt: usize = gts.iter().map(|g| g.len()).sum();
        if total_gt == 0 {
            return 0.0;
        }
        let mut flat: Vec<(usize, Detection)> = Vec::new();
        for (i, dets) in detections.iter().enumerate() {
            for d in dets {
                flat.push((i, d.clone()));
            }
        }
        flat.sort_by(|a, b| b.1.score.partial_cmp(&a.1.score).unwrap());

        // PR point at every prefix, each matched greedily from scratch
        let mut points = Vec::new();
        for k in 1..=flat.len() {
            let mut used: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
            let mut tp = 0usize;
            for (img, d) in &flat[..k] {
                let mut best: Option<(usize, f32)> = None;
                for (gi, gt) in gts[*img].iter().enumerate() {
                    if used[*img][gi] {
                        continue;
                    }
                    let o = iou(&d.bbox, gt).unwrap_or(0.0);
                    if o >= MATCH_IOU && best.map_or(true, |(_, bo)| o > bo) {
                        best = Some((gi, o));
                    }
                }
                if let Some((gi, _)) = best {
                    used[*img][gi] = true;
                    tp += 1;
                }
            }
            points.push((tp as f64 / total_gt as f64, tp as f64 / k as f64));
        }
        let mut ap = 0.0f64;
        let mut prev_r = 0.0f64;
        for i in 0..points.len() {
            let (r, _) = points[i];
            if r > prev_r {
                let p_env = points[i..]
                    .iter()
                    .map(|&(_, p)| p)
                    .fold(0.0f64, f64::max);
                ap += (r - prev_r) * p_env;
                prev_r = r;
            }
        }
        ap as f32
    }

    #[test]
    fn pr_perfect_detections() {
        let gts = vec![vec![Box2::new(10.0, 10.0, 6.0, 6.0)]];
        let dets = vec![vec![det(10.0, 10.0, 6.0, 6.0, 0.9)]];
        assert_eq!(precision_recall(&dets, &gts, 0.25), (1.0, 1.0));
    }

    #[test]
    fn pr_empty_conventions() {
        let no_dets: Vec<Vec<Detection>> = vec![vec![]];
        let no_gts: Vec<Vec<Box2>> = vec![vec![]];
        assert_eq!(precision_recall(&no_dets, &no_gts, 0.25), (1.0, 1.0));
        let some_gts = vec![vec![Box2::new(5.0, 5.0, 4.0, 4.0)]];
        assert_eq!(precision_recall(&no_dets, &some_gts, 0.25), (0.0, 0.0));
    }

    #[test]
    fn pr_mixed_case_hand_counted() {
        // 5 images; GT in first 3. Detections: 2 TP, 1 FP, one GT missed.
        let gts = vec![
            vec![Box2::new(10.0, 10.0, 6.0, 6.0)],
            vec![Box2::new(20.0, 20.0, 6.0, 6.0)],
            vec![Box2::new(30.0, 30.0, 6.0, 6.0)],
            vec![],
            vec![],
        ];
        let dets = vec![
            vec![det(10.0, 10.0, 6.0, 6.0, 0.9)], // TP
            vec![det(20.5, 20.0, 6.0, 6.0, 0.8)], // TP
            vec![],                               // miss
            vec![det(50.0, 50.0, 6.0, 6.0, 0.7)], // FP
            vec![],
        ];
        let (p, r) = precision_recall(&dets, &gts, 0.25);
        assert!((p - 2.0 / 3.0).abs() < 1e-6);
        assert!((r - 2.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn pr_respects_confidence_threshold() {
        let gts = vec![vec![Box2::new(10.0, 10.0, 6.0, 6.0)]];
        let dets = vec![vec![det(10.0, 10.0, 6.0, 6.0, 0.1)]];
        // below conf 0.25 the detection is dropped
        assert_eq!(precision_recall(&dets, &gts, 0.25), (0.0, 0.0));
    }

    #[test]
    fn greedy_matching_never_reuses_a_gt() {
        let gts = vec![vec![Box2::new(10.0, 10.0, 6.0, 6.0)]];
        let dets = vec![vec![
            det(10.0, 10.0, 6.0, 6.0, 0.9),
            det(10.0, 10.0, 6.0, 6.0, 0.8),
        ]];
        let (p, r) = precision_recall(&dets, &gts, 0.25);
        assert_eq!(r, 1.0);
        assert_eq!(p, 0.5); // second duplicate is a false positive
    }

    #[test]
    fn ap_invariant_under_positive_score_rescaling() {
        let gts = vec![vec![
            Box2::new(10.0, 10.0, 6.0, 6.0),
            Box2::new(40.0, 40.0, 6.0, 6.0),
        ]];
        let dets = vec![vec![
            det(25.0, 25.0, 6.0, 6.0, 0.95),
            det(10.0, 10.0, 6.0, 6.0, 0.9),
            det(40.0, 40.0, 6.0, 6.0, 0.8),
        ]];
        let base = average_precision_50(&dets, &gts);
        let rescaled: Vec<Vec<Detection>> = dets
            .iter()
            .map(|v| {
                v.iter()
                    .map(|d| Detection {
                        bbox: d.bbox,
                        score: d.score * 0.37,
                    })
                    .collect()
            })
            .collect();
        assert_eq!(base, average_precision_50(&rescaled, &gts));
    }

    #[test]
    fn binned_error_zero_when_identical() {
        let clean = [10.0, 30.0, 50.0, 70.0];
        let out = binned_signed_error(&clean, &clean).unwrap();
        for b in 0..4 {
            assert_eq!(out.mean(b), 0.0);
            assert_eq!(out.counts[b], 1);
        }
    }

    #[test]
    fn binned_error_hand_case() {
        let out = binned_signed_error(&[10.0, 30.0], &[12.0, 29.0]).unwrap();
        assert_eq!(out.mean(0), 2.0);
        assert_eq!(out.mean(1), -1.0);
        assert_eq!(out.counts[2], 0);
    }

    #[test]
    fn binned_error_length_mismatch() {
        assert!(binned_signed_error(&[10.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn binned_error_out_of_range_clean() {
        assert!(binned_signed_error(&[81.0], &[10.0]).is_err());
        // 80 exactly lands in the last bin
        let out = binned_signed_error(&[80.0], &[70.0]).unwrap();
        assert_eq!(out.counts[3], 1);
        assert_eq!(out.mean(3), -10.0);
    }
}
