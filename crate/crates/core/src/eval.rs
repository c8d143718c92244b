//! Average precision and a coarse error breakdown.
//!
//! AP uses greedy matching in descending score order and the all-point
//! interpolated precision envelope. A detection matches the unmatched
//! ground truth of the same scene with the highest IoU (ties to the lower
//! index) when that IoU reaches the threshold.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::geometry::{iou, BBox};

pub const FG_IOU: f64 = 0.5;
pub const BG_IOU: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Detection {
    pub scene: u64,
    pub bbox: BBox,
    pub class_id: usize,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GroundTruth {
    pub scene: u64,
    pub bbox: BBox,
    pub class_id: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ErrorCounts {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub localization_errors: usize,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricsReport {
    pub ap50: f64,
    pub map: f64,
    /// AP at IoU 0.5 per class; `None` when the class has neither gts nor detections.
    pub per_class_ap: Vec<Option<f64>>,
    pub counts: ErrorCounts,
}

/// COCO thresholds 0.50, 0.55, ..., 0.95.
pub fn coco_thresholds() -> [f64; 10] {
    let mut t = [0.0; 10];
    for (i, v) in t.iter_mut().enumerate() {
        *v = (50 + 5 * i as u32) as f64 / 100.0;
    }
    t
}

fn score_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// Greedy matching; returns the matched gt index per detection.
fn match_greedy(dets: &[Detection], gts: &[GroundTruth], order: &[usize], thr: f64) -> Vec<Option<usize>> {
    let mut taken = vec![false; gts.len()];
    let mut matched = vec![None; dets.len()];
    for &d in order {
        let det = &dets[d];
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] || gt.scene != det.scene {
                continue;
            }
            let v = iou(&det.bbox, &gt.bbox);
            if v >= thr && best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
            matched[d] = Some(g);
        }
    }
    matched
}

/// AP of one class. `dets` and `gts` are assumed to share that class.
///
/// Returns `None` when there is nothing to evaluate (no gts, no dets) and
/// `Some(0.0)` for detections without any gt.
pub fn average_precision(dets: &[Detection], gts: &[GroundTruth], iou_threshold: f64) -> Option<f64> {
    if gts.is_empty() {
        return if dets.is_empty() { None } else { Some(0.0) };
    }
    let order = score_order(dets);
    let matched = match_greedy(dets, gts, &order, iou_threshold);

    let mut precision = Vec::with_capacity(order.len());
    let mut is_tp = Vec::with_capacity(order.len());
    let mut tp = 0usize;
    for (rank, &d) in order.iter().enumerate() {
        let hit = matched[d].is_some();
        if hit {
            tp += 1;
        }
        is_tp.push(hit);
        precision.push(tp as f64 / (rank + 1) as f64);
    }
    // precision envelope
    for k in (0..precision.len().saturating_sub(1)).rev() {
        if precision[k + 1] > precision[k] {
            precision[k] = precision[k + 1];
        }
    }
    let sum: f64 = precision
        .iter()
        .zip(&is_tp)
        .filter(|(_, &hit)| hit)
        .map(|(p, _)| *p)
        // an empty f64 sum is -0.0
        .fold(0.0, |a, p| a + p);
    Some(sum / gts.len() as f64)
}

/// TP/FP/FN/localization counts for one class-agnostic pass over all classes.
pub fn error_breakdown(dets: &[Detection], gts: &[GroundTruth], fg_threshold: f64, bg_threshold: f64) -> ErrorCounts {
    let mut counts = ErrorCounts::default();
    let max_class = dets
        .iter()
        .map(|d| d.class_id)
        .chain(gts.iter().map(|g| g.class_id))
        .max();
    let Some(max_class) = max_class else { return counts };
    for class in 0..=max_class {
        let cd: Vec<Detection> = dets.iter().filter(|d| d.class_id == class).copied().collect();
        let cg: Vec<GroundTruth> = gts.iter().filter(|g| g.class_id == class).copied().collect();
        let order = score_order(&cd);
        let matched = match_greedy(&cd, &cg, &order, fg_threshold);
        let mut gt_hit = vec![false; cg.len()];
        for (d, m) in matched.iter().enumerate() {
            match m {
                Some(g) => {
                    counts.true_positives += 1;
                    gt_hit[*g] = true;
                }
                None => {
                    let best = cg
                        .iter()
                        .filter(|g| g.scene == cd[d].scene)
                        .map(|g| iou(&cd[d].bbox, &g.bbox))
                        .fold(0.0, f64::max);
                    if best >= bg_threshold && best < fg_threshold {
                        counts.localization_errors += 1;
                    } else {
                        counts.false_positives += 1;
                    }
                }
            }
        }
        counts.false_negatives += gt_hit.iter().filter(|h| !**h).count();
    }
    counts
}

/// AP50, mAP over the COCO thresholds, per-class AP50 and error counts.
///
/// Classes with neither detections nor ground truth are left out of the means.
pub fn evaluate(dets: &[Detection], gts: &[GroundTruth], num_classes: usize) -> MetricsReport {
    let thresholds = coco_thresholds();
    let mut per_class_ap = Vec::with_capacity(num_classes);
    let mut per_threshold = [0.0f64; 10];
    let mut used = 0usize;
    for class in 0..num_classes {
        let cd: Vec<Detection> = dets.iter().filter(|d| d.class_id == class).copied().collect();
        let cg: Vec<GroundTruth> = gts.iter().filter(|g| g.class_id == class).copied().collect();
        let ap50 = average_precision(&cd, &cg, FG_IOU);
        per_class_ap.push(ap50);
        if ap50.is_none() {
            continue;
        }
        used += 1;
        for (t, thr) in thresholds.iter().enumerate() {
            per_threshold[t] += average_precision(&cd, &cg, *thr).unwrap_or(0.0);
        }
    }
    let (ap50, map) = if used == 0 {
        (0.0, 0.0)
    } else {
        let n = used as f64;
        let means: Vec<f64> = per_threshold.iter().map(|s| s / n).collect();
        (means[0], means.iter().sum::<f64>() / means.len() as f64)
    };
    MetricsReport {
        ap50,
        map,
        per_class_ap,
        counts: error_breakdown(dets, gts, FG_IOU, BG_IOU),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gt(x: f64) -> GroundTruth {
        GroundTruth { scene: 0, bbox: BBox::from_corners(x, 0., x + 4., 4.), class_id: 0 }
    }

    fn det(x: f64, score: f64) -> Detection {
        Detection { scene: 0, bbox: BBox::from_corners(x, 0., x + 4., 4.), class_id: 0, score }
    }

    #[test]
    fn perfect_detections() {
        let gts = [gt(0.), gt(10.), gt(20.)];
        let dets = [det(0., 0.2), det(10., 0.9), det(20., 0.5)];
        assert_eq!(average_precision(&dets, &gts, 0.5), Some(1.0));
        let c = error_breakdown(&dets, &gts, 0.5, 0.1);
        assert_eq!(c, ErrorCounts { true_positives: 3, ..Default::default() });
    }

    #[test]
    fn empty_cases() {
        assert_eq!(average_precision(&[], &[gt(0.)], 0.5), Some(0.0));
        assert_eq!(average_precision(&[det(0., 0.5)], &[], 0.5), Some(0.0));
        assert_eq!(average_precision(&[], &[], 0.5), None);
    }

    #[test]
    fn no_match_is_positive_zero() {
        let ap = average_precision(&[det(50., 0.9)], &[gt(0.)], 0.5).unwrap();
        assert!(ap == 0.0 && ap.is_sign_positive());
        let ap = average_precision(&[], &[gt(0.)], 0.5).unwrap();
        assert!(ap.is_sign_positive());
    }

    #[test]
    fn false_positive_ranked_first() {
        let dets = [det(50., 0.9), det(0., 0.8)];
        assert_eq!(average_precision(&dets, &[gt(0.)], 0.5), Some(0.5));
    }

    #[test]
    fn gt_matched_once() {
        let dets = [det(0., 0.9), det(0., 0.8)];
        let c = error_breakdown(&dets, &[gt(0.)], 0.5, 0.1);
        assert_eq!(c.true_positives, 1);
        assert_eq!(c.false_positives, 1);
        assert_eq!(average_precision(&dets, &[gt(0.)], 0.5), Some(1.0));
    }

    #[test]
    fn localization_band() {
        // [0,4]x[0,4] vs [2.154..,..]: pick x so IoU = 0.3
        // width overlap w: 4w / (32 - 4w) = 0.3 -> w = 9.6 / 5.2
        let w = 9.6 / 5.2;
        let d = det(4.0 - w, 0.7);
        assert!((iou(&d.bbox, &gt(0.).bbox) - 0.3).abs() < 1e-12);
        let c = error_breakdown(&[d], &[gt(0.)], 0.5, 0.1);
        assert_eq!(
            c,
            ErrorCounts { localization_errors: 1, false_negatives: 1, ..Default::default() }
        );
    }

    #[test]
    fn det_on_empty_scene() {
        let c = error_breakdown(&[det(0., 0.5)], &[], 0.5, 0.1);
        assert_eq!(c, ErrorCounts { false_positives: 1, ..Default::default() });
    }

    #[test]
    fn other_scene_never_matches() {
        let mut d = det(0., 0.9);
        d.scene = 3;
        assert_eq!(average_precision(&[d], &[gt(0.)], 0.5), Some(0.0));
    }

    #[test]
    fn evaluate_skips_empty_classes() {
        let report = evaluate(&[det(0., 0.9)], &[gt(0.)], 3);
        assert_eq!(report.per_class_ap, [Some(1.0), None, None]);
        assert_eq!(report.ap50, 1.0);
        assert_eq!(report.map, 1.0);
    }

    #[test]
    fn thresholds() {
        let t = coco_thresholds();
        assert_eq!(t[0], 0.5);
        assert_eq!(t[9], 0.95);
    }
}
