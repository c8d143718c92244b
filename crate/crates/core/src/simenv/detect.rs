use alloc::vec::Vec;

use crate::error::Result;
use crate::eval::{evaluate, Detection, GroundTruth, MetricsReport};
use crate::exec::Executor;
use crate::geometry::{nms, AnchorGrid};

use super::model::{forward, ModelParams};
use super::train::PreparedScene;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalConfig {
    pub nms_iou: f64,
    pub score_floor: f64,
    /// Multiply scores by the IoU head's prediction (when the model has one).
    pub use_iou_head: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            nms_iou: 0.6,
            score_floor: 0.05,
            use_iou_head: false,
        }
    }
}

/// One detection per anchor (best scored class), floor-filtered, then
/// class-wise NMS.
pub fn detect(params: &ModelParams, scene: &PreparedScene, grid: &AnchorGrid, cfg: &EvalConfig) -> Result<Vec<Detection>> {
    let out = forward(params, &scene.features, grid)?;
    let use_iou = cfg.use_iou_head && params.spec.iou_head;
    let mut per_class: Vec<Vec<Detection>> = (0..params.spec.num_classes).map(|_| Vec::new()).collect();
    for (i, b) in out.boxes.iter().enumerate() {
        let row = out.scores_of(i);
        let (class_id, mut score) = row
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (c, &s)| if s > best.1 { (c, s) } else { best });
        if use_iou {
            score *= out.iou_pred[i];
        }
        if score < cfg.score_floor || !b.is_valid() {
            continue;
        }
        per_class[class_id].push(Detection {
            scene: scene.id,
            bbox: *b,
            class_id,
            score,
        });
    }
    let mut dets = Vec::new();
    for cands in per_class {
        let pairs: Vec<_> = cands.iter().map(|d| (d.bbox, d.score)).collect();
        dets.extend(nms(&pairs, cfg.nms_iou).into_iter().map(|k| cands[k]));
    }
    Ok(dets)
}

pub fn ground_truth(scenes: &[PreparedScene]) -> Vec<GroundTruth> {
    scenes
        .iter()
        .flat_map(|s| {
            s.objects.iter().map(move |o| GroundTruth {
                scene: s.id,
                bbox: o.bbox,
                class_id: o.class_id,
            })
        })
        .collect()
}

pub fn evaluate_model<E: Executor>(
    params: &ModelParams,
    scenes: &[PreparedScene],
    grid: &AnchorGrid,
    cfg: &EvalConfig,
    exec: &E,
) -> Result<MetricsReport> {
    let per_scene = exec.map(scenes.len(), |i| detect(params, &scenes[i], grid, cfg));
    let mut dets = Vec::new();
    for d in per_scene {
        dets.extend(d?);
    }
    Ok(evaluate(&dets, &ground_truth(scenes), params.spec.num_classes))
}
