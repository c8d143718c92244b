//! Probabilistic anchor assignment (PAA) and its teacher-driven form (LAD).
//!
//! For every object the candidate anchors are those overlapping it with
//! IoU >= 0.1. Each candidate is scored as if it were positive,
//! `c = sum_c FL(p^c, 1{c = class}) + (1 - IoU(b, B))`, a two-component GMM is
//! fitted to the object's costs and the low-cost mode becomes positive.
//! LAD runs the same pipeline on a teacher's predictions.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{iou, AnchorGrid, BBox};
use crate::gmm::{fit_gmm2, FitReport};
use crate::losses::focal_loss_dp;

pub const CANDIDATE_IOU: f64 = 0.1;
pub const DEFAULT_GAMMA: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LabeledObject {
    pub class_id: usize,
    pub bbox: BBox,
}

/// Per-anchor network output: post-sigmoid class probabilities and a box.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Prediction {
    pub anchor_id: usize,
    pub probs: Vec<f64>,
    pub bbox: BBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Label {
    Negative,
    Positive(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Assignment {
    pub labels: Vec<Label>,
}

impl Assignment {
    pub fn all_negative(num_anchors: usize) -> Self {
        Self {
            labels: vec![Label::Negative; num_anchors],
        }
    }

    pub fn num_positives(&self) -> usize {
        self.labels
            .iter()
            .filter(|l| matches!(l, Label::Positive(_)))
            .count()
    }

    /// `(anchor_id, object)` pairs in anchor order.
    pub fn positives(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.labels.iter().enumerate().filter_map(|(i, l)| match l {
            Label::Positive(o) => Some((i, *o)),
            Label::Negative => None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Candidate {
    pub anchor_id: usize,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CostTable {
    /// One entry per object, candidates in anchor id order.
    pub objects: Vec<Vec<Candidate>>,
}

impl CostTable {
    pub fn all_costs(&self) -> impl Iterator<Item = f64> + '_ {
        self.objects.iter().flatten().map(|c| c.cost)
    }
}

/// How positives are read off a fitted mixture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum PositiveRule {
    /// Candidates whose cost does not exceed the largest cost that the
    /// mixture assigns to the low-cost component (posterior split).
    #[default]
    Posterior,
    /// Candidates with cost strictly below the low-cost mean.
    BelowMean,
}

/// Cost and GMM stage for one set of predictions, before conflicts are resolved.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CostStage {
    pub costs: CostTable,
    /// `None` for objects without candidates.
    pub fits: Vec<Option<FitReport>>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AssignOutput {
    pub assignment: Assignment,
    pub costs: CostTable,
    pub fits: Vec<Option<FitReport>>,
    /// Objects that had no candidate anchor and therefore no positives.
    pub unmatched_objects: Vec<usize>,
}

/// Anchor ids whose box overlaps the object with IoU >= 0.1, in id order.
pub fn candidate_select(grid: &AnchorGrid, object: &LabeledObject) -> Vec<usize> {
    grid.anchors()
        .iter()
        .filter(|a| iou(&a.bbox, &object.bbox) >= CANDIDATE_IOU)
        .map(|a| a.id)
        .collect()
}

/// Cost of treating `pred` as a positive sample for `object`.
pub fn assignment_cost(pred: &Prediction, object: &LabeledObject, gamma: f64) -> f64 {
    let cls: f64 = pred
        .probs
        .iter()
        .enumerate()
        .map(|(c, &p)| focal_loss_dp(p, c == object.class_id, gamma).0)
        .sum();
    cls + (1.0 - iou(&pred.bbox, &object.bbox))
}

fn check_inputs(preds: &[Prediction], grid: &AnchorGrid, objects: &[LabeledObject], gamma: f64) -> Result<()> {
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(Error::NegativeGamma(gamma));
    }
    if preds.len() != grid.len() {
        return Err(Error::LengthMismatch {
            expected: grid.len(),
            actual: preds.len(),
        });
    }
    if let Some((position, p)) = preds.iter().enumerate().find(|(i, p)| p.anchor_id != *i) {
        return Err(Error::PredictionOrder {
            position,
            anchor_id: p.anchor_id,
        });
    }
    if let Some(first) = preds.first() {
        let num_classes = first.probs.len();
        if let Some(p) = preds.iter().find(|p| p.probs.len() != num_classes) {
            return Err(Error::LengthMismatch {
                expected: num_classes,
                actual: p.probs.len(),
            });
        }
        if let Some(o) = objects.iter().find(|o| o.class_id >= num_classes) {
            return Err(Error::ClassOutOfRange {
                class_id: o.class_id,
                num_classes,
            });
        }
    }
    Ok(())
}

/// Candidate costs and per-object mixture fits.
pub fn cost_stage(preds: &[Prediction], grid: &AnchorGrid, objects: &[LabeledObject], gamma: f64) -> Result<CostStage> {
    check_inputs(preds, grid, objects, gamma)?;
    let mut table = CostTable::default();
    let mut fits = Vec::with_capacity(objects.len());
    for object in objects {
        let cands: Vec<Candidate> = candidate_select(grid, object)
            .into_iter()
            .map(|id| Candidate {
                anchor_id: id,
                cost: assignment_cost(&preds[id], object, gamma),
            })
            .collect();
        let fit = if cands.is_empty() {
            None
        } else {
            let costs: Vec<f64> = cands.iter().map(|c| c.cost).collect();
            Some(fit_gmm2(&costs)?)
        };
        table.objects.push(cands);
        fits.push(fit);
    }
    Ok(CostStage { costs: table, fits })
}

/// Positive candidates of one object given its fit.
pub fn object_positives(cands: &[Candidate], fit: &FitReport, rule: PositiveRule) -> Vec<usize> {
    if fit.degenerate {
        // one candidate, or all costs equal
        return cands.iter().map(|c| c.anchor_id).collect();
    }
    let m = &fit.model;
    match rule {
        PositiveRule::BelowMean => cands
            .iter()
            .filter(|c| c.cost < m.mu1)
            .map(|c| c.anchor_id)
            .collect(),
        PositiveRule::Posterior => {
            let threshold = cands
                .iter()
                .filter(|c| m.favors_first(c.cost))
                .map(|c| c.cost)
                .fold(f64::NEG_INFINITY, f64::max);
            cands
                .iter()
                .filter(|c| c.cost <= threshold)
                .map(|c| c.anchor_id)
                .collect()
        }
    }
}

/// Turns a cost stage into labels. An anchor positive for several objects
/// goes to the one with the lowest cost, ties to the lower object index.
pub fn resolve_assignment(stage: &CostStage, num_anchors: usize, rule: PositiveRule) -> Assignment {
    let mut best: Vec<Option<(f64, usize)>> = vec![None; num_anchors];
    for (obj, (cands, fit)) in stage.costs.objects.iter().zip(&stage.fits).enumerate() {
        let Some(fit) = fit else { continue };
        let pos = object_positives(cands, fit, rule);
        for c in cands.iter().filter(|c| pos.contains(&c.anchor_id)) {
            let slot = &mut best[c.anchor_id];
            match slot {
                Some((cost, _)) if *cost <= c.cost => {}
                _ => *slot = Some((c.cost, obj)),
            }
        }
    }
    Assignment {
        labels: best
            .into_iter()
            .map(|b| match b {
                Some((_, o)) => Label::Positive(o),
                None => Label::Negative,
            })
            .collect(),
    }
}

/// Refits every object of an externally supplied cost table and assigns.
pub fn assign_from_costs(costs: &CostTable, num_anchors: usize, rule: PositiveRule) -> Result<Assignment> {
    let fits = costs
        .objects
        .iter()
        .map(|cands| {
            if cands.is_empty() {
                Ok(None)
            } else {
                let xs: Vec<f64> = cands.iter().map(|c| c.cost).collect();
                fit_gmm2(&xs).map(Some)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let stage = CostStage {
        costs: costs.clone(),
        fits,
    };
    Ok(resolve_assignment(&stage, num_anchors, rule))
}

/// Assembles the full output from a finished cost stage.
pub fn finish(stage: CostStage, num_anchors: usize, rule: PositiveRule) -> AssignOutput {
    let assignment = resolve_assignment(&stage, num_anchors, rule);
    let unmatched_objects = stage
        .costs
        .objects
        .iter()
        .enumerate()
        .filter(|(_, c)| c.is_empty())
        .map(|(i, _)| i)
        .collect();
    AssignOutput {
        assignment,
        costs: stage.costs,
        fits: stage.fits,
        unmatched_objects,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Assigner {
    pub gamma: f64,
    pub rule: PositiveRule,
}

impl Default for Assigner {
    fn default() -> Self {
        Self {
            gamma: DEFAULT_GAMMA,
            rule: PositiveRule::Posterior,
        }
    }
}

impl Assigner {
    pub fn new(gamma: f64) -> Self {
        Self { gamma, ..Self::default() }
    }

    pub fn paa(&self, preds: &[Prediction], grid: &AnchorGrid, objects: &[LabeledObject]) -> Result<AssignOutput> {
        let stage = cost_stage(preds, grid, objects, self.gamma)?;
        Ok(finish(stage, grid.len(), self.rule))
    }

    /// Same pipeline, fed with the teacher's predictions only.
    pub fn lad(&self, teacher_preds: &[Prediction], grid: &AnchorGrid, objects: &[LabeledObject]) -> Result<AssignOutput> {
        self.paa(teacher_preds, grid, objects)
    }
}

pub fn paa_assign(preds: &[Prediction], grid: &AnchorGrid, objects: &[LabeledObject], gamma: f64) -> Result<AssignOutput> {
    Assigner::new(gamma).paa(preds, grid, objects)
}

pub fn lad_assign(
    teacher_preds: &[Prediction],
    grid: &AnchorGrid,
    objects: &[LabeledObject],
    gamma: f64,
) -> Result<AssignOutput> {
    Assigner::new(gamma).lad(teacher_preds, grid, objects)
}
