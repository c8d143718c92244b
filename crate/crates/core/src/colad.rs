//! Co-learning controller: two networks, one dynamic teacher per iteration.
//!
//! Each network's predictions go through the cost and GMM stage. The
//! network whose costs separate more clearly becomes the teacher and its
//! assignment labels both networks for that iteration.

use alloc::vec::Vec;
use libm::sqrt;

use crate::assign::{cost_stage, finish, AssignOutput, CostStage, LabeledObject, PositiveRule, Prediction};
use crate::error::{Error, Result};
use crate::geometry::AnchorGrid;
use crate::gmm::fisher_score;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum SwitchCriterion {
    #[default]
    StdOverMean,
    Fisher,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum NetworkId {
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RoleDecision {
    pub teacher: NetworkId,
    pub score_a: f64,
    pub score_b: f64,
    pub criterion: SwitchCriterion,
    pub iteration: usize,
}

/// Coefficient of variation (population std over mean). Zero mean gives 0.
pub fn std_over_mean(costs: &[f64]) -> Result<f64> {
    if costs.is_empty() {
        return Err(Error::EmptySamples);
    }
    let n = costs.len() as f64;
    let mean = costs.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return Ok(0.0);
    }
    let var = costs.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / n;
    Ok((sqrt(var) / mean).abs())
}

/// Score of one network over any number of cost stages (e.g. a batch of scenes).
///
/// Fisher averages the per-object scores of non-degenerate fits;
/// Std/Mean pools every candidate cost. No usable object scores 0.
pub fn network_score<'a, I>(stages: I, criterion: SwitchCriterion) -> f64
where
    I: IntoIterator<Item = &'a CostStage>,
{
    match criterion {
        SwitchCriterion::Fisher => {
            let mut sum = 0.0;
            let mut count = 0usize;
            for stage in stages {
                for fit in stage.fits.iter().flatten().filter(|f| !f.degenerate) {
                    sum += fisher_score(&fit.model);
                    count += 1;
                }
            }
            if count == 0 {
                0.0
            } else {
                sum / count as f64
            }
        }
        SwitchCriterion::StdOverMean => {
            let costs: Vec<f64> = stages.into_iter().flat_map(|s| s.costs.all_costs()).collect();
            std_over_mean(&costs).unwrap_or(0.0)
        }
    }
}

/// Higher score teaches; ties go to network A.
pub fn choose_teacher(score_a: f64, score_b: f64) -> NetworkId {
    if score_b > score_a {
        NetworkId::B
    } else {
        NetworkId::A
    }
}

pub fn decide<'a, I, J>(stages_a: I, stages_b: J, criterion: SwitchCriterion, iteration: usize) -> RoleDecision
where
    I: IntoIterator<Item = &'a CostStage>,
    J: IntoIterator<Item = &'a CostStage>,
{
    let score_a = network_score(stages_a, criterion);
    let score_b = network_score(stages_b, criterion);
    RoleDecision {
        teacher: choose_teacher(score_a, score_b),
        score_a,
        score_b,
        criterion,
        iteration,
    }
}

/// One co-learning step on a single scene.
///
/// The returned assignment is the teacher's own PAA assignment, used to
/// train both networks.
#[allow(clippy::too_many_arguments)]
pub fn colad_step(
    preds_a: &[Prediction],
    preds_b: &[Prediction],
    grid: &AnchorGrid,
    objects: &[LabeledObject],
    gamma: f64,
    criterion: SwitchCriterion,
    rule: PositiveRule,
    iteration: usize,
) -> Result<(RoleDecision, AssignOutput)> {
    let stage_a = cost_stage(preds_a, grid, objects, gamma)?;
    let stage_b = cost_stage(preds_b, grid, objects, gamma)?;
    let decision = decide([&stage_a], [&stage_b], criterion, iteration);
    let stage = match decision.teacher {
        NetworkId::A => stage_a,
        NetworkId::B => stage_b,
    };
    Ok((decision, finish(stage, grid.len(), rule)))
}
