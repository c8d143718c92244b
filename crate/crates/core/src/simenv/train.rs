//! Training loop for the five strategies.
//!
//! * Baseline: PAA on the network's own predictions.
//! * SoftLabel: Baseline plus soft-label distillation from a fixed teacher.
//! * Lad: PAA run on the teacher's predictions labels the student.
//! * SoLad: Lad plus the soft-label distillation terms.
//! * CoLad: two networks; each iteration the one with clearer cost
//!   separation assigns labels for both.
//!
//! Losses per batch: focal classification over all anchors and classes
//! divided by the number of positives, IoU loss averaged over positives,
//! optional IoU-quality BCE on positives, and for the distilling strategies
//! a soft-label term over all anchors (same normalizer) plus an IoU loss
//! towards the teacher's box on the anchors picked by `select_loc_distill`.

use alloc::vec;
use alloc::vec::Vec;

use crate::assign::{cost_stage, finish, Assigner, Assignment, CostStage, LabeledObject, Label, PositiveRule};
use crate::colad::{decide, NetworkId, RoleDecision, SwitchCriterion};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::geometry::{iou, AnchorGrid};
use crate::losses::{clamp_prob, focal_loss_dp, iou_loss, kl_focal_dp, select_loc_distill, soft_lp_dp, LpOrder};

use super::detect::{evaluate_model, EvalConfig};
use super::features::{scene_features, FeatureMatrix};
use super::model::{backward, forward, ForwardOutput, HeadGrads, ModelParams, ModelSpec};
use super::world::{Scene, WorldConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum DistillLoss {
    #[default]
    KlFocal,
    L1,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum TrainStrategy {
    Baseline,
    SoftLabel { loss: DistillLoss },
    Lad,
    SoLad { loss: DistillLoss },
    CoLad { criterion: SwitchCriterion },
}

impl TrainStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            TrainStrategy::Baseline => "baseline",
            TrainStrategy::SoftLabel { .. } => "soft_label",
            TrainStrategy::Lad => "lad",
            TrainStrategy::SoLad { .. } => "solad",
            TrainStrategy::CoLad { .. } => "colad",
        }
    }

    pub fn needs_teacher(&self) -> bool {
        matches!(
            self,
            TrainStrategy::SoftLabel { .. } | TrainStrategy::Lad | TrainStrategy::SoLad { .. }
        )
    }

    pub fn distill_loss(&self) -> Option<DistillLoss> {
        match self {
            TrainStrategy::SoftLabel { loss } | TrainStrategy::SoLad { loss } => Some(*loss),
            _ => None,
        }
    }

    /// Soft-label training alone warms up longer (3000 iterations).
    pub fn default_warmup(&self) -> usize {
        match self {
            TrainStrategy::SoftLabel { .. } => 3000,
            _ => 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub iterations: usize,
    /// `None` picks the strategy default.
    pub warmup_iters: Option<usize>,
    pub batch_scenes: usize,
    pub gamma_assign: f64,
    pub gamma_distill: f64,
    pub seed: u64,
    /// Init stream of the (first) network; a CoLAD partner uses `init_index + 1`.
    pub init_index: u64,
    /// Evaluate AP50 on the training scenes every this many iterations (0 = never).
    pub eval_every: usize,
    pub positive_rule: PositiveRule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            momentum: 0.9,
            iterations: 2000,
            warmup_iters: None,
            batch_scenes: 8,
            gamma_assign: 2.0,
            gamma_distill: 0.5,
            seed: 0,
            init_index: 0,
            eval_every: 0,
            positive_rule: PositiveRule::Posterior,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::InvalidTrain("lr must be finite and non-negative"));
        }
        if !(self.momentum.is_finite() && (0.0..1.0).contains(&self.momentum)) {
            return Err(Error::InvalidTrain("momentum must lie in [0, 1)"));
        }
        if self.batch_scenes == 0 {
            return Err(Error::InvalidTrain("batch_scenes must be positive"));
        }
        if !(self.gamma_assign.is_finite() && self.gamma_assign >= 0.0) {
            return Err(Error::NegativeGamma(self.gamma_assign));
        }
        if !(self.gamma_distill.is_finite() && self.gamma_distill >= 0.0) {
            return Err(Error::NegativeGamma(self.gamma_distill));
        }
        Ok(())
    }

    pub fn lr_at(&self, iteration: usize, strategy: &TrainStrategy) -> f64 {
        let warmup = self.warmup_iters.unwrap_or_else(|| strategy.default_warmup());
        if warmup == 0 {
            self.lr
        } else {
            self.lr * ((iteration + 1) as f64 / warmup as f64).min(1.0)
        }
    }
}

/// A scene with its (fixed) feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedScene {
    pub id: u64,
    pub objects: Vec<LabeledObject>,
    pub features: FeatureMatrix,
}

pub fn prepare_scenes<E: Executor>(scenes: &[Scene], grid: &AnchorGrid, world: &WorldConfig, exec: &E) -> Vec<PreparedScene> {
    exec.map(scenes.len(), |i| {
        let s = &scenes[i];
        PreparedScene {
            id: s.id,
            objects: s.objects.clone(),
            features: scene_features(s, grid, world.num_classes, world.noise_sigma),
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossBreakdown {
    pub cls: f64,
    pub loc: f64,
    pub iou: f64,
    pub distill_cls: f64,
    pub distill_loc: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn add(&mut self, o: &LossBreakdown) {
        self.cls += o.cls;
        self.loc += o.loc;
        self.iou += o.iou;
        self.distill_cls += o.distill_cls;
        self.distill_loc += o.distill_loc;
    }

    fn first_non_finite(&self) -> Option<&'static str> {
        [
            (self.cls, "classification"),
            (self.loc, "localization"),
            (self.iou, "iou"),
            (self.distill_cls, "distill_classification"),
            (self.distill_loc, "distill_localization"),
        ]
        .into_iter()
        .find(|(v, _)| !v.is_finite())
        .map(|(_, n)| n)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IterRecord {
    pub iter: usize,
    pub lr: f64,
    pub num_positives: usize,
    pub losses: LossBreakdown,
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub partner_losses: Option<LossBreakdown>,
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub role: Option<RoleDecision>,
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub eval_ap50: Option<f64>,
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub partner_eval_ap50: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub partner: Option<ModelParams>,
    pub history: Vec<IterRecord>,
}

/// Unnormalized per-scene loss sums and gradients.
#[derive(Debug, Clone)]
struct SceneTerms {
    sums: LossBreakdown,
    /// Gradient of the terms normalized by the positive count.
    grad_pos: Vec<f64>,
    /// Gradient of the localization-distill term.
    grad_sel: Vec<f64>,
    positives: usize,
    selected: usize,
}

/// Teacher outputs a distilling student needs for one scene.
pub struct TeacherView<'a> {
    pub fwd: &'a ForwardOutput,
    pub loss: DistillLoss,
}

#[allow(clippy::too_many_arguments)]
fn scene_terms(
    params: &ModelParams,
    scene: &PreparedScene,
    grid: &AnchorGrid,
    fwd: &ForwardOutput,
    assignment: &Assignment,
    teacher: Option<TeacherView<'_>>,
    cfg: &TrainConfig,
) -> Result<SceneTerms> {
    let spec = params.spec;
    let n = grid.len();
    let c = spec.num_classes;
    let mut sums = LossBreakdown::default();
    let mut hg = HeadGrads::zeros(n, &spec);
    let mut hg_sel = HeadGrads::zeros(n, &spec);

    for (i, label) in assignment.labels.iter().enumerate() {
        let target_class = match label {
            Label::Positive(o) => Some(scene.objects[*o].class_id),
            Label::Negative => None,
        };
        for k in 0..c {
            let (v, d) = focal_loss_dp(fwd.scores[i * c + k], target_class == Some(k), cfg.gamma_assign);
            sums.cls += v;
            hg.scores[i * c + k] += d;
        }
    }

    let mut positives = 0;
    for (i, o) in assignment.positives() {
        positives += 1;
        let gt = &scene.objects[o].bbox;
        let lv = iou_loss(&fwd.boxes[i], gt);
        sums.loc += lv.value;
        for k in 0..4 {
            hg.boxes[i * 4 + k] += lv.grad[k];
        }
        if spec.iou_head {
            let t = iou(&fwd.boxes[i], gt);
            let p = clamp_prob(fwd.iou_pred[i]);
            sums.iou += -t * libm::log(p) - (1.0 - t) * libm::log(1.0 - p);
            hg.iou_logit[i] += fwd.iou_pred[i] - t;
        }
    }

    let mut selected = 0;
    if let Some(t) = teacher {
        for i in 0..n {
            let pt = t.fwd.scores_of(i);
            let ps = fwd.scores_of(i);
            let (v, d) = match t.loss {
                DistillLoss::KlFocal => kl_focal_dp(pt, ps, cfg.gamma_distill)?,
                DistillLoss::L1 => soft_lp_dp(pt, ps, LpOrder::L1)?,
                DistillLoss::L2 => soft_lp_dp(pt, ps, LpOrder::L2)?,
            };
            sums.distill_cls += v;
            for (g, dk) in hg.scores[i * c..(i + 1) * c].iter_mut().zip(&d) {
                *g += dk;
            }
        }
        let gts: Vec<_> = scene.objects.iter().map(|o| o.bbox).collect();
        for i in select_loc_distill(&t.fwd.boxes, &gts) {
            selected += 1;
            let lv = iou_loss(&fwd.boxes[i], &t.fwd.boxes[i]);
            sums.distill_loc += lv.value;
            for k in 0..4 {
                hg_sel.boxes[i * 4 + k] += lv.grad[k];
            }
        }
    }

    let mut grad_pos = vec![0.0; params.values.len()];
    backward(params, &scene.features, grid, fwd, &hg, &mut grad_pos)?;
    let mut grad_sel = vec![0.0; params.values.len()];
    if selected > 0 {
        backward(params, &scene.features, grid, fwd, &hg_sel, &mut grad_sel)?;
    }
    Ok(SceneTerms {
        sums,
        grad_pos,
        grad_sel,
        positives,
        selected,
    })
}

/// Batch loss and gradient, reduced in scene order.
fn combine(terms: &[SceneTerms], num_params: usize) -> (LossBreakdown, Vec<f64>, usize) {
    let mut sums = LossBreakdown::default();
    let mut gp = vec![0.0; num_params];
    let mut gs = vec![0.0; num_params];
    let mut positives = 0;
    let mut selected = 0;
    for t in terms {
        sums.add(&t.sums);
        positives += t.positives;
        selected += t.selected;
        for (a, b) in gp.iter_mut().zip(&t.grad_pos) {
            *a += b;
        }
        for (a, b) in gs.iter_mut().zip(&t.grad_sel) {
            *a += b;
        }
    }
    let np = positives.max(1) as f64;
    let ns = selected.max(1) as f64;
    let losses = LossBreakdown {
        cls: sums.cls / np,
        loc: sums.loc / np,
        iou: sums.iou / np,
        distill_cls: sums.distill_cls / np,
        distill_loc: sums.distill_loc / ns,
        total: (sums.cls + sums.loc + sums.iou + sums.distill_cls) / np + sums.distill_loc / ns,
    };
    let grad = gp.iter().zip(&gs).map(|(a, b)| a / np + b / ns).collect();
    (losses, grad, positives)
}

/// Loss and gradient of a batch under fixed assignments.
///
/// `teachers`, when given, holds one teacher forward pass per scene and
/// switches on the distillation terms.
pub fn batch_objective(
    params: &ModelParams,
    scenes: &[&PreparedScene],
    grid: &AnchorGrid,
    assignments: &[Assignment],
    teachers: Option<(&[ForwardOutput], DistillLoss)>,
    cfg: &TrainConfig,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let mut terms = Vec::with_capacity(scenes.len());
    for (k, scene) in scenes.iter().enumerate() {
        let fwd = forward(params, &scene.features, grid)?;
        let view = teachers.map(|(t, loss)| TeacherView { fwd: &t[k], loss });
        terms.push(scene_terms(params, scene, grid, &fwd, &assignments[k], view, cfg)?);
    }
    let (losses, grad, _) = combine(&terms, params.values.len());
    Ok((losses, grad))
}

struct Sgd {
    velocity: Vec<f64>,
    momentum: f64,
}

impl Sgd {
    fn new(len: usize, momentum: f64) -> Self {
        Self {
            velocity: vec![0.0; len],
            momentum,
        }
    }

    fn step(&mut self, params: &mut ModelParams, grad: &[f64], lr: f64) {
        for ((p, v), g) in params.values.iter_mut().zip(&mut self.velocity).zip(grad) {
            *v = self.momentum * *v + g;
            *p -= lr * *v;
        }
    }
}

fn check_finite(losses: &LossBreakdown, iteration: usize) -> Result<()> {
    match losses.first_non_finite() {
        Some(component) => Err(Error::NonFiniteLoss { iteration, component }),
        None => Ok(()),
    }
}

/// Diverged parameters surface here before they reach the assigner.
fn checked_forward(params: &ModelParams, features: &FeatureMatrix, grid: &AnchorGrid, iteration: usize) -> Result<ForwardOutput> {
    let out = forward(params, features, grid)?;
    let finite = out.scores.iter().all(|v| v.is_finite())
        && out.boxes.iter().all(|b| b.to_array().iter().all(|v| v.is_finite()));
    if finite {
        Ok(out)
    } else {
        Err(Error::NonFiniteLoss { iteration, component: "forward" })
    }
}

fn batch_indices(iteration: usize, batch: usize, total: usize) -> Vec<usize> {
    let b = batch.min(total);
    (0..b).map(|k| (iteration * b + k) % total).collect()
}

/// Label assignment used for one scene by a single-network strategy.
///
/// LAD and SoLAD read only the teacher's predictions. Baseline and soft-label
/// training assign from the student's own predictions. Co-learning needs
/// both networks and is rejected here.
pub fn scene_assignment(
    strategy: &TrainStrategy,
    assigner: &Assigner,
    grid: &AnchorGrid,
    objects: &[LabeledObject],
    student: &ForwardOutput,
    teacher: Option<&ForwardOutput>,
) -> Result<Assignment> {
    let out = match strategy {
        TrainStrategy::Lad | TrainStrategy::SoLad { .. } => {
            assigner.lad(&teacher.ok_or(Error::MissingTeacher)?.predictions(), grid, objects)?
        }
        TrainStrategy::Baseline | TrainStrategy::SoftLabel { .. } => assigner.paa(&student.predictions(), grid, objects)?,
        TrainStrategy::CoLad { .. } => return Err(Error::InvalidTrain("co-learning assigns from a network pair")),
    };
    Ok(out.assignment)
}

/// Trains one network (or a CoLAD pair) on `data`.
#[allow(clippy::too_many_arguments)]
pub fn train<E: Executor>(
    cfg: &TrainConfig,
    spec: ModelSpec,
    grid: &AnchorGrid,
    data: &[PreparedScene],
    strategy: TrainStrategy,
    teacher: Option<&ModelParams>,
    eval_cfg: &EvalConfig,
    exec: &E,
) -> Result<TrainOutcome> {
    let init = ModelParams::init(spec, cfg.seed, cfg.init_index);
    let partner = match strategy {
        TrainStrategy::CoLad { .. } => Some(ModelParams::init(spec, cfg.seed, cfg.init_index + 1)),
        _ => None,
    };
    train_from(cfg, init, partner, grid, data, strategy, teacher, eval_cfg, exec)
}

/// Like [`train`] but starting from given parameters.
#[allow(clippy::too_many_arguments)]
pub fn train_from<E: Executor>(
    cfg: &TrainConfig,
    mut params: ModelParams,
    mut partner: Option<ModelParams>,
    grid: &AnchorGrid,
    data: &[PreparedScene],
    strategy: TrainStrategy,
    teacher: Option<&ModelParams>,
    eval_cfg: &EvalConfig,
    exec: &E,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidTrain("dataset is empty"));
    }
    let spec = params.spec;
    if strategy.needs_teacher() {
        match teacher {
            None => return Err(Error::MissingTeacher),
            Some(t) if t.spec != spec => return Err(Error::ShapeMismatch("teacher and student heads differ")),
            Some(_) => {}
        }
    }
    if matches!(strategy, TrainStrategy::CoLad { .. }) {
        match &partner {
            None => partner = Some(ModelParams::init(spec, cfg.seed, cfg.init_index + 1)),
            Some(p) if p.spec != spec => return Err(Error::ShapeMismatch("co-learning networks differ")),
            Some(_) => {}
        }
    }
    let assigner = Assigner {
        gamma: cfg.gamma_assign,
        rule: cfg.positive_rule,
    };

    // The teacher is frozen, so its outputs are computed once.
    let teacher_fwd: Vec<ForwardOutput> = match (teacher, strategy.needs_teacher()) {
        (Some(t), true) => exec
            .map(data.len(), |i| forward(t, &data[i].features, grid))
            .into_iter()
            .collect::<Result<_>>()?,
        _ => Vec::new(),
    };
    let distill = strategy.distill_loss();

    let mut opt = Sgd::new(params.values.len(), cfg.momentum);
    let mut opt_b = Sgd::new(params.values.len(), cfg.momentum);
    let mut history = Vec::with_capacity(cfg.iterations);

    for it in 0..cfg.iterations {
        let idx = batch_indices(it, cfg.batch_scenes, data.len());
        let lr = cfg.lr_at(it, &strategy);
        let mut record = IterRecord {
            iter: it,
            lr,
            num_positives: 0,
            losses: LossBreakdown::default(),
            partner_losses: None,
            role: None,
            eval_ap50: None,
            partner_eval_ap50: None,
        };

        match strategy {
            TrainStrategy::CoLad { criterion } => {
                let net_b = partner.as_ref().expect("partner initialized");
                let stages = exec.map(idx.len(), |k| -> Result<(ForwardOutput, ForwardOutput, CostStage, CostStage)> {
                    let s = &data[idx[k]];
                    let fa = checked_forward(&params, &s.features, grid, it)?;
                    let fb = checked_forward(net_b, &s.features, grid, it)?;
                    let sa = cost_stage(&fa.predictions(), grid, &s.objects, cfg.gamma_assign)?;
                    let sb = cost_stage(&fb.predictions(), grid, &s.objects, cfg.gamma_assign)?;
                    Ok((fa, fb, sa, sb))
                });
                let stages = stages.into_iter().collect::<Result<Vec<_>>>()?;
                let decision: RoleDecision = decide(
                    stages.iter().map(|s| &s.2),
                    stages.iter().map(|s| &s.3),
                    criterion,
                    it,
                );
                let terms = exec.map(idx.len(), |k| -> Result<(SceneTerms, SceneTerms)> {
                    let s = &data[idx[k]];
                    let (fa, fb, sa, sb) = &stages[k];
                    let stage = match decision.teacher {
                        NetworkId::A => sa,
                        NetworkId::B => sb,
                    };
                    let assignment = finish(stage.clone(), grid.len(), cfg.positive_rule).assignment;
                    let ta = scene_terms(&params, s, grid, fa, &assignment, None, cfg)?;
                    let tb = scene_terms(net_b, s, grid, fb, &assignment, None, cfg)?;
                    Ok((ta, tb))
                });
                let (ta, tb): (Vec<_>, Vec<_>) = terms.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
                let (la, ga, pos) = combine(&ta, params.values.len());
                let (lb, gb, _) = combine(&tb, params.values.len());
                check_finite(&la, it)?;
                check_finite(&lb, it)?;
                opt.step(&mut params, &ga, lr);
                opt_b.step(partner.as_mut().expect("partner initialized"), &gb, lr);
                record.num_positives = pos;
                record.losses = la;
                record.partner_losses = Some(lb);
                record.role = Some(decision);
            }
            _ => {
                let terms = exec.map(idx.len(), |k| -> Result<SceneTerms> {
                    let i = idx[k];
                    let s = &data[i];
                    let fwd = checked_forward(&params, &s.features, grid, it)?;
                    let assignment =
                        scene_assignment(&strategy, &assigner, grid, &s.objects, &fwd, teacher_fwd.get(i))?;
                    let view = distill.map(|loss| TeacherView { fwd: &teacher_fwd[i], loss });
                    scene_terms(&params, s, grid, &fwd, &assignment, view, cfg)
                });
                let terms = terms.into_iter().collect::<Result<Vec<_>>>()?;
                let (losses, grad, pos) = combine(&terms, params.values.len());
                check_finite(&losses, it)?;
                opt.step(&mut params, &grad, lr);
                record.num_positives = pos;
                record.losses = losses;
            }
        }

        if cfg.eval_every > 0 && (it + 1) % cfg.eval_every == 0 {
            record.eval_ap50 = Some(evaluate_model(&params, data, grid, eval_cfg, exec)?.ap50);
            if let Some(p) = &partner {
                record.partner_eval_ap50 = Some(evaluate_model(p, data, grid, eval_cfg, exec)?.ap50);
            }
        }
        history.push(record);
    }

    Ok(TrainOutcome {
        params,
        partner,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cop::FusionMode;
    use crate::exec::Sequential;
    use crate::geometry::LevelSpec;
    use crate::simenv::features::feature_dim;
    use crate::simenv::world::generate_dataset;

    fn setup(noise: f64, count: usize, max_objects: usize) -> (WorldConfig, AnchorGrid, Vec<PreparedScene>) {
        let world = WorldConfig { noise_sigma: noise, max_objects, ..Default::default() };
        let grid = AnchorGrid::generate(&[
            LevelSpec { stride: 8.0, scale: 16.0, rows: 8, cols: 8 },
            LevelSpec { stride: 16.0, scale: 32.0, rows: 4, cols: 4 },
        ])
        .unwrap();
        let scenes = generate_dataset(&world, 3, count).unwrap();
        let data = prepare_scenes(&scenes, &grid, &world, &Sequential);
        (world, grid, data)
    }

    fn spec(world: &WorldConfig, fusion: FusionMode, iou_head: bool) -> ModelSpec {
        ModelSpec { num_features: feature_dim(world.num_classes), num_classes: world.num_classes, fusion, iou_head }
    }

    #[test]
    fn zero_lr_keeps_params() {
        let (world, grid, data) = setup(0.25, 4, 2);
        let cfg = TrainConfig { lr: 0.0, iterations: 5, ..Default::default() };
        let s = spec(&world, FusionMode::None, false);
        let out = train(&cfg, s, &grid, &data, TrainStrategy::Baseline, None, &EvalConfig::default(), &Sequential).unwrap();
        assert_eq!(out.params, ModelParams::init(s, cfg.seed, 0));
        assert_eq!(out.history.len(), 5);
    }

    #[test]
    fn teacher_required() {
        let (world, grid, data) = setup(0.25, 2, 1);
        let cfg = TrainConfig { iterations: 1, ..Default::default() };
        let s = spec(&world, FusionMode::None, false);
        let err = train(&cfg, s, &grid, &data, TrainStrategy::Lad, None, &EvalConfig::default(), &Sequential);
        assert_eq!(err.unwrap_err(), Error::MissingTeacher);
    }

    #[test]
    fn non_finite_loss_aborts() {
        let (world, grid, data) = setup(0.25, 2, 1);
        let cfg = TrainConfig { iterations: 3, ..Default::default() };
        let s = spec(&world, FusionMode::None, false);
        let mut p = ModelParams::init(s, 0, 0);
        p.values[0] = f64::NAN;
        let err = train_from(&cfg, p, None, &grid, &data, TrainStrategy::Baseline, None, &EvalConfig::default(), &Sequential)
            .unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { iteration: 0, .. }), "{err:?}");
    }

    #[test]
    fn single_scene_loss_drops_tenfold() {
        let (world, grid, data) = setup(0.0, 1, 1);
        let cfg = TrainConfig { lr: 0.02, iterations: 200, warmup_iters: Some(10), ..Default::default() };
        let s = spec(&world, FusionMode::None, false);
        let out = train(&cfg, s, &grid, &data, TrainStrategy::Baseline, None, &EvalConfig::default(), &Sequential).unwrap();
        let early = out.history[10].losses.total;
        let last = out.history.last().unwrap().losses.total;
        assert!(early >= 10.0 * last, "iteration 10: {early}, final: {last}");
    }

    #[test]
    fn solad_with_self_teacher_matches_lad_gradient() {
        let (world, grid, data) = setup(0.25, 3, 3);
        let s = spec(&world, FusionMode::None, false);
        let p = ModelParams::init(s, 1, 0);
        let cfg = TrainConfig::default();
        let scenes: Vec<&PreparedScene> = data.iter().collect();
        let fwds: Vec<ForwardOutput> = data.iter().map(|d| forward(&p, &d.features, &grid).unwrap()).collect();
        let assigns: Vec<Assignment> = data
            .iter()
            .zip(&fwds)
            .map(|(d, f)| Assigner::new(2.0).lad(&f.predictions(), &grid, &d.objects).unwrap().assignment)
            .collect();
        let (_, g_lad) = batch_objective(&p, &scenes, &grid, &assigns, None, &cfg).unwrap();
        let (l, g_solad) = batch_objective(&p, &scenes, &grid, &assigns, Some((&fwds, DistillLoss::KlFocal)), &cfg).unwrap();
        assert_eq!(l.distill_cls, 0.0);
        assert_eq!(l.distill_loc, 0.0);
        assert_eq!(g_lad, g_solad);
    }

    #[test]
    fn batches_cycle() {
        assert_eq!(batch_indices(0, 3, 5), [0, 1, 2]);
        assert_eq!(batch_indices(1, 3, 5), [3, 4, 0]);
        assert_eq!(batch_indices(2, 8, 2), [0, 1]);
    }

    #[test]
    fn warmup_schedule() {
        let cfg = TrainConfig { lr: 1.0, warmup_iters: None, ..Default::default() };
        assert_eq!(cfg.lr_at(0, &TrainStrategy::Baseline), 1.0 / 500.0);
        assert_eq!(cfg.lr_at(499, &TrainStrategy::Baseline), 1.0);
        assert_eq!(cfg.lr_at(1499, &TrainStrategy::SoftLabel { loss: DistillLoss::KlFocal }), 0.5);
        let none = TrainConfig { warmup_iters: Some(0), ..cfg };
        assert_eq!(none.lr_at(0, &TrainStrategy::Baseline), 1.0);
    }
}
