//! Experiment operations shared by the command line and the test suites.

use std::path::Path;

use lad_core::assign::{Assigner, Label};
use lad_core::eval::MetricsReport;
use lad_core::exec::Executor;
use lad_core::gmm::{fisher_score, fit_gmm2, FitReport};
use lad_core::simenv::{
    evaluate_model, forward, generate_scenes, prepare_scenes, train, ModelParams, PreparedScene, Scene,
    TrainOutcome,
};
use serde::{Deserialize, Serialize};

use crate::config::{Experiment, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::formats::{history_to_jsonl, Checkpoint};
use crate::io::write_atomic;

pub fn generate(exp: &Experiment, first_id: u64, count: usize) -> Result<Vec<Scene>> {
    let end = first_id
        .checked_add(count as u64)
        .ok_or_else(|| Error::Usage("scene id range overflows".into()))?;
    Ok(generate_scenes(&exp.world, exp.train.seed, first_id..end)?)
}

pub fn prepare<E: Executor>(exp: &Experiment, scenes: &[Scene], exec: &E) -> Vec<PreparedScene> {
    prepare_scenes(scenes, &exp.grid, &exp.world, exec)
}

pub fn load_teacher(exp: &Experiment) -> Result<Option<ModelParams>> {
    if !exp.strategy.needs_teacher() {
        return Ok(None);
    }
    let path = exp
        .teacher_path()
        .ok_or_else(|| Error::config("strategy.teacher_path", "required by this strategy"))?;
    if !path.exists() {
        return Err(Error::config("strategy.teacher_path", format!("{} does not exist", path.display())));
    }
    Checkpoint::load_params(&path, &exp.model_hash()).map(Some)
}

pub fn train_run<E: Executor>(
    exp: &Experiment,
    data: &[PreparedScene],
    teacher: Option<&ModelParams>,
    exec: &E,
) -> Result<TrainOutcome> {
    Ok(train(&exp.train, exp.spec, &exp.grid, data, exp.strategy, teacher, &exp.eval, exec)?)
}

/// Checkpoint paths for a training output: `out` itself, or `out.a` and `out.b`
/// for a co-learning pair.
pub fn checkpoint_paths(out: &Path, pair: bool) -> Vec<std::path::PathBuf> {
    if pair {
        ["a", "b"]
            .iter()
            .map(|s| {
                let mut p = out.as_os_str().to_owned();
                p.push(".");
                p.push(s);
                p.into()
            })
            .collect()
    } else {
        vec![out.to_path_buf()]
    }
}

/// Writes checkpoints and the history log; returns the checkpoint paths.
pub fn save_outcome(exp: &Experiment, outcome: &TrainOutcome, out: &Path, history: &Path) -> Result<Vec<std::path::PathBuf>> {
    let paths = checkpoint_paths(out, outcome.partner.is_some());
    let nets = std::iter::once(&outcome.params).chain(outcome.partner.as_ref());
    for (p, params) in paths.iter().zip(nets) {
        Checkpoint::new(params, exp.model_hash(), exp.strategy.name(), exp.train.iterations).write(p)?;
    }
    write_atomic(history, history_to_jsonl(&outcome.history).as_bytes())?;
    Ok(paths)
}

pub fn eval_run<E: Executor>(exp: &Experiment, params: &ModelParams, data: &[PreparedScene], exec: &E) -> Result<MetricsReport> {
    if params.spec != exp.spec {
        return Err(Error::config("fusion", "checkpoint heads do not match the configured model"));
    }
    Ok(evaluate_model(params, data, &exp.grid, &exp.eval, exec)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateDump {
    pub anchor_id: usize,
    pub level: usize,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectDump {
    pub index: usize,
    pub class: usize,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub candidates: Vec<CandidateDump>,
    pub fit: Option<FitReport>,
    pub positives: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignDump {
    pub format_version: u32,
    pub scene_id: u64,
    pub gamma: f64,
    pub objects: Vec<ObjectDump>,
    /// Per anchor: index of the object it is positive for, or null.
    pub labels: Vec<Option<usize>>,
    pub unmatched_objects: Vec<usize>,
}

/// Cost table, mixture fits and final labels for one scene under the
/// checkpoint's own predictions.
pub fn assign_dump(exp: &Experiment, params: &ModelParams, scene: &PreparedScene) -> Result<AssignDump> {
    let out = forward(params, &scene.features, &exp.grid)?;
    let assigner = Assigner { gamma: exp.train.gamma_assign, rule: exp.train.positive_rule };
    let result = assigner.paa(&out.predictions(), &exp.grid, &scene.objects)?;
    let labels: Vec<Option<usize>> = result
        .assignment
        .labels
        .iter()
        .map(|l| match l {
            Label::Positive(o) => Some(*o),
            Label::Negative => None,
        })
        .collect();
    let objects = scene
        .objects
        .iter()
        .enumerate()
        .map(|(k, o)| ObjectDump {
            index: k,
            class: o.class_id,
            bbox: o.bbox.to_array(),
            candidates: result.costs.objects[k]
                .iter()
                .map(|c| CandidateDump {
                    anchor_id: c.anchor_id,
                    level: exp.grid.anchors()[c.anchor_id].level,
                    cost: c.cost,
                })
                .collect(),
            fit: result.fits[k].clone(),
            positives: labels
                .iter()
                .enumerate()
                .filter(|(_, l)| **l == Some(k))
                .map(|(i, _)| i)
                .collect(),
        })
        .collect();
    Ok(AssignDump {
        format_version: FORMAT_VERSION,
        scene_id: scene.id,
        gamma: exp.train.gamma_assign,
        objects,
        labels,
        unmatched_objects: result.unmatched_objects,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmDump {
    pub format_version: u32,
    pub samples: usize,
    pub fisher_score: f64,
    #[serde(flatten)]
    pub fit: FitReport,
}

/// Fits the two-component mixture to newline-separated numbers.
pub fn gmm_fit_text(text: &str) -> std::result::Result<GmmDump, String> {
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let v: f64 = t.parse().map_err(|_| format!("line {}: `{t}` is not a number", i + 1))?;
        samples.push(v);
    }
    let fit = fit_gmm2(&samples).map_err(|e| e.to_string())?;
    Ok(GmmDump {
        format_version: FORMAT_VERSION,
        samples: samples.len(),
        fisher_score: fisher_score(&fit.model),
        fit,
    })
}
