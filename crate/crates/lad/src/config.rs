//! Experiment configuration file.

use std::path::{Path, PathBuf};

use lad_core::assign::PositiveRule;
use lad_core::colad::SwitchCriterion;
use lad_core::cop::FusionMode;
use lad_core::geometry::{AnchorGrid, LevelSpec};
use lad_core::simenv::{feature_dim, DistillLoss, EvalConfig, ModelSpec, TrainConfig, TrainStrategy, WorldConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::read_to_string;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub format_version: u32,
    #[serde(default)]
    pub world: WorldSection,
    #[serde(default)]
    pub anchors: AnchorsSection,
    pub train: TrainSection,
    #[serde(default)]
    pub strategy: StrategySection,
    #[serde(default)]
    pub fusion: FusionSection,
    #[serde(default)]
    pub eval: EvalSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldSection {
    pub width: f64,
    pub height: f64,
    pub num_classes: usize,
    pub max_objects: usize,
    pub size_range: [f64; 2],
    pub noise_sigma: f64,
}

impl Default for WorldSection {
    fn default() -> Self {
        let w = WorldConfig::default();
        Self {
            width: w.width,
            height: w.height,
            num_classes: w.num_classes,
            max_objects: w.max_objects,
            size_range: [w.min_size, w.max_size],
            noise_sigma: w.noise_sigma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorsSection {
    pub levels: Vec<LevelSection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelSection {
    pub stride: f64,
    pub scale: f64,
    pub rows: usize,
    pub cols: usize,
}

/// Two levels tiling a 64x64 canvas at strides 8 and 16.
impl Default for AnchorsSection {
    fn default() -> Self {
        Self {
            levels: vec![
                LevelSection { stride: 8.0, scale: 16.0, rows: 8, cols: 8 },
                LevelSection { stride: 16.0, scale: 32.0, rows: 4, cols: 4 },
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "defaults::lr")]
    pub lr: f64,
    #[serde(default = "defaults::momentum")]
    pub momentum: f64,
    #[serde(default = "defaults::iterations")]
    pub iterations: usize,
    #[serde(default)]
    pub warmup_iters: Option<usize>,
    #[serde(default = "defaults::batch_scenes")]
    pub batch_scenes: usize,
    #[serde(default = "defaults::gamma_assign")]
    pub gamma_assign: f64,
    #[serde(default = "defaults::gamma_distill")]
    pub gamma_distill: f64,
    pub seed: u64,
    #[serde(default)]
    pub init_index: u64,
    #[serde(default)]
    pub eval_every: usize,
    #[serde(default = "defaults::positive_rule")]
    pub positive_rule: String,
}

mod defaults {
    use lad_core::simenv::TrainConfig;

    pub fn lr() -> f64 {
        TrainConfig::default().lr
    }
    pub fn momentum() -> f64 {
        TrainConfig::default().momentum
    }
    pub fn iterations() -> usize {
        TrainConfig::default().iterations
    }
    pub fn batch_scenes() -> usize {
        TrainConfig::default().batch_scenes
    }
    pub fn gamma_assign() -> f64 {
        TrainConfig::default().gamma_assign
    }
    pub fn gamma_distill() -> f64 {
        TrainConfig::default().gamma_distill
    }
    pub fn positive_rule() -> String {
        "posterior".into()
    }
    pub fn variant() -> String {
        "baseline".into()
    }
    pub fn mode() -> String {
        "none".into()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategySection {
    #[serde(default = "defaults::variant")]
    pub variant: String,
    #[serde(default)]
    pub teacher_path: Option<PathBuf>,
    #[serde(default)]
    pub distill_loss: Option<String>,
    #[serde(default)]
    pub criterion: Option<String>,
}

impl Default for StrategySection {
    fn default() -> Self {
        Self {
            variant: defaults::variant(),
            teacher_path: None,
            distill_loss: None,
            criterion: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionSection {
    #[serde(default = "defaults::mode")]
    pub mode: String,
    #[serde(default)]
    pub iou_head: bool,
    #[serde(default)]
    pub use_iou_head_at_inference: bool,
}

impl Default for FusionSection {
    fn default() -> Self {
        Self {
            mode: defaults::mode(),
            iou_head: false,
            use_iou_head_at_inference: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub nms_iou: f64,
    pub score_floor: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        let e = EvalConfig::default();
        Self {
            nms_iou: e.nms_iou,
            score_floor: e.score_floor,
        }
    }
}

/// A checked configuration with every section converted to library types.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub raw: ExperimentConfig,
    /// Directory relative paths in the config are resolved against.
    pub base_dir: PathBuf,
    pub world: WorldConfig,
    pub grid: AnchorGrid,
    pub spec: ModelSpec,
    pub train: TrainConfig,
    pub strategy: TrainStrategy,
    pub eval: EvalConfig,
}

fn parse_variant(s: &str, field: &str, options: &[&str]) -> Result<usize> {
    options
        .iter()
        .position(|o| *o == s)
        .ok_or_else(|| Error::config(field, format!("unknown value `{s}`, expected one of {}", options.join(", "))))
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::config(field, format!("must be finite and positive, got {v}")))
    }
}

fn unit(field: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::config(field, format!("must lie in [0, 1], got {v}")))
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> std::result::Result<Self, String> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            if path == "." {
                inner.to_string()
            } else {
                format!("field `{path}`: {inner}")
            }
        })
    }

    pub fn load(path: &Path) -> Result<Experiment> {
        let text = read_to_string(path)?;
        let raw = Self::from_json(&text).map_err(|m| Error::parse(path, m))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        raw.check(base)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Validates the configuration, naming the offending field on failure.
    pub fn check(self, base_dir: PathBuf) -> Result<Experiment> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::config(
                "format_version",
                format!("unsupported version {}, expected {FORMAT_VERSION}", self.format_version),
            ));
        }

        let w = &self.world;
        if !(w.width.is_finite() && w.width >= 32.0) {
            return Err(Error::config("world.width", "must be at least 32"));
        }
        if !(w.height.is_finite() && w.height >= 32.0) {
            return Err(Error::config("world.height", "must be at least 32"));
        }
        if w.num_classes == 0 {
            return Err(Error::config("world.num_classes", "must be at least 1"));
        }
        if w.max_objects == 0 {
            return Err(Error::config("world.max_objects", "must be at least 1"));
        }
        let [lo, hi] = w.size_range;
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
            return Err(Error::config("world.size_range", "must satisfy 0 < min <= max"));
        }
        if lo > w.width.min(w.height) {
            return Err(Error::config("world.size_range", "minimum size does not fit on the canvas"));
        }
        if !(w.noise_sigma.is_finite() && w.noise_sigma >= 0.0) {
            return Err(Error::config("world.noise_sigma", "must be finite and non-negative"));
        }
        let world = WorldConfig {
            width: w.width,
            height: w.height,
            num_classes: w.num_classes,
            max_objects: w.max_objects,
            min_size: lo,
            max_size: hi,
            noise_sigma: w.noise_sigma,
        };

        if self.anchors.levels.is_empty() {
            return Err(Error::config("anchors.levels", "needs at least one level"));
        }
        for (i, l) in self.anchors.levels.iter().enumerate() {
            positive(&format!("anchors.levels[{i}].stride"), l.stride)?;
            positive(&format!("anchors.levels[{i}].scale"), l.scale)?;
            if l.rows == 0 || l.cols == 0 {
                return Err(Error::config(format!("anchors.levels[{i}]"), "rows and cols must be positive"));
            }
        }
        let levels: Vec<LevelSpec> = self
            .anchors
            .levels
            .iter()
            .map(|l| LevelSpec { stride: l.stride, scale: l.scale, rows: l.rows, cols: l.cols })
            .collect();
        let grid = AnchorGrid::generate(&levels)?;

        let t = &self.train;
        if !(t.lr.is_finite() && t.lr >= 0.0) {
            return Err(Error::config("train.lr", "must be finite and non-negative"));
        }
        if !(t.momentum.is_finite() && (0.0..1.0).contains(&t.momentum)) {
            return Err(Error::config("train.momentum", "must lie in [0, 1)"));
        }
        if t.batch_scenes == 0 {
            return Err(Error::config("train.batch_scenes", "must be at least 1"));
        }
        if !(t.gamma_assign.is_finite() && t.gamma_assign >= 0.0) {
            return Err(Error::config("train.gamma_assign", "must be finite and non-negative"));
        }
        if !(t.gamma_distill.is_finite() && t.gamma_distill >= 0.0) {
            return Err(Error::config("train.gamma_distill", "must be finite and non-negative"));
        }
        let positive_rule = match parse_variant(&t.positive_rule, "train.positive_rule", &["posterior", "below_mean"])? {
            0 => PositiveRule::Posterior,
            _ => PositiveRule::BelowMean,
        };
        let train = TrainConfig {
            lr: t.lr,
            momentum: t.momentum,
            iterations: t.iterations,
            warmup_iters: t.warmup_iters,
            batch_scenes: t.batch_scenes,
            gamma_assign: t.gamma_assign,
            gamma_distill: t.gamma_distill,
            seed: t.seed,
            init_index: t.init_index,
            eval_every: t.eval_every,
            positive_rule,
        };

        let s = &self.strategy;
        let variant = parse_variant(&s.variant, "strategy.variant", &["baseline", "soft_label", "lad", "solad", "colad"])?;
        let distill = match &s.distill_loss {
            None => DistillLoss::KlFocal,
            Some(d) => match parse_variant(d, "strategy.distill_loss", &["kl_focal", "l1", "l2"])? {
                0 => DistillLoss::KlFocal,
                1 => DistillLoss::L1,
                _ => DistillLoss::L2,
            },
        };
        let criterion = match &s.criterion {
            None => SwitchCriterion::StdOverMean,
            Some(c) => match parse_variant(c, "strategy.criterion", &["std_over_mean", "fisher"])? {
                0 => SwitchCriterion::StdOverMean,
                _ => SwitchCriterion::Fisher,
            },
        };
        let strategy = match variant {
            0 => TrainStrategy::Baseline,
            1 => TrainStrategy::SoftLabel { loss: distill },
            2 => TrainStrategy::Lad,
            3 => TrainStrategy::SoLad { loss: distill },
            _ => TrainStrategy::CoLad { criterion },
        };
        if strategy.needs_teacher() && s.teacher_path.is_none() {
            return Err(Error::config("strategy.teacher_path", format!("required by `{}`", s.variant)));
        }

        let fusion = match parse_variant(&self.fusion.mode, "fusion.mode", &["none", "iop", "cop"])? {
            0 => FusionMode::None,
            1 => FusionMode::Iop,
            _ => FusionMode::Cop,
        };
        if self.fusion.use_iou_head_at_inference && !self.fusion.iou_head {
            return Err(Error::config("fusion.use_iou_head_at_inference", "needs fusion.iou_head = true"));
        }
        let spec = ModelSpec {
            num_features: feature_dim(world.num_classes),
            num_classes: world.num_classes,
            fusion,
            iou_head: self.fusion.iou_head,
        };

        unit("eval.nms_iou", self.eval.nms_iou)?;
        unit("eval.score_floor", self.eval.score_floor)?;
        let eval = EvalConfig {
            nms_iou: self.eval.nms_iou,
            score_floor: self.eval.score_floor,
            use_iou_head: self.fusion.use_iou_head_at_inference,
        };

        Ok(Experiment {
            raw: self,
            base_dir,
            world,
            grid,
            spec,
            train,
            strategy,
            eval,
        })
    }
}

impl Experiment {
    /// Hash of everything that fixes the parameter layout and its meaning:
    /// model heads, class count and anchor levels.
    pub fn model_hash(&self) -> String {
        let shaping = serde_json::json!({
            "num_features": self.spec.num_features,
            "num_classes": self.spec.num_classes,
            "fusion": self.raw.fusion.mode,
            "iou_head": self.spec.iou_head,
            "levels": self.raw.anchors.levels,
        });
        let digest = Sha256::digest(shaping.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn teacher_path(&self) -> Option<PathBuf> {
        self.raw.strategy.teacher_path.as_ref().map(|p| self.base_dir.join(p))
    }
}
