//! On-disk formats: dataset JSONL, checkpoint JSON, history JSONL, metrics JSON/CSV.

use std::collections::BTreeMap;
use std::path::Path;

use lad_core::assign::LabeledObject;
use lad_core::eval::MetricsReport;
use lad_core::geometry::BBox;
use lad_core::simenv::{IterRecord, ModelParams, ModelSpec, Scene, Segment, WorldConfig};
use serde::{Deserialize, Serialize};

use crate::config::FORMAT_VERSION;
use crate::error::{Error, Result};
use crate::io::{read_lines, read_to_string, write_atomic};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectLine {
    class: usize,
    #[serde(rename = "box")]
    bbox: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneLine {
    id: u64,
    objects: Vec<ObjectLine>,
    seed: u64,
}

pub fn dataset_to_jsonl(scenes: &[Scene]) -> String {
    let mut out = String::new();
    for s in scenes {
        let line = SceneLine {
            id: s.id,
            objects: s
                .objects
                .iter()
                .map(|o| ObjectLine { class: o.class_id, bbox: o.bbox.to_array() })
                .collect(),
            seed: s.noise_seed,
        };
        out.push_str(&serde_json::to_string(&line).expect("scene serializes"));
        out.push('\n');
    }
    out
}

pub fn write_dataset(path: &Path, scenes: &[Scene]) -> Result<()> {
    write_atomic(path, dataset_to_jsonl(scenes).as_bytes())
}

/// Reads scenes, checking every box and class against the world.
pub fn read_dataset(path: &Path, world: &WorldConfig) -> Result<Vec<Scene>> {
    let mut scenes = Vec::new();
    for (n, line) in read_lines(path)? {
        let at = |m: String| Error::parse(path, format!("line {n}: {m}"));
        let s: SceneLine = serde_json::from_str(&line).map_err(|e| at(e.to_string()))?;
        let mut objects = Vec::with_capacity(s.objects.len());
        for o in s.objects {
            if o.class >= world.num_classes {
                return Err(at(format!("class {} out of range for {} classes", o.class, world.num_classes)));
            }
            let bbox = match BBox::from_array(o.bbox) {
                Ok(b) if b.area() > 0.0 => b,
                _ => return Err(at(format!("invalid box {:?}", o.bbox))),
            };
            objects.push(LabeledObject { class_id: o.class, bbox });
        }
        scenes.push(Scene {
            id: s.id,
            width: world.width,
            height: world.height,
            objects,
            noise_seed: s.seed,
        });
    }
    Ok(scenes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config_hash: String,
    pub spec: ModelSpec,
    pub strategy: String,
    pub iterations: usize,
    pub params: BTreeMap<String, Vec<f64>>,
}

impl Checkpoint {
    pub fn new(params: &ModelParams, config_hash: String, strategy: &str, iterations: usize) -> Self {
        let named = Segment::ALL
            .iter()
            .filter(|&&s| params.spec.segment_len(s) > 0)
            .map(|&s| (s.name().to_string(), params.segment(s).to_vec()))
            .collect();
        Self {
            format_version: FORMAT_VERSION,
            config_hash,
            spec: params.spec,
            strategy: strategy.to_string(),
            iterations,
            params: named,
        }
    }

    pub fn to_params(&self) -> std::result::Result<ModelParams, String> {
        let mut p = ModelParams::zeros(self.spec);
        for seg in Segment::ALL {
            let want = self.spec.segment_len(seg);
            match self.params.get(seg.name()) {
                None if want == 0 => {}
                None => return Err(format!("missing parameter block `{}`", seg.name())),
                Some(v) if v.len() != want => {
                    return Err(format!("block `{}` has {} values, expected {want}", seg.name(), v.len()))
                }
                Some(v) => p.segment_mut(seg).copy_from_slice(v),
            }
        }
        if let Some(extra) = self
            .params
            .keys()
            .find(|k| !Segment::ALL.iter().any(|s| s.name() == k.as_str()))
        {
            return Err(format!("unknown parameter block `{extra}`"));
        }
        if p.values.iter().any(|v| !v.is_finite()) {
            return Err("parameters must be finite".into());
        }
        Ok(p)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("checkpoint serializes");
        write_atomic(path, text.as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(&read_to_string(path)?).map_err(|e| Error::parse(path, e))?;
        if c.format_version != FORMAT_VERSION {
            return Err(Error::parse(path, format!("unsupported format_version {}", c.format_version)));
        }
        Ok(c)
    }

    /// Loads parameters, refusing checkpoints built for a different model.
    pub fn load_params(path: &Path, expected_hash: &str) -> Result<ModelParams> {
        let c = Self::read(path)?;
        if c.config_hash != expected_hash {
            return Err(Error::parse(
                path,
                format!("config_hash {} does not match the configured model {expected_hash}", c.config_hash),
            ));
        }
        c.to_params().map_err(|m| Error::parse(path, m))
    }
}

#[derive(Serialize)]
struct HistoryLine<'a> {
    format_version: u32,
    #[serde(flatten)]
    record: &'a IterRecord,
}

pub fn history_to_jsonl(history: &[IterRecord]) -> String {
    let mut out = String::new();
    for record in history {
        let line = HistoryLine { format_version: FORMAT_VERSION, record };
        out.push_str(&serde_json::to_string(&line).expect("history serializes"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub format_version: u32,
    pub run_id: String,
    pub strategy: String,
    pub seed: u64,
    #[serde(flatten)]
    pub report: MetricsReport,
}

pub const CSV_HEADER: &str = "run_id,strategy,seed,AP50,mAP,tp,fp,fn,loc_err";

impl MetricsFile {
    pub fn new(run_id: &str, strategy: &str, seed: u64, report: MetricsReport) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            run_id: run_id.to_string(),
            strategy: strategy.to_string(),
            seed,
            report,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }

    pub fn csv_row(&self) -> String {
        let c = &self.report.counts;
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.run_id,
            self.strategy,
            self.seed,
            self.report.ap50,
            self.report.map,
            c.true_positives,
            c.false_positives,
            c.false_negatives,
            c.localization_errors
        )
    }
}
