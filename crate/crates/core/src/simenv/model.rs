//! Linear detection heads over per-anchor features.
//!
//! Heads: class logits (`C`), box deltas `(dx, dy, dw, dh)`, objectness
//! (`0`, `1` or `9` outputs depending on the fusion mode) and an optional
//! IoU-quality logit. All parameters live in one flat vector so the
//! optimizer and gradient checks can treat them uniformly.

use alloc::vec;
use alloc::vec::Vec;
use libm::{exp, log};
use rand_distr::{Distribution, Normal};

use crate::assign::Prediction;
use crate::cop::{cop_backward, cop_fuse, iop_backward, iop_fuse, FusionMode, GridShape, WINDOW};
use crate::error::{Error, Result};
use crate::geometry::{AnchorGrid, BBox};
use crate::losses::sigmoid;
use crate::rng::{stream_rng, Stream};

use super::features::FeatureMatrix;

/// Decoded deltas are clamped to `[-DELTA_CLAMP, DELTA_CLAMP]`.
pub const DELTA_CLAMP: f64 = 4.0;

/// Initial foreground probability encoded in the class bias.
pub const PRIOR_PROB: f64 = 0.01;

pub const INIT_STD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelSpec {
    pub num_features: usize,
    pub num_classes: usize,
    pub fusion: FusionMode,
    pub iou_head: bool,
}

/// Named parameter block inside the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segment {
    ClsW,
    ClsB,
    BoxW,
    BoxB,
    ObjW,
    ObjB,
    IouW,
    IouB,
}

impl Segment {
    pub const ALL: [Segment; 8] = [
        Segment::ClsW,
        Segment::ClsB,
        Segment::BoxW,
        Segment::BoxB,
        Segment::ObjW,
        Segment::ObjB,
        Segment::IouW,
        Segment::IouB,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Segment::ClsW => "cls_w",
            Segment::ClsB => "cls_b",
            Segment::BoxW => "box_w",
            Segment::BoxB => "box_b",
            Segment::ObjW => "obj_w",
            Segment::ObjB => "obj_b",
            Segment::IouW => "iou_w",
            Segment::IouB => "iou_b",
        }
    }
}

impl ModelSpec {
    fn outputs(&self) -> [usize; 4] {
        [
            self.num_classes,
            4,
            self.fusion.objectness_width(),
            usize::from(self.iou_head),
        ]
    }

    pub fn segment_len(&self, seg: Segment) -> usize {
        let [c, b, o, i] = self.outputs();
        let d = self.num_features;
        match seg {
            Segment::ClsW => d * c,
            Segment::ClsB => c,
            Segment::BoxW => d * b,
            Segment::BoxB => b,
            Segment::ObjW => d * o,
            Segment::ObjB => o,
            Segment::IouW => d * i,
            Segment::IouB => i,
        }
    }

    pub fn segment_range(&self, seg: Segment) -> core::ops::Range<usize> {
        let mut start = 0;
        for s in Segment::ALL {
            let len = self.segment_len(s);
            if s == seg {
                return start..start + len;
            }
            start += len;
        }
        unreachable!()
    }

    pub fn num_params(&self) -> usize {
        Segment::ALL.iter().map(|&s| self.segment_len(s)).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub spec: ModelSpec,
    pub values: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(spec: ModelSpec) -> Self {
        Self {
            spec,
            values: vec![0.0; spec.num_params()],
        }
    }

    /// Small Gaussian weights, class bias at the foreground prior.
    pub fn init(spec: ModelSpec, seed: u64, index: u64) -> Self {
        let mut p = Self::zeros(spec);
        let mut rng = stream_rng(seed, Stream::Init, index);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        for seg in [Segment::ClsW, Segment::BoxW, Segment::ObjW, Segment::IouW] {
            for v in p.segment_mut(seg) {
                *v = normal.sample(&mut rng);
            }
        }
        let prior = -log((1.0 - PRIOR_PROB) / PRIOR_PROB);
        for v in p.segment_mut(Segment::ClsB) {
            *v = prior;
        }
        p
    }

    pub fn from_values(spec: ModelSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.num_params() {
            return Err(Error::ShapeMismatch("parameter count does not match the model spec"));
        }
        Ok(Self { spec, values })
    }

    pub fn segment(&self, seg: Segment) -> &[f64] {
        &self.values[self.spec.segment_range(seg)]
    }

    pub fn segment_mut(&mut self, seg: Segment) -> &mut [f64] {
        let r = self.spec.segment_range(seg);
        &mut self.values[r]
    }
}

/// Everything the losses need from one forward pass over a scene.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub num_classes: usize,
    /// Raw class probabilities `[anchor][class]`.
    pub probs: Vec<f64>,
    /// Scored (fused) class probabilities; equal to `probs` without fusion.
    pub scores: Vec<f64>,
    /// Deltas after clamping, `[anchor][4]`.
    pub deltas: Vec<f64>,
    /// `true` where the raw delta was clamped (zero gradient).
    pub delta_clamped: Vec<bool>,
    pub boxes: Vec<BBox>,
    /// Objectness probabilities `[anchor][k]`.
    pub objectness: Vec<f64>,
    pub iou_pred: Vec<f64>,
}

impl ForwardOutput {
    pub fn scores_of(&self, anchor: usize) -> &[f64] {
        &self.scores[anchor * self.num_classes..(anchor + 1) * self.num_classes]
    }

    /// Per-anchor predictions carrying the scored probabilities.
    pub fn predictions(&self) -> Vec<Prediction> {
        self.boxes
            .iter()
            .enumerate()
            .map(|(i, b)| Prediction {
                anchor_id: i,
                probs: self.scores_of(i).to_vec(),
                bbox: *b,
            })
            .collect()
    }
}

fn linear(features: &FeatureMatrix, w: &[f64], b: &[f64], out: usize) -> Vec<f64> {
    let mut y = Vec::with_capacity(features.rows * out);
    for i in 0..features.rows {
        let f = features.row(i);
        for k in 0..out {
            let mut acc = b[k];
            for (j, fj) in f.iter().enumerate() {
                acc += fj * w[j * out + k];
            }
            y.push(acc);
        }
    }
    y
}

fn level_shape(grid: &AnchorGrid, level: usize) -> GridShape {
    let l = grid.levels()[level];
    GridShape { rows: l.rows, cols: l.cols }
}

pub fn decode_box(anchor: &BBox, stride: f64, d: &[f64]) -> BBox {
    let (ax, ay) = anchor.center();
    let cx = ax + d[0] * stride;
    let cy = ay + d[1] * stride;
    let w = anchor.width() * exp(d[2]);
    let h = anchor.height() * exp(d[3]);
    BBox::from_center(cx, cy, w, h)
}

pub fn forward(params: &ModelParams, features: &FeatureMatrix, grid: &AnchorGrid) -> Result<ForwardOutput> {
    let spec = params.spec;
    if features.dim != spec.num_features {
        return Err(Error::ShapeMismatch("feature dimension differs from the model"));
    }
    if features.rows != grid.len() {
        return Err(Error::ShapeMismatch("feature rows differ from the anchor count"));
    }
    let c = spec.num_classes;
    let logits = linear(features, params.segment(Segment::ClsW), params.segment(Segment::ClsB), c);
    let probs: Vec<f64> = logits.iter().map(|&z| sigmoid(z)).collect();

    let raw = linear(features, params.segment(Segment::BoxW), params.segment(Segment::BoxB), 4);
    let mut deltas = Vec::with_capacity(raw.len());
    let mut delta_clamped = Vec::with_capacity(raw.len());
    for &d in &raw {
        let clamped = d.clamp(-DELTA_CLAMP, DELTA_CLAMP);
        delta_clamped.push(clamped != d);
        deltas.push(clamped);
    }
    let boxes: Vec<BBox> = grid
        .anchors()
        .iter()
        .map(|a| {
            let stride = grid.levels()[a.level].stride;
            decode_box(&a.bbox, stride, &deltas[a.id * 4..a.id * 4 + 4])
        })
        .collect();

    let k = spec.fusion.objectness_width();
    let objectness: Vec<f64> = linear(features, params.segment(Segment::ObjW), params.segment(Segment::ObjB), k)
        .into_iter()
        .map(sigmoid)
        .collect();
    let scores = fuse(&probs, &objectness, spec, grid)?;

    let iou_pred = if spec.iou_head {
        linear(features, params.segment(Segment::IouW), params.segment(Segment::IouB), 1)
            .into_iter()
            .map(sigmoid)
            .collect()
    } else {
        Vec::new()
    };

    Ok(ForwardOutput {
        num_classes: c,
        probs,
        scores,
        deltas,
        delta_clamped,
        boxes,
        objectness,
        iou_pred,
    })
}

fn fuse(probs: &[f64], objectness: &[f64], spec: ModelSpec, grid: &AnchorGrid) -> Result<Vec<f64>> {
    let c = spec.num_classes;
    match spec.fusion {
        FusionMode::None => Ok(probs.to_vec()),
        FusionMode::Iop => iop_fuse(probs, objectness, c),
        FusionMode::Cop => {
            let mut out = Vec::with_capacity(probs.len());
            for level in 0..grid.levels().len() {
                let r = grid.level_range(level);
                let obj: Vec<[f64; WINDOW]> = objectness[r.start * WINDOW..r.end * WINDOW]
                    .chunks_exact(WINDOW)
                    .map(|w| w.try_into().expect("window"))
                    .collect();
                out.extend(cop_fuse(&probs[r.start * c..r.end * c], &obj, level_shape(grid, level), c)?);
            }
            Ok(out)
        }
    }
}

/// Upstream gradients for one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrads {
    /// dL/dscores `[anchor][class]` (scored probabilities).
    pub scores: Vec<f64>,
    /// dL/dbox corners `[anchor][4]` of the decoded boxes.
    pub boxes: Vec<f64>,
    /// dL/dlogit of the IoU head `[anchor]`.
    pub iou_logit: Vec<f64>,
}

impl HeadGrads {
    pub fn zeros(anchors: usize, spec: &ModelSpec) -> Self {
        Self {
            scores: vec![0.0; anchors * spec.num_classes],
            boxes: vec![0.0; anchors * 4],
            iou_logit: vec![0.0; if spec.iou_head { anchors } else { 0 }],
        }
    }
}

/// Accumulates the parameter gradient of one scene into `out`.
pub fn backward(
    params: &ModelParams,
    features: &FeatureMatrix,
    grid: &AnchorGrid,
    fwd: &ForwardOutput,
    grads: &HeadGrads,
    out: &mut [f64],
) -> Result<()> {
    let spec = params.spec;
    let c = spec.num_classes;
    let n = features.rows;

    // scored probabilities -> class / objectness logits
    let (g_probs, g_obj) = match spec.fusion {
        FusionMode::None => (grads.scores.clone(), Vec::new()),
        FusionMode::Iop => iop_backward(&fwd.probs, &fwd.objectness, c, &grads.scores)?,
        FusionMode::Cop => {
            let mut gp = Vec::with_capacity(fwd.probs.len());
            let mut go = Vec::with_capacity(fwd.objectness.len());
            for level in 0..grid.levels().len() {
                let r = grid.level_range(level);
                let obj: Vec<[f64; WINDOW]> = fwd.objectness[r.start * WINDOW..r.end * WINDOW]
                    .chunks_exact(WINDOW)
                    .map(|w| w.try_into().expect("window"))
                    .collect();
                let (p, o) = cop_backward(
                    &fwd.probs[r.start * c..r.end * c],
                    &obj,
                    level_shape(grid, level),
                    c,
                    &grads.scores[r.start * c..r.end * c],
                )?;
                gp.extend(p);
                go.extend(o.into_iter().flatten());
            }
            (gp, go)
        }
    };
    let g_cls: Vec<f64> = g_probs.iter().zip(&fwd.probs).map(|(g, p)| g * p * (1.0 - p)).collect();
    let g_objl: Vec<f64> = g_obj
        .iter()
        .zip(&fwd.objectness)
        .map(|(g, o)| g * o * (1.0 - o))
        .collect();

    // box corners -> deltas
    let mut g_delta = vec![0.0; n * 4];
    for a in grid.anchors() {
        let i = a.id;
        let stride = grid.levels()[a.level].stride;
        let b = &fwd.boxes[i];
        let g = &grads.boxes[i * 4..i * 4 + 4];
        let w = b.width();
        let h = b.height();
        let gd = [
            stride * (g[0] + g[2]),
            stride * (g[1] + g[3]),
            0.5 * w * (g[2] - g[0]),
            0.5 * h * (g[3] - g[1]),
        ];
        for k in 0..4 {
            if !fwd.delta_clamped[i * 4 + k] {
                g_delta[i * 4 + k] = gd[k];
            }
        }
    }

    let mut accumulate = |seg_w: Segment, seg_b: Segment, g: &[f64], width: usize| {
        if width == 0 {
            return;
        }
        let rw = spec.segment_range(seg_w);
        let rb = spec.segment_range(seg_b);
        for i in 0..n {
            let f = features.row(i);
            let gi = &g[i * width..(i + 1) * width];
            for (k, gk) in gi.iter().enumerate() {
                if *gk == 0.0 {
                    continue;
                }
                out[rb.start + k] += gk;
                for (j, fj) in f.iter().enumerate() {
                    out[rw.start + j * width + k] += fj * gk;
                }
            }
        }
    };
    accumulate(Segment::ClsW, Segment::ClsB, &g_cls, c);
    accumulate(Segment::BoxW, Segment::BoxB, &g_delta, 4);
    accumulate(Segment::ObjW, Segment::ObjB, &g_objl, spec.fusion.objectness_width());
    if spec.iou_head {
        accumulate(Segment::IouW, Segment::IouB, &grads.iou_logit, 1);
    }
    Ok(())
}
