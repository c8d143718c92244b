use alloc::vec::Vec;
use libm::log;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::geometry::{iou, AnchorGrid};
use crate::rng::{stream_rng, Stream};

use super::world::Scene;

/// Offset x/y, log size ratio w/h, IoU with the nearest object.
pub const GEOMETRIC_CHANNELS: usize = 5;

/// Offset and log-ratio channels are clipped to this magnitude.
pub const FEATURE_CLIP: f64 = 4.0;

pub fn feature_dim(num_classes: usize) -> usize {
    GEOMETRIC_CHANNELS + num_classes
}

/// Row-major `[anchor][channel]` features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

/// Index of the object whose centre is closest to `(x, y)`; ties to the lower index.
fn nearest_object(scene: &Scene, x: f64, y: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, o) in scene.objects.iter().enumerate() {
        let (cx, cy) = o.bbox.center();
        let d = (cx - x) * (cx - x) + (cy - y) * (cy - y);
        if best.is_none_or(|(_, b)| d < b) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i)
}

/// Per-anchor features: geometry relative to the nearest object plus noisy
/// one-hot class evidence for that object's class.
pub fn extract_features<R: Rng>(
    scene: &Scene,
    grid: &AnchorGrid,
    num_classes: usize,
    noise_sigma: f64,
    rng: &mut R,
) -> FeatureMatrix {
    let dim = feature_dim(num_classes);
    let noise = Normal::new(0.0, noise_sigma.max(0.0)).expect("finite sigma");
    let mut values = Vec::with_capacity(grid.len() * dim);
    for anchor in grid.anchors() {
        let spec = grid.levels()[anchor.level];
        let (ax, ay) = anchor.bbox.center();
        let nearest = nearest_object(scene, ax, ay);
        match nearest {
            Some(i) => {
                let o = &scene.objects[i];
                let (ox, oy) = o.bbox.center();
                let clip = |v: f64| v.clamp(-FEATURE_CLIP, FEATURE_CLIP);
                values.push(clip((ox - ax) / spec.stride));
                values.push(clip((oy - ay) / spec.stride));
                values.push(clip(log(o.bbox.width().max(1e-9) / spec.scale)));
                values.push(clip(log(o.bbox.height().max(1e-9) / spec.scale)));
                values.push(iou(&anchor.bbox, &o.bbox));
            }
            None => values.extend([0.0; GEOMETRIC_CHANNELS]),
        }
        for c in 0..num_classes {
            let hot = matches!(nearest, Some(i) if scene.objects[i].class_id == c);
            let base = if hot { 1.0 } else { 0.0 };
            let eps = if noise_sigma > 0.0 { noise.sample(rng) } else { 0.0 };
            values.push(base + eps);
        }
    }
    FeatureMatrix {
        rows: grid.len(),
        dim,
        values,
    }
}

/// Features drawn from the scene's own noise stream.
pub fn scene_features(scene: &Scene, grid: &AnchorGrid, num_classes: usize, noise_sigma: f64) -> FeatureMatrix {
    let mut rng = stream_rng(scene.noise_seed, Stream::Noise, scene.id);
    extract_features(scene, grid, num_classes, noise_sigma, &mut rng)
}
