use alloc::vec::Vec;
use libm::{exp, log};
use rand::Rng;

use crate::assign::LabeledObject;
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WorldConfig {
    pub width: f64,
    pub height: f64,
    pub num_classes: usize,
    pub max_objects: usize,
    /// Object side lengths are log-uniform in `[min_size, max_size]`.
    pub min_size: f64,
    pub max_size: f64,
    pub noise_sigma: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            width: 64.0,
            height: 64.0,
            num_classes: 3,
            max_objects: 3,
            min_size: 10.0,
            max_size: 30.0,
            noise_sigma: 0.25,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.width >= 32.0 && self.height >= 32.0) || !self.width.is_finite() || !self.height.is_finite() {
            return Err(Error::InvalidWorld("canvas must be at least 32x32"));
        }
        if self.num_classes == 0 {
            return Err(Error::InvalidWorld("need at least one class"));
        }
        if self.max_objects == 0 {
            return Err(Error::InvalidWorld("max_objects must be at least 1"));
        }
        if !(self.min_size > 0.0 && self.min_size <= self.max_size && self.max_size.is_finite()) {
            return Err(Error::InvalidWorld("size range must satisfy 0 < min_size <= max_size"));
        }
        if self.min_size > self.width.min(self.height) {
            return Err(Error::InvalidWorld("min_size does not fit on the canvas"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidWorld("noise_sigma must be finite and non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Scene {
    pub id: u64,
    pub width: f64,
    pub height: f64,
    pub objects: Vec<LabeledObject>,
    pub noise_seed: u64,
}

/// Samples one scene: uniform object count, log-uniform sizes clipped to
/// the canvas, uniform centres keeping the box inside, uniform classes.
pub fn generate_scene<R: Rng>(cfg: &WorldConfig, rng: &mut R, id: u64) -> Result<Scene> {
    cfg.validate()?;
    let count = rng.random_range(1..=cfg.max_objects);
    let max_w = cfg.max_size.min(cfg.width);
    let max_h = cfg.max_size.min(cfg.height);
    let mut objects = Vec::with_capacity(count);
    for _ in 0..count {
        let w = log_uniform(rng, cfg.min_size, max_w);
        let h = log_uniform(rng, cfg.min_size, max_h);
        let cx = w / 2.0 + rng.random::<f64>() * (cfg.width - w);
        let cy = h / 2.0 + rng.random::<f64>() * (cfg.height - h);
        let class_id = rng.random_range(0..cfg.num_classes);
        let bbox = BBox::from_center(cx, cy, w, h);
        let bbox = BBox::from_corners(
            bbox.x1.max(0.0),
            bbox.y1.max(0.0),
            bbox.x2.min(cfg.width),
            bbox.y2.min(cfg.height),
        );
        objects.push(LabeledObject { class_id, bbox });
    }
    Ok(Scene {
        id,
        width: cfg.width,
        height: cfg.height,
        objects,
        noise_seed: rng.next_u64(),
    })
}

fn log_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        return lo;
    }
    exp(log(lo) + rng.random::<f64>() * (log(hi) - log(lo))).clamp(lo, hi)
}

/// Scene `i` is drawn from its own stream, so any subset can be regenerated alone.
pub fn generate_dataset(cfg: &WorldConfig, seed: u64, count: usize) -> Result<Vec<Scene>> {
    generate_scenes(cfg, seed, 0..count as u64)
}

/// Scenes with the given ids; `generate_dataset` is the `0..count` case.
pub fn generate_scenes(cfg: &WorldConfig, seed: u64, ids: core::ops::Range<u64>) -> Result<Vec<Scene>> {
    cfg.validate()?;
    ids.map(|i| generate_scene(cfg, &mut stream_rng(seed, Stream::Scenes, i), i))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use libm::sqrt;

    #[test]
    fn deterministic() {
        let cfg = WorldConfig::default();
        assert_eq!(generate_dataset(&cfg, 5, 4).unwrap(), generate_dataset(&cfg, 5, 4).unwrap());
        assert_ne!(generate_dataset(&cfg, 5, 4).unwrap(), generate_dataset(&cfg, 6, 4).unwrap());
    }

    #[test]
    fn ranges_agree_with_full_dataset() {
        let cfg = WorldConfig::default();
        let all = generate_dataset(&cfg, 5, 10).unwrap();
        assert_eq!(generate_scenes(&cfg, 5, 4..10).unwrap(), all[4..]);
    }

    #[test]
    fn single_object_world() {
        let cfg = WorldConfig { max_objects: 1, ..Default::default() };
        for s in generate_dataset(&cfg, 1, 50).unwrap() {
            assert_eq!(s.objects.len(), 1);
        }
    }

    #[test]
    fn objects_inside_canvas() {
        let cfg = WorldConfig { min_size: 5.0, max_size: 64.0, ..Default::default() };
        for s in generate_dataset(&cfg, 9, 200).unwrap() {
            assert!(!s.objects.is_empty() && s.objects.len() <= cfg.max_objects);
            for o in &s.objects {
                assert!(o.bbox.x1 >= 0.0 && o.bbox.y1 >= 0.0);
                assert!(o.bbox.x2 <= cfg.width && o.bbox.y2 <= cfg.height);
                assert!(o.bbox.area() > 0.0);
                assert!(o.class_id < cfg.num_classes);
            }
        }
    }

    #[test]
    fn impossible_sizes_rejected() {
        let cfg = WorldConfig { min_size: 100.0, max_size: 120.0, ..Default::default() };
        assert!(generate_dataset(&cfg, 0, 1).is_err());
        let small = WorldConfig { width: 16.0, ..Default::default() };
        assert!(small.validate().is_err());
        let no_classes = WorldConfig { num_classes: 0, ..Default::default() };
        assert!(no_classes.validate().is_err());
    }

    #[test]
    fn classes_are_uniform() {
        // 10k single-object scenes: every class count within 3 sigma of n/3.
        let cfg = WorldConfig { max_objects: 1, num_classes: 3, ..Default::default() };
        let scenes = generate_dataset(&cfg, 123, 10_000).unwrap();
        let mut counts = [0usize; 3];
        for s in &scenes {
            counts[s.objects[0].class_id] += 1;
        }
        let n = 10_000.0;
        let p = 1.0 / 3.0;
        let sd = sqrt(n * p * (1.0 - p));
        for c in counts {
            assert!((c as f64 - n * p).abs() < 3.0 * sd, "{counts:?}");
        }
    }
}
