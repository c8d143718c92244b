//! Axis-aligned boxes, IoU, the anchor grid and greedy NMS.
//!
//! Boxes are corner-parameterized in continuous canvas units. There is no
//! `+1` pixel convention anywhere: a box `[0, 0, 2, 2]` has area 4.

use alloc::vec::Vec;
use core::cmp::Ordering;
use core::ops::Range;

use crate::error::{Error, Result};

/// Corner-parameterized rectangle `(x1, y1)`..`(x2, y2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    /// Checked constructor: coordinates finite and ordered.
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = Self { x1, y1, x2, y2 };
        if b.is_valid() {
            Ok(b)
        } else {
            Err(Error::InvalidBox { x1, y1, x2, y2 })
        }
    }

    pub const fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self {
            x1: cx - 0.5 * w,
            y1: cy - 0.5 * h,
            x2: cx + 0.5 * w,
            y2: cy + 0.5 * h,
        }
    }

    pub fn from_array(a: [f64; 4]) -> Result<Self> {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn is_valid(&self) -> bool {
        self.x1.is_finite()
            && self.y1.is_finite()
            && self.x2.is_finite()
            && self.y2.is_finite()
            && self.x1 <= self.x2
            && self.y1 <= self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self {
            x1: self.x1 + dx,
            y1: self.y1 + dy,
            x2: self.x2 + dx,
            y2: self.y2 + dy,
        }
    }

    /// Overlap area with `other`; zero when the boxes do not intersect.
    pub fn intersection(&self, other: &BBox) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }
}

/// Intersection over union. Empty intersections and zero-area unions give 0.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// One pyramid level: square anchors of side `scale` every `stride` units.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LevelSpec {
    pub stride: f64,
    pub scale: f64,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Anchor {
    pub id: usize,
    pub level: usize,
    pub row: usize,
    pub col: usize,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorGrid {
    levels: Vec<LevelSpec>,
    anchors: Vec<Anchor>,
    offsets: Vec<usize>,
}

impl AnchorGrid {
    /// Builds the grid level-major, then row-major within a level.
    pub fn generate(levels: &[LevelSpec]) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::NoLevels);
        }
        let total: usize = levels.iter().map(|l| l.rows * l.cols).sum();
        let mut anchors = Vec::with_capacity(total);
        let mut offsets = Vec::with_capacity(levels.len() + 1);
        for (level, spec) in levels.iter().enumerate() {
            let ok = spec.stride.is_finite()
                && spec.scale.is_finite()
                && spec.stride > 0.0
                && spec.scale > 0.0
                && spec.rows > 0
                && spec.cols > 0;
            if !ok {
                return Err(Error::BadLevel { level });
            }
            offsets.push(anchors.len());
            for row in 0..spec.rows {
                for col in 0..spec.cols {
                    let cx = (col as f64 + 0.5) * spec.stride;
                    let cy = (row as f64 + 0.5) * spec.stride;
                    anchors.push(Anchor {
                        id: anchors.len(),
                        level,
                        row,
                        col,
                        bbox: BBox::from_center(cx, cy, spec.scale, spec.scale),
                    });
                }
            }
        }
        offsets.push(anchors.len());
        Ok(Self {
            levels: levels.to_vec(),
            anchors,
            offsets,
        })
    }

    pub fn levels(&self) -> &[LevelSpec] {
        &self.levels
    }

    pub fn anchors(&self) -> &[Anchor] {
        &self.anchors
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    /// Flat anchor ids covered by `level`.
    pub fn level_range(&self, level: usize) -> Range<usize> {
        self.offsets[level]..self.offsets[level + 1]
    }

    /// Anchor id at `(row + dr, col + dc)` on the same level, if inside the grid.
    pub fn neighbor(&self, id: usize, dr: isize, dc: isize) -> Option<usize> {
        let a = &self.anchors[id];
        let spec = &self.levels[a.level];
        let r = a.row as isize + dr;
        let c = a.col as isize + dc;
        if r < 0 || c < 0 || r >= spec.rows as isize || c >= spec.cols as isize {
            return None;
        }
        Some(self.offsets[a.level] + r as usize * spec.cols + c as usize)
    }
}

/// Greedy non-maximum suppression.
///
/// Returns kept indices in descending-score order; equal scores keep the
/// lower original index first. A box is suppressed when its IoU with an
/// already kept box exceeds `iou_threshold`.
pub fn nms(dets: &[(BBox, f64)], iou_threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .1
            .partial_cmp(&dets[a].1)
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut keep: Vec<usize> = Vec::new();
    for i in order {
        if keep
            .iter()
            .all(|&k| iou(&dets[k].0, &dets[i].0) <= iou_threshold)
        {
            keep.push(i);
        }
    }
    keep
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn iou_examples() {
        assert_eq!(iou(&b(0., 0., 2., 2.), &b(0., 0., 2., 2.)), 1.0);
        assert_eq!(iou(&b(0., 0., 1., 1.), &b(5., 5., 6., 6.)), 0.0);
        let v = iou(&b(0., 0., 2., 2.), &b(1., 0., 3., 2.));
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn iou_of_zero_area_boxes_is_zero() {
        let p = b(1., 1., 1., 1.);
        assert_eq!(iou(&p, &p), 0.0);
        let line = b(0., 0., 2., 0.);
        assert_eq!(iou(&line, &b(0., 0., 2., 2.)), 0.0);
    }

    #[test]
    fn rejects_inverted_box() {
        assert!(BBox::new(2., 0., 1., 1.).is_err());
        assert!(BBox::new(0., 0., f64::NAN, 1.).is_err());
    }

    #[test]
    fn single_anchor() {
        let g = AnchorGrid::generate(&[LevelSpec { stride: 4., scale: 4., rows: 1, cols: 1 }]).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g.anchors()[0].bbox, b(0., 0., 4., 4.));
    }

    #[test]
    fn anchor_centers_row_major() {
        let g = AnchorGrid::generate(&[LevelSpec { stride: 4., scale: 4., rows: 2, cols: 2 }]).unwrap();
        let centers: Vec<_> = g.anchors().iter().map(|a| a.bbox.center()).collect();
        assert_eq!(centers, [(2., 2.), (6., 2.), (2., 6.), (6., 6.)]);
    }

    #[test]
    fn levels_are_major() {
        let g = AnchorGrid::generate(&[
            LevelSpec { stride: 4., scale: 4., rows: 1, cols: 1 },
            LevelSpec { stride: 8., scale: 8., rows: 1, cols: 1 },
        ])
        .unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g.anchors()[0].level, 0);
        assert_eq!(g.anchors()[1].level, 1);
        assert_eq!(g.level_range(1), 1..2);
    }

    #[test]
    fn empty_or_bad_levels() {
        assert_eq!(AnchorGrid::generate(&[]), Err(Error::NoLevels));
        let bad = LevelSpec { stride: 0., scale: 4., rows: 1, cols: 1 };
        assert_eq!(AnchorGrid::generate(&[bad]), Err(Error::BadLevel { level: 0 }));
    }

    #[test]
    fn neighbors_respect_borders() {
        let g = AnchorGrid::generate(&[LevelSpec { stride: 4., scale: 4., rows: 3, cols: 3 }]).unwrap();
        assert_eq!(g.neighbor(0, -1, 0), None);
        assert_eq!(g.neighbor(0, 1, 1), Some(4));
        assert_eq!(g.neighbor(4, -1, -1), Some(0));
        assert_eq!(g.neighbor(8, 0, 1), None);
    }

    #[test]
    fn nms_examples() {
        assert!(nms(&[], 0.5).is_empty());
        assert_eq!(nms(&[(b(0., 0., 1., 1.), 0.3)], 0.5), [0]);
        let same = [(b(0., 0., 2., 2.), 0.8), (b(0., 0., 2., 2.), 0.9)];
        assert_eq!(nms(&same, 0.5), [1]);
        let partial = [(b(0., 0., 2., 2.), 0.9), (b(1., 0., 3., 2.), 0.8)];
        assert_eq!(nms(&partial, 0.5), [0, 1]);
    }

    #[test]
    fn nms_ties_prefer_lower_index() {
        let same = [(b(0., 0., 2., 2.), 0.5), (b(0., 0., 2., 2.), 0.5)];
        assert_eq!(nms(&same, 0.5), [0]);
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (-50.0..50.0f64, -50.0..50.0f64, 0.0..30.0f64, 0.0..30.0f64)
            .prop_map(|(x, y, w, h)| BBox::from_corners(x, y, x + w, y + h))
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), c in arb_box()) {
            let v = iou(&a, &c);
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(v, iou(&c, &a));
        }

        #[test]
        fn iou_self_is_one(a in arb_box()) {
            prop_assume!(a.area() > 1e-9);
            prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn iou_translation_invariant(a in arb_box(), c in arb_box(), dx in -20.0..20.0f64, dy in -20.0..20.0f64) {
            let before = iou(&a, &c);
            let after = iou(&a.translate(dx, dy), &c.translate(dx, dy));
            prop_assert!((before - after).abs() < 1e-9);
        }

        #[test]
        fn nms_keeps_separated_subset(
            boxes in proptest::collection::vec((arb_box(), 0.0..1.0f64), 0..20),
            thr in 0.1..0.9f64,
        ) {
            let keep = nms(&boxes, thr);
            for (n, &i) in keep.iter().enumerate() {
                prop_assert!(i < boxes.len());
                for &j in &keep[n + 1..] {
                    prop_assert!(i != j);
                    prop_assert!(iou(&boxes[i].0, &boxes[j].0) <= thr);
                    prop_assert!(boxes[i].1 >= boxes[j].1);
                }
            }
        }

        #[test]
        fn anchors_are_pure(rows in 1usize..6, cols in 1usize..6, stride in 1.0..16.0f64) {
            let spec = [LevelSpec { stride, scale: stride * 2.0, rows, cols }];
            let g1 = AnchorGrid::generate(&spec).unwrap();
            let g2 = AnchorGrid::generate(&spec).unwrap();
            prop_assert_eq!(g1.len(), rows * cols);
            prop_assert_eq!(g1, g2);
        }
    }
}
