//! Classification, distillation and localization losses with analytic gradients.
//!
//! Probabilities are independent per-class sigmoids. Student probabilities
//! are clamped to `[PROB_EPS, 1 - PROB_EPS]` before any logarithm. Gradients
//! in [`LossValue`] are taken with respect to the student's logits (or the
//! predicted box corners for [`iou_loss`]); the `*_dp` helpers return the
//! derivative with respect to the probability itself, which is what the
//! fused-score path needs.

use alloc::vec;
use alloc::vec::Vec;
use libm::{log, pow};

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};

pub const PROB_EPS: f64 = 1e-7;

/// Strict IoU bound for localization distillation samples.
pub const LOC_DISTILL_IOU: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad: Vec<f64>,
}

#[inline]
pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

/// `dp/dz` for `p = sigmoid(z)`, written in terms of `p`.
#[inline]
fn dsigmoid(p: f64) -> f64 {
    p * (1.0 - p)
}

// x^g with the convention 0^0 = 1.
#[inline]
fn powg(x: f64, g: f64) -> f64 {
    if g == 0.0 {
        1.0
    } else {
        pow(x, g)
    }
}

// d/dx x^g, with 0 * x^(g-1) taken as 0.
#[inline]
fn dpowg(x: f64, g: f64) -> f64 {
    if g == 0.0 {
        0.0
    } else {
        g * pow(x, g - 1.0)
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma.is_finite() && gamma >= 0.0 {
        Ok(())
    } else {
        Err(Error::NegativeGamma(gamma))
    }
}

fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::LengthMismatch { expected, actual })
    }
}

/// Binary focal loss and its derivative with respect to `p` (not the logit).
///
/// No alpha balancing. The focal factor is differentiated.
pub fn focal_loss_dp(p: f64, target: bool, gamma: f64) -> (f64, f64) {
    let p = clamp_prob(p);
    if target {
        let q = 1.0 - p;
        let lp = log(p);
        let value = -powg(q, gamma) * lp;
        let d = dpowg(q, gamma) * lp - powg(q, gamma) / p;
        (value, d)
    } else {
        let lq = log(1.0 - p);
        let value = -powg(p, gamma) * lq;
        let d = -dpowg(p, gamma) * lq + powg(p, gamma) / (1.0 - p);
        (value, d)
    }
}

/// Binary focal loss for one probability; `grad` has one entry, `dL/dz`.
pub fn focal_loss(p: f64, target: bool, gamma: f64) -> Result<LossValue> {
    check_gamma(gamma)?;
    let (value, d) = focal_loss_dp(p, target, gamma);
    let pc = clamp_prob(p);
    Ok(LossValue {
        value,
        grad: vec![d * dsigmoid(pc)],
    })
}

// t * ln(t / s) with 0 * ln 0 = 0.
#[inline]
fn xlogy_ratio(t: f64, s: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        t * (log(t) - log(s))
    }
}

/// Focal-weighted binary KL between teacher and student probabilities.
///
/// Returns the value and `dL/dp_s` per class. The weight
/// `|p_t - p_s|^gamma` is held constant when differentiating. Teacher
/// entries are used as given (0 and 1 are fine) while student entries are
/// clamped.
pub fn kl_focal_dp(p_t: &[f64], p_s: &[f64], gamma: f64) -> Result<(f64, Vec<f64>)> {
    check_gamma(gamma)?;
    check_len(p_t.len(), p_s.len())?;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(p_s.len());
    for (&t, &s) in p_t.iter().zip(p_s) {
        let s = clamp_prob(s);
        let w = powg((t - s).abs(), gamma);
        let kl = xlogy_ratio(t, s) + xlogy_ratio(1.0 - t, 1.0 - s);
        value += w * kl;
        grad.push(w * ((1.0 - t) / (1.0 - s) - t / s));
    }
    Ok((value, grad))
}

pub fn kl_focal(p_t: &[f64], p_s: &[f64], gamma: f64) -> Result<LossValue> {
    let (value, dp) = kl_focal_dp(p_t, p_s, gamma)?;
    let grad = dp
        .iter()
        .zip(p_s)
        .map(|(d, &s)| d * dsigmoid(clamp_prob(s)))
        .collect();
    Ok(LossValue { value, grad })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum LpOrder {
    L1,
    L2,
}

pub fn soft_lp_dp(p_t: &[f64], p_s: &[f64], order: LpOrder) -> Result<(f64, Vec<f64>)> {
    check_len(p_t.len(), p_s.len())?;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(p_s.len());
    for (&t, &s) in p_t.iter().zip(p_s) {
        let s = clamp_prob(s);
        let diff = s - t;
        match order {
            LpOrder::L1 => {
                value += diff.abs();
                grad.push(if diff > 0.0 {
                    1.0
                } else if diff < 0.0 {
                    -1.0
                } else {
                    0.0
                });
            }
            LpOrder::L2 => {
                value += diff * diff;
                grad.push(2.0 * diff);
            }
        }
    }
    Ok((value, grad))
}

/// L1 or L2 distance between soft labels, gradient w.r.t. student logits.
pub fn soft_lp(p_t: &[f64], p_s: &[f64], order: LpOrder) -> Result<LossValue> {
    let (value, dp) = soft_lp_dp(p_t, p_s, order)?;
    let grad = dp
        .iter()
        .zip(p_s)
        .map(|(d, &s)| d * dsigmoid(clamp_prob(s)))
        .collect();
    Ok(LossValue { value, grad })
}

/// `1 - IoU(pred, target)` with the gradient over `[x1, y1, x2, y2]` of `pred`.
///
/// The gradient is piecewise: intersection terms vanish when the boxes do
/// not overlap along an axis.
pub fn iou_loss(pred: &BBox, target: &BBox) -> LossValue {
    let ix1 = pred.x1.max(target.x1);
    let iy1 = pred.y1.max(target.y1);
    let ix2 = pred.x2.min(target.x2);
    let iy2 = pred.y2.min(target.y2);
    let iw = ix2 - ix1;
    let ih = iy2 - iy1;
    let pw = pred.width();
    let ph = pred.height();
    let area_p = pw * ph;
    let area_t = target.area();

    if iw <= 0.0 || ih <= 0.0 {
        return LossValue {
            value: 1.0,
            grad: vec![0.0; 4],
        };
    }
    let inter = iw * ih;
    let union = area_p + area_t - inter;
    if union <= 0.0 {
        return LossValue {
            value: 1.0,
            grad: vec![0.0; 4],
        };
    }
    let value = 1.0 - inter / union;

    // d inter / d coord; active where pred defines the intersection edge,
    // half-weighted on coincident edges so identical boxes have zero gradient.
    let edge = |a: f64, b: f64, v: f64| match a.partial_cmp(&b) {
        Some(core::cmp::Ordering::Greater) => v,
        Some(core::cmp::Ordering::Equal) => 0.5 * v,
        _ => 0.0,
    };
    let d_inter = [
        edge(pred.x1, target.x1, -ih),
        edge(pred.y1, target.y1, -iw),
        edge(target.x2, pred.x2, ih),
        edge(target.y2, pred.y2, iw),
    ];
    let d_area = [-ph, -pw, ph, pw];
    let u2 = union * union;
    let grad = (0..4)
        .map(|k| {
            let d_union = d_area[k] - d_inter[k];
            -(d_inter[k] * union - inter * d_union) / u2
        })
        .collect();
    LossValue { value, grad }
}

/// Indices of teacher boxes whose best IoU with any ground truth is > 0.5.
pub fn select_loc_distill(teacher_boxes: &[BBox], gt_boxes: &[BBox]) -> Vec<usize> {
    if gt_boxes.is_empty() {
        return Vec::new();
    }
    teacher_boxes
        .iter()
        .enumerate()
        .filter(|(_, tb)| {
            gt_boxes
                .iter()
                .map(|g| iou(tb, g))
                .fold(0.0, f64::max)
                > LOC_DISTILL_IOU
        })
        .map(|(i, _)| i)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::LN_2;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn focal_examples() {
        let perfect = focal_loss(1.0 - PROB_EPS, true, 2.0).unwrap();
        assert!(perfect.value < 1e-20);
        let bce = focal_loss(0.5, true, 0.0).unwrap();
        assert!(close(bce.value, LN_2, 1e-15));
        let v = focal_loss(0.9, true, 2.0).unwrap().value;
        assert!(close(v, 0.01 * -libm::log(0.9), 1e-15));
        assert!(close(v, 1.0536e-3, 1e-7));
    }

    #[test]
    fn focal_rejects_negative_gamma() {
        assert_eq!(focal_loss(0.5, true, -1.0), Err(Error::NegativeGamma(-1.0)));
        assert!(kl_focal(&[0.5], &[0.5], -0.1).is_err());
    }

    #[test]
    fn kl_examples() {
        for gamma in [0.0, 0.5, 2.0] {
            let p = [0.1, 0.5, 0.93];
            assert_eq!(kl_focal(&p, &p, gamma).unwrap().value, 0.0);
        }
        let v = kl_focal(&[0.8], &[0.6], 0.0).unwrap().value;
        let expected = 0.8 * libm::log(4.0 / 3.0) + 0.2 * libm::log(0.5);
        assert!(close(v, expected, 1e-15));
        assert!(close(v, 0.09151, 1e-5));
    }

    #[test]
    fn kl_one_hot_matches_focal() {
        let ps = [0.3, 0.72, 0.05, 0.5];
        for class in 0..4 {
            let pt: Vec<f64> = (0..4).map(|c| if c == class { 1.0 } else { 0.0 }).collect();
            let kl = kl_focal(&pt, &ps, 2.0).unwrap();
            let mut sum = 0.0;
            for (c, &p) in ps.iter().enumerate() {
                sum += focal_loss(p, c == class, 2.0).unwrap().value;
            }
            assert!(close(kl.value, sum, 1e-12));
        }
    }

    #[test]
    fn kl_length_mismatch() {
        assert_eq!(
            kl_focal(&[0.5, 0.5], &[0.5], 1.0),
            Err(Error::LengthMismatch { expected: 2, actual: 1 })
        );
        assert!(soft_lp(&[0.5], &[], LpOrder::L1).is_err());
    }

    #[test]
    fn soft_lp_examples() {
        let same = soft_lp(&[0.3, 0.4], &[0.3, 0.4], LpOrder::L2).unwrap();
        assert_eq!(same.value, 0.0);
        let l1 = soft_lp(&[0.8, 0.2], &[0.5, 0.5], LpOrder::L1).unwrap();
        assert!(close(l1.value, 0.6, 1e-12));
        let l2 = soft_lp(&[0.8, 0.2], &[0.5, 0.5], LpOrder::L2).unwrap();
        assert!(close(l2.value, 0.18, 1e-12));
        let tie = soft_lp(&[0.4], &[0.4], LpOrder::L1).unwrap();
        assert_eq!(tie.grad, [0.0]);
    }

    #[test]
    fn iou_loss_examples() {
        let a = BBox::from_corners(0., 0., 2., 2.);
        assert_eq!(iou_loss(&a, &a).value, 0.0);
        assert_eq!(iou_loss(&a, &a).grad, [0.0; 4]);
        let far = BBox::from_corners(5., 5., 6., 6.);
        let d = iou_loss(&far, &a);
        assert_eq!(d.value, 1.0);
        assert_eq!(d.grad, [0.0; 4]);
        let half = iou_loss(&a, &BBox::from_corners(1., 0., 3., 2.));
        assert!(close(half.value, 2.0 / 3.0, 1e-15));
    }

    #[test]
    fn loc_distill_selection() {
        let gt = [BBox::from_corners(1., 0., 3., 2.)];
        let teacher = [
            BBox::from_corners(1., 0., 3., 2.),
            BBox::from_corners(10., 10., 12., 12.),
            BBox::from_corners(0., 0., 2., 2.),
        ];
        assert_eq!(select_loc_distill(&teacher, &gt), [0]);
        assert!(select_loc_distill(&teacher, &[]).is_empty());
    }

    proptest! {
        #[test]
        fn focal_gamma_zero_is_bce(p in 0.001..0.999f64, t in any::<bool>()) {
            let v = focal_loss(p, t, 0.0).unwrap().value;
            let bce = if t { -libm::log(p) } else { -libm::log(1.0 - p) };
            prop_assert!((v - bce).abs() < 1e-12);
        }

        #[test]
        fn kl_non_negative(
            pairs in proptest::collection::vec((0.0..1.0f64, 0.0..1.0f64), 1..8),
            gamma in prop_oneof![Just(0.0), Just(0.5), Just(2.0)],
        ) {
            let (pt, ps): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let v = kl_focal(&pt, &ps, gamma).unwrap().value;
            prop_assert!(v >= 0.0);
            let differs = pt.iter().zip(&ps).any(|(t, s)| *t != clamp_prob(*s));
            if differs && pt.iter().all(|t| (PROB_EPS..=1.0 - PROB_EPS).contains(t)) {
                prop_assert!(v > 0.0);
            }
        }

        #[test]
        fn loc_distill_monotone(
            x in 0.0..10.0f64, y in 0.0..10.0f64, w in 1.0..8.0f64, h in 1.0..8.0f64,
            shrink in 0.0..1.0f64,
        ) {
            // Moving a teacher box toward its gt raises IoU and must keep it selected.
            let gt = BBox::from_corners(x, y, x + w, y + h);
            let shifted = gt.translate(w * 0.6, 0.0);
            let closer = gt.translate(w * 0.6 * shrink, 0.0);
            prop_assert!(iou(&closer, &gt) >= iou(&shifted, &gt));
            let before = select_loc_distill(&[shifted], &[gt]);
            let after = select_loc_distill(&[closer], &[gt]);
            if !before.is_empty() {
                prop_assert_eq!(after, [0]);
            }
        }
    }
}
