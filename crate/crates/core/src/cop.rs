//! Objectness fusion of classification scores.
//!
//! COP: every anchor predicts nine objectness values, one per cell of its
//! 3x3 neighbourhood (row-major, centre at index 4). The fused probability
//! is the window average `1/9 * sum_k o_k * p(neighbour_k)`. Cells outside
//! the grid contribute zero and the divisor stays 9.
//!
//! IOP: a single objectness per anchor multiplied into its class scores.
//!
//! Layouts are row-major: class probabilities are `[cell][class]`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

pub const WINDOW: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GridShape {
    pub rows: usize,
    pub cols: usize,
}

impl GridShape {
    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    /// Cell index of window slot `k` around `cell`, if inside the grid.
    #[inline]
    pub fn window_cell(&self, cell: usize, k: usize) -> Option<usize> {
        let r = (cell / self.cols) as isize + (k / 3) as isize - 1;
        let c = (cell % self.cols) as isize + (k % 3) as isize - 1;
        if r < 0 || c < 0 || r >= self.rows as isize || c >= self.cols as isize {
            None
        } else {
            Some(r as usize * self.cols + c as usize)
        }
    }
}

/// Fusion applied to class scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum FusionMode {
    #[default]
    None,
    Iop,
    Cop,
}

impl FusionMode {
    /// Objectness outputs per anchor.
    pub fn objectness_width(self) -> usize {
        match self {
            FusionMode::None => 0,
            FusionMode::Iop => 1,
            FusionMode::Cop => WINDOW,
        }
    }
}

fn check_cop(probs: &[f64], objectness: &[[f64; WINDOW]], shape: GridShape, classes: usize) -> Result<()> {
    if objectness.len() != shape.cells() {
        return Err(Error::GridMismatch("objectness field does not cover the grid"));
    }
    if probs.len() != shape.cells() * classes {
        return Err(Error::GridMismatch("class field does not cover the grid"));
    }
    Ok(())
}

pub fn cop_fuse(probs: &[f64], objectness: &[[f64; WINDOW]], shape: GridShape, classes: usize) -> Result<Vec<f64>> {
    check_cop(probs, objectness, shape, classes)?;
    let mut out = vec![0.0; probs.len()];
    for (cell, obj) in objectness.iter().enumerate() {
        let dst = &mut out[cell * classes..(cell + 1) * classes];
        for (k, &o) in obj.iter().enumerate() {
            let Some(n) = shape.window_cell(cell, k) else { continue };
            for (d, &p) in dst.iter_mut().zip(&probs[n * classes..(n + 1) * classes]) {
                *d += o * p;
            }
        }
        for d in dst.iter_mut() {
            *d /= WINDOW as f64;
        }
    }
    Ok(out)
}

/// Back-propagates `grad_out = dL/dfused` to `(dL/dprobs, dL/dobjectness)`.
pub fn cop_backward(
    probs: &[f64],
    objectness: &[[f64; WINDOW]],
    shape: GridShape,
    classes: usize,
    grad_out: &[f64],
) -> Result<(Vec<f64>, Vec<[f64; WINDOW]>)> {
    check_cop(probs, objectness, shape, classes)?;
    if grad_out.len() != probs.len() {
        return Err(Error::LengthMismatch { expected: probs.len(), actual: grad_out.len() });
    }
    let inv = 1.0 / WINDOW as f64;
    let mut g_probs = vec![0.0; probs.len()];
    let mut g_obj = vec![[0.0; WINDOW]; objectness.len()];
    for (cell, obj) in objectness.iter().enumerate() {
        let g = &grad_out[cell * classes..(cell + 1) * classes];
        for (k, &o) in obj.iter().enumerate() {
            let Some(n) = shape.window_cell(cell, k) else { continue };
            let p = &probs[n * classes..(n + 1) * classes];
            let mut acc = 0.0;
            for c in 0..classes {
                acc += g[c] * p[c];
                g_probs[n * classes + c] += g[c] * o * inv;
            }
            g_obj[cell][k] = acc * inv;
        }
    }
    Ok((g_probs, g_obj))
}

pub fn iop_fuse(probs: &[f64], objectness: &[f64], classes: usize) -> Result<Vec<f64>> {
    if probs.len() != objectness.len() * classes {
        return Err(Error::LengthMismatch { expected: objectness.len() * classes, actual: probs.len() });
    }
    Ok(probs
        .chunks(classes.max(1))
        .zip(objectness)
        .flat_map(|(p, &o)| p.iter().map(move |v| o * v))
        .collect())
}

pub fn iop_backward(probs: &[f64], objectness: &[f64], classes: usize, grad_out: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if probs.len() != objectness.len() * classes || grad_out.len() != probs.len() {
        return Err(Error::LengthMismatch { expected: objectness.len() * classes, actual: probs.len() });
    }
    let mut g_probs = vec![0.0; probs.len()];
    let mut g_obj = vec![0.0; objectness.len()];
    for (i, &o) in objectness.iter().enumerate() {
        for c in 0..classes {
            let j = i * classes + c;
            g_probs[j] = grad_out[j] * o;
            g_obj[i] += grad_out[j] * probs[j];
        }
    }
    Ok((g_probs, g_obj))
}

/// COP gradients with respect to the class and objectness logits.
pub fn cop_backward_logits(
    probs: &[f64],
    objectness: &[[f64; WINDOW]],
    shape: GridShape,
    classes: usize,
    grad_out: &[f64],
) -> Result<(Vec<f64>, Vec<[f64; WINDOW]>)> {
    let (mut gp, mut go) = cop_backward(probs, objectness, shape, classes, grad_out)?;
    for (g, p) in gp.iter_mut().zip(probs) {
        *g *= p * (1.0 - p);
    }
    for (g, o) in go.iter_mut().zip(objectness) {
        for k in 0..WINDOW {
            g[k] *= o[k] * (1.0 - o[k]);
        }
    }
    Ok((gp, go))
}

/// IOP gradients with respect to the class and objectness logits.
pub fn iop_backward_logits(probs: &[f64], objectness: &[f64], classes: usize, grad_out: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let (mut gp, mut go) = iop_backward(probs, objectness, classes, grad_out)?;
    for (g, p) in gp.iter_mut().zip(probs) {
        *g *= p * (1.0 - p);
    }
    for (g, o) in go.iter_mut().zip(objectness) {
        *g *= o * (1.0 - o);
    }
    Ok((gp, go))
}
