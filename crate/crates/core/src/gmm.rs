//! Two-component 1-D Gaussian mixture fitted by EM.
//!
//! Initialization is deterministic and affine-equivariant: the means start at
//! the sample minimum and maximum, both deviations at half the sample
//! standard deviation, and the weights at one half. After fitting, the
//! components are ordered so that `mu1 <= mu2`, which makes component 1 the
//! low-cost (foreground) mode.

use alloc::vec::Vec;
use core::f64::consts::PI;
use libm::{exp, log, sqrt};

use crate::error::{Error, Result};

pub const SIGMA_FLOOR: f64 = 1e-6;
pub const MAX_ITERS: usize = 100;
pub const LOGLIK_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Gmm2 {
    pub mu1: f64,
    pub mu2: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub pi1: f64,
    pub pi2: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FitReport {
    pub model: Gmm2,
    pub iterations: usize,
    /// Zero when `degenerate` is set.
    pub final_loglik: f64,
    pub degenerate: bool,
    /// Log-likelihood at initialization followed by one entry per EM step.
    pub trace: Vec<f64>,
}

#[inline]
fn log_normal(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    -0.5 * z * z - log(sigma) - 0.5 * log(2.0 * PI)
}

#[inline]
fn log_add(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + log(exp(a - m) + exp(b - m))
}

#[inline]
fn ln_weight(pi: f64) -> f64 {
    if pi > 0.0 {
        log(pi)
    } else {
        f64::NEG_INFINITY
    }
}

impl Gmm2 {
    /// A point mass: both components sit on one value at the variance floor.
    pub fn point_mass(value: f64) -> Self {
        Self {
            mu1: value,
            mu2: value,
            sigma1: SIGMA_FLOOR,
            sigma2: SIGMA_FLOOR,
            pi1: 0.5,
            pi2: 0.5,
        }
    }

    pub fn is_degenerate(&self) -> bool {
        let finite = [self.mu1, self.mu2, self.sigma1, self.sigma2, self.pi1, self.pi2]
            .iter()
            .all(|v| v.is_finite());
        !finite
            || self.sigma1 < SIGMA_FLOOR
            || self.sigma2 < SIGMA_FLOOR
            || (self.mu1 == self.mu2 && self.sigma1 <= SIGMA_FLOOR && self.sigma2 <= SIGMA_FLOOR)
    }

    /// Weighted log densities `(ln pi1 N1(x), ln pi2 N2(x))`.
    pub fn log_joint(&self, x: f64) -> (f64, f64) {
        (
            ln_weight(self.pi1) + log_normal(x, self.mu1, self.sigma1),
            ln_weight(self.pi2) + log_normal(x, self.mu2, self.sigma2),
        )
    }

    /// Posterior probability that `x` came from component 1.
    pub fn posterior1(&self, x: f64) -> f64 {
        let (a, b) = self.log_joint(x);
        let total = log_add(a, b);
        if total == f64::NEG_INFINITY {
            return 0.5;
        }
        exp(a - total)
    }

    /// Hard posterior split: `true` when component 1 is strictly more likely.
    pub fn favors_first(&self, x: f64) -> bool {
        let (a, b) = self.log_joint(x);
        a > b
    }

    fn sorted(self) -> Self {
        if self.mu1 <= self.mu2 {
            self
        } else {
            Self {
                mu1: self.mu2,
                mu2: self.mu1,
                sigma1: self.sigma2,
                sigma2: self.sigma1,
                pi1: self.pi2,
                pi2: self.pi1,
            }
        }
    }
}

fn mixture_loglik(samples: &[f64], m: &Gmm2) -> f64 {
    samples
        .iter()
        .map(|&x| {
            let (a, b) = m.log_joint(x);
            log_add(a, b)
        })
        .sum()
}

/// `sum_i ln(pi1 N(x_i; mu1, sigma1) + pi2 N(x_i; mu2, sigma2))`.
pub fn loglik(samples: &[f64], model: &Gmm2) -> Result<f64> {
    if model.is_degenerate() {
        return Err(Error::DegenerateModel);
    }
    Ok(mixture_loglik(samples, model))
}

/// Separation `(mu2 - mu1)^2 / (sigma1^2 + sigma2^2)`; 0 for degenerate models.
pub fn fisher_score(model: &Gmm2) -> f64 {
    if model.is_degenerate() {
        return 0.0;
    }
    let d = model.mu2 - model.mu1;
    d * d / (model.sigma1 * model.sigma1 + model.sigma2 * model.sigma2)
}

pub fn fit_gmm2(samples: &[f64]) -> Result<FitReport> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    if let Some(index) = samples.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFiniteSample { index });
    }
    let n = samples.len() as f64;
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if samples.len() == 1 || lo == hi {
        return Ok(FitReport {
            model: Gmm2::point_mass(lo),
            iterations: 0,
            final_loglik: 0.0,
            degenerate: true,
            trace: Vec::new(),
        });
    }

    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let sigma0 = (0.5 * sqrt(var)).max(SIGMA_FLOOR);
    let mut m = Gmm2 {
        mu1: lo,
        mu2: hi,
        sigma1: sigma0,
        sigma2: sigma0,
        pi1: 0.5,
        pi2: 0.5,
    };

    let mut resp = Vec::with_capacity(samples.len());
    let mut trace = Vec::with_capacity(MAX_ITERS + 1);
    let mut ll = mixture_loglik(samples, &m);
    trace.push(ll);
    let mut iterations = 0;

    while iterations < MAX_ITERS {
        iterations += 1;

        // E-step
        resp.clear();
        for &x in samples {
            resp.push(m.posterior1(x));
        }

        // M-step
        let n1: f64 = resp.iter().sum();
        let n2: f64 = resp.iter().map(|r| 1.0 - r).sum();
        let mut next = m;
        if n1 > 0.0 {
            let mu = resp.iter().zip(samples).map(|(r, x)| r * x).sum::<f64>() / n1;
            let v = resp
                .iter()
                .zip(samples)
                .map(|(r, x)| r * (x - mu) * (x - mu))
                .sum::<f64>()
                / n1;
            next.mu1 = mu;
            next.sigma1 = sqrt(v).max(SIGMA_FLOOR);
        }
        if n2 > 0.0 {
            let mu = resp
                .iter()
                .zip(samples)
                .map(|(r, x)| (1.0 - r) * x)
                .sum::<f64>()
                / n2;
            let v = resp
                .iter()
                .zip(samples)
                .map(|(r, x)| (1.0 - r) * (x - mu) * (x - mu))
                .sum::<f64>()
                / n2;
            next.mu2 = mu;
            next.sigma2 = sqrt(v).max(SIGMA_FLOOR);
        }
        next.pi1 = (n1 / n).clamp(0.0, 1.0);
        next.pi2 = 1.0 - next.pi1;
        m = next;

        let next_ll = mixture_loglik(samples, &m);
        trace.push(next_ll);
        let delta = next_ll - ll;
        ll = next_ll;
        if delta.abs() < LOGLIK_TOL {
            break;
        }
    }

    Ok(FitReport {
        model: m.sorted(),
        iterations,
        final_loglik: ll,
        degenerate: false,
        trace,
    })
}
