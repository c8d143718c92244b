//! Label assignment distillation for dense single-stage detectors.
//!
//! The crate is `no_std` (it needs `alloc`) and holds every numerical piece:
//! box geometry, the focal and distillation losses with analytic gradients,
//! two-component GMM fitting, PAA/LAD anchor assignment, the co-learning
//! teacher switch, objectness fusion, AP evaluation and a small synthetic
//! detection world with a linear detector to train end to end.
//!
//! File formats, threading and the command line live in the `lad` crate.
#![no_std]
#![deny(unsafe_code)]

extern crate alloc;

pub mod assign;
pub mod colad;
pub mod cop;
pub mod error;
pub mod eval;
pub mod exec;
pub mod geometry;
pub mod gmm;
pub mod losses;
pub mod rng;
pub mod simenv;

pub use error::{Error, Result};
pub use geometry::{Anchor, AnchorGrid, BBox, LevelSpec};
