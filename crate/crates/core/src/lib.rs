//! Multi-person head detection with full-range head pose regression:
//! label geometry, synthetic data, a small one-stage network, its losses,
//! training and evaluation.

pub mod datamodel;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod infer;
pub mod labelgen;
pub mod losses;
pub mod net;
pub mod plot;
pub mod synthgen;
pub mod trainer;

pub use error::{Error, Result};
pub use geometry::EulerPose;
