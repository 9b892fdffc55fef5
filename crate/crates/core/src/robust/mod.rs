//! Robust homography estimation and vector-field-consensus filtering.

mod msac;
mod vfc;

pub use msac::{robust_homography, RobustFitResult, DEFAULT_MAX_ITERS};
pub use vfc::{vfc_filter, VfcParams, VfcResult};
