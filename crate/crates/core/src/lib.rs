#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! Registration of large multi-modal image pairs through shared crack
//! structure: keypoints, patch-wise matching, robust filtering, a global
//! homography plus thin-plate spline, coarse-to-fine refinement and
//! chunked warping.

pub mod config;
pub mod detect;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod imgcore;
pub mod matching;
pub mod pipeline;
pub mod refine;
pub mod robust;
pub mod synth;
pub mod warp;

pub use error::{Error, Result};
pub use geometry::{Homography, HomographyTps, Point, PointMap, TpsModel};
pub use imgcore::{Image, Interpolation, Normalize, Plane};
