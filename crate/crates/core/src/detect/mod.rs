//! Crack-structure keypoints, descriptors and feature volumes, plus the
//! binary exchange format for detections computed elsewhere.

mod descriptor;
mod exchange;
mod features;
mod keypoints;
mod score;

pub use descriptor::{
    compute_descriptors, describe, descriptor_distance, Descriptor, DESCRIPTOR_DIM,
};
pub use exchange::{
    ingest_external_detections, parse_detections, save_detections, write_detections, Detections,
    Tile, TileKind,
};
pub use features::{build_feature_volume, FeatureVolume, FEATURE_CHANNELS};
pub use keypoints::{detect_keypoints, nms, Keypoint};
pub(crate) use score::score_from_black_hat;
pub use score::{black_hat, crack_score_map, otsu_threshold, ridge_mask};

use serde::{Deserialize, Serialize};

use crate::imgcore::Plane;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorParams {
    /// Cracks are brighter than their surroundings.
    pub invert: bool,
    pub blackhat_radii: Vec<usize>,
    pub ring_radii: Vec<usize>,
    pub smoothing_sigma: f64,
    /// Black-hat responses at or below this never count as ridge.
    pub min_ridge_contrast: f32,
    pub nms_radius: f64,
    pub threshold: f32,
    pub max_count: usize,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            invert: false,
            blackhat_radii: vec![1, 2, 3],
            ring_radii: vec![2, 3, 4],
            smoothing_sigma: 1.0,
            min_ridge_contrast: 0.02,
            nms_radius: 4.0,
            threshold: 0.2,
            max_count: 3840,
        }
    }
}

impl DetectorParams {
    pub fn validate(&self) -> crate::Result<()> {
        let ok = !self.blackhat_radii.is_empty()
            && self.blackhat_radii.iter().all(|&r| r > 0)
            && !self.ring_radii.is_empty()
            && self.ring_radii.iter().all(|&r| r > 0)
            && self.smoothing_sigma >= 0.0
            && self.nms_radius >= 0.0
            && (0.0..1.0).contains(&self.threshold)
            && self.max_count > 0;
        if ok {
            Ok(())
        } else {
            Err(crate::Error::invalid(format!(
                "invalid detector parameters {self:?}"
            )))
        }
    }
}

/// Keypoints on the crack score map with descriptors computed on the
/// black-hat crack image (shared structure across modalities).
pub fn detect_and_describe(
    gray: &Plane,
    params: &DetectorParams,
) -> (Vec<Keypoint>, Vec<Descriptor>) {
    let src = if params.invert {
        gray.map(|v| 1.0 - v)
    } else {
        gray.clone()
    };
    let bh = black_hat(&src, &params.blackhat_radii);
    let score = score::score_from_black_hat(&bh, params);
    let kps = detect_keypoints(
        &score,
        params.nms_radius,
        params.threshold,
        params.max_count,
    );
    let desc = compute_descriptors(&bh, &kps);
    (kps, desc)
}

#[cfg(test)]
mod tests;
