//! Homographies, thin-plate splines and sub-pixel peak localization.

mod homography;
mod tps;

pub use homography::{
    apply_homography, check_homography_validity, fit_homography_dlt, reprojection_errors,
    Homography, HomographyValidityConfig, InvalidHomography,
};
pub(crate) use tps::tps_kernel_sq;
pub use tps::{eval_tps, fit_tps, TpsModel};

use crate::error::Result;

pub type Point = nalgebra::Point2<f64>;

/// Default softargmax temperature for scores in `[0, 1]`.
pub const DEFAULT_SOFTARGMAX_TEMPERATURE: f64 = 0.1;

/// Anything that maps image coordinates to image coordinates.
pub trait PointMap: Sync {
    fn map_point(&self, p: Point) -> Result<Point>;
}

impl PointMap for Homography {
    fn map_point(&self, p: Point) -> Result<Point> {
        self.apply(p)
    }
}

impl PointMap for TpsModel {
    fn map_point(&self, p: Point) -> Result<Point> {
        Ok(self.eval(p))
    }
}

/// A homography followed by a thin-plate spline: `p -> tps(H(p))`.
#[derive(Clone, Debug, PartialEq)]
pub struct HomographyTps {
    pub homography: Homography,
    pub tps: TpsModel,
}

impl PointMap for HomographyTps {
    fn map_point(&self, p: Point) -> Result<Point> {
        Ok(self.tps.eval(self.homography.apply(p)?))
    }
}

/// Expected offset from the window center under `softmax(score / temperature)`.
///
/// `scores` is a row-major `size x size` grid with odd `size`. Non-finite
/// scores get zero weight; a window with no finite score yields `(0, 0)`.
pub fn softargmax(scores: &[f64], size: usize, temperature: f64) -> (f64, f64) {
    assert!(size % 2 == 1, "softargmax window must be odd");
    assert_eq!(scores.len(), size * size, "softargmax window size mismatch");
    assert!(temperature > 0.0, "temperature must be positive");
    let max = scores
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return (0.0, 0.0);
    }
    let half = (size / 2) as f64;
    let mut sum = 0.0;
    let mut sx = 0.0;
    let mut sy = 0.0;
    for (k, &s) in scores.iter().enumerate() {
        if !s.is_finite() {
            continue;
        }
        let w = ((s - max) / temperature).exp();
        let (i, j) = ((k % size) as f64 - half, (k / size) as f64 - half);
        sum += w;
        sx += w * i;
        sy += w * j;
    }
    (sx / sum, sy / sum)
}
