use std::fmt;

use serde::{Deserialize, Serialize};

use crate::detect::Keypoint;
use crate::error::{Error, Result};
use crate::geometry::{
    check_homography_validity, Homography, HomographyValidityConfig, InvalidHomography, Point,
};
use crate::robust::{robust_homography, DEFAULT_MAX_ITERS};

/// A matched keypoint pair in global image coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub src: Keypoint,
    pub dst: Keypoint,
    pub confidence: f32,
}

impl Correspondence {
    pub fn new(src: Point, dst: Point, confidence: f32) -> Self {
        Self {
            src: Keypoint::new(src.x, src.y, 1.0),
            dst: Keypoint::new(dst.x, dst.y, 1.0),
            confidence,
        }
    }

    pub fn src_point(&self) -> Point {
        self.src.point()
    }

    pub fn dst_point(&self) -> Point {
        self.dst.point()
    }
}

/// Gates a patch pair must pass before its matches are collected.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatchCriteria {
    /// Reject when the match count is at most this.
    pub min_matches: usize,
    /// Reject when the inlier count is at most this.
    pub min_inliers: usize,
    pub inlier_threshold_px: f64,
    pub max_ransac_iters: usize,
    pub validity: HomographyValidityConfig,
}

impl Default for MatchCriteria {
    fn default() -> Self {
        Self {
            min_matches: 20,
            min_inliers: 10,
            inlier_threshold_px: 3.0,
            max_ransac_iters: DEFAULT_MAX_ITERS,
            validity: HomographyValidityConfig::default(),
        }
    }
}

impl MatchCriteria {
    pub fn validate(&self) -> Result<()> {
        if self.min_inliers > self.min_matches
            || !(self.inlier_threshold_px > 0.0)
            || self.max_ransac_iters == 0
        {
            return Err(Error::invalid(format!("invalid match criteria {self:?}")));
        }
        self.validity.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RejectReason {
    TooFewMatches,
    NoHomography,
    InvalidHomography(InvalidHomography),
    TooFewInliers,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::TooFewMatches => f.write_str("too few matches"),
            RejectReason::NoHomography => f.write_str("no homography"),
            RejectReason::InvalidHomography(r) => write!(f, "invalid homography ({r})"),
            RejectReason::TooFewInliers => f.write_str("too few inliers"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum PatchOutcome {
    Accepted {
        homography: Homography,
        correspondences: Vec<Correspondence>,
    },
    Rejected(RejectReason),
}

/// Applies the patch-pair gates in order: match count, robust homography,
/// homography plausibility, inlier count.
pub fn evaluate_patch_pair(
    matches: &[Correspondence],
    criteria: &MatchCriteria,
    seed: u64,
) -> PatchOutcome {
    if matches.len() <= criteria.min_matches {
        return PatchOutcome::Rejected(RejectReason::TooFewMatches);
    }
    let src: Vec<Point> = matches.iter().map(|m| m.src_point()).collect();
    let dst: Vec<Point> = matches.iter().map(|m| m.dst_point()).collect();
    let Ok(fit) = robust_homography(
        &src,
        &dst,
        criteria.inlier_threshold_px,
        criteria.max_ransac_iters,
        seed,
    ) else {
        return PatchOutcome::Rejected(RejectReason::NoHomography);
    };
    if let Err(reason) = check_homography_validity(&fit.homography, &criteria.validity) {
        return PatchOutcome::Rejected(RejectReason::InvalidHomography(reason));
    }
    if fit.inlier_count() <= criteria.min_inliers {
        return PatchOutcome::Rejected(RejectReason::TooFewInliers);
    }
    PatchOutcome::Accepted {
        homography: fit.homography,
        correspondences: matches
            .iter()
            .zip(&fit.inlier_mask)
            .filter(|(_, &m)| m)
            .map(|(c, _)| *c)
            .collect(),
    }
}
