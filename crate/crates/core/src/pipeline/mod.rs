//! One-stage registration: patches, matching, gates, filtering, H + TPS.

mod archive;
mod stats;

pub use archive::{read_result, read_result_file, write_result, write_result_file};
pub use stats::{LevelStats, StageStats};

use log::{debug, info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detect::{
    black_hat, compute_descriptors, detect_keypoints, Descriptor, DetectorParams, Keypoint,
};
use crate::error::{Error, Result};
use crate::geometry::{
    fit_homography_dlt, fit_tps, Homography, HomographyTps, Point, PointMap, TpsModel,
};
use crate::imgcore::Image;
use crate::matching::{
    candidate_pairs, dedupe_points, evaluate_patch_pair, make_patch_grid, mnn_match,
    Correspondence, MatchCriteria, PatchGrid, PatchOutcome, DEFAULT_MAX_RATIO,
};
use crate::robust::{vfc_filter, VfcParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub patch_size: usize,
    pub patch_stride: usize,
    /// Neighbouring B patches searched per A patch, in strides.
    pub search_radius_patches: usize,
    /// Strongest keypoints kept per patch.
    pub max_keypoints_per_patch: usize,
    pub max_ratio: f32,
    pub detector: DetectorParams,
    /// Polarity of image B when it differs from `detector.invert`.
    pub invert_b: Option<bool>,
    pub criteria: MatchCriteria,
    pub dedupe_radius: f64,
    pub vfc: VfcParams,
    /// Keep the pre-VFC set when VFC removes more than this fraction.
    pub vfc_max_removed_fraction: f64,
    pub tps_lambda: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            patch_size: 1024,
            patch_stride: 768,
            search_radius_patches: 1,
            max_keypoints_per_patch: 2560,
            max_ratio: DEFAULT_MAX_RATIO,
            // capped per patch instead
            detector: DetectorParams {
                max_count: u32::MAX as usize,
                ..DetectorParams::default()
            },
            invert_b: None,
            criteria: MatchCriteria::default(),
            dedupe_radius: 4.0,
            vfc: VfcParams::default(),
            vfc_max_removed_fraction: 0.6,
            tps_lambda: 0.0,
        }
    }
}

impl PipelineConfig {
    pub fn detector_b(&self) -> DetectorParams {
        DetectorParams {
            invert: self.invert_b.unwrap_or(self.detector.invert),
            ..self.detector.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_keypoints_per_patch == 0
            || !(self.max_ratio > 0.0)
            || !(self.dedupe_radius >= 0.0)
            || !(0.0..=1.0).contains(&self.vfc_max_removed_fraction)
            || !(self.tps_lambda >= 0.0)
        {
            return Err(Error::invalid(format!(
                "invalid pipeline configuration {self:?}"
            )));
        }
        make_patch_grid(
            self.patch_size,
            self.patch_size,
            self.patch_size,
            self.patch_stride,
        )?;
        self.detector.validate()?;
        self.criteria.validate()?;
        self.vfc.validate()
    }
}

/// Keypoints and descriptors of one image in its own pixel frame.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ImageFeatures {
    pub width: usize,
    pub height: usize,
    pub keypoints: Vec<Keypoint>,
    pub descriptors: Vec<Descriptor>,
}

impl ImageFeatures {
    pub fn new(
        width: usize,
        height: usize,
        keypoints: Vec<Keypoint>,
        descriptors: Vec<Descriptor>,
    ) -> Result<Self> {
        if keypoints.len() != descriptors.len() {
            return Err(Error::invalid("keypoint and descriptor counts differ"));
        }
        Ok(Self {
            width,
            height,
            keypoints,
            descriptors,
        })
    }
}

/// Whole-image detection: keypoints on the crack score map, descriptors on
/// the black-hat crack image.
pub fn extract_features(image: &Image, params: &DetectorParams) -> ImageFeatures {
    let gray = image.to_gray();
    let gray = if params.invert {
        gray.map(|v| 1.0 - v)
    } else {
        gray
    };
    let bh = black_hat(&gray, &params.blackhat_radii);
    let score = crate::detect::score_from_black_hat(&bh, params);
    let keypoints = detect_keypoints(
        &score,
        params.nms_radius,
        params.threshold,
        params.max_count,
    );
    let descriptors = compute_descriptors(&bh, &keypoints);
    ImageFeatures {
        width: image.width(),
        height: image.height(),
        keypoints,
        descriptors,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegistrationResult {
    pub global_h: Homography,
    /// Residual spline acting on `global_h`-warped source points.
    pub tps: TpsModel,
    pub correspondences: Vec<Correspondence>,
    /// Pairs removed by VFC.
    pub rejected: Vec<Correspondence>,
    pub stats: StageStats,
}

impl RegistrationResult {
    /// Source-to-target map `tps(H(p))`.
    pub fn forward(&self) -> HomographyTps {
        HomographyTps {
            homography: self.global_h,
            tps: self.tps.clone(),
        }
    }

    /// Target-to-source map fitted on the same correspondences with roles
    /// swapped, for backward warping.
    pub fn inverse_model(&self) -> Result<HomographyTps> {
        let (src, dst, w) = split(&self.correspondences);
        fit_h_tps(&dst, &src, &w, self.tps.regularization())
    }

    /// `(scale_a, scale_b)` of the frames the model maps between.
    pub fn frame_scales(&self) -> (f64, f64) {
        self.stats.frame_scale.map_or((1.0, 1.0), |[a, b]| (a, b))
    }

    pub fn displacement_vectors(&self) -> Result<Vec<(Point, [f64; 2])>> {
        displacement_vectors(&self.global_h, &self.correspondences)
    }
}

/// Anchors `H(src)` and residuals `dst - H(src)`.
pub fn displacement_vectors(
    global_h: &Homography,
    correspondences: &[Correspondence],
) -> Result<Vec<(Point, [f64; 2])>> {
    correspondences
        .iter()
        .map(|c| {
            let a = global_h.apply(c.src_point())?;
            let d = c.dst_point() - a;
            Ok((a, [d.x, d.y]))
        })
        .collect()
}

pub(crate) fn split(corrs: &[Correspondence]) -> (Vec<Point>, Vec<Point>, Vec<f64>) {
    (
        corrs.iter().map(|c| c.src_point()).collect(),
        corrs.iter().map(|c| c.dst_point()).collect(),
        corrs.iter().map(|c| c.confidence as f64).collect(),
    )
}

pub(crate) fn fit_h_tps(
    src: &[Point],
    dst: &[Point],
    weights: &[f64],
    lambda: f64,
) -> Result<HomographyTps> {
    let homography = fit_homography_dlt(src, dst, weights)?;
    let anchors = src
        .iter()
        .map(|&p| homography.apply(p))
        .collect::<Result<Vec<_>>>()?;
    let tps = fit_tps(&anchors, dst, lambda)?;
    Ok(HomographyTps { homography, tps })
}

/// Deterministic per-unit seed.
pub(crate) fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z =
        seed ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

struct PatchFeatures {
    keypoints: Vec<Keypoint>,
    descriptors: Vec<Descriptor>,
}

fn per_patch(features: &ImageFeatures, grid: &PatchGrid, cap: usize) -> Vec<PatchFeatures> {
    (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let r = grid.rect(i);
            let (x0, y0) = (r.x0 as f64, r.y0 as f64);
            let (x1, y1) = (x0 + r.width as f64, y0 + r.height as f64);
            let mut idx: Vec<usize> = features
                .keypoints
                .iter()
                .enumerate()
                .filter(|(_, k)| k.x >= x0 && k.x < x1 && k.y >= y0 && k.y < y1)
                .map(|(j, _)| j)
                .collect();
            let kp = &features.keypoints;
            idx.sort_by(|&a, &b| {
                kp[b]
                    .score
                    .total_cmp(&kp[a].score)
                    .then(kp[a].y.total_cmp(&kp[b].y))
                    .then(kp[a].x.total_cmp(&kp[b].x))
            });
            idx.truncate(cap);
            PatchFeatures {
                keypoints: idx.iter().map(|&j| kp[j]).collect(),
                descriptors: idx
                    .iter()
                    .map(|&j| features.descriptors[j].clone())
                    .collect(),
            }
        })
        .collect()
}

/// Patch pairing, per-pair matching and gating, merged in pair order.
pub fn collect_patch_matches(
    fa: &ImageFeatures,
    fb: &ImageFeatures,
    config: &PipelineConfig,
    seed: u64,
    stats: &mut StageStats,
) -> Result<Vec<Correspondence>> {
    let grid_a = make_patch_grid(fa.width, fa.height, config.patch_size, config.patch_stride)?;
    let grid_b = make_patch_grid(fb.width, fb.height, config.patch_size, config.patch_stride)?;
    let pa = per_patch(fa, &grid_a, config.max_keypoints_per_patch);
    let pb = per_patch(fb, &grid_b, config.max_keypoints_per_patch);
    let pairs = candidate_pairs(&grid_a, &grid_b, config.search_radius_patches);
    stats.keypoints_a = fa.keypoints.len();
    stats.keypoints_b = fb.keypoints.len();
    stats.patch_pairs = pairs.len();

    let outcomes: Vec<PatchOutcome> = pairs
        .par_iter()
        .map(|&(ia, ib)| {
            let (a, b) = (&pa[ia], &pb[ib]);
            let matches: Vec<Correspondence> =
                mnn_match(&a.descriptors, &b.descriptors, config.max_ratio)
                    .into_iter()
                    .map(|m| Correspondence {
                        src: a.keypoints[m.a],
                        dst: b.keypoints[m.b],
                        confidence: m.confidence,
                    })
                    .collect();
            evaluate_patch_pair(
                &matches,
                &config.criteria,
                mix_seed(seed, ia as u64, ib as u64),
            )
        })
        .collect();

    let mut collected = Vec::new();
    for ((ia, ib), outcome) in pairs.iter().zip(outcomes) {
        match outcome {
            PatchOutcome::Accepted {
                correspondences, ..
            } => {
                stats.patch_pairs_accepted += 1;
                collected.extend(correspondences);
            }
            PatchOutcome::Rejected(reason) => {
                debug!("patch pair ({ia}, {ib}) rejected: {reason}");
                let key = match reason {
                    crate::matching::RejectReason::InvalidHomography(_) => {
                        "invalid homography".to_string()
                    }
                    other => other.to_string(),
                };
                *stats.rejections.entry(key).or_default() += 1;
            }
        }
    }
    stats.collected = collected.len();
    Ok(collected)
}

pub(crate) fn fail(stage: &'static str, message: impl Into<String>, stats: &StageStats) -> Error {
    Error::Registration {
        stage,
        message: message.into(),
        stats: Box::new(stats.clone()),
    }
}

/// Dedupe, VFC, weighted global homography and residual TPS on an already
/// collected correspondence set.
pub fn fit_collected(
    collected: Vec<Correspondence>,
    config: &PipelineConfig,
    mut stats: StageStats,
) -> Result<RegistrationResult> {
    stats.collected = collected.len();
    if collected.is_empty() {
        return Err(fail("collection", "no correspondences", &stats));
    }
    let deduped = dedupe_points(&collected, config.dedupe_radius);
    stats.after_dedupe = deduped.len();
    let (src, dst, _) = split(&deduped);
    let vfc = vfc_filter(&src, &dst, &config.vfc)?;
    stats.vfc_skipped = vfc.skipped;
    stats.vfc_duplicates_collapsed = vfc.duplicates_collapsed;
    let (mut kept, mut rejected) = (Vec::new(), Vec::new());
    for (c, &ok) in deduped.iter().zip(&vfc.inliers) {
        if ok {
            kept.push(*c);
        } else {
            rejected.push(*c);
        }
    }
    let removed = rejected.len() as f64 / deduped.len() as f64;
    if removed > config.vfc_max_removed_fraction {
        warn!(
            "VFC removed {:.0}% of {} points; keeping the pre-VFC set",
            removed * 100.0,
            deduped.len()
        );
        stats.vfc_fallback = true;
        kept = deduped;
        rejected.clear();
    }
    stats.after_vfc = kept.len();
    if kept.len() < 4 {
        return Err(fail(
            "vfc",
            format!("{} correspondences survive, at least 4 needed", kept.len()),
            &stats,
        ));
    }
    let (src, dst, w) = split(&kept);
    let model = fit_h_tps(&src, &dst, &w, config.tps_lambda)
        .map_err(|e| fail("fit", e.to_string(), &stats))?;
    stats.final_count = kept.len();
    info!(
        "registered with {} correspondences ({} collected, {} after dedupe)",
        kept.len(),
        stats.collected,
        stats.after_dedupe
    );
    Ok(RegistrationResult {
        global_h: model.homography,
        tps: model.tps,
        correspondences: kept,
        rejected,
        stats,
    })
}

/// Registration from precomputed features of both images.
pub fn register_features(
    fa: &ImageFeatures,
    fb: &ImageFeatures,
    config: &PipelineConfig,
    seed: u64,
) -> Result<RegistrationResult> {
    config.validate()?;
    let mut stats = StageStats::default();
    let collected = collect_patch_matches(fa, fb, config, seed, &mut stats)?;
    fit_collected(collected, config, stats)
}

/// Full one-stage registration of B onto A's structure: the returned model
/// maps A pixel coordinates to B pixel coordinates.
pub fn register_one_stage(
    image_a: &Image,
    image_b: &Image,
    config: &PipelineConfig,
    seed: u64,
) -> Result<RegistrationResult> {
    config.validate()?;
    let fa = extract_features(image_a, &config.detector);
    let fb = extract_features(image_b, &config.detector_b());
    register_features(&fa, &fb, config, seed)
}

fn home_patch(grid: &PatchGrid, p: Point) -> usize {
    let nearest = |origins: &[usize], dim: usize, v: f64| {
        let center = |o: usize| o as f64 + grid.patch_size.min(dim - o) as f64 / 2.0 - 0.5;
        (0..origins.len())
            .min_by(|&i, &j| {
                (center(origins[i]) - v)
                    .abs()
                    .total_cmp(&(center(origins[j]) - v).abs())
            })
            .unwrap()
    };
    nearest(&grid.ys, grid.height, p.y) * grid.xs.len() + nearest(&grid.xs, grid.width, p.x)
}

/// Registration from externally computed matches in global coordinates.
/// Each match is assigned to the patch pair whose centers are nearest its
/// end points; the patch gates, dedupe, VFC and the fit then run as usual.
pub fn register_external_matches(
    matches: &[Correspondence],
    size_a: (usize, usize),
    size_b: (usize, usize),
    config: &PipelineConfig,
    seed: u64,
) -> Result<RegistrationResult> {
    config.validate()?;
    let grid_a = make_patch_grid(size_a.0, size_a.1, config.patch_size, config.patch_stride)?;
    let grid_b = make_patch_grid(size_b.0, size_b.1, config.patch_size, config.patch_stride)?;
    let mut groups: std::collections::BTreeMap<(usize, usize), Vec<Correspondence>> =
        Default::default();
    for c in matches {
        groups
            .entry((
                home_patch(&grid_a, c.src_point()),
                home_patch(&grid_b, c.dst_point()),
            ))
            .or_default()
            .push(*c);
    }
    let mut stats = StageStats {
        patch_pairs: groups.len(),
        ..StageStats::default()
    };
    let mut collected = Vec::new();
    for ((ia, ib), group) in groups {
        match evaluate_patch_pair(
            &group,
            &config.criteria,
            mix_seed(seed, ia as u64, ib as u64),
        ) {
            PatchOutcome::Accepted {
                correspondences, ..
            } => {
                stats.patch_pairs_accepted += 1;
                collected.extend(correspondences);
            }
            PatchOutcome::Rejected(reason) => {
                let key = match reason {
                    crate::matching::RejectReason::InvalidHomography(_) => {
                        "invalid homography".to_string()
                    }
                    other => other.to_string(),
                };
                *stats.rejections.entry(key).or_default() += 1;
            }
        }
    }
    fit_collected(collected, config, stats)
}

/// Maps `points` through a model, failing on points at infinity.
pub fn map_points(model: &dyn PointMap, points: &[Point]) -> Result<Vec<Point>> {
    points.iter().map(|&p| model.map_point(p)).collect()
}

#[cfg(test)]
mod tests;
