//! Coarse-to-fine refinement: level planning, keypoint re-localization in
//! both modalities, and region-wise outlier removal.

mod keypoint;
mod plan;
mod regions;

pub use keypoint::{
    refine_mod1, refine_mod2_corr_fine, refine_mod2_ncc, KeypointRefineParams, Mod1Mode, Refined,
};
pub use plan::{plan_levels, upscale_keypoints, upscale_point, Level, LevelPlan, MAX_RATIO};
pub use regions::{
    remove_outliers_regionwise, CellCheck, RegionFilterOutcome, RegionFilterParams, RegionGrid,
};

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detect::{build_feature_volume, crack_score_map, DetectorParams};
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::imgcore::{
    gaussian_blur, rescale, rescale_window, scaled_dim, Image, Interpolation, Plane,
};
use crate::matching::{dedupe_points, Correspondence};
use crate::pipeline::{
    fail, fit_h_tps, register_one_stage, split, LevelStats, PipelineConfig, RegistrationResult,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// Chosen from the resolution ratio.
    Auto,
    /// Direct softargmax for modality 1, correlation only for modality 2.
    SmallRatio,
    /// Top-k search on the first level, NCC and correlation for modality 2.
    LargeRatio,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefineConfig {
    /// Off: keypoints are only upscaled between levels.
    pub enabled: bool,
    /// Resolution of A over resolution of B; inferred from image sizes when unset.
    pub resolution_ratio: Option<f64>,
    pub regime: Regime,
    /// Resolution of the coarse registration relative to B's native
    /// resolution (1 = B native).
    pub coarse_resolution: f64,
    pub large_ratio_threshold: f64,
    pub base_region_size: usize,
    pub keypoint: KeypointRefineParams,
    pub outlier_removal: bool,
    /// Overrides the ratio-based schedule.
    pub th_out: Option<f64>,
    pub region_filter: RegionFilterParams,
    /// Extra pixels around each region when building its maps.
    pub margin: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            resolution_ratio: None,
            regime: Regime::Auto,
            coarse_resolution: 1.0,
            large_ratio_threshold: 2.5,
            base_region_size: 768,
            keypoint: KeypointRefineParams::default(),
            outlier_removal: true,
            th_out: None,
            region_filter: RegionFilterParams::default(),
            margin: 48,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if self
            .resolution_ratio
            .is_some_and(|r| !(r > 0.0 && r.is_finite()))
            || !(self.coarse_resolution > 0.0 && self.coarse_resolution <= 1.0)
            || !(self.large_ratio_threshold > 0.0)
            || self.base_region_size == 0
            || self.th_out.is_some_and(|t| !(t > 0.0))
        {
            return Err(Error::invalid(format!(
                "invalid refinement configuration {self:?}"
            )));
        }
        self.keypoint.validate()?;
        self.region_filter.validity.validate()
    }

    pub fn large_regime(&self, ratio: f64) -> bool {
        match self.regime {
            Regime::Auto => ratio > self.large_ratio_threshold,
            Regime::SmallRatio => false,
            Regime::LargeRatio => true,
        }
    }
}

/// Outlier threshold by total resolution ratio.
pub fn default_th_out(ratio: f64) -> f64 {
    if ratio <= 2.0 {
        2.0
    } else if ratio <= 3.5 {
        3.0
    } else {
        4.0
    }
}

/// Which sub-steps run on a level.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LevelModes {
    pub mod1: Option<Mod1Mode>,
    pub ncc: bool,
    pub corr_fine: bool,
}

impl LevelModes {
    pub const UPSCALE_ONLY: LevelModes = LevelModes {
        mod1: None,
        ncc: false,
        corr_fine: false,
    };

    pub fn for_level(cfg: &RefineConfig, ratio: f64, level_index: usize) -> Self {
        if !cfg.enabled {
            return Self::UPSCALE_ONLY;
        }
        if cfg.large_regime(ratio) {
            LevelModes {
                mod1: Some(if level_index == 0 {
                    Mod1Mode::FirstLevel
                } else {
                    Mod1Mode::Subsequent
                }),
                ncc: true,
                corr_fine: true,
            }
        } else {
            LevelModes {
                mod1: Some(Mod1Mode::Subsequent),
                ncc: false,
                corr_fine: true,
            }
        }
    }
}

/// Ratio of A's resolution to B's, from the config or the image sizes.
pub fn resolution_ratio(image_a: &Image, image_b: &Image, cfg: &RefineConfig) -> Result<f64> {
    let r = cfg.resolution_ratio.unwrap_or_else(|| {
        0.5 * (image_a.width() as f64 / image_b.width() as f64
            + image_a.height() as f64 / image_b.height() as f64)
    });
    if r < 1.0 - 1e-6 {
        return Err(Error::invalid(format!(
            "image A must be the higher-resolution modality (ratio {r:.3}); swap the inputs"
        )));
    }
    Ok(r.max(1.0))
}

pub fn plan_for(image_a: &Image, image_b: &Image, cfg: &RefineConfig) -> Result<LevelPlan> {
    let r = resolution_ratio(image_a, image_b, cfg)?;
    plan_levels(r, 1.0, cfg.coarse_resolution, cfg.base_region_size)
}

fn clamp_window(
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
    w: usize,
    h: usize,
) -> Option<(usize, usize, usize, usize)> {
    let cx0 = x0.floor().max(0.0) as usize;
    let cy0 = y0.floor().max(0.0) as usize;
    let cx1 = (x1.ceil().min(w as f64 - 1.0)).max(-1.0);
    let cy1 = (y1.ceil().min(h as f64 - 1.0)).max(-1.0);
    if cx1 < cx0 as f64 || cy1 < cy0 as f64 {
        return None;
    }
    Some((cx0, cy0, cx1 as usize - cx0 + 1, cy1 as usize - cy0 + 1))
}

/// Gaussian sigmas (A, B) that bring both crops to the blurrier one's
/// effective resolution. An upsampled native pixel spans `scale` level pixels.
pub fn matching_blur(scale_a: f64, scale_b: f64) -> (f64, f64) {
    let (wa, wb) = (scale_a.max(1.0), scale_b.max(1.0));
    let sigma = 0.5 * (wa * wa - wb * wb).abs().sqrt();
    if wa < wb {
        (sigma, 0.0)
    } else {
        (0.0, sigma)
    }
}

fn blurred(plane: &Plane, sigma: f64) -> std::borrow::Cow<'_, Plane> {
    if sigma > 0.0 {
        std::borrow::Cow::Owned(gaussian_blur(plane, sigma))
    } else {
        std::borrow::Cow::Borrowed(plane)
    }
}

/// Upscales correspondences from `prev` scales to `level` scales and runs
/// the selected refinement sub-steps region by region.
#[allow(clippy::too_many_arguments)]
pub fn refine_level(
    image_a: &Image,
    image_b: &Image,
    prev: (f64, f64),
    level: &Level,
    corrs: &mut [Correspondence],
    modes: LevelModes,
    cfg: &RefineConfig,
    detectors: (&DetectorParams, &DetectorParams),
) -> Result<LevelStats> {
    let (fa, fb) = (level.scale_a / prev.0, level.scale_b / prev.1);
    for c in corrs.iter_mut() {
        let (a, b) = (
            plan::upscale_point(c.src_point(), fa),
            plan::upscale_point(c.dst_point(), fb),
        );
        c.src.x = a.x;
        c.src.y = a.y;
        c.dst.x = b.x;
        c.dst.y = b.y;
    }
    let mut stats = LevelStats {
        scale_a: level.scale_a,
        scale_b: level.scale_b,
        region_size: level.region_size,
        points: corrs.len(),
        ..LevelStats::default()
    };
    if modes == LevelModes::UPSCALE_ONLY || corrs.is_empty() {
        return Ok(stats);
    }
    let (wa, ha) = (
        scaled_dim(image_a.width(), level.scale_a),
        scaled_dim(image_a.height(), level.scale_a),
    );
    let (wb, hb) = (
        scaled_dim(image_b.width(), level.scale_b),
        scaled_dim(image_b.height(), level.scale_b),
    );
    let grid = RegionGrid::new(wa, ha, level.region_size)?;
    let cells = grid.assign(corrs);
    let margin = cfg.margin as f64;
    let kp = &cfg.keypoint;

    type CellOut = Vec<(usize, Point, Point, [bool; 3])>;
    let snapshot: &[Correspondence] = corrs;
    let results: Vec<Result<CellOut>> = cells
        .par_iter()
        .enumerate()
        .filter(|(_, m)| !m.is_empty())
        .map(|(cell, members)| {
            let (x0, y0, w, h) = grid.rect(cell);
            let mut out: CellOut = members
                .iter()
                .map(|&i| {
                    (
                        i,
                        snapshot[i].src_point(),
                        snapshot[i].dst_point(),
                        [false; 3],
                    )
                })
                .collect();
            let (ax0, ay0) = (x0 as f64 - margin, y0 as f64 - margin);
            let win_a = clamp_window(
                ax0,
                ay0,
                (x0 + w) as f64 + margin,
                (y0 + h) as f64 + margin,
                wa,
                ha,
            );
            let (bx0, by0, bx1, by1) = out.iter().fold(
                (
                    f64::INFINITY,
                    f64::INFINITY,
                    f64::NEG_INFINITY,
                    f64::NEG_INFINITY,
                ),
                |(a, b, c, d), o| (a.min(o.2.x), b.min(o.2.y), c.max(o.2.x), d.max(o.2.y)),
            );
            let win_b = clamp_window(
                bx0 - margin,
                by0 - margin,
                bx1 + margin,
                by1 + margin,
                wb,
                hb,
            );
            let (Some(win_a), Some(win_b)) = (win_a, win_b) else {
                for o in &mut out {
                    o.3 = [modes.mod1.is_some(), modes.ncc, modes.corr_fine];
                }
                return Ok(out);
            };
            let gray_a =
                rescale_window(image_a, level.scale_a, Interpolation::Bicubic, win_a)?.to_gray();
            let gray_b =
                rescale_window(image_b, level.scale_b, Interpolation::Bicubic, win_b)?.to_gray();
            let oa = nalgebra::Vector2::new(win_a.0 as f64, win_a.1 as f64);
            let ob = nalgebra::Vector2::new(win_b.0 as f64, win_b.1 as f64);
            let score = modes.mod1.map(|_| crack_score_map(&gray_a, detectors.0));
            let feats = (modes.ncc || modes.corr_fine).then(|| {
                let (sa, sb) = matching_blur(level.scale_a, level.scale_b);
                (
                    build_feature_volume(&blurred(&gray_a, sa), detectors.0),
                    build_feature_volume(&blurred(&gray_b, sb), detectors.1),
                )
            });
            for o in &mut out {
                let mut a = o.1 - oa;
                let mut b = o.2 - ob;
                if let (Some(mode), Some(score)) = (modes.mod1, &score) {
                    let r = refine_mod1(score, a, mode, kp);
                    a = r.point;
                    o.3[0] = r.flagged;
                }
                if let Some((va, vb)) = &feats {
                    if modes.ncc {
                        let r = refine_mod2_ncc(va, vb, a, b, kp);
                        b = r.point;
                        o.3[1] = r.flagged;
                    }
                    if modes.corr_fine {
                        let r = refine_mod2_corr_fine(va, vb, a, b, kp);
                        b = r.point;
                        o.3[2] = r.flagged;
                    }
                }
                o.1 = a + oa;
                o.2 = b + ob;
            }
            Ok(out)
        })
        .collect();
    for res in results {
        for (i, a, b, flags) in res? {
            let c = &mut corrs[i];
            c.src.x = a.x;
            c.src.y = a.y;
            c.dst.x = b.x;
            c.dst.y = b.y;
            stats.mod1_flagged += flags[0] as usize;
            stats.ncc_flagged += flags[1] as usize;
            stats.corr_fine_flagged += flags[2] as usize;
        }
    }
    Ok(stats)
}

/// Carries coarse-level correspondences through every level of `plan`.
pub fn refine_correspondences(
    image_a: &Image,
    image_b: &Image,
    plan: &LevelPlan,
    coarse: &[Correspondence],
    pipeline: &PipelineConfig,
    cfg: &RefineConfig,
) -> Result<(Vec<Correspondence>, Vec<LevelStats>)> {
    let ratio = plan.ratio();
    let det_b = pipeline.detector_b();
    let mut corrs = coarse.to_vec();
    let mut levels = Vec::with_capacity(plan.levels.len());
    let mut prev = plan.coarse;
    for (k, level) in plan.levels.iter().enumerate() {
        let modes = LevelModes::for_level(cfg, ratio, k);
        let ls = refine_level(
            image_a,
            image_b,
            prev,
            level,
            &mut corrs,
            modes,
            cfg,
            (&pipeline.detector, &det_b),
        )?;
        info!(
            "level {k}: scales ({:.3}, {:.3}), {} points, flagged {}/{}/{}",
            level.scale_a,
            level.scale_b,
            ls.points,
            ls.mod1_flagged,
            ls.ncc_flagged,
            ls.corr_fine_flagged
        );
        levels.push(ls);
        prev = (level.scale_a, level.scale_b);
    }
    Ok((corrs, levels))
}

/// Runs the refinement levels of `plan` on a coarse result and fits the
/// final model at the finest scale (A at native resolution, B resampled to
/// the same resolution).
pub fn refine_result(
    coarse: &RegistrationResult,
    image_a: &Image,
    image_b: &Image,
    plan: &LevelPlan,
    pipeline: &PipelineConfig,
    cfg: &RefineConfig,
    seed: u64,
) -> Result<RegistrationResult> {
    cfg.validate()?;
    if plan.levels.is_empty() {
        return Ok(coarse.clone());
    }
    let ratio = plan.ratio();
    let mut stats = coarse.stats.clone();
    let (mut corrs, levels) = refine_correspondences(
        image_a,
        image_b,
        plan,
        &coarse.correspondences,
        pipeline,
        cfg,
    )?;
    stats.levels = levels;
    let finest = plan.levels.last().unwrap();
    if cfg.outlier_removal {
        let (w, h) = (
            scaled_dim(image_a.width(), finest.scale_a),
            scaled_dim(image_a.height(), finest.scale_a),
        );
        let grid = RegionGrid::new(w, h, finest.region_size)?;
        let th_out = cfg.th_out.unwrap_or_else(|| default_th_out(ratio));
        let out = remove_outliers_regionwise(&corrs, &grid, th_out, &cfg.region_filter, seed);
        stats.levels.last_mut().unwrap().outliers_removed = out.removed;
        corrs = out.kept;
    }
    let corrs = dedupe_points(&corrs, pipeline.dedupe_radius);
    if corrs.len() < 4 {
        return Err(fail(
            "refine",
            format!(
                "{} correspondences survive refinement, at least 4 needed",
                corrs.len()
            ),
            &stats,
        ));
    }
    let (src, dst, w) = split(&corrs);
    let model = fit_h_tps(&src, &dst, &w, pipeline.tps_lambda)
        .map_err(|e| fail("refine", e.to_string(), &stats))?;
    stats.final_count = corrs.len();
    stats.frame_scale = Some([finest.scale_a, finest.scale_b]);
    let (fa, fb) = (
        finest.scale_a / plan.coarse.0,
        finest.scale_b / plan.coarse.1,
    );
    let rejected = coarse
        .rejected
        .iter()
        .map(|c| {
            Correspondence::new(
                upscale_point(c.src_point(), fa),
                upscale_point(c.dst_point(), fb),
                c.confidence,
            )
        })
        .collect();
    Ok(RegistrationResult {
        global_h: model.homography,
        tps: model.tps,
        correspondences: corrs,
        rejected,
        stats,
    })
}

/// A and B resampled to the plan's coarse scales.
pub fn coarse_images(image_a: &Image, image_b: &Image, plan: &LevelPlan) -> Result<(Image, Image)> {
    let scaled = |img: &Image, s: f64| -> Result<Image> {
        if s == 1.0 {
            Ok(img.clone())
        } else {
            rescale(img, s, Interpolation::Bicubic)
        }
    };
    Ok((
        scaled(image_a, plan.coarse.0)?,
        scaled(image_b, plan.coarse.1)?,
    ))
}

/// One-stage registration at the coarsest common scale, then refinement up
/// to the finest scale. A must be the higher-resolution image.
pub fn register_coarse_to_fine(
    image_a: &Image,
    image_b: &Image,
    pipeline: &PipelineConfig,
    cfg: &RefineConfig,
    seed: u64,
) -> Result<RegistrationResult> {
    cfg.validate()?;
    let plan = plan_for(image_a, image_b, cfg)?;
    if plan.levels.is_empty() {
        return register_one_stage(image_a, image_b, pipeline, seed);
    }
    let (ca, cb) = coarse_images(image_a, image_b, &plan)?;
    let mut coarse = register_one_stage(&ca, &cb, pipeline, seed)?;
    coarse.stats.frame_scale = Some([plan.coarse.0, plan.coarse.1]);
    refine_result(&coarse, image_a, image_b, &plan, pipeline, cfg, seed)
}

#[cfg(test)]
mod tests;
