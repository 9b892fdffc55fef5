use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Counts recorded at every stage of a registration run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageStats {
    pub keypoints_a: usize,
    pub keypoints_b: usize,
    pub patch_pairs: usize,
    pub patch_pairs_accepted: usize,
    /// Rejected patch pairs keyed by reason.
    pub rejections: BTreeMap<String, usize>,
    pub collected: usize,
    pub after_dedupe: usize,
    pub after_vfc: usize,
    pub vfc_skipped: bool,
    pub vfc_duplicates_collapsed: bool,
    /// VFC removed too much and the pre-VFC set was kept.
    pub vfc_fallback: bool,
    pub levels: Vec<LevelStats>,
    pub final_count: usize,
    /// Resolution of the model's A and B frames relative to each image's
    /// native resolution; unset means both native.
    #[serde(default)]
    pub frame_scale: Option<[f64; 2]>,
}

/// Counts for one coarse-to-fine refinement level.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    pub scale_a: f64,
    pub scale_b: f64,
    pub region_size: usize,
    pub points: usize,
    pub mod1_flagged: usize,
    pub ncc_flagged: usize,
    pub corr_fine_flagged: usize,
    pub outliers_removed: usize,
}
