//! Patch pairing, descriptor matching, patch-pair gates and duplicate
//! filtering.

mod criteria;
mod dedupe;
mod grid;
mod mnn;
mod textio;

pub use criteria::{
    evaluate_patch_pair, Correspondence, MatchCriteria, PatchOutcome, RejectReason,
};
pub use dedupe::dedupe_points;
pub use grid::{candidate_pairs, make_patch_grid, PatchGrid, PatchRect, MIN_PATCH_SIZE};
pub use mnn::{mnn_match, DescriptorMatch, DEFAULT_MAX_RATIO};
pub use textio::{parse_matches, read_matches, write_matches};
