//! Synthetic craquelure with known junctions, modality renderings and
//! ground-truth deformations.
//!
//! All randomness comes from `rand_xorshift::XorShiftRng` (xorshift128)
//! seeded through `SeedableRng::seed_from_u64`, so outputs are identical
//! across platforms for a given seed.

mod gt;
mod network;
mod render;

pub use gt::{generate_gt_warp, synth_pair, GtWarp, SynthPair, SynthPairParams};
pub use network::{generate_craquelure, generate_craquelure_with, CrackNetwork, CrackParams};
pub use render::{
    render_modalities, render_modality, render_network, smooth_noise, ModalityParams,
};
