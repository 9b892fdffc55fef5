use rayon::prelude::*;

use crate::detect::Descriptor;

pub const DEFAULT_MAX_RATIO: f32 = 0.95;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DescriptorMatch {
    pub a: usize,
    pub b: usize,
    pub confidence: f32,
}

/// Nearest neighbor of each row of `from` among `to`: (index, d, second d).
fn nearest(from: &[Descriptor], to: &[Descriptor]) -> Vec<(usize, f32, f32)> {
    from.par_iter()
        .map(|f| {
            let mut best = (usize::MAX, f32::INFINITY);
            let mut second = f32::INFINITY;
            for (j, t) in to.iter().enumerate() {
                let d = f.distance(t);
                if d < best.1 {
                    second = best.1;
                    best = (j, d);
                } else if d < second {
                    second = d;
                }
            }
            (best.0, best.1, second)
        })
        .collect()
}

/// Mutual nearest neighbors under Euclidean distance with a ratio gate on
/// the A side; ties resolve to the lowest index. Confidence is
/// `1 - d / 2` clamped into `[0, 1]`.
pub fn mnn_match(
    desc_a: &[Descriptor],
    desc_b: &[Descriptor],
    max_ratio: f32,
) -> Vec<DescriptorMatch> {
    if desc_a.is_empty() || desc_b.is_empty() {
        return Vec::new();
    }
    let ab = nearest(desc_a, desc_b);
    let ba = nearest(desc_b, desc_a);
    ab.iter()
        .enumerate()
        .filter_map(|(i, &(j, d, second))| {
            if ba[j].0 != i {
                return None;
            }
            if second.is_finite() && second > 0.0 && d / second > max_ratio {
                return None;
            }
            if second == 0.0 {
                return None;
            }
            Some(DescriptorMatch {
                a: i,
                b: j,
                confidence: (1.0 - d / 2.0).clamp(0.0, 1.0),
            })
        })
        .collect()
}
