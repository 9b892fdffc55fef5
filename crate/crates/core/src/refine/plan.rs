use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;

/// Largest supported finest-to-coarsest resolution ratio.
pub const MAX_RATIO: f64 = 8.0;
/// Slack on the last upscale step before an extra level is inserted.
const SNAP_TOLERANCE: f64 = 2.05;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub scale_a: f64,
    pub scale_b: f64,
    pub region_size: usize,
}

/// Refinement levels after the coarse one-stage run, finest last.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelPlan {
    /// Scales of the one-stage level.
    pub coarse: (f64, f64),
    pub levels: Vec<Level>,
}

impl LevelPlan {
    /// Finest over coarsest resolution.
    pub fn ratio(&self) -> f64 {
        self.levels
            .last()
            .map_or(1.0, |l| l.scale_a / self.coarse.0)
    }
}

/// Resolutions are in any common unit (e.g. pixels per millimetre).
/// Each level at most doubles the working resolution, except that the last
/// step may reach 2.05; images coarser than a level are upscaled.
pub fn plan_levels(
    native_a: f64,
    native_b: f64,
    coarse: f64,
    base_region_size: usize,
) -> Result<LevelPlan> {
    if !(native_a > 0.0 && native_b > 0.0 && coarse > 0.0)
        || ![native_a, native_b, coarse].iter().all(|v| v.is_finite())
    {
        return Err(Error::invalid("resolutions must be positive and finite"));
    }
    let finest = native_a.max(native_b);
    let r = finest / coarse;
    if r < 1.0 - 1e-9 {
        return Err(Error::invalid(format!(
            "coarse resolution {coarse} is finer than both images"
        )));
    }
    if r > MAX_RATIO + 1e-9 {
        return Err(Error::invalid(format!(
            "resolution ratio {r:.3} exceeds {MAX_RATIO}"
        )));
    }
    let mut steps = 0u32;
    while 2f64.powi(steps as i32) * SNAP_TOLERANCE / 2.0 < r - 1e-9 {
        steps += 1;
    }
    let levels = (1..=steps)
        .map(|k| {
            let res = if k == steps {
                finest
            } else {
                coarse * 2f64.powi(k as i32)
            };
            Level {
                scale_a: res / native_a,
                scale_b: res / native_b,
                region_size: base_region_size << (k - 1),
            }
        })
        .collect();
    Ok(LevelPlan {
        coarse: (coarse / native_a, coarse / native_b),
        levels,
    })
}

/// Pixel-center preserving rescale of point coordinates.
pub fn upscale_keypoints(points: &[Point], factor: f64) -> Vec<Point> {
    points.iter().map(|&p| upscale_point(p, factor)).collect()
}

#[inline]
pub fn upscale_point(p: Point, factor: f64) -> Point {
    Point::new((p.x + 0.5) * factor - 0.5, (p.y + 0.5) * factor - 0.5)
}
