use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::imgcore::Plane;

/// A detected point with confidence in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub score: f32,
}

impl Keypoint {
    pub fn new(x: f64, y: f64, score: f32) -> Self {
        Self { x, y, score }
    }

    pub fn point(&self) -> crate::geometry::Point {
        crate::geometry::Point::new(self.x, self.y)
    }
}

/// Offset of the vertex of a parabola through `(-1, l), (0, c), (1, r)`.
fn parabola_peak(l: f64, c: f64, r: f64) -> f64 {
    let den = l - 2.0 * c + r;
    if den < 0.0 {
        (0.5 * (l - r) / den).clamp(-0.5, 0.5)
    } else {
        0.0
    }
}

/// Strict 3x3 maxima above `threshold`, refined by separable quadratic
/// interpolation, greedily suppressed so that kept points are more than
/// `nms_radius` apart, strongest first, at most `max_count`.
pub fn detect_keypoints(
    score: &Plane,
    nms_radius: f64,
    threshold: f32,
    max_count: usize,
) -> Vec<Keypoint> {
    let (w, h) = (score.width(), score.height());
    let mut cands = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let c = score.get(x, y);
            if !(c > threshold) {
                continue;
            }
            let mut is_max = true;
            'n: for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if (dx != 0 || dy != 0) && score.get_clamped(x as i64 + dx, y as i64 + dy) >= c
                    {
                        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                        // replicated border samples are not competitors
                        if nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h {
                            is_max = false;
                            break 'n;
                        }
                    }
                }
            }
            if !is_max {
                continue;
            }
            let g = |dx: i64, dy: i64| score.get_clamped(x as i64 + dx, y as i64 + dy) as f64;
            let ox = if x > 0 && x + 1 < w {
                parabola_peak(g(-1, 0), c as f64, g(1, 0))
            } else {
                0.0
            };
            let oy = if y > 0 && y + 1 < h {
                parabola_peak(g(0, -1), c as f64, g(0, 1))
            } else {
                0.0
            };
            cands.push(Keypoint::new(
                x as f64 + ox,
                y as f64 + oy,
                c.clamp(0.0, 1.0),
            ));
        }
    }
    nms(cands, nms_radius, max_count)
}

/// Greedy suppression by descending score (ties by y then x).
pub fn nms(mut cands: Vec<Keypoint>, radius: f64, max_count: usize) -> Vec<Keypoint> {
    cands.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.y.total_cmp(&b.y))
            .then(a.x.total_cmp(&b.x))
    });
    let cell = radius.max(1e-9);
    let key = |k: &Keypoint| ((k.x / cell).floor() as i64, (k.y / cell).floor() as i64);
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    let mut kept: Vec<Keypoint> = Vec::new();
    for k in cands {
        if kept.len() >= max_count {
            break;
        }
        let (cx, cy) = key(&k);
        let clash = (-1..=1).any(|dy| {
            (-1..=1).any(|dx| {
                grid.get(&(cx + dx, cy + dy)).is_some_and(|ids| {
                    ids.iter().any(|&i| {
                        let o = &kept[i];
                        ((o.x - k.x).powi(2) + (o.y - k.y).powi(2)).sqrt() <= radius
                    })
                })
            })
        });
        if !clash {
            grid.entry((cx, cy)).or_default().push(kept.len());
            kept.push(k);
        }
    }
    kept
}
