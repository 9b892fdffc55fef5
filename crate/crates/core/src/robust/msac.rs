use rand::seq::index::sample;
use rand::SeedableRng;
use rand_xorshift::XorShiftRng;

use crate::error::{Error, Result};
use crate::geometry::{fit_homography_dlt, Homography, Point};

pub const DEFAULT_MAX_ITERS: usize = 5000;

const CONFIDENCE: f64 = 0.999;
const LO_ROUNDS: usize = 8;
/// Inlier band multiplier for the first local-optimization round.
const LO_WIDEN: f64 = 2.0;

#[derive(Clone, Debug, PartialEq)]
pub struct RobustFitResult {
    pub homography: Homography,
    pub inlier_mask: Vec<bool>,
    /// Sum of truncated squared errors `min(e^2, t^2)`.
    pub score: f64,
}

impl RobustFitResult {
    pub fn inlier_count(&self) -> usize {
        self.inlier_mask.iter().filter(|&&b| b).count()
    }
}

fn errors_sq(h: &Homography, src: &[Point], dst: &[Point], out: &mut [f64]) {
    for ((s, d), e) in src.iter().zip(dst).zip(out.iter_mut()) {
        *e = match h.apply(*s) {
            Ok(p) => (p - d).norm_squared(),
            Err(_) => f64::INFINITY,
        };
    }
}

fn truncated_score(err_sq: &[f64], t2: f64) -> f64 {
    err_sq.iter().map(|e| e.min(t2)).sum()
}

fn collinear(a: Point, b: Point, c: Point) -> bool {
    let ab = b - a;
    let ac = c - a;
    let cross = (ab.x * ac.y - ab.y * ac.x).abs();
    cross <= 1e-9 * (ab.norm_squared() + ac.norm_squared()).max(1e-300)
}

fn sample_degenerate(pts: [Point; 4]) -> bool {
    (0..4).any(|skip| {
        let r: Vec<Point> = (0..4).filter(|&k| k != skip).map(|k| pts[k]).collect();
        collinear(r[0], r[1], r[2])
    })
}

/// Iterated inlier least squares around `h`, starting from a widened
/// inlier band; keeps a candidate only when it lowers the truncated score.
fn local_optimize(
    h: Homography,
    score: f64,
    src: &[Point],
    dst: &[Point],
    t2: f64,
    err: &mut [f64],
) -> (Homography, f64) {
    let (mut best_h, mut best_score) = (h, score);
    let mut weights = vec![0.0; src.len()];
    for round in 0..LO_ROUNDS {
        let band = if round == 0 {
            LO_WIDEN * LO_WIDEN * t2
        } else {
            t2
        };
        errors_sq(&best_h, src, dst, err);
        for (w, e) in weights.iter_mut().zip(err.iter()) {
            *w = if *e <= band { 1.0 } else { 0.0 };
        }
        let Ok(cand) = fit_homography_dlt(src, dst, &weights) else {
            break;
        };
        errors_sq(&cand, src, dst, err);
        let s = truncated_score(err, t2);
        if s < best_score {
            best_h = cand;
            best_score = s;
        } else if round > 0 {
            break;
        }
    }
    (best_h, best_score)
}

/// MSAC with local optimization. Deterministic for a given `seed`.
pub fn robust_homography(
    src: &[Point],
    dst: &[Point],
    threshold: f64,
    max_iters: usize,
    seed: u64,
) -> Result<RobustFitResult> {
    let n = src.len();
    if n != dst.len() {
        return Err(Error::invalid("src and dst lengths differ"));
    }
    if n < 4 {
        return Err(Error::InsufficientPairs { needed: 4, got: n });
    }
    if !(threshold > 0.0) {
        return Err(Error::invalid(format!(
            "threshold {threshold} must be positive"
        )));
    }
    let t2 = threshold * threshold;
    let mut rng = XorShiftRng::seed_from_u64(seed);
    let mut err = vec![0.0; n];
    let mut best: Option<(Homography, f64)> = None;
    let mut needed = max_iters;
    let mut it = 0;
    while it < needed.min(max_iters) {
        it += 1;
        let idx = sample(&mut rng, n, 4);
        let pick = |v: &[Point]| {
            [
                v[idx.index(0)],
                v[idx.index(1)],
                v[idx.index(2)],
                v[idx.index(3)],
            ]
        };
        let (s4, d4) = (pick(src), pick(dst));
        if sample_degenerate(s4) || sample_degenerate(d4) {
            continue;
        }
        let Ok(h) = fit_homography_dlt(&s4, &d4, &[1.0; 4]) else {
            continue;
        };
        errors_sq(&h, src, dst, &mut err);
        let score = truncated_score(&err, t2);
        if best.as_ref().is_some_and(|(_, b)| score >= *b) {
            continue;
        }
        let (h, score) = local_optimize(h, score, src, dst, t2, &mut err);
        errors_sq(&h, src, dst, &mut err);
        let inliers = err.iter().filter(|&&e| e <= t2).count();
        best = Some((h, score));
        let w = inliers as f64 / n as f64;
        let p_good = w.powi(4);
        needed = if p_good >= 1.0 - 1e-12 {
            0
        } else if p_good <= 0.0 {
            max_iters
        } else {
            let k = (1.0 - CONFIDENCE).ln() / (1.0 - p_good).ln();
            (k.ceil() as usize).max(1)
        };
    }
    let Some((h, score)) = best else {
        return Err(Error::NoModel(4));
    };
    errors_sq(&h, src, dst, &mut err);
    let inlier_mask: Vec<bool> = err.iter().map(|&e| e <= t2).collect();
    if inlier_mask.iter().filter(|&&b| b).count() < 4 {
        return Err(Error::NoModel(4));
    }
    Ok(RobustFitResult {
        homography: h,
        inlier_mask,
        score,
    })
}
