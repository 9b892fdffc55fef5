use std::collections::HashMap;

use nalgebra::{DMatrix, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;

/// Vector field consensus parameters; coordinates are normalized to zero
/// mean and unit RMS radius before fitting.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VfcParams {
    pub kernel_beta: f64,
    pub lambda: f64,
    pub gamma_init: f64,
    /// Volume of the uniform outlier density.
    pub outlier_variance: f64,
    pub max_iter: usize,
    pub tol: f64,
    /// Above this many distinct pairs the field is expanded on this many
    /// farthest-point basis centers instead of every pair.
    pub max_basis: usize,
}

impl Default for VfcParams {
    fn default() -> Self {
        Self {
            kernel_beta: 0.1,
            lambda: 3.0,
            gamma_init: 0.9,
            outlier_variance: 10.0,
            max_iter: 500,
            tol: 1e-8,
            max_basis: 256,
        }
    }
}

impl VfcParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.kernel_beta > 0.0
            && self.lambda > 0.0
            && self.gamma_init > 0.0
            && self.gamma_init < 1.0
            && self.outlier_variance > 0.0
            && self.max_iter > 0
            && self.tol > 0.0
            && self.max_basis >= 5;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid VFC parameters {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VfcResult {
    pub inliers: Vec<bool>,
    pub posteriors: Vec<f64>,
    /// Fewer than five pairs: nothing was fitted.
    pub skipped: bool,
    pub duplicates_collapsed: bool,
    pub iterations: usize,
    /// Negative log posterior after initialization and each iteration.
    pub objective: Vec<f64>,
}

impl VfcResult {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }
}

const MIN_PAIRS: usize = 5;
const SIGMA2_FLOOR: f64 = 1e-10;
const GAMMA_RANGE: (f64, f64) = (0.05, 0.95);

fn normalize(points: &[Point]) -> Vec<Vector2<f64>> {
    let n = points.len() as f64;
    let mean = points
        .iter()
        .fold(Vector2::zeros(), |acc, p| acc + p.coords)
        / n;
    let rms = (points
        .iter()
        .map(|p| (p.coords - mean).norm_squared())
        .sum::<f64>()
        / n)
        .sqrt();
    let s = if rms > 0.0 { 1.0 / rms } else { 1.0 };
    points.iter().map(|p| (p.coords - mean) * s).collect()
}

fn farthest_point_basis(x: &[Vector2<f64>], m: usize) -> Vec<usize> {
    let mut chosen = vec![0usize];
    let mut dist: Vec<f64> = x.iter().map(|p| (p - x[0]).norm_squared()).collect();
    while chosen.len() < m {
        let (next, &d) = dist
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .unwrap();
        if d <= 0.0 {
            break;
        }
        chosen.push(next);
        for (di, p) in dist.iter_mut().zip(x) {
            *di = di.min((p - x[next]).norm_squared());
        }
    }
    chosen
}

/// Classifies correspondences by fitting a smooth displacement field with
/// EM under a Gaussian-inlier / uniform-outlier mixture. Inlier iff
/// posterior > 0.5.
pub fn vfc_filter(src: &[Point], dst: &[Point], params: &VfcParams) -> Result<VfcResult> {
    if src.len() != dst.len() {
        return Err(Error::invalid("src and dst lengths differ"));
    }
    params.validate()?;
    let n_all = src.len();
    if n_all < MIN_PAIRS {
        return Ok(VfcResult {
            inliers: vec![true; n_all],
            posteriors: vec![1.0; n_all],
            skipped: true,
            duplicates_collapsed: false,
            iterations: 0,
            objective: Vec::new(),
        });
    }

    // collapse exact duplicate pairs
    let mut rep_of = Vec::with_capacity(n_all);
    let mut uniq: Vec<usize> = Vec::new();
    let mut seen: HashMap<[u64; 4], usize> = HashMap::new();
    for i in 0..n_all {
        let key = [src[i].x, src[i].y, dst[i].x, dst[i].y].map(|v| (v + 0.0).to_bits());
        let r = *seen.entry(key).or_insert_with(|| {
            uniq.push(i);
            uniq.len() - 1
        });
        rep_of.push(r);
    }
    let duplicates_collapsed = uniq.len() < n_all;
    let us: Vec<Point> = uniq.iter().map(|&i| src[i]).collect();
    let ud: Vec<Point> = uniq.iter().map(|&i| dst[i]).collect();

    let (post, iterations, objective) = if us.len() < MIN_PAIRS {
        (vec![1.0; us.len()], 0, Vec::new())
    } else {
        em(&us, &ud, params)?
    };
    let posteriors: Vec<f64> = rep_of.iter().map(|&r| post[r]).collect();
    Ok(VfcResult {
        inliers: posteriors.iter().map(|&p| p > 0.5).collect(),
        posteriors,
        skipped: us.len() < MIN_PAIRS,
        duplicates_collapsed,
        iterations,
        objective,
    })
}

/// Cholesky solve, falling back to a truncated-SVD least-squares solve when
/// the system is numerically semidefinite.
fn solve_spd(sys: DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(chol) = sys.clone().cholesky() {
        return Ok(chol.solve(rhs));
    }
    let scale = sys.diagonal().amax().max(f64::MIN_POSITIVE);
    sys.svd(true, true)
        .solve(rhs, 1e-13 * scale)
        .map_err(|e| Error::Singular(format!("VFC kernel system: {e}")))
}

fn em(src: &[Point], dst: &[Point], params: &VfcParams) -> Result<(Vec<f64>, usize, Vec<f64>)> {
    let n = src.len();
    let x = normalize(src);
    let xd = normalize(dst);
    let y: Vec<Vector2<f64>> = xd.iter().zip(&x).map(|(d, s)| d - s).collect();
    let beta = params.kernel_beta;
    let dim = 2.0;
    let a = params.outlier_variance;

    let basis: Vec<usize> = if n <= params.max_basis {
        (0..n).collect()
    } else {
        farthest_point_basis(&x, params.max_basis)
    };
    let m = basis.len();
    // kernel between point i and basis center j
    let u = DMatrix::from_fn(n, m, |i, j| {
        (-beta * (x[i] - x[basis[j]]).norm_squared()).exp()
    });
    // Whiten the basis so the penalty becomes |b|^2 and the M-step system is
    // ridge-conditioned; numerically null kernel directions are dropped.
    let phi = {
        let q = DMatrix::from_fn(m, m, |i, j| u[(basis[i], j)]);
        let eig = q.symmetric_eigen();
        let top = eig.eigenvalues.amax();
        let keep: Vec<usize> = (0..m)
            .filter(|&k| eig.eigenvalues[k] > 1e-12 * top)
            .collect();
        let t = DMatrix::from_fn(m, keep.len(), |i, k| {
            eig.eigenvectors[(i, keep[k])] / eig.eigenvalues[keep[k]].sqrt()
        });
        &u * t
    };
    let ymat = DMatrix::from_fn(n, 2, |i, d| y[i][d]);

    let mut v = DMatrix::<f64>::zeros(n, 2);
    let mut reg = 0.0;
    let mut gamma = params.gamma_init;
    let mut sigma2 =
        (y.iter().map(|r| r.norm_squared()).sum::<f64>() / (dim * n as f64)).max(SIGMA2_FLOOR);
    let mut p = vec![0.0; n];

    let residual_sq = |v: &DMatrix<f64>, i: usize| {
        (ymat[(i, 0)] - v[(i, 0)]).powi(2) + (ymat[(i, 1)] - v[(i, 1)]).powi(2)
    };
    let objective = |v: &DMatrix<f64>, reg: f64, gamma: f64, sigma2: f64| -> f64 {
        let norm = 1.0 / (2.0 * std::f64::consts::PI * sigma2);
        let mut l = 0.0;
        for i in 0..n {
            let g = norm * (-residual_sq(v, i) / (2.0 * sigma2)).exp();
            l -= (gamma * g + (1.0 - gamma) / a).ln();
        }
        l + 0.5 * params.lambda * reg
    };

    let mut history = vec![objective(&v, reg, gamma, sigma2)];
    let mut iterations = 0;
    for _ in 0..params.max_iter {
        iterations += 1;
        // E-step
        let outlier_term = (1.0 - gamma) * 2.0 * std::f64::consts::PI * sigma2 / a;
        for (i, pi) in p.iter_mut().enumerate() {
            let g = gamma * (-residual_sq(&v, i) / (2.0 * sigma2)).exp();
            *pi = if g + outlier_term > 0.0 {
                g / (g + outlier_term)
            } else {
                0.0
            };
        }
        // M-step: coefficients, then variance and mixing weight
        let ridge = params.lambda * sigma2;
        let mut pphi = phi.clone();
        for (i, &pi) in p.iter().enumerate() {
            pphi.row_mut(i).scale_mut(pi);
        }
        let mut sys = phi.transpose() * &pphi;
        for i in 0..sys.nrows() {
            sys[(i, i)] += ridge;
        }
        let rhs = pphi.transpose() * &ymat;
        let b = solve_spd(sys, &rhs)?;
        v = &phi * &b;
        reg = b.norm_squared();
        let sp: f64 = p.iter().sum();
        let wres: f64 = (0..n).map(|i| p[i] * residual_sq(&v, i)).sum();
        sigma2 = if sp > 0.0 {
            (wres / (dim * sp)).max(SIGMA2_FLOOR)
        } else {
            sigma2
        };
        gamma = (sp / n as f64).clamp(GAMMA_RANGE.0, GAMMA_RANGE.1);

        let l = objective(&v, reg, gamma, sigma2);
        let prev = *history.last().unwrap();
        history.push(l);
        if (prev - l).abs() <= params.tol * prev.abs().max(1.0) {
            break;
        }
    }
    // final responsibilities under the converged field
    let outlier_term = (1.0 - gamma) * 2.0 * std::f64::consts::PI * sigma2 / a;
    for (i, pi) in p.iter_mut().enumerate() {
        let g = gamma * (-residual_sq(&v, i) / (2.0 * sigma2)).exp();
        *pi = if g + outlier_term > 0.0 {
            g / (g + outlier_term)
        } else {
            0.0
        };
    }
    Ok((p, iterations, history))
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_xorshift::XorShiftRng;

    use super::*;

    #[test]
    fn constant_field_is_all_inliers() {
        let mut r = XorShiftRng::seed_from_u64(2);
        let src: Vec<Point> = (0..40)
            .map(|_| Point::new(r.random_range(0.0..500.0), r.random_range(0.0..500.0)))
            .collect();
        let dst: Vec<Point> = src
            .iter()
            .map(|p| Point::new(p.x + 5.0, p.y + 5.0))
            .collect();
        let res = vfc_filter(&src, &dst, &VfcParams::default()).unwrap();
        assert!(res.inliers.iter().all(|&b| b));
        assert!(!res.skipped);
    }

    #[test]
    fn four_pairs_are_skipped() {
        let p = vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(0.0, 1.0),
            Point::new(3.0, 3.0),
        ];
        let q = vec![
            Point::new(9.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(0.0, 1.0),
            Point::new(0.0, 3.0),
        ];
        let res = vfc_filter(&p, &q, &VfcParams::default()).unwrap();
        assert!(res.skipped);
        assert_eq!(res.inliers, vec![true; 4]);
    }

    #[test]
    fn duplicates_share_posteriors() {
        let mut r = XorShiftRng::seed_from_u64(4);
        let mut src: Vec<Point> = (0..30)
            .map(|_| Point::new(r.random_range(0.0..500.0), r.random_range(0.0..500.0)))
            .collect();
        let mut dst: Vec<Point> = src
            .iter()
            .map(|p| Point::new(p.x * 1.01 + 2.0, p.y - 3.0))
            .collect();
        src.push(src[3]);
        dst.push(dst[3]);
        let res = vfc_filter(&src, &dst, &VfcParams::default()).unwrap();
        assert!(res.duplicates_collapsed);
        assert_eq!(res.posteriors[3], res.posteriors[30]);
    }

    #[test]
    fn objective_monotone_and_posteriors_bounded() {
        for seed in 0..10 {
            let mut r = XorShiftRng::seed_from_u64(seed);
            let src: Vec<Point> = (0..80)
                .map(|_| Point::new(r.random_range(0.0..800.0), r.random_range(0.0..800.0)))
                .collect();
            let dst: Vec<Point> = src
                .iter()
                .map(|p| {
                    if r.random_bool(0.3) {
                        Point::new(r.random_range(0.0..800.0), r.random_range(0.0..800.0))
                    } else {
                        Point::new(
                            p.x + 4.0 * (p.y / 200.0).sin(),
                            p.y + 3.0 * (p.x / 150.0).cos(),
                        )
                    }
                })
                .collect();
            for max_basis in [256, 20] {
                let params = VfcParams {
                    max_basis,
                    ..VfcParams::default()
                };
                let res = vfc_filter(&src, &dst, &params).unwrap();
                assert!(res.posteriors.iter().all(|p| (0.0..=1.0).contains(p)));
                for w in res.objective.windows(2) {
                    assert!(
                        w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0),
                        "seed {seed} basis {max_basis}: {} -> {}",
                        w[0],
                        w[1]
                    );
                }
            }
        }
    }
}
