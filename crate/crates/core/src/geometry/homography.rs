use std::fmt;

use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::Point;
use crate::error::{Error, Result};

/// A planar projective transform, normalized so that `h33 = 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Homography {
    m: Matrix3<f64>,
    degenerate: bool,
}

impl Homography {
    pub fn identity() -> Self {
        Self::from_matrix(Matrix3::identity())
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self::from_matrix(Matrix3::new(1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0))
    }

    pub fn scaling(sx: f64, sy: f64) -> Self {
        Self::from_matrix(Matrix3::new(sx, 0.0, 0.0, 0.0, sy, 0.0, 0.0, 0.0, 1.0))
    }

    /// Normalizes `m` by `h33`. When `h33` vanishes or the matrix is singular
    /// the transform is kept as given and flagged degenerate.
    pub fn from_matrix(m: Matrix3<f64>) -> Self {
        let h33 = m[(2, 2)];
        let scale = m.abs().max();
        if !m.iter().all(|v| v.is_finite()) || h33.abs() <= 1e-14 * scale.max(f64::MIN_POSITIVE) {
            return Self {
                m,
                degenerate: true,
            };
        }
        let m = m / h33;
        let degenerate = m.determinant().abs() < 1e-14;
        Self { m, degenerate }
    }

    /// Row-major coefficients.
    pub fn from_row_slice(v: &[f64; 9]) -> Self {
        Self::from_matrix(Matrix3::from_row_slice(v))
    }

    pub fn to_row_array(&self) -> [f64; 9] {
        let mut out = [0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                out[3 * r + c] = self.m[(r, c)];
            }
        }
        out
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// Element `h_{row,col}` with 1-based indices as in `h11 .. h33`.
    pub fn h(&self, row: usize, col: usize) -> f64 {
        self.m[(row - 1, col - 1)]
    }

    pub fn apply(&self, p: Point) -> Result<Point> {
        let v = self.m * Vector3::new(p.x, p.y, 1.0);
        if v.z.abs() < 1e-12 {
            return Err(Error::PointAtInfinity);
        }
        Ok(Point::new(v.x / v.z, v.y / v.z))
    }

    pub fn inverse(&self) -> Result<Homography> {
        self.m
            .try_inverse()
            .map(Homography::from_matrix)
            .ok_or_else(|| Error::Singular("homography is not invertible".into()))
    }

    /// `self` applied after `first`.
    pub fn compose(&self, first: &Homography) -> Homography {
        Homography::from_matrix(self.m * first.m)
    }
}

impl Default for Homography {
    fn default() -> Self {
        Self::identity()
    }
}

/// Maps every point; fails on the first point sent to infinity.
pub fn apply_homography(h: &Homography, points: &[Point]) -> Result<Vec<Point>> {
    points.iter().map(|p| h.apply(*p)).collect()
}

/// One-directional transfer error `|H(src_i) - dst_i|`.
pub fn reprojection_errors(h: &Homography, src: &[Point], dst: &[Point]) -> Result<Vec<f64>> {
    if src.len() != dst.len() {
        return Err(Error::invalid("src and dst lengths differ"));
    }
    src.iter()
        .zip(dst)
        .map(|(s, d)| h.apply(*s).map(|p| (p - d).norm()))
        .collect()
}

/// Similarity that moves the centroid to the origin and scales the mean
/// distance to sqrt(2).
fn hartley_normalization(points: &[Point]) -> Result<Matrix3<f64>> {
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p.x).sum::<f64>() / n;
    let cy = points.iter().map(|p| p.y).sum::<f64>() / n;
    let mean_dist = points
        .iter()
        .map(|p| ((p.x - cx).powi(2) + (p.y - cy).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    if !(mean_dist > 0.0 && mean_dist.is_finite()) {
        return Err(Error::Degenerate("all points coincide".into()));
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Ok(Matrix3::new(
        s,
        0.0,
        -s * cx,
        0.0,
        s,
        -s * cy,
        0.0,
        0.0,
        1.0,
    ))
}

/// Weighted, normalized DLT.
///
/// Pairs with non-positive weight are dropped before anything else, so a zero
/// weight has exactly the effect of removing the pair. Each remaining pair's
/// two equations are scaled by `sqrt(weight)`.
pub fn fit_homography_dlt(src: &[Point], dst: &[Point], weights: &[f64]) -> Result<Homography> {
    if src.len() != dst.len() || src.len() != weights.len() {
        return Err(Error::invalid("src, dst and weights lengths differ"));
    }
    let mut s = Vec::with_capacity(src.len());
    let mut d = Vec::with_capacity(src.len());
    let mut w = Vec::with_capacity(src.len());
    for i in 0..src.len() {
        if weights[i] > 0.0 && weights[i].is_finite() {
            s.push(src[i]);
            d.push(dst[i]);
            w.push(weights[i]);
        }
    }
    if s.len() < 4 {
        return Err(Error::InsufficientPairs {
            needed: 4,
            got: s.len(),
        });
    }
    let ts = hartley_normalization(&s)?;
    let td = hartley_normalization(&d)?;

    let n = s.len();
    let rows = (2 * n).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for i in 0..n {
        let p = ts * Vector3::new(s[i].x, s[i].y, 1.0);
        let q = td * Vector3::new(d[i].x, d[i].y, 1.0);
        let sw = w[i].sqrt();
        let (x, y, u, v) = (p.x * sw, p.y * sw, q.x, q.y);
        let r0 = 2 * i;
        a[(r0, 0)] = -x;
        a[(r0, 1)] = -y;
        a[(r0, 2)] = -sw;
        a[(r0, 6)] = u * x;
        a[(r0, 7)] = u * y;
        a[(r0, 8)] = u * sw;
        let r1 = r0 + 1;
        a[(r1, 3)] = -x;
        a[(r1, 4)] = -y;
        a[(r1, 5)] = -sw;
        a[(r1, 6)] = v * x;
        a[(r1, 7)] = v * y;
        a[(r1, 8)] = v * sw;
    }
    let h = null_vector(a)?;
    let hn = Matrix3::from_row_slice(h.as_slice());
    let td_inv = td
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("normalization not invertible".into()))?;
    let out = Homography::from_matrix(td_inv * hn * ts);
    if out.is_degenerate() {
        return Err(Error::Degenerate("estimated homography is singular".into()));
    }
    Ok(out)
}

/// Right singular vector of the least singular value of a `k x 9` system;
/// fails when the null space is not one-dimensional.
fn null_vector(a: DMatrix<f64>) -> Result<nalgebra::DVector<f64>> {
    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Degenerate("svd did not converge".into()))?;
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[i].total_cmp(&sv[j]));
    let (min_i, second) = (order[0], sv[order[1]]);
    let largest = sv[order[sv.len() - 1]];
    if !(largest > 0.0) || second <= 1e-10 * largest {
        return Err(Error::Degenerate(
            "rank-deficient DLT system (collinear or repeated points)".into(),
        ));
    }
    Ok(v_t.row(min_i).transpose())
}

/// Why a homography failed the plausibility gate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InvalidHomography {
    Degenerate,
    Perspective,
    Diagonal,
    Determinant,
}

impl fmt::Display for InvalidHomography {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InvalidHomography::Degenerate => "degenerate",
            InvalidHomography::Perspective => "perspective",
            InvalidHomography::Diagonal => "diagonal",
            InvalidHomography::Determinant => "determinant",
        })
    }
}

/// Plausibility bounds for a local homography between two images at a common
/// scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HomographyValidityConfig {
    /// Bound on `|h31|` and `|h32|`.
    pub max_perspective: f64,
    /// Allowed range of `h11` and `h22`.
    pub diag_ratio_range: (f64, f64),
    /// Lower bound on the determinant of the upper-left 2x2 block.
    pub min_det2x2: f64,
}

impl Default for HomographyValidityConfig {
    fn default() -> Self {
        Self {
            max_perspective: 1e-3,
            diag_ratio_range: (0.2, 5.0),
            min_det2x2: 1e-3,
        }
    }
}

impl HomographyValidityConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.diag_ratio_range;
        if !(self.max_perspective > 0.0 && lo > 0.0 && hi > lo && self.min_det2x2 > 0.0) {
            return Err(Error::invalid(format!("invalid validity bounds {self:?}")));
        }
        Ok(())
    }
}

/// Checks the tests in order (perspective, diagonal, determinant) and reports
/// the first failure.
pub fn check_homography_validity(
    h: &Homography,
    cfg: &HomographyValidityConfig,
) -> std::result::Result<(), InvalidHomography> {
    if h.is_degenerate() {
        return Err(InvalidHomography::Degenerate);
    }
    if h.h(3, 1).abs() > cfg.max_perspective || h.h(3, 2).abs() > cfg.max_perspective {
        return Err(InvalidHomography::Perspective);
    }
    let (lo, hi) = cfg.diag_ratio_range;
    let in_range = |v: f64| v >= lo && v <= hi;
    if !in_range(h.h(1, 1)) || !in_range(h.h(2, 2)) {
        return Err(InvalidHomography::Diagonal);
    }
    let det = h.h(1, 1) * h.h(2, 2) - h.h(1, 2) * h.h(2, 1);
    if det < cfg.min_det2x2 {
        return Err(InvalidHomography::Determinant);
    }
    Ok(())
}
