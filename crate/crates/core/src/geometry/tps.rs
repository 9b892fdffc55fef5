use nalgebra::{DMatrix, Matrix2};

use super::Point;
use crate::error::{Error, Result};

/// Thin-plate-spline radial basis `U(r) = r^2 log r`, taking `r^2`.
#[inline]
pub(crate) fn tps_kernel_sq(r2: f64) -> f64 {
    if r2 <= 0.0 {
        0.0
    } else {
        0.5 * r2 * r2.ln()
    }
}

/// A 2-D thin-plate spline
/// `f(p) = A [1, x, y]^T + sum_i w_i U(|p - c_i|)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TpsModel {
    control_points: Vec<Point>,
    /// Row `d` holds `(a_d0, a_d1, a_d2)` for output coordinate `d`.
    affine: [[f64; 3]; 2],
    kernel_weights: Vec<[f64; 2]>,
    regularization: f64,
}

impl TpsModel {
    /// The identity map with no control points.
    pub fn identity() -> Self {
        Self {
            control_points: Vec::new(),
            affine: [[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            kernel_weights: Vec::new(),
            regularization: 0.0,
        }
    }

    /// Assembles a model from raw coefficients (used by deserializers).
    pub fn from_parts(
        control_points: Vec<Point>,
        affine: [[f64; 3]; 2],
        kernel_weights: Vec<[f64; 2]>,
        regularization: f64,
    ) -> Result<Self> {
        if control_points.len() != kernel_weights.len() {
            return Err(Error::invalid("control point and weight counts differ"));
        }
        Ok(Self {
            control_points,
            affine,
            kernel_weights,
            regularization,
        })
    }

    pub fn control_points(&self) -> &[Point] {
        &self.control_points
    }

    pub fn affine(&self) -> &[[f64; 3]; 2] {
        &self.affine
    }

    pub fn kernel_weights(&self) -> &[[f64; 2]] {
        &self.kernel_weights
    }

    pub fn regularization(&self) -> f64 {
        self.regularization
    }

    #[inline]
    pub fn eval(&self, p: Point) -> Point {
        let a = &self.affine;
        let mut x = a[0][0] + a[0][1] * p.x + a[0][2] * p.y;
        let mut y = a[1][0] + a[1][1] * p.x + a[1][2] * p.y;
        for (c, w) in self.control_points.iter().zip(&self.kernel_weights) {
            let dx = p.x - c.x;
            let dy = p.y - c.y;
            let u = tps_kernel_sq(dx * dx + dy * dy);
            x += w[0] * u;
            y += w[1] * u;
        }
        Point::new(x, y)
    }

    /// Largest absolute side-condition residual, relative to the
    /// control-point coordinate scale:
    /// `max(|sum w|, |sum w x| / s, |sum w y| / s)` over both outputs.
    pub fn side_condition_residual(&self) -> f64 {
        let s = self
            .control_points
            .iter()
            .map(|c| c.x.abs().max(c.y.abs()))
            .fold(1.0, f64::max);
        let mut worst: f64 = 0.0;
        for d in 0..2 {
            let mut sw = 0.0;
            let mut swx = 0.0;
            let mut swy = 0.0;
            for (c, w) in self.control_points.iter().zip(&self.kernel_weights) {
                sw += w[d];
                swx += w[d] * c.x;
                swy += w[d] * c.y;
            }
            worst = worst.max(sw.abs()).max(swx.abs() / s).max(swy.abs() / s);
        }
        worst
    }
}

/// Evaluates the spline at every point.
pub fn eval_tps(model: &TpsModel, points: &[Point]) -> Vec<Point> {
    points.iter().map(|p| model.eval(*p)).collect()
}

/// Fits a thin-plate spline mapping `src[i]` to `dst[i]` with smoothing
/// `lambda` (0 interpolates exactly).
///
/// Coordinates are mapped into the unit box spanned by `src` before solving
/// and the coefficients are transformed back, so the returned model works in
/// the original pixel frame. `lambda` acts in the unit-box frame.
pub fn fit_tps(src: &[Point], dst: &[Point], lambda: f64) -> Result<TpsModel> {
    let n = src.len();
    if n != dst.len() {
        return Err(Error::invalid("src and dst lengths differ"));
    }
    if n < 3 {
        return Err(Error::InsufficientPairs { needed: 3, got: n });
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!(
            "regularization {lambda} must be >= 0"
        )));
    }
    let (min_x, max_x) = src
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.x), hi.max(p.x))
        });
    let (min_y, max_y) = src
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.y), hi.max(p.y))
        });
    let scale = (max_x - min_x).max(max_y - min_y);
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Singular("control points coincide".into()));
    }
    let to_unit = |p: &Point| Point::new((p.x - min_x) / scale, (p.y - min_y) / scale);
    let cs: Vec<Point> = src.iter().map(to_unit).collect();
    let ds: Vec<Point> = dst.iter().map(to_unit).collect();

    check_configuration(&cs)?;

    let m = n + 3;
    let mut l = DMatrix::<f64>::zeros(m, m);
    for i in 0..n {
        for j in (i + 1)..n {
            let u = tps_kernel_sq((cs[i] - cs[j]).norm_squared());
            l[(i, j)] = u;
            l[(j, i)] = u;
        }
        l[(i, i)] = lambda;
        l[(i, n)] = 1.0;
        l[(i, n + 1)] = cs[i].x;
        l[(i, n + 2)] = cs[i].y;
        l[(n, i)] = 1.0;
        l[(n + 1, i)] = cs[i].x;
        l[(n + 2, i)] = cs[i].y;
    }
    let mut rhs = DMatrix::<f64>::zeros(m, 2);
    for i in 0..n {
        rhs[(i, 0)] = ds[i].x;
        rhs[(i, 1)] = ds[i].y;
    }
    let lu = l.clone().lu();
    let sol = lu
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("TPS system is singular".into()))?;
    let resid = (&l * &sol - &rhs).abs().max();
    if !resid.is_finite() || resid > 1e-6 {
        return Err(Error::Singular(format!(
            "TPS system is ill-conditioned (residual {resid:.3e})"
        )));
    }

    // Back to pixel units. With p = m + s q and side conditions
    // sum w~ = sum w~ q = 0:
    //   U(|q - c~|) = U(|p - c|) / s^2 - |p - c|^2 log(s) / s^2
    //   sum w~ |p - c|^2 = s^2 sum w~ |c~|^2
    let log_s = scale.ln();
    let mut affine = [[0.0; 3]; 2];
    let offsets = [min_x, min_y];
    let mut kernel_weights = vec![[0.0; 2]; n];
    for d in 0..2 {
        let a0 = sol[(n, d)];
        let a1 = sol[(n + 1, d)];
        let a2 = sol[(n + 2, d)];
        let kappa: f64 = (0..n)
            .map(|i| sol[(i, d)] * cs[i].coords.norm_squared())
            .sum();
        affine[d][0] = offsets[d] + scale * a0 - a1 * min_x - a2 * min_y - scale * log_s * kappa;
        affine[d][1] = a1;
        affine[d][2] = a2;
        for (i, kw) in kernel_weights.iter_mut().enumerate() {
            kw[d] = sol[(i, d)] / scale;
        }
    }
    Ok(TpsModel {
        control_points: src.to_vec(),
        affine,
        kernel_weights,
        regularization: lambda,
    })
}

/// Rejects repeated or collinear control points (in unit-box coordinates).
fn check_configuration(cs: &[Point]) -> Result<()> {
    let n = cs.len() as f64;
    let mean = cs.iter().fold(Point::origin(), |acc, p| acc + p.coords / n);
    let mut cov = Matrix2::zeros();
    for p in cs {
        let d = p - mean;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if !(hi > 0.0) || lo <= 1e-12 * hi {
        return Err(Error::Singular("control points are collinear".into()));
    }
    let mut order: Vec<usize> = (0..cs.len()).collect();
    order.sort_by(|&a, &b| {
        cs[a]
            .x
            .total_cmp(&cs[b].x)
            .then(cs[a].y.total_cmp(&cs[b].y))
    });
    for w in order.windows(2) {
        let (a, b) = (cs[w[0]], cs[w[1]]);
        if (a - b).norm() <= 1e-12 {
            return Err(Error::Singular("duplicate control points".into()));
        }
    }
    Ok(())
}
