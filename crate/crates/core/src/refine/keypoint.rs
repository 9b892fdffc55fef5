use serde::{Deserialize, Serialize};

use crate::detect::FeatureVolume;
use crate::error::{Error, Result};
use crate::geometry::{softargmax, Point, DEFAULT_SOFTARGMAX_TEMPERATURE};
use crate::imgcore::{Interpolation, Plane};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mod1Mode {
    /// Top-k search in a wide window, then softargmax.
    FirstLevel,
    /// Softargmax directly around the keypoint.
    Subsequent,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KeypointRefineParams {
    pub search_size: usize,
    pub top_k: usize,
    /// Odd softargmax window side.
    pub window: usize,
    pub template_radius: usize,
    pub ncc_search: usize,
    pub temperature: f64,
    pub corr_temperature: f64,
    pub ncc_temperature: f64,
    /// Radius of the modality-1 template correlated per cell; 0 is the bare
    /// center vector.
    pub corr_template_radius: usize,
}

impl Default for KeypointRefineParams {
    fn default() -> Self {
        Self {
            search_size: 18,
            top_k: 4,
            window: 7,
            template_radius: 3,
            ncc_search: 24,
            temperature: DEFAULT_SOFTARGMAX_TEMPERATURE,
            corr_temperature: 0.02,
            ncc_temperature: 0.05,
            corr_template_radius: 2,
        }
    }
}

impl KeypointRefineParams {
    pub fn validate(&self) -> Result<()> {
        if self.search_size < 2
            || self.top_k == 0
            || self.window.is_multiple_of(2)
            || self.ncc_search < 2
            || !(self.temperature > 0.0
                && self.corr_temperature > 0.0
                && self.ncc_temperature > 0.0)
        {
            return Err(Error::invalid(format!(
                "invalid refinement parameters {self:?}"
            )));
        }
        Ok(())
    }
}

/// A refined location; `flagged` marks a pass-through.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Refined {
    pub point: Point,
    pub flagged: bool,
}

impl Refined {
    fn moved(point: Point) -> Self {
        Self {
            point,
            flagged: false,
        }
    }

    fn passed(point: Point) -> Self {
        Self {
            point,
            flagged: true,
        }
    }
}

fn window_scores(size: usize, mut f: impl FnMut(i64, i64) -> f64) -> Vec<f64> {
    let half = (size / 2) as i64;
    let mut out = Vec::with_capacity(size * size);
    for j in -half..=half {
        for i in -half..=half {
            out.push(f(i, j));
        }
    }
    out
}

fn in_bounds(plane: &Plane, x: f64, y: f64) -> bool {
    x >= 0.0 && y >= 0.0 && x <= (plane.width() - 1) as f64 && y <= (plane.height() - 1) as f64
}

/// Re-localizes a keypoint of the higher-resolution modality on its own
/// crack score map.
pub fn refine_mod1(
    score: &Plane,
    keypoint: Point,
    mode: Mod1Mode,
    params: &KeypointRefineParams,
) -> Refined {
    let win = params.window;
    match mode {
        Mod1Mode::Subsequent => {
            let s = window_scores(win, |i, j| {
                let (x, y) = (keypoint.x + i as f64, keypoint.y + j as f64);
                if in_bounds(score, x, y) {
                    score.sample(x, y, Interpolation::Bilinear)
                } else {
                    f64::NAN
                }
            });
            if s.iter().all(|v| !v.is_finite()) {
                return Refined::passed(keypoint);
            }
            let (dx, dy) = softargmax(&s, win, params.temperature);
            Refined::moved(Point::new(keypoint.x + dx, keypoint.y + dy))
        }
        Mod1Mode::FirstLevel => {
            let half = (params.search_size / 2) as i64;
            let (cx, cy) = (keypoint.x.round() as i64, keypoint.y.round() as i64);
            let (x0, x1) = (
                (cx - half).max(0),
                (cx + half - 1).min(score.width() as i64 - 1),
            );
            let (y0, y1) = (
                (cy - half).max(0),
                (cy + half - 1).min(score.height() as i64 - 1),
            );
            if x0 > x1 || y0 > y1 {
                return Refined::passed(keypoint);
            }
            let mut cands: Vec<(f32, i64, i64)> = Vec::new();
            for y in y0..=y1 {
                for x in x0..=x1 {
                    cands.push((score.get(x as usize, y as usize), x, y));
                }
            }
            cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.2.cmp(&b.2)).then(a.1.cmp(&b.1)));
            if !(cands[0].0 > 0.0) {
                return Refined::passed(keypoint);
            }
            let d2 = |c: &(f32, i64, i64)| {
                (c.1 as f64 - keypoint.x).powi(2) + (c.2 as f64 - keypoint.y).powi(2)
            };
            let best = cands
                .iter()
                .take(params.top_k)
                .fold(None::<&(f32, i64, i64)>, |acc, c| match acc {
                    Some(a) if d2(a) <= d2(c) => Some(a),
                    _ => Some(c),
                })
                .unwrap();
            let (bx, by) = (best.1, best.2);
            let s = window_scores(win, |i, j| {
                let (x, y) = (bx + i, by + j);
                if x >= 0 && y >= 0 && (x as usize) < score.width() && (y as usize) < score.height()
                {
                    score.get(x as usize, y as usize) as f64
                } else {
                    f64::NAN
                }
            });
            let (dx, dy) = softargmax(&s, win, params.temperature);
            let p = Point::new(
                (bx as f64 + dx).clamp((cx - half) as f64, (cx + half - 1) as f64),
                (by as f64 + dy).clamp((cy - half) as f64, (cy + half - 1) as f64),
            );
            Refined::moved(p)
        }
    }
}

fn sample_grid(vol: &FeatureVolume, center: Point, radius: i64) -> Vec<f32> {
    let c = vol.channels();
    let side = (2 * radius + 1) as usize;
    let mut out = vec![0.0f32; side * side * c];
    let mut k = 0;
    for j in -radius..=radius {
        for i in -radius..=radius {
            vol.sample_into(
                center.x + i as f64,
                center.y + j as f64,
                &mut out[k * c..(k + 1) * c],
            );
            k += 1;
        }
    }
    out
}

/// Shifts a modality-2 keypoint by template matching a window of modality 1
/// features inside a larger search window.
pub fn refine_mod2_ncc(
    feat_a: &FeatureVolume,
    feat_b: &FeatureVolume,
    kp_a: Point,
    kp_b: Point,
    params: &KeypointRefineParams,
) -> Refined {
    let ch = feat_a.channels();
    let r = params.template_radius as i64;
    let side_t = (2 * r + 1) as usize;
    let mut tmpl: Vec<f64> = sample_grid(feat_a, kp_a, r)
        .into_iter()
        .map(f64::from)
        .collect();
    let mean = tmpl.iter().sum::<f64>() / tmpl.len() as f64;
    tmpl.iter_mut().for_each(|v| *v -= mean);
    let tnorm = tmpl.iter().map(|v| v * v).sum::<f64>().sqrt();
    if tnorm < 1e-9 {
        return Refined::passed(kp_b);
    }

    // displacements d in [lo, lo + n)
    let n = params.ncc_search as i64;
    let lo = -(n / 2);
    let gr = n / 2 + r + 1;
    let gside = (2 * gr + 1) as usize;
    let grid = sample_grid(feat_b, kp_b, gr);
    let at = |gx: i64, gy: i64| -> &[f32] {
        let k = ((gy + gr) as usize * gside + (gx + gr) as usize) * ch;
        &grid[k..k + ch]
    };

    let count = (side_t * side_t * ch) as f64;
    let mut map = vec![f64::NAN; (n * n) as usize];
    let mut win = vec![0.0f64; side_t * side_t * ch];
    for dy in 0..n {
        for dx in 0..n {
            let (ox, oy) = (lo + dx, lo + dy);
            let mut k = 0;
            for j in -r..=r {
                for i in -r..=r {
                    for &v in at(ox + i, oy + j) {
                        win[k] = v as f64;
                        k += 1;
                    }
                }
            }
            let wm = win.iter().sum::<f64>() / count;
            let (mut dot, mut wn) = (0.0, 0.0);
            for (t, w) in tmpl.iter().zip(&win) {
                let w = w - wm;
                dot += t * w;
                wn += w * w;
            }
            if wn > 1e-18 {
                map[(dy * n + dx) as usize] = dot / (tnorm * wn.sqrt());
            }
        }
    }
    let Some((best, _)) = map.iter().enumerate().filter(|(_, v)| v.is_finite()).fold(
        None::<(usize, f64)>,
        |acc, (k, &v)| match acc {
            Some((_, bv)) if bv >= v => acc,
            _ => Some((k, v)),
        },
    ) else {
        return Refined::passed(kp_b);
    };
    let (bx, by) = ((best as i64) % n, (best as i64) / n);
    let s = window_scores(params.window, |i, j| {
        let (x, y) = (bx + i, by + j);
        if x >= 0 && y >= 0 && x < n && y < n {
            map[(y * n + x) as usize]
        } else {
            f64::NAN
        }
    });
    let (ox, oy) = softargmax(&s, params.window, params.ncc_temperature);
    Refined::moved(Point::new(
        kp_b.x + (lo + bx) as f64 + ox,
        kp_b.y + (lo + by) as f64 + oy,
    ))
}

/// Sub-pixel shift of a modality-2 keypoint from the correlation of a small
/// modality-1 feature template with each cell of a modality-2 window.
pub fn refine_mod2_corr_fine(
    feat_a: &FeatureVolume,
    feat_b: &FeatureVolume,
    kp_a: Point,
    kp_b: Point,
    params: &KeypointRefineParams,
) -> Refined {
    let rho = params.corr_template_radius as i64;
    let tmpl: Vec<f64> = sample_grid(feat_a, kp_a, rho)
        .into_iter()
        .map(f64::from)
        .collect();
    let tmean = tmpl.iter().sum::<f64>() / tmpl.len() as f64;
    let tmpl: Vec<f64> = tmpl.iter().map(|v| v - tmean).collect();
    let tn = tmpl.iter().map(|v| v * v).sum::<f64>().sqrt();
    if tn < 1e-6 {
        return Refined::passed(kp_b);
    }
    let half = (params.window / 2) as i64;
    let gr = half + rho;
    let gside = (2 * gr + 1) as usize;
    let ch = feat_b.channels();
    let grid = sample_grid(feat_b, kp_b, gr);
    let mut win = Vec::with_capacity(tmpl.len());
    let s = window_scores(params.window, |i, j| {
        win.clear();
        for v in -rho..=rho {
            for u in -rho..=rho {
                let k = ((j + v + gr) as usize * gside + (i + u + gr) as usize) * ch;
                win.extend(grid[k..k + ch].iter().map(|&a| a as f64));
            }
        }
        let wmean = win.iter().sum::<f64>() / win.len() as f64;
        let (mut dot, mut wn) = (0.0, 0.0);
        for (t, w) in tmpl.iter().zip(&win) {
            dot += t * (w - wmean);
            wn += (w - wmean).powi(2);
        }
        if wn < 1e-12 {
            f64::NAN
        } else {
            dot / (tn * wn.sqrt())
        }
    });
    let (dx, dy) = softargmax(&s, params.window, params.corr_temperature);
    Refined::moved(Point::new(kp_b.x + dx, kp_b.y + dy))
}
