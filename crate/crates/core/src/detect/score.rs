use crate::imgcore::{gaussian_blur, Plane};

use super::DetectorParams;

/// Turns below this many degrees are ring quantization, not bends.
const BEND_DEAD_ZONE: f64 = 25.0;

fn disk_offsets(r: usize) -> Vec<(i64, i64)> {
    let r = r as i64;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                out.push((dx, dy));
            }
        }
    }
    out
}

/// Edge-replicated copy with `pad` extra pixels on every side.
fn padded(src: &Plane, pad: usize) -> (Vec<f32>, usize) {
    let pw = src.width() + 2 * pad;
    let ph = src.height() + 2 * pad;
    let mut out = Vec::with_capacity(pw * ph);
    for y in 0..ph as i64 {
        for x in 0..pw as i64 {
            out.push(src.get_clamped(x - pad as i64, y - pad as i64));
        }
    }
    (out, pw)
}

fn morph(src: &Plane, offsets: &[(i64, i64)], pad: usize, dilate: bool) -> Plane {
    let (buf, pw) = padded(src, pad);
    let deltas: Vec<isize> = offsets
        .iter()
        .map(|&(dx, dy)| dy as isize * pw as isize + dx as isize)
        .collect();
    let (w, h) = (src.width(), src.height());
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        let row = ((y + pad) * pw + pad) as isize;
        for x in 0..w {
            let c = row + x as isize;
            let mut v = if dilate {
                f32::NEG_INFINITY
            } else {
                f32::INFINITY
            };
            for d in &deltas {
                let s = buf[(c + d) as usize];
                v = if dilate { v.max(s) } else { v.min(s) };
            }
            out.push(v);
        }
    }
    Plane::new(w, h, out)
}

/// Morphological black-hat (closing minus image) with disk elements of the
/// given radii, maximum over radii. Dark thin structures respond positively.
pub fn black_hat(gray: &Plane, radii: &[usize]) -> Plane {
    let mut best = Plane::zeros(gray.width(), gray.height());
    for &r in radii {
        let off = disk_offsets(r);
        let closed = morph(&morph(gray, &off, r, true), &off, r, false);
        for ((b, c), g) in best
            .data_mut()
            .iter_mut()
            .zip(closed.data())
            .zip(gray.data())
        {
            *b = b.max(c - g);
        }
    }
    best
}

/// Otsu threshold over a 256-bin histogram spanning `[min, max]`.
pub fn otsu_threshold(values: &[f32]) -> f32 {
    let lo = values.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = values.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    if !(hi > lo) {
        return hi;
    }
    let bins = 256;
    let scale = (bins as f32 - 1.0) / (hi - lo);
    let mut hist = vec![0u64; bins];
    for &v in values {
        hist[((v - lo) * scale) as usize] += 1;
    }
    let total = values.len() as f64;
    let sum_all: f64 = hist
        .iter()
        .enumerate()
        .map(|(i, &c)| i as f64 * c as f64)
        .sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best, mut best_var) = (0usize, -1.0);
    for (i, &c) in hist.iter().enumerate() {
        w0 += c as f64;
        sum0 += i as f64 * c as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let var = w0 * w1 * (m0 - m1).powi(2);
        if var > best_var {
            best_var = var;
            best = i;
        }
    }
    lo + (best as f32 + 0.5) / scale
}

/// Binary ridge mask from a black-hat response.
pub fn ridge_mask(bh: &Plane, min_contrast: f32) -> Vec<bool> {
    let t = otsu_threshold(bh.data()).max(min_contrast);
    bh.data().iter().map(|&v| v > t).collect()
}

/// Junction/bend response of one ridge pixel on a ring of radius `r`.
fn ring_response(
    mask: &[bool],
    w: usize,
    h: usize,
    x: usize,
    y: usize,
    ring: &[(i64, i64, f64)],
) -> f64 {
    let at = |dx: i64, dy: i64| {
        let (sx, sy) = (x as i64 + dx, y as i64 + dy);
        sx >= 0
            && sy >= 0
            && (sx as usize) < w
            && (sy as usize) < h
            && mask[sy as usize * w + sx as usize]
    };
    let bits: Vec<bool> = ring.iter().map(|&(dx, dy, _)| at(dx, dy)).collect();
    let n = bits.len();
    let starts: Vec<usize> = (0..n)
        .filter(|&k| bits[k] && !bits[(k + n - 1) % n])
        .collect();
    match starts.len() {
        0 | 1 => 0.0,
        2 => {
            // mid-angle of each run
            let mid = |s: usize| {
                let mut len = 0;
                while bits[(s + len) % n] && len < n {
                    len += 1;
                }
                let a0 = ring[s].2;
                a0 + (len as f64 - 1.0) * std::f64::consts::TAU / n as f64 / 2.0
            };
            let (a, b) = (mid(starts[0]), mid(starts[1]));
            let mut d = (a - b).abs() % std::f64::consts::TAU;
            if d > std::f64::consts::PI {
                d = std::f64::consts::TAU - d;
            }
            let turn = 180.0 - d.to_degrees();
            0.5 * ((turn - BEND_DEAD_ZONE) / (90.0 - BEND_DEAD_ZONE)).clamp(0.0, 1.0)
        }
        _ => 1.0,
    }
}

fn ring_points(r: usize) -> Vec<(i64, i64, f64)> {
    let n = 8 * r;
    (0..n)
        .map(|k| {
            let a = std::f64::consts::TAU * k as f64 / n as f64;
            let dx = (r as f64 * a.cos()).round() as i64;
            let dy = (r as f64 * a.sin()).round() as i64;
            (dx, dy, a)
        })
        .collect()
}

/// Crack score map in `[0, 1]`: high at junctions, moderate at sharp bends.
pub fn crack_score_map(gray: &Plane, params: &DetectorParams) -> Plane {
    let src = if params.invert {
        gray.map(|v| 1.0 - v)
    } else {
        gray.clone()
    };
    let bh = black_hat(&src, &params.blackhat_radii);
    score_from_black_hat(&bh, params)
}

pub(crate) fn score_from_black_hat(bh: &Plane, params: &DetectorParams) -> Plane {
    let (w, h) = (bh.width(), bh.height());
    if bh.max() <= params.min_ridge_contrast {
        return Plane::zeros(w, h);
    }
    let mask = ridge_mask(bh, params.min_ridge_contrast);
    let rings: Vec<Vec<(i64, i64, f64)>> =
        params.ring_radii.iter().map(|&r| ring_points(r)).collect();
    let mut resp = Plane::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            if !mask[y * w + x] {
                continue;
            }
            let s: f64 = rings
                .iter()
                .map(|ring| ring_response(&mask, w, h, x, y, ring))
                .sum();
            resp.set(x, y, (s / rings.len() as f64) as f32);
        }
    }
    gaussian_blur(&resp, params.smoothing_sigma).normalized()
}
