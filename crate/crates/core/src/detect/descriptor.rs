use rayon::prelude::*;

use super::Keypoint;
use crate::imgcore::{Interpolation, Plane};

pub const DESCRIPTOR_DIM: usize = 128;
const PATCH: usize = 32;
const GRID: usize = 4;
const BINS: usize = 8;
const CLIP: f32 = 0.2;

/// A unit-length feature vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Descriptor(Vec<f32>);

impl Descriptor {
    /// Normalizes `v`; a zero vector becomes the uniform unit vector.
    pub fn new(mut v: Vec<f32>) -> Self {
        normalize(&mut v);
        Self(v)
    }

    /// Wraps `v` as is; callers guarantee unit length.
    pub fn from_unit(v: Vec<f32>) -> Self {
        Self(v)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn distance(&self, other: &Descriptor) -> f32 {
        descriptor_distance(&self.0, &other.0)
    }
}

pub fn descriptor_distance(a: &[f32], b: &[f32]) -> f32 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f32>()
        .sqrt()
}

fn normalize(v: &mut [f32]) {
    let n = v
        .iter()
        .map(|x| (*x as f64) * (*x as f64))
        .sum::<f64>()
        .sqrt();
    if n > 1e-12 {
        v.iter_mut().for_each(|x| *x = (*x as f64 / n) as f32);
    } else if !v.is_empty() {
        let u = 1.0 / (v.len() as f32).sqrt();
        v.iter_mut().for_each(|x| *x = u);
    }
}

/// Gradient-orientation histogram on a 4x4 grid with 8 bins over a 32x32
/// bilinear patch centered on the keypoint.
pub fn describe(plane: &Plane, kp: &Keypoint) -> Descriptor {
    let n = PATCH + 2;
    let half = (PATCH / 2) as f64 + 1.0;
    let mut s = vec![0.0f64; n * n];
    for j in 0..n {
        for i in 0..n {
            s[j * n + i] = plane.sample(
                kp.x + i as f64 - half,
                kp.y + j as f64 - half,
                Interpolation::Bilinear,
            );
        }
    }
    let sigma = PATCH as f64 / 2.0;
    let mut hist = vec![0.0f64; GRID * GRID * BINS];
    let cell = PATCH / GRID;
    for v in 0..PATCH {
        for u in 0..PATCH {
            let (i, j) = (u + 1, v + 1);
            let gx = 0.5 * (s[j * n + i + 1] - s[j * n + i - 1]);
            let gy = 0.5 * (s[(j + 1) * n + i] - s[(j - 1) * n + i]);
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let du = u as f64 + 0.5 - sigma;
            let dv = v as f64 + 0.5 - sigma;
            let wgt = (-(du * du + dv * dv) / (2.0 * sigma * sigma)).exp() * mag;
            let ang = gy.atan2(gx).rem_euclid(std::f64::consts::TAU);
            let fb = ang / std::f64::consts::TAU * BINS as f64;
            let b0 = fb.floor() as usize % BINS;
            let frac = fb - fb.floor();
            let base = ((v / cell) * GRID + u / cell) * BINS;
            hist[base + b0] += wgt * (1.0 - frac);
            hist[base + (b0 + 1) % BINS] += wgt * frac;
        }
    }
    let mut out: Vec<f32> = hist.iter().map(|&h| h as f32).collect();
    normalize(&mut out);
    out.iter_mut().for_each(|x| *x = x.min(CLIP));
    normalize(&mut out);
    Descriptor(out)
}

pub fn compute_descriptors(plane: &Plane, keypoints: &[Keypoint]) -> Vec<Descriptor> {
    keypoints.par_iter().map(|k| describe(plane, k)).collect()
}
