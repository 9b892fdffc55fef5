use rayon::prelude::*;

use super::score::black_hat;
use super::DetectorParams;
use crate::imgcore::{gaussian_blur, Plane};

pub const FEATURE_CHANNELS: usize = 8;
const FLAT_NORM: f64 = 1e-8;

/// Per-pixel feature vectors, channel-interleaved; each vector has unit norm
/// or is exactly zero (flat pixel).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVolume {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl FeatureVolume {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Self {
        assert_eq!(
            data.len(),
            width * height * channels,
            "feature buffer size mismatch"
        );
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> &[f32] {
        let b = (y * self.width + x) * self.channels;
        &self.data[b..b + self.channels]
    }

    /// Bilinear per-channel sample with clamp-to-edge borders.
    pub fn sample_into(&self, x: f64, y: f64, out: &mut [f32]) {
        let xc = x.clamp(0.0, (self.width - 1) as f64);
        let yc = y.clamp(0.0, (self.height - 1) as f64);
        let (x0, y0) = (xc.floor() as usize, yc.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (fx, fy) = ((xc - x0 as f64) as f32, (yc - y0 as f64) as f32);
        let (a, b, c, d) = (
            self.at(x0, y0),
            self.at(x1, y0),
            self.at(x0, y1),
            self.at(x1, y1),
        );
        for k in 0..self.channels {
            let top = a[k] + (b[k] - a[k]) * fx;
            let bot = c[k] + (d[k] - c[k]) * fx;
            out[k] = top + (bot - top) * fy;
        }
    }

    /// Copies a window with clamp-to-edge replication.
    pub fn crop_clamped(&self, x0: i64, y0: i64, w: usize, h: usize) -> FeatureVolume {
        let mut data = Vec::with_capacity(w * h * self.channels);
        for j in 0..h as i64 {
            let sy = (y0 + j).clamp(0, self.height as i64 - 1) as usize;
            for i in 0..w as i64 {
                let sx = (x0 + i).clamp(0, self.width as i64 - 1) as usize;
                data.extend_from_slice(self.at(sx, sy));
            }
        }
        FeatureVolume::new(w, h, self.channels, data)
    }
}

/// Eight-channel crack feature stack: high-passed intensity, gradient
/// magnitude, four rectified oriented-gradient channels (0, 45, 90, 135
/// degrees of line orientation), black-hat and smoothed black-hat.
pub fn build_feature_volume(gray: &Plane, params: &DetectorParams) -> FeatureVolume {
    let src = if params.invert {
        gray.map(|v| 1.0 - v)
    } else {
        gray.clone()
    };
    let (w, h) = (src.width(), src.height());
    let low = gaussian_blur(&src, 8.0);
    let smooth = gaussian_blur(&src, 1.0);
    let mut gx = Plane::zeros(w, h);
    let mut gy = Plane::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let (xi, yi) = (x as i64, y as i64);
            gx.set(
                x,
                y,
                0.5 * (smooth.get_clamped(xi + 1, yi) - smooth.get_clamped(xi - 1, yi)),
            );
            gy.set(
                x,
                y,
                0.5 * (smooth.get_clamped(xi, yi + 1) - smooth.get_clamped(xi, yi - 1)),
            );
        }
    }
    let oriented: Vec<Plane> = [0.0f64, 45.0, 90.0, 135.0]
        .iter()
        .map(|deg| {
            let phi = (deg + 90.0).to_radians();
            let (c, s) = (phi.cos() as f32, phi.sin() as f32);
            let raw = Plane::from_fn(w, h, |x, y| (gx.get(x, y) * c + gy.get(x, y) * s).abs());
            gaussian_blur(&raw, 1.0)
        })
        .collect();
    let bh = black_hat(&src, &params.blackhat_radii);
    let bh_smooth = gaussian_blur(&bh, 2.0);

    let mut data = vec![0.0f32; w * h * FEATURE_CHANNELS];
    data.par_chunks_mut(w * FEATURE_CHANNELS)
        .enumerate()
        .for_each(|(y, row)| {
            for x in 0..w {
                let v = [
                    src.get(x, y) - low.get(x, y),
                    (gx.get(x, y).powi(2) + gy.get(x, y).powi(2)).sqrt(),
                    oriented[0].get(x, y),
                    oriented[1].get(x, y),
                    oriented[2].get(x, y),
                    oriented[3].get(x, y),
                    bh.get(x, y),
                    bh_smooth.get(x, y),
                ];
                let n = v.iter().map(|a| (*a as f64).powi(2)).sum::<f64>().sqrt();
                let out = &mut row[x * FEATURE_CHANNELS..(x + 1) * FEATURE_CHANNELS];
                if n >= FLAT_NORM {
                    for (o, a) in out.iter_mut().zip(v) {
                        *o = (a as f64 / n) as f32;
                    }
                }
            }
        });
    FeatureVolume::new(w, h, FEATURE_CHANNELS, data)
}
