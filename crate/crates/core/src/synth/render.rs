use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use rand_xorshift::XorShiftRng;
use serde::{Deserialize, Serialize};

use super::CrackNetwork;
use crate::geometry::Point;
use crate::imgcore::{gaussian_blur, Image, Interpolation, Plane};

/// Anti-aliased stroke coverage in `[0, 1]` (1 on a crack).
pub fn render_network(network: &CrackNetwork) -> Plane {
    let (w, h) = (network.width, network.height);
    let mut out = Plane::zeros(w, h);
    for (poly, &sw) in network.segments.iter().zip(&network.stroke_widths) {
        for seg in poly.windows(2) {
            draw_segment(&mut out, seg[0], seg[1], sw);
        }
    }
    out
}

fn draw_segment(out: &mut Plane, a: Point, b: Point, width: f64) {
    let reach = 0.5 * width + 1.0;
    let (w, h) = (out.width() as i64, out.height() as i64);
    let x0 = ((a.x.min(b.x) - reach).floor() as i64).max(0);
    let x1 = ((a.x.max(b.x) + reach).ceil() as i64).min(w - 1);
    let y0 = ((a.y.min(b.y) - reach).floor() as i64).max(0);
    let y1 = ((a.y.max(b.y) + reach).ceil() as i64).min(h - 1);
    let ab = b - a;
    let len2 = ab.norm_squared();
    for y in y0..=y1 {
        for x in x0..=x1 {
            let p = Point::new(x as f64, y as f64);
            let t = if len2 > 0.0 {
                ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let d = (p - (a + ab * t)).norm();
            let cov = (0.5 * width + 0.5 - d).clamp(0.0, 1.0) as f32;
            if cov > 0.0 {
                let (ux, uy) = (x as usize, y as usize);
                if cov > out.get(ux, uy) {
                    out.set(ux, uy, cov);
                }
            }
        }
    }
}

/// Appearance of one imaging modality.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModalityParams {
    pub texture_seed: u64,
    /// Feature size of the base texture in pixels.
    pub texture_scale: f64,
    pub texture_contrast: f64,
    pub background: f64,
    /// Fractional darkening on a crack.
    pub crack_contrast: f64,
    pub invert: bool,
    pub blur_sigma: f64,
    pub gamma: f64,
    pub noise_sigma: f64,
    pub noise_seed: u64,
}

impl Default for ModalityParams {
    fn default() -> Self {
        Self {
            texture_seed: 1,
            texture_scale: 48.0,
            texture_contrast: 0.4,
            background: 0.7,
            crack_contrast: 0.65,
            invert: false,
            blur_sigma: 0.0,
            gamma: 1.0,
            noise_sigma: 0.0,
            noise_seed: 2,
        }
    }
}

/// Two-octave bicubic value noise in `[0, 1]`.
pub fn smooth_noise(seed: u64, width: usize, height: usize, scale: f64) -> Plane {
    let mut rng = XorShiftRng::seed_from_u64(seed);
    let octaves = [(scale.max(2.0), 0.65), ((scale / 3.0).max(2.0), 0.35)];
    let grids: Vec<(Plane, f64, f64)> = octaves
        .iter()
        .map(|&(s, weight)| {
            let gw = (width as f64 / s).ceil() as usize + 2;
            let gh = (height as f64 / s).ceil() as usize + 2;
            let g = Plane::from_fn(gw, gh, |_, _| rng.random::<f32>());
            (g, s, weight)
        })
        .collect();
    Plane::from_fn(width, height, |x, y| {
        let v: f64 = grids
            .iter()
            .map(|(g, s, weight)| {
                weight * g.sample(x as f64 / s, y as f64 / s, Interpolation::Bicubic)
            })
            .sum();
        v.clamp(0.0, 1.0) as f32
    })
}

/// Renders one modality from a crack coverage mask.
pub fn render_modality(mask: &Plane, params: &ModalityParams) -> Image {
    let (w, h) = (mask.width(), mask.height());
    let texture = smooth_noise(params.texture_seed, w, h, params.texture_scale);
    let mut img = Plane::from_fn(w, h, |x, y| {
        let base = params.background + params.texture_contrast * (texture.get(x, y) as f64 - 0.5);
        let v = base * (1.0 - params.crack_contrast * mask.get(x, y) as f64);
        v.clamp(0.0, 1.0) as f32
    });
    if params.invert {
        img = img.map(|v| 1.0 - v);
    }
    if params.blur_sigma > 0.0 {
        img = gaussian_blur(&img, params.blur_sigma);
    }
    if params.gamma != 1.0 {
        let g = params.gamma as f32;
        img = img.map(|v| v.clamp(0.0, 1.0).powf(g));
    }
    if params.noise_sigma > 0.0 {
        let mut rng = XorShiftRng::seed_from_u64(params.noise_seed);
        let normal = Normal::new(0.0, params.noise_sigma).unwrap();
        for v in img.data_mut() {
            *v += normal.sample(&mut rng) as f32;
        }
    }
    img.map(|v| v.clamp(0.0, 1.0)).to_image()
}

/// Both modalities from one shared crack mask.
pub fn render_modalities(mask: &Plane, a: &ModalityParams, b: &ModalityParams) -> (Image, Image) {
    (render_modality(mask, a), render_modality(mask, b))
}
