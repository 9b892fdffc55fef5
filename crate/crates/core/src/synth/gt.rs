use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_xorshift::XorShiftRng;
use serde::{Deserialize, Serialize};

use super::{
    generate_craquelure_with, render_modality, render_network, CrackNetwork, CrackParams,
    ModalityParams,
};
use crate::error::{Error, Result};
use crate::eval::ControlPointSet;
use crate::geometry::{tps_kernel_sq, Point, TpsModel};
use crate::imgcore::{scaled_dim, Image};

/// A known smooth deformation from image A to image B coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct GtWarp {
    pub tps: TpsModel,
    /// Displacement at each control point (largest component = magnitude).
    pub control_displacements: Vec<[f64; 2]>,
}

impl GtWarp {
    pub fn map(&self, p: Point) -> Point {
        self.tps.eval(p)
    }

    pub fn displacement(&self, p: Point) -> [f64; 2] {
        let q = self.tps.eval(p);
        [q.x - p.x, q.y - p.y]
    }
}

/// Seeded thin-plate deformation with `n_control` jittered-grid control
/// points. Control displacements are drawn uniformly in
/// `[-magnitude, magnitude]^2` and interpolated by the kernel terms alone,
/// so the affine part is the identity.
pub fn generate_gt_warp(
    seed: u64,
    width: usize,
    height: usize,
    n_control: usize,
    magnitude: f64,
) -> Result<GtWarp> {
    if n_control < 3 {
        return Err(Error::InsufficientPairs {
            needed: 3,
            got: n_control,
        });
    }
    if !(magnitude >= 0.0 && magnitude.is_finite()) {
        return Err(Error::invalid(format!(
            "warp magnitude {magnitude} must be >= 0"
        )));
    }
    let mut rng = XorShiftRng::seed_from_u64(seed);
    let k = (n_control as f64).sqrt().ceil() as usize;
    let (cw, ch) = (width as f64 / k as f64, height as f64 / k as f64);
    let mut control = Vec::with_capacity(n_control);
    for j in 0..k {
        for i in 0..k {
            let x = (i as f64 + rng.random_range(0.2..0.8)) * cw - 0.5;
            let y = (j as f64 + rng.random_range(0.2..0.8)) * ch - 0.5;
            control.push(Point::new(x, y));
        }
    }
    control.truncate(n_control);
    let disp: Vec<[f64; 2]> = (0..n_control)
        .map(|_| {
            [
                rng.random_range(-magnitude..=magnitude),
                rng.random_range(-magnitude..=magnitude),
            ]
        })
        .collect();

    let kernel = DMatrix::from_fn(n_control, n_control, |i, j| {
        tps_kernel_sq((control[i] - control[j]).norm_squared())
    });
    let lu = kernel.lu();
    let solve = |d: usize| {
        lu.solve(&DVector::from_fn(n_control, |i, _| disp[i][d]))
            .ok_or_else(|| Error::Singular("ground-truth warp kernel".into()))
    };
    let (wx, wy) = (solve(0)?, solve(1)?);
    let weights = (0..n_control).map(|i| [wx[i], wy[i]]).collect();
    let tps = TpsModel::from_parts(control, [[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], weights, 0.0)?;
    Ok(GtWarp {
        tps,
        control_displacements: disp,
    })
}

/// Recipe for a synthetic registration pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthPairParams {
    pub width: usize,
    pub height: usize,
    /// Resolution of B relative to A (B pixels per A pixel).
    pub scale_b: f64,
    pub crack: CrackParams,
    pub warp_magnitude: f64,
    pub n_control: usize,
    pub modality_a: ModalityParams,
    pub modality_b: ModalityParams,
}

impl Default for SynthPairParams {
    fn default() -> Self {
        Self {
            width: 1024,
            height: 1024,
            scale_b: 1.0,
            crack: CrackParams::default(),
            warp_magnitude: 8.0,
            n_control: 16,
            modality_a: ModalityParams {
                texture_seed: 11,
                noise_sigma: 0.01,
                noise_seed: 12,
                ..ModalityParams::default()
            },
            modality_b: ModalityParams {
                texture_seed: 21,
                noise_sigma: 0.02,
                noise_seed: 22,
                blur_sigma: 0.6,
                gamma: 1.3,
                background: 0.65,
                ..ModalityParams::default()
            },
        }
    }
}

impl SynthPairParams {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(crate::config::toml_err)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::invalid(e.to_string()))
    }
}

/// A rendered pair with its ground-truth geometry.
#[derive(Clone, Debug)]
pub struct SynthPair {
    pub image_a: Image,
    pub image_b: Image,
    pub network_a: CrackNetwork,
    pub network_b: CrackNetwork,
    pub warp: GtWarp,
    pub scale_b: f64,
}

impl SynthPair {
    /// Ground-truth location in B pixels of an A pixel coordinate.
    pub fn gt_map(&self, p: Point) -> Point {
        let q = self.warp.map(p);
        Point::new(
            (q.x + 0.5) * self.scale_b - 0.5,
            (q.y + 0.5) * self.scale_b - 0.5,
        )
    }

    /// Junctions of A paired with their ground-truth B locations, keeping
    /// only those that land inside B with `margin` pixels to spare.
    pub fn control_points(&self, margin: f64) -> Vec<(Point, Point)> {
        let (wb, hb) = (self.image_b.width() as f64, self.image_b.height() as f64);
        self.network_a
            .junctions
            .iter()
            .map(|&p| (p, self.gt_map(p)))
            .filter(|(_, q)| {
                q.x >= margin
                    && q.y >= margin
                    && q.x <= wb - 1.0 - margin
                    && q.y <= hb - 1.0 - margin
            })
            .collect()
    }

    /// [`Self::control_points`] as a set; both sides are in native pixels.
    pub fn control_point_set(&self, margin: f64) -> Result<ControlPointSet> {
        ControlPointSet::new(self.control_points(margin), 1.0, 1.0)
    }
}

/// Seeded pair: A shows the crack network, B the same network pushed through
/// a ground-truth warp and rendered at `scale_b` resolution.
pub fn synth_pair(seed: u64, params: &SynthPairParams) -> Result<SynthPair> {
    let (w, h) = (params.width, params.height);
    let network_a = generate_craquelure_with(seed, w, h, &params.crack);
    let warp = generate_gt_warp(
        seed ^ 0x9e37_79b9_7f4a_7c15,
        w,
        h,
        params.n_control,
        params.warp_magnitude,
    )?;
    let s = params.scale_b;
    let (wb, hb) = (scaled_dim(w, s), scaled_dim(h, s));
    if wb == 0 || hb == 0 {
        return Err(Error::EmptyImage);
    }
    let to_b = |p: Point| {
        let q = warp.map(p);
        Point::new((q.x + 0.5) * s - 0.5, (q.y + 0.5) * s - 0.5)
    };
    let network_b = network_a.densified(4.0).mapped(wb, hb, s, to_b);
    let image_a = render_modality(&render_network(&network_a), &params.modality_a);
    let image_b = render_modality(&render_network(&network_b), &params.modality_b);
    Ok(SynthPair {
        image_a,
        image_b,
        network_a,
        network_b,
        warp,
        scale_b: s,
    })
}
