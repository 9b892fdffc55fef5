use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_xorshift::XorShiftRng;

use super::*;
use crate::detect::{build_feature_volume, DetectorParams, FeatureVolume};
use crate::geometry::Homography;
use crate::imgcore::Plane;
use crate::synth::{generate_craquelure, render_network};

fn bump(w: usize, h: usize, peaks: &[(f64, f64)], sigma: f64) -> Plane {
    Plane::from_fn(w, h, |x, y| {
        peaks
            .iter()
            .map(|&(px, py)| {
                (-((x as f64 - px).powi(2) + (y as f64 - py).powi(2)) / (2.0 * sigma * sigma)).exp()
            })
            .fold(0.0, f64::max) as f32
    })
}

fn crack_plane(seed: u64, size: usize) -> Plane {
    let net = generate_craquelure(seed, size, size, 1.0);
    let cov = render_network(&net);
    cov.map(|c| 0.8 - 0.6 * c)
}

fn shifted_volume(v: &FeatureVolume, dx: f64, dy: f64) -> FeatureVolume {
    let c = v.channels();
    let mut data = vec![0.0; v.width() * v.height() * c];
    for y in 0..v.height() {
        for x in 0..v.width() {
            let k = (y * v.width() + x) * c;
            v.sample_into(x as f64 - dx, y as f64 - dy, &mut data[k..k + c]);
        }
    }
    FeatureVolume::new(v.width(), v.height(), c, data)
}

#[test]
fn plan_examples() {
    assert!(plan_levels(1.0, 1.0, 1.0, 768).unwrap().levels.is_empty());
    let p2 = plan_levels(2.0, 1.0, 1.0, 768).unwrap();
    assert_eq!(p2.levels.len(), 1);
    assert_eq!(p2.levels[0].scale_a, 1.0);
    assert_eq!(p2.levels[0].scale_b, 2.0);
    let p4 = plan_levels(4.0, 1.0, 1.0, 768).unwrap();
    assert_eq!(p4.levels.len(), 2);
    assert_eq!(p4.coarse, (0.25, 1.0));
    assert_eq!((p4.levels[0].scale_a, p4.levels[1].scale_a), (0.5, 1.0));
    assert_eq!(
        (p4.levels[0].region_size, p4.levels[1].region_size),
        (768, 1536)
    );
    assert!(plan_levels(9.0, 1.0, 1.0, 768).is_err());
}

proptest! {
    #[test]
    fn plan_steps_bounded(r in 1.0..8.0f64) {
        let p = plan_levels(r, 1.0, 1.0, 768).unwrap();
        let mut prev = p.coarse.0;
        for (k, l) in p.levels.iter().enumerate() {
            let step = l.scale_a / prev;
            let last = k + 1 == p.levels.len();
            let bound = if last { 2.05 } else { 2.0 };
            prop_assert!(step <= bound + 1e-9);
            prop_assert!(step > 1.0);
            prop_assert_eq!(l.region_size, 768 << k);
            prop_assert!((l.scale_b / l.scale_a - r).abs() < 1e-9);
            prev = l.scale_a;
        }
        prop_assert!((p.ratio() - r).abs() < 1e-9 || p.levels.is_empty());
    }

    #[test]
    fn upscale_round_trip(x in -100.0..1000.0f64, y in -100.0..1000.0f64) {
        let p = Point::new(x, y);
        let q = upscale_keypoints(&upscale_keypoints(&[p], 2.0), 0.5)[0];
        prop_assert!((q - p).norm() < 1e-12);
    }
}

#[test]
fn upscale_examples() {
    let p = Point::new(3.25, 7.0);
    assert_eq!(upscale_keypoints(&[p], 1.0)[0], p);
    assert_eq!(
        upscale_keypoints(&[Point::origin()], 2.0)[0],
        Point::new(0.5, 0.5)
    );
}

#[test]
fn mod1_symmetric_peak_stays() {
    let s = bump(64, 64, &[(30.0, 30.0)], 1.5);
    let kp = Point::new(30.0, 30.0);
    for mode in [Mod1Mode::FirstLevel, Mod1Mode::Subsequent] {
        let r = refine_mod1(&s, kp, mode, &KeypointRefineParams::default());
        assert!(!r.flagged);
        assert!((r.point - kp).norm() < 0.1, "{mode:?} {:?}", r.point);
    }
}

#[test]
fn mod1_first_level_finds_displaced_peak() {
    let s = bump(64, 64, &[(35.0, 30.0)], 1.5);
    let r = refine_mod1(
        &s,
        Point::new(30.0, 30.0),
        Mod1Mode::FirstLevel,
        &KeypointRefineParams::default(),
    );
    assert!(
        (r.point - Point::new(35.0, 30.0)).norm() < 0.5,
        "{:?}",
        r.point
    );
}

#[test]
fn mod1_first_level_prefers_closest_peak() {
    let s = bump(64, 64, &[(34.0, 30.0), (23.0, 30.0)], 1.5);
    let r = refine_mod1(
        &s,
        Point::new(30.0, 30.0),
        Mod1Mode::FirstLevel,
        &KeypointRefineParams::default(),
    );
    assert!(
        (r.point - Point::new(34.0, 30.0)).norm() < 0.5,
        "{:?}",
        r.point
    );
}

#[test]
fn mod1_outside_passes_through() {
    let s = bump(32, 32, &[(10.0, 10.0)], 1.5);
    let kp = Point::new(200.0, -90.0);
    for mode in [Mod1Mode::FirstLevel, Mod1Mode::Subsequent] {
        let r = refine_mod1(&s, kp, mode, &KeypointRefineParams::default());
        assert!(r.flagged);
        assert_eq!(r.point, kp);
    }
}

fn junction_keypoints(seed: u64, size: usize, margin: f64) -> Vec<Point> {
    generate_craquelure(seed, size, size, 1.0)
        .junctions
        .into_iter()
        .filter(|p| {
            p.x > margin && p.y > margin && p.x < size as f64 - margin && p.y < size as f64 - margin
        })
        .collect()
}

#[test]
fn ncc_zero_lag_and_integer_translation() {
    let plane = crack_plane(4, 160);
    let det = DetectorParams::default();
    let fa = build_feature_volume(&plane, &det);
    let moved = Plane::from_fn(160, 160, |x, y| {
        plane.get_clamped(x as i64 - 4, y as i64 + 3)
    });
    let fb = build_feature_volume(&moved, &det);
    let params = KeypointRefineParams::default();
    let kps = junction_keypoints(4, 160, 40.0);
    assert!(!kps.is_empty());
    for kp in kps {
        let same = refine_mod2_ncc(&fa, &fa, kp, kp, &params);
        assert!((same.point - kp).norm() < 0.1, "{:?} vs {kp:?}", same.point);
        let r = refine_mod2_ncc(&fa, &fb, kp, kp, &params);
        assert!(
            (r.point - (kp + nalgebra::Vector2::new(4.0, -3.0))).norm() < 0.25,
            "{:?} from {kp:?}",
            r.point
        );
    }
}

#[test]
fn ncc_flat_template_flags() {
    let flat = build_feature_volume(
        &Plane::from_fn(64, 64, |_, _| 0.5),
        &DetectorParams::default(),
    );
    let kp = Point::new(30.0, 30.0);
    let r = refine_mod2_ncc(&flat, &flat, kp, kp, &KeypointRefineParams::default());
    assert!(r.flagged);
    assert_eq!(r.point, kp);
}

#[test]
fn corr_fine_examples() {
    let plane = crack_plane(6, 128);
    let fa = build_feature_volume(&plane, &DetectorParams::default());
    let fb = shifted_volume(&fa, 0.5, 0.0);
    let params = KeypointRefineParams::default();
    for kp in junction_keypoints(6, 128, 20.0) {
        let same = refine_mod2_corr_fine(&fa, &fa, kp, kp, &params);
        assert!(
            (same.point - kp).norm() < 0.05,
            "{:?} vs {kp:?}",
            same.point
        );
        let r = refine_mod2_corr_fine(&fa, &fb, kp, kp, &params);
        let d = r.point - kp;
        assert!(
            (d.x - 0.5).abs() < 0.2 && d.y.abs() < 0.2,
            "offset {d:?} at {kp:?}"
        );
    }
}

#[test]
fn corr_fine_symmetric_surface_and_zero_center() {
    // Radially symmetric feature field around the keypoint.
    let (w, h, c) = (32usize, 32usize, 2usize);
    let mut data = vec![0.0f32; w * h * c];
    for y in 0..h {
        for x in 0..w {
            let r2 = ((x as f64 - 16.0).powi(2) + (y as f64 - 16.0).powi(2)) as f32;
            let k = (y * w + x) * c;
            data[k] = (-r2 / 8.0).exp();
            data[k + 1] = 0.1;
        }
    }
    let v = FeatureVolume::new(w, h, c, data);
    let kp = Point::new(16.0, 16.0);
    let r = refine_mod2_corr_fine(&v, &v, kp, kp, &KeypointRefineParams::default());
    assert!((r.point - kp).norm() < 1e-9);
    let zero = FeatureVolume::new(w, h, c, vec![0.0; w * h * c]);
    assert!(refine_mod2_corr_fine(&zero, &v, kp, kp, &KeypointRefineParams::default()).flagged);
}

fn scatter(
    rng: &mut XorShiftRng,
    n: usize,
    x0: f64,
    y0: f64,
    size: f64,
    h: &Homography,
) -> Vec<Correspondence> {
    (0..n)
        .map(|_| {
            let p = Point::new(
                x0 + rng.random_range(0.0..size),
                y0 + rng.random_range(0.0..size),
            );
            Correspondence::new(p, h.apply(p).unwrap(), 0.9)
        })
        .collect()
}

#[test]
fn regionwise_drops_gross_outliers() {
    let h = Homography::from_row_slice(&[1.01, 0.01, 3.0, -0.02, 0.99, 5.0, 0.0, 0.0, 1.0]);
    let mut rng = XorShiftRng::seed_from_u64(1);
    let mut corrs = scatter(&mut rng, 30, 0.0, 0.0, 100.0, &h);
    for k in 0..3 {
        let p = Point::new(20.0 + 25.0 * k as f64, 50.0);
        corrs.push(Correspondence::new(
            p,
            h.apply(p).unwrap() + nalgebra::Vector2::new(30.0, -20.0),
            0.9,
        ));
    }
    let grid = RegionGrid::new(100, 100, 100).unwrap();
    let out = remove_outliers_regionwise(&corrs, &grid, 3.0, &RegionFilterParams::default(), 0);
    assert_eq!(out.removed, 3);
    assert_eq!(out.kept, corrs[..30].to_vec());
    assert_eq!(out.checks, vec![CellCheck::Own]);
}

#[test]
fn regionwise_sparse_cell_merges_with_neighbour() {
    let h = Homography::translation(2.0, -1.0);
    let mut rng = XorShiftRng::seed_from_u64(2);
    // pixel centers are integers, so cell k spans [100k - 0.5, 100k + 99.5)
    let mut corrs = scatter(&mut rng, 5, 0.0, 0.0, 99.0, &h);
    corrs.extend(scatter(&mut rng, 40, 100.0, 0.0, 99.0, &h));
    let p = Point::new(50.0, 50.0);
    corrs.push(Correspondence::new(
        p,
        p + nalgebra::Vector2::new(20.0, 20.0),
        0.9,
    ));
    // third cell stays empty so ring 1 is not the whole image
    let grid = RegionGrid::new(300, 100, 100).unwrap();
    let out = remove_outliers_regionwise(&corrs, &grid, 3.0, &RegionFilterParams::default(), 0);
    assert_eq!(
        out.checks,
        vec![CellCheck::Merged(1), CellCheck::Own, CellCheck::Empty]
    );
    assert_eq!(out.kept, corrs[..45].to_vec());
    assert_eq!(out.unchecked_history, vec![1, 0]);
}

#[test]
fn regionwise_consistent_cells_unchanged() {
    let h = Homography::from_row_slice(&[1.0, 0.02, 1.0, 0.0, 1.01, -2.0, 1e-5, 0.0, 1.0]);
    let mut rng = XorShiftRng::seed_from_u64(3);
    let mut corrs = Vec::new();
    for cy in 0..2 {
        for cx in 0..3 {
            corrs.extend(scatter(
                &mut rng,
                25,
                cx as f64 * 64.0,
                cy as f64 * 64.0,
                64.0,
                &h,
            ));
        }
    }
    let grid = RegionGrid::new(192, 128, 64).unwrap();
    let out = remove_outliers_regionwise(&corrs, &grid, 2.0, &RegionFilterParams::default(), 5);
    assert_eq!(out.kept, corrs);
    assert!(out.checks.iter().all(|c| *c == CellCheck::Own));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn regionwise_terminates_and_partitions(seed in 0u64..1000, cols in 1usize..5, rows in 1usize..5) {
        let mut rng = XorShiftRng::seed_from_u64(seed);
        let h = Homography::translation(1.0, 1.0);
        let mut corrs = Vec::new();
        for cell in 0..cols * rows {
            let n = rng.random_range(0..25);
            let (x0, y0) = ((cell % cols) as f64 * 50.0, (cell / cols) as f64 * 50.0);
            corrs.extend(scatter(&mut rng, n, x0, y0, 50.0, &h));
        }
        let grid = RegionGrid::new(cols * 50, rows * 50, 50).unwrap();
        let cells = grid.assign(&corrs);
        prop_assert_eq!(cells.iter().map(|c| c.len()).sum::<usize>(), corrs.len());
        let out = remove_outliers_regionwise(&corrs, &grid, 3.0, &RegionFilterParams::default(), seed);
        for w in out.unchecked_history.windows(2) {
            prop_assert!(w[1] < w[0]);
        }
        prop_assert_eq!(*out.unchecked_history.last().unwrap(), 0);
        prop_assert_eq!(out.kept.len() + out.removed, corrs.len());
    }
}

#[test]
fn ratio_one_equals_one_stage() {
    let pair = crate::synth::synth_pair(
        2,
        &crate::synth::SynthPairParams {
            width: 384,
            height: 384,
            ..Default::default()
        },
    )
    .unwrap();
    let pipe = PipelineConfig {
        patch_size: 256,
        patch_stride: 192,
        ..PipelineConfig::default()
    };
    let a = register_coarse_to_fine(
        &pair.image_a,
        &pair.image_b,
        &pipe,
        &RefineConfig::default(),
        3,
    )
    .unwrap();
    let b = register_one_stage(&pair.image_a, &pair.image_b, &pipe, 3).unwrap();
    assert_eq!(a, b);
}
