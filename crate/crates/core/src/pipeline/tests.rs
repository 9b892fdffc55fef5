use super::*;
use crate::imgcore::Image;
use crate::synth::{synth_pair, SynthPairParams};

fn small_pair(seed: u64, magnitude: f64) -> crate::synth::SynthPair {
    synth_pair(
        seed,
        &SynthPairParams {
            width: 512,
            height: 512,
            warp_magnitude: magnitude,
            ..SynthPairParams::default()
        },
    )
    .unwrap()
}

fn small_config() -> PipelineConfig {
    PipelineConfig {
        patch_size: 256,
        patch_stride: 192,
        ..PipelineConfig::default()
    }
}

#[test]
fn displacement_examples() {
    let h = Homography::translation(3.0, -1.0);
    let p = Point::new(10.0, 20.0);
    let exact = Correspondence::new(p, h.apply(p).unwrap(), 1.0);
    let shifted = Correspondence::new(
        p,
        h.apply(p).unwrap() + nalgebra::Vector2::new(2.0, 0.0),
        1.0,
    );
    let v = displacement_vectors(&h, &[exact, shifted]).unwrap();
    assert_eq!(v[0].1, [0.0, 0.0]);
    assert!((v[1].1[0] - 2.0).abs() < 1e-12 && v[1].1[1].abs() < 1e-12);

    let id =
        displacement_vectors(&Homography::identity(), &[Correspondence::new(p, p, 1.0)]).unwrap();
    assert_eq!(id[0], (p, [0.0, 0.0]));
}

#[test]
fn self_registration_is_identity() {
    let pair = small_pair(3, 0.0);
    let r = register_one_stage(&pair.image_a, &pair.image_a, &small_config(), 1).unwrap();
    let h = r.global_h.matrix() / r.global_h.h(2, 2);
    assert!(
        (h - nalgebra::Matrix3::identity()).abs().max() < 1e-3,
        "{h}"
    );
    for (_, d) in r.displacement_vectors().unwrap() {
        assert!(d[0].hypot(d[1]) < 0.5);
    }
    assert!(r.stats.final_count >= 20);
}

#[test]
fn textureless_fails_with_stats() {
    let img = Image::filled(300, 300, 0.5);
    match register_one_stage(&img, &img, &small_config(), 0) {
        Err(Error::Registration {
            stage,
            message,
            stats,
        }) => {
            assert_eq!(stage, "collection");
            assert_eq!(message, "no correspondences");
            assert_eq!(stats.keypoints_a, 0);
            assert_eq!(stats.collected, 0);
        }
        other => panic!("expected registration failure, got {other:?}"),
    }
}

#[test]
fn warped_pair_composite_interpolates_and_counts_are_monotone() {
    let pair = small_pair(5, 6.0);
    let r = register_one_stage(&pair.image_a, &pair.image_b, &small_config(), 9).unwrap();
    let s = &r.stats;
    assert!(s.collected >= s.after_dedupe && s.after_dedupe >= s.after_vfc);
    assert_eq!(s.after_vfc, r.correspondences.len());
    assert_eq!(r.correspondences.len() + r.rejected.len(), s.after_dedupe);
    let f = r.forward();
    for c in &r.correspondences {
        let q = f.map_point(c.src_point()).unwrap();
        assert!((q - c.dst_point()).norm() < 1e-4);
    }
    let errs: Vec<f64> = pair
        .control_points(8.0)
        .iter()
        .map(|&(a, b)| (f.map_point(a).unwrap() - b).norm())
        .collect();
    let me = errs.iter().sum::<f64>() / errs.len() as f64;
    assert!(me < 1.0, "mean control-point error {me}");
}

#[test]
fn inverse_model_undoes_forward() {
    let pair = small_pair(6, 5.0);
    let r = register_one_stage(&pair.image_a, &pair.image_b, &small_config(), 2).unwrap();
    let (f, g) = (r.forward(), r.inverse_model().unwrap());
    for c in &r.correspondences {
        let back = g.map_point(f.map_point(c.src_point()).unwrap()).unwrap();
        assert!((back - c.src_point()).norm() < 1e-3);
    }
}

#[test]
fn deterministic_and_archive_round_trip() {
    let pair = small_pair(8, 4.0);
    let cfg = small_config();
    let r1 = register_one_stage(&pair.image_a, &pair.image_b, &cfg, 4).unwrap();
    let r2 = register_one_stage(&pair.image_a, &pair.image_b, &cfg, 4).unwrap();
    let (mut b1, mut b2) = (Vec::new(), Vec::new());
    write_result(&mut b1, &r1).unwrap();
    write_result(&mut b2, &r2).unwrap();
    assert_eq!(b1, b2);
    let back = read_result(&b1[..]).unwrap();
    assert_eq!(back, r1);
    let mut b3 = Vec::new();
    write_result(&mut b3, &back).unwrap();
    assert_eq!(b1, b3);

    assert!(read_result(&b1[..b1.len() - 3]).is_err());
    let mut bad = b1.clone();
    bad[0] = b'X';
    assert!(matches!(
        read_result(&bad[..]),
        Err(Error::Parse { offset: 0, .. })
    ));
}

#[test]
fn vfc_fallback_keeps_pre_vfc_set() {
    // Random pairs with no coherent field: VFC rejects most of them.
    use rand::{Rng, SeedableRng};
    let mut rng = rand_xorshift::XorShiftRng::seed_from_u64(1);
    let corrs: Vec<Correspondence> = (0..60)
        .map(|_| {
            Correspondence::new(
                Point::new(rng.random_range(0.0..500.0), rng.random_range(0.0..500.0)),
                Point::new(rng.random_range(0.0..500.0), rng.random_range(0.0..500.0)),
                0.5,
            )
        })
        .collect();
    let cfg = PipelineConfig {
        tps_lambda: 1.0,
        ..PipelineConfig::default()
    };
    let r = fit_collected(corrs, &cfg, StageStats::default()).unwrap();
    if r.stats.vfc_fallback {
        assert_eq!(r.correspondences.len(), r.stats.after_dedupe);
        assert!(r.rejected.is_empty());
    } else {
        assert!(r.rejected.len() as f64 <= 0.6 * r.stats.after_dedupe as f64);
    }
}

#[test]
fn external_matches_register() {
    use rand::{Rng, SeedableRng};
    let pair = small_pair(12, 6.0);
    let mut rng = rand_xorshift::XorShiftRng::seed_from_u64(3);
    let mut matches: Vec<Correspondence> = (0..32)
        .flat_map(|j| {
            (0..32).map(move |i| Point::new(8.0 + 16.0 * i as f64, 8.0 + 16.0 * j as f64))
        })
        .map(|a| {
            let jitter =
                nalgebra::Vector2::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
            Correspondence::new(a, pair.gt_map(a) + jitter, 0.9)
        })
        .collect();
    let n = matches.len();
    for _ in 0..n / 4 {
        let a = Point::new(rng.random_range(0.0..511.0), rng.random_range(0.0..511.0));
        let b = Point::new(rng.random_range(0.0..511.0), rng.random_range(0.0..511.0));
        matches.push(Correspondence::new(a, b, 0.5));
    }
    let r =
        register_external_matches(&matches, (512, 512), (512, 512), &small_config(), 1).unwrap();
    assert!(r.stats.patch_pairs_accepted > 0);
    let f = r.forward();
    let errs: Vec<f64> = pair
        .control_points(16.0)
        .iter()
        .map(|&(a, b)| (f.map_point(a).unwrap() - b).norm())
        .collect();
    let me = errs.iter().sum::<f64>() / errs.len() as f64;
    assert!(me < 1.0, "mean control-point error {me}");
}
