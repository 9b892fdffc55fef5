use proptest::prelude::*;

use super::*;
use crate::geometry::Point;
use crate::imgcore::Plane;
use crate::synth::{generate_craquelure, render_network, CrackNetwork};

fn dark_on_light(net: &CrackNetwork) -> Plane {
    render_network(net).map(|c| 1.0 - 0.6 * c)
}

fn argmax(p: &Plane) -> (usize, usize) {
    let i = p
        .data()
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .unwrap()
        .0;
    (i % p.width(), i / p.width())
}

#[test]
fn blank_image_scores_zero() {
    let p = Plane::from_fn(64, 48, |_, _| 0.6);
    assert!(crack_score_map(&p, &DetectorParams::default())
        .data()
        .iter()
        .all(|&v| v == 0.0));
}

#[test]
fn cross_peaks_at_its_center() {
    for (cx, cy) in [(64.0, 64.0), (60.3, 71.6), (50.5, 49.5)] {
        let c = Point::new(cx, cy);
        let arms = [(40.0, 0.0), (-40.0, 0.0), (0.0, 40.0), (0.0, -40.0)];
        let segs = arms
            .iter()
            .map(|&(dx, dy)| vec![c, Point::new(cx + dx, cy + dy)])
            .collect();
        let net = CrackNetwork::from_segments(128, 128, segs, 1.5);
        assert_eq!(net.junctions.len(), 1);
        let score = crack_score_map(&dark_on_light(&net), &DetectorParams::default());
        let (mx, my) = argmax(&score);
        assert!(
            ((mx as f64 - cx).powi(2) + (my as f64 - cy).powi(2)).sqrt() <= 2.0,
            "{mx},{my} vs {cx},{cy}"
        );
    }
}

#[test]
fn straight_line_interior_stays_low() {
    let (a, b) = (Point::new(20.0, 64.0), Point::new(108.0, 64.0));
    let net = CrackNetwork::from_segments(128, 128, vec![vec![a, b]], 1.5);
    let score = crack_score_map(&dark_on_light(&net), &DetectorParams::default());
    for y in 0..128 {
        for x in 0..128 {
            let p = Point::new(x as f64, y as f64);
            if (p - a).norm() > 8.0 && (p - b).norm() > 8.0 {
                assert!(score.get(x, y) <= 0.5, "{x},{y}: {}", score.get(x, y));
            }
        }
    }
}

#[test]
fn nms_keeps_stronger_of_close_pair() {
    let mut p = Plane::zeros(32, 32);
    p.set(10, 10, 0.9);
    p.set(13, 10, 0.8);
    let kps = detect_keypoints(&p, 4.0, 0.2, 100);
    assert_eq!(kps.len(), 1);
    assert_eq!((kps[0].x, kps[0].y), (10.0, 10.0));
    let kps = detect_keypoints(&p.map(|v| v * 0.1), 4.0, 0.2, 100);
    assert!(kps.is_empty());
}

#[test]
fn quadratic_bump_subpixel_peak() {
    let (px, py) = (10.3, 7.6);
    let p = Plane::from_fn(24, 20, |x, y| {
        let d2 = (x as f64 - px).powi(2) + (y as f64 - py).powi(2);
        (1.0 - d2 / 50.0).max(0.0) as f32
    });
    let kps = detect_keypoints(&p, 4.0, 0.2, 10);
    assert_eq!(kps.len(), 1);
    assert!(
        (kps[0].x - px).abs() < 0.1 && (kps[0].y - py).abs() < 0.1,
        "{:?}",
        kps[0]
    );
}

#[test]
fn detector_is_translation_equivariant() {
    let inner = generate_craquelure(9, 150, 150, 0.9);
    let (ox, oy) = (50.0, 50.0);
    let (tx, ty) = (7.0, -5.0);
    let place = |dx: f64, dy: f64| inner.mapped(256, 256, 1.0, |p| Point::new(p.x + dx, p.y + dy));
    let params = DetectorParams::default();
    let (a, _) = detect_and_describe(&dark_on_light(&place(ox, oy)), &params);
    let (b, _) = detect_and_describe(&dark_on_light(&place(ox + tx, oy + ty)), &params);
    assert!(!a.is_empty());
    assert_eq!(a.len(), b.len());
    for (ka, kb) in a.iter().zip(&b) {
        assert!((ka.x + tx - kb.x).abs() <= 0.25 && (ka.y + ty - kb.y).abs() <= 0.25);
    }
}

fn edge_plane(vertical: bool) -> Plane {
    Plane::from_fn(64, 64, |x, y| {
        let t = if vertical { x } else { y } as f32;
        0.2 + 0.6 / (1.0 + (-(t - 32.0) / 2.0).exp())
    })
}

#[test]
fn descriptor_examples() {
    let kp = Keypoint::new(32.0, 32.0, 1.0);
    let tex = crate::synth::smooth_noise(3, 64, 64, 8.0);
    let a = describe(&tex, &kp);
    assert_eq!(a.distance(&describe(&tex, &kp)), 0.0);
    let half = describe(&tex.map(|v| 0.5 * v), &kp);
    assert!(a.distance(&half) < 1e-6);
    let v = describe(&edge_plane(true), &kp);
    let h = describe(&edge_plane(false), &kp);
    assert!(v.distance(&h) > 0.5);
    assert_eq!(v.distance(&h), h.distance(&v));
    let n: f32 = v.as_slice().iter().map(|x| x * x).sum();
    assert!((n - 1.0).abs() < 1e-6);
    assert_eq!(v.dim(), DESCRIPTOR_DIM);
}

#[test]
fn feature_volume_examples() {
    let params = DetectorParams::default();
    let flat = build_feature_volume(&Plane::from_fn(40, 30, |_, _| 0.4), &params);
    assert!(flat.data().iter().all(|&v| v == 0.0));

    let line = CrackNetwork::from_segments(
        64,
        64,
        vec![vec![Point::new(32.0, 4.0), Point::new(32.0, 60.0)]],
        2.0,
    );
    let vol = build_feature_volume(&dark_on_light(&line), &params);
    for y in 16..48 {
        let f = vol.at(32, y);
        let oriented = &f[2..6];
        let best = (0..4)
            .max_by(|&i, &j| oriented[i].total_cmp(&oriented[j]))
            .unwrap();
        assert_eq!(best, 2, "row {y}: {oriented:?}");
    }
}

#[test]
fn exchange_round_trip_and_errors() {
    let det = Detections {
        keypoints: vec![
            Keypoint::new(1.25, 2.5, 0.75),
            Keypoint::new(100.0, -3.0, 0.1),
        ],
        descriptors: vec![
            Descriptor::new(vec![1.0, 0.0, 0.0]),
            Descriptor::new(vec![0.6, 0.8, 0.0]),
        ],
        dim: 3,
        tiles: vec![Tile {
            kind: TileKind::ScoreMap,
            origin: (4, 8),
            width: 2,
            height: 2,
            channels: 1,
            downsample: 4,
            data: vec![0.0, 0.5, 1.0, 0.25],
        }],
        renormalized: 0,
    };
    let mut bytes = Vec::new();
    write_detections(&mut bytes, &det).unwrap();
    let back = parse_detections(&bytes).unwrap();
    assert_eq!(back, det);
    let mut again = Vec::new();
    write_detections(&mut again, &back).unwrap();
    assert_eq!(again, bytes);
    let up = back.tiles[0].score_plane().unwrap();
    assert_eq!((up.width(), up.height()), (8, 8));

    let mut bad = Vec::new();
    let raw = Detections {
        keypoints: vec![Keypoint::new(0.0, 0.0, 1.0)],
        descriptors: vec![Descriptor::from_unit(vec![0.3, 0.4])],
        dim: 2,
        ..Detections::default()
    };
    write_detections(&mut bad, &raw).unwrap();
    let fixed = parse_detections(&bad).unwrap();
    assert_eq!(fixed.renormalized, 1);
    let n: f32 = fixed.descriptors[0].as_slice().iter().map(|x| x * x).sum();
    assert!((n - 1.0).abs() < 1e-6);

    let cut = &bytes[..bytes.len() - 30];
    match parse_detections(cut) {
        Err(crate::Error::Parse { offset, .. }) => {
            assert!(offset > 16 && offset <= cut.len() as u64)
        }
        other => panic!("expected parse error, got {other:?}"),
    }
    assert!(matches!(
        parse_detections(b"CRQX"),
        Err(crate::Error::Parse { offset: 0, .. })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn nms_output_is_spaced(values in proptest::collection::vec(0.0f32..1.0, 24 * 24), radius in 1.0f64..6.0) {
        let p = Plane::new(24, 24, values);
        let kps = detect_keypoints(&p, radius, 0.1, 1000);
        for i in 0..kps.len() {
            for j in (i + 1)..kps.len() {
                let d = ((kps[i].x - kps[j].x).powi(2) + (kps[i].y - kps[j].y).powi(2)).sqrt();
                prop_assert!(d > radius);
            }
        }
    }

    #[test]
    fn feature_norms_are_unit_or_zero(seed in 0u64..1000) {
        let p = crate::synth::smooth_noise(seed, 24, 20, 6.0);
        let vol = build_feature_volume(&p, &DetectorParams::default());
        for y in 0..20 {
            for x in 0..24 {
                let n: f64 = vol.at(x, y).iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
                prop_assert!(n == 0.0 || (n - 1.0).abs() < 1e-6);
            }
        }
    }
}
