use proptest::prelude::*;

use super::*;
use crate::geometry::Homography;
use crate::imgcore::Image;

type Pair = ((f64, f64), (f64, f64));

fn cps(pairs: &[Pair]) -> ControlPointSet {
    let pairs = pairs
        .iter()
        .map(|&((ax, ay), (bx, by))| (Point::new(ax, ay), Point::new(bx, by)))
        .collect();
    ControlPointSet::new(pairs, 1.0, 1.0).unwrap()
}

#[test]
fn perfect_transform() {
    let set = cps(&[((1.0, 2.0), (1.0, 2.0)), ((5.0, 7.5), (5.0, 7.5))]);
    let r = evaluate(&Homography::identity(), &set, &[0.5, 3.0]).unwrap();
    assert_eq!((r.me, r.mae), (0.0, 0.0));
    assert!(r.sr.iter().all(|s| s.me == 1.0 && s.mae == 1.0));
}

#[test]
fn constant_offset() {
    let set = cps(&[((0.0, 0.0), (3.0, 4.0)), ((10.0, 2.0), (13.0, 6.0))]);
    let r = evaluate(&Homography::identity(), &set, &[]).unwrap();
    assert_eq!((r.me, r.mae), (5.0, 5.0));
}

#[test]
fn mean_and_max() {
    let set = cps(&[
        ((0.0, 0.0), (1.0, 0.0)),
        ((0.0, 0.0), (0.0, 2.0)),
        ((0.0, 0.0), (9.0, 0.0)),
    ]);
    let r = evaluate(&Homography::identity(), &set, &[5.0, 10.0]).unwrap();
    assert_eq!((r.me, r.mae), (4.0, 9.0));
    assert_eq!(
        r.sr[0],
        SuccessRate {
            epsilon: 5.0,
            me: 1.0,
            mae: 0.0
        }
    );
    assert_eq!(
        r.sr[1],
        SuccessRate {
            epsilon: 10.0,
            me: 1.0,
            mae: 1.0
        }
    );
    let text = r.to_text();
    assert!(text.starts_with("me=4\nmae=9\nsr@5=1\nsr@10=1\n"), "{text}");
    assert!(r.errors_csv().starts_with("index,error\n0,1\n"));
}

#[test]
fn aggregate_rates() {
    let mk = |me: f64, mae: f64| EvalReport {
        me,
        mae,
        sr: vec![],
        errors: vec![],
    };
    let reports = [mk(1.0, 2.0), mk(3.0, 8.0), mk(0.5, 0.9), mk(10.0, 20.0)];
    let sr = success_rates(&reports, &[1.0, 5.0]);
    assert_eq!(
        sr[0],
        SuccessRate {
            epsilon: 1.0,
            me: 0.25,
            mae: 0.25
        }
    );
    assert_eq!(
        sr[1],
        SuccessRate {
            epsilon: 5.0,
            me: 0.75,
            mae: 0.5
        }
    );
}

#[test]
fn control_point_file_round_trip_and_rescale() {
    let text = "# annotated\n#scaleA=1 scaleB=0.25\n10 20 2.5 5\n\n0.5 1.5 3 4\n";
    let set = ControlPointSet::parse(text).unwrap();
    assert_eq!((set.scale_a, set.scale_b), (1.0, 0.25));
    assert_eq!(set.pairs.len(), 2);
    let mut buf = Vec::new();
    set.write(&mut buf).unwrap();
    assert_eq!(
        ControlPointSet::parse(std::str::from_utf8(&buf).unwrap()).unwrap(),
        set
    );

    // B at quarter resolution: (p + 0.5) * 4 - 0.5
    let full = set.at_scales(1.0, 1.0).unwrap();
    assert_eq!(full.pairs[0].0, Point::new(10.0, 20.0));
    assert_eq!(full.pairs[0].1, Point::new(11.5, 21.5));

    assert!(matches!(
        ControlPointSet::parse("1 2 3\n"),
        Err(Error::ParseLine { line: 1, .. })
    ));
    assert!(ControlPointSet::parse("# nothing\n").is_err());
    assert!(ControlPointSet::parse("#scaleA=0 scaleB=1\n1 2 3 4\n").is_err());
}

#[test]
fn overlay_gray_and_green() {
    let a = Image::from_fn(8, 6, |x, y| (x + y) as f32 / 14.0);
    let o = render_overlay(&a, &a, &[], false).unwrap();
    for px in o.data().chunks(3) {
        assert!(px[0] == px[1] && px[1] == px[2]);
    }
    let zero = Image::filled(8, 6, 0.0);
    let o = render_overlay(&zero, &a, &[], false).unwrap();
    for (px, &g) in o.data().chunks(3).zip(a.data()) {
        assert_eq!(px, [0.0, g, 0.0]);
    }
    assert!(render_overlay(&zero, &Image::filled(8, 5, 0.0), &[], false).is_err());
}

#[test]
fn overlay_kept_vector_is_blue_row() {
    let base = Image::filled(16, 5, 0.0);
    let v = OverlayVector {
        src: Point::new(0.0, 2.0),
        dst: Point::new(10.0, 2.0),
        kept: true,
    };
    let o = render_overlay(&base, &base, &[v], false).unwrap();
    let blue = |x: usize, y: usize| o.get(x, y, 2);
    // ten pixels of coverage: full inside, half at each end point
    let total: f32 = (0..16).map(|x| blue(x, 2)).sum();
    assert!((total - 10.0).abs() < 1e-6, "{total}");
    assert!((1..10).all(|x| blue(x, 2) == 1.0));
    assert!((0..16).all(|x| o.get(x, 2, 0) == 0.0));
    for y in [0, 1, 3, 4] {
        assert!((0..16).all(|x| blue(x, y) == 0.0));
    }
    let removed = OverlayVector { kept: false, ..v };
    let o = render_overlay(&base, &base, &[removed], true).unwrap();
    assert_eq!(o.get(5, 2, 0), 1.0);
    assert_eq!((o.get(10, 2, 0), o.get(10, 2, 1)), (1.0, 0.5));
    assert_eq!((o.get(0, 2, 0), o.get(0, 2, 1)), (0.0, 1.0));
}

proptest! {
    #[test]
    fn metrics_invariants(errs in prop::collection::vec((0.0f64..50.0, 0.0f64..6.3), 1..40), seed in 0u64..1000) {
        let pairs: Vec<(Point, Point)> = errs
            .iter()
            .map(|&(r, a)| (Point::new(10.0, 20.0), Point::new(10.0 + r * a.cos(), 20.0 + r * a.sin())))
            .collect();
        let eps = [0.5, 1.0, 3.0, 10.0, f64::INFINITY];
        let set = ControlPointSet::new(pairs.clone(), 1.0, 1.0).unwrap();
        let r = evaluate(&Homography::identity(), &set, &eps).unwrap();
        prop_assert!(r.mae >= r.me - 1e-12 && r.me >= 0.0);
        for w in r.sr.windows(2) {
            prop_assert!(w[0].me <= w[1].me && w[0].mae <= w[1].mae);
        }
        prop_assert_eq!(r.sr[4].me, 1.0);

        use rand::{seq::SliceRandom, SeedableRng};
        let mut shuffled = pairs;
        shuffled.shuffle(&mut rand_xorshift::XorShiftRng::seed_from_u64(seed));
        let r2 = evaluate(&Homography::identity(), &ControlPointSet::new(shuffled, 1.0, 1.0).unwrap(), &eps).unwrap();
        prop_assert!((r2.me - r.me).abs() < 1e-9);
        prop_assert_eq!(r2.mae, r.mae);
    }
}
