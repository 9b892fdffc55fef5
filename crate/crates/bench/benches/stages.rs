use std::hint::black_box;

use craquereg::detect::{crack_score_map, DetectorParams};
use craquereg::geometry::{fit_homography_dlt, fit_tps, Point};
use craquereg::robust::{robust_homography, vfc_filter, VfcParams, DEFAULT_MAX_ITERS};
use craquereg::synth::{generate_gt_warp, synth_pair, SynthPairParams};
use craquereg::warp::{warp_image_chunked, WarpTransform};
use craquereg::{Homography, HomographyTps, Interpolation};
use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

fn grid_points(n: usize, size: f64) -> Vec<Point> {
    let k = (n as f64).sqrt().ceil() as usize;
    (0..n)
        .map(|i| {
            let (x, y) = ((i % k) as f64, (i / k) as f64);
            // irrational offsets keep the layout non-degenerate
            Point::new(
                (x + 0.37 * (y * 1.618).fract()) * size / k as f64,
                (y + 0.41 * (x * 2.414).fract()) * size / k as f64,
            )
        })
        .collect()
}

fn geometry(c: &mut Criterion) {
    let warp = generate_gt_warp(1, 1024, 1024, 16, 8.0).unwrap();
    for n in [100, 500] {
        let src = grid_points(n, 1024.0);
        let dst: Vec<Point> = src.iter().map(|&p| warp.map(p)).collect();
        c.bench_function(&format!("fit_tps n={n}"), |b| {
            b.iter(|| fit_tps(black_box(&src), black_box(&dst), 0.0).unwrap())
        });
        let w = vec![1.0; n];
        c.bench_function(&format!("fit_homography_dlt n={n}"), |b| {
            b.iter(|| fit_homography_dlt(black_box(&src), black_box(&dst), &w).unwrap())
        });
    }
}

fn robust(c: &mut Criterion) {
    let warp = generate_gt_warp(2, 1024, 1024, 16, 8.0).unwrap();
    let src = grid_points(1000, 1024.0);
    let mut dst: Vec<Point> = src.iter().map(|&p| warp.map(p)).collect();
    for (i, q) in dst.iter_mut().enumerate().filter(|(i, _)| i % 3 == 0) {
        *q = Point::new(((i * 7919) % 1024) as f64, ((i * 104_729) % 1024) as f64);
    }
    c.bench_function("robust_homography n=1000", |b| {
        b.iter(|| {
            robust_homography(black_box(&src), black_box(&dst), 3.0, DEFAULT_MAX_ITERS, 0).unwrap()
        })
    });
    c.bench_function("vfc_filter n=1000", |b| {
        b.iter(|| vfc_filter(black_box(&src), black_box(&dst), &VfcParams::default()).unwrap())
    });
}

fn detect(c: &mut Criterion) {
    let pair = synth_pair(
        0,
        &SynthPairParams {
            width: 512,
            height: 512,
            ..SynthPairParams::default()
        },
    )
    .unwrap();
    let gray = pair.image_a.to_gray();
    let params = DetectorParams::default();
    c.bench_function("crack_score_map 512x512", |b| {
        b.iter(|| crack_score_map(black_box(&gray), &params))
    });
}

fn warp(c: &mut Criterion) {
    let pair = synth_pair(
        0,
        &SynthPairParams {
            width: 1024,
            height: 1024,
            ..SynthPairParams::default()
        },
    )
    .unwrap();
    let map = WarpTransform::Backward(HomographyTps {
        homography: Homography::translation(3.0, -2.0),
        tps: pair.warp.tps.clone(),
    });
    let mut group = c.benchmark_group("warp 1024x1024");
    group.sample_size(10);
    for budget in [1 << 16, 1 << 20] {
        group.bench_function(format!("budget {budget}"), |b| {
            b.iter_batched(
                || (),
                |_| {
                    warp_image_chunked(
                        &pair.image_a,
                        &map,
                        (1024, 1024),
                        budget,
                        Interpolation::Bicubic,
                    )
                    .unwrap()
                },
                BatchSize::PerIteration,
            )
        });
    }
    group.finish();
}

criterion_group!(benches, geometry, robust, detect, warp);
criterion_main!(benches);
