use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use craquereg::config::RunConfig;
use craquereg::eval::ControlPointSet;
use craquereg::imgcore::save_png;
use craquereg::pipeline::{write_result_file, RegistrationResult, StageStats};
use craquereg::{Homography, Image, Point, TpsModel};

fn craquereg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_craquereg"))
        .args(args)
        .output()
        .expect("run craquereg")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn report_value(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no {key} in {text}"))
        .trim()
        .parse()
        .unwrap()
}

fn synth(dir: &Path, extra: &[&str]) {
    let mut args = vec![
        "synth",
        "-o",
        p(dir),
        "--width",
        "768",
        "--height",
        "768",
        "--seed",
        "4",
    ];
    args.extend_from_slice(extra);
    let out = craquereg(&args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn missing_input_is_a_usage_error_naming_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.png");
    let out = craquereg(&[
        "register",
        p(&missing),
        p(&missing),
        "-o",
        p(&tmp.path().join("out")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.png"));
}

#[test]
fn bad_flag_is_a_usage_error() {
    let out = craquereg(&["register", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(craquereg(&["--help"]).status.code(), Some(0));
}

#[test]
fn textureless_pair_fails_registration() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a.png");
    let b = tmp.path().join("b.png");
    save_png(&Image::filled(256, 256, 0.5), &a).unwrap();
    save_png(&Image::filled(256, 256, 0.5), &b).unwrap();
    let out = craquereg(&[
        "register",
        p(&a),
        p(&b),
        "-o",
        p(&tmp.path().join("out")),
        "--set",
        "pipeline.patch_size=256",
        "--set",
        "pipeline.patch_stride=256",
    ]);
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn synth_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (d1, d2) = (tmp.path().join("1"), tmp.path().join("2"));
    synth(&d1, &[]);
    synth(&d2, &[]);
    for name in ["a.png", "b.png", "cps.txt", "params.toml"] {
        assert_eq!(
            fs::read(d1.join(name)).unwrap(),
            fs::read(d2.join(name)).unwrap(),
            "{name} differs"
        );
    }
}

#[test]
fn eval_of_identity_on_identical_points_is_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let identity = RegistrationResult {
        global_h: Homography::identity(),
        tps: TpsModel::identity(),
        correspondences: Vec::new(),
        rejected: Vec::new(),
        stats: StageStats::default(),
    };
    let archive = tmp.path().join("id.crqr");
    write_result_file(&archive, &identity).unwrap();
    let pts = [
        Point::new(3.0, 4.0),
        Point::new(100.5, 20.25),
        Point::new(7.0, 300.0),
    ];
    let cps = ControlPointSet::new(pts.iter().map(|&q| (q, q)).collect(), 1.0, 1.0).unwrap();
    let cps_path = tmp.path().join("cps.txt");
    cps.write_file(&cps_path).unwrap();
    let out = craquereg(&["eval", "--cps", p(&cps_path), "--transform", p(&archive)]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(report_value(&text, "me"), 0.0);
    assert_eq!(report_value(&text, "mae"), 0.0);
}

#[test]
fn register_synth_pair_then_warp_with_any_budget() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, &[]);
    let out_dir = tmp.path().join("reg");
    let out = craquereg(&[
        "register",
        p(&data.join("a.png")),
        p(&data.join("b.png")),
        "-o",
        p(&out_dir),
        "--mode",
        "one-stage",
        "--set",
        "pipeline.patch_size=384",
        "--set",
        "pipeline.patch_stride=288",
        "--cps",
        p(&data.join("cps.txt")),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report = fs::read_to_string(out_dir.join("report.txt")).unwrap();
    assert!(report_value(&report, "me") < 1.0, "{report}");
    for name in [
        "result.crqr",
        "stats.json",
        "config.toml",
        "warped.png",
        "overlay.png",
        "errors.csv",
    ] {
        assert!(out_dir.join(name).exists(), "{name} missing");
    }

    let mut warped = Vec::new();
    for budget in ["5000", "100000", "1000000000"] {
        let dst = tmp.path().join(format!("w{budget}.png"));
        let out = craquereg(&[
            "warp",
            p(&data.join("a.png")),
            "--transform",
            p(&out_dir.join("result.crqr")),
            "--reference",
            p(&data.join("b.png")),
            "--chunk-budget",
            budget,
            "-o",
            p(&dst),
        ]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        warped.push(fs::read(dst).unwrap());
    }
    assert!(warped.windows(2).all(|w| w[0] == w[1]));
    assert_eq!(warped[0], fs::read(out_dir.join("warped.png")).unwrap());
}

#[test]
fn dumped_config_round_trips() {
    let out = craquereg(&[
        "register",
        "a.png",
        "b.png",
        "-o",
        "unused",
        "--preset",
        "c2f-large-ratio",
        "--set",
        "pipeline.patch_size=512",
        "--set",
        "pipeline.patch_stride=384",
        "--seed",
        "9",
        "--dump-config",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    let cfg = RunConfig::from_toml(&text).unwrap();
    assert_eq!(cfg.seed, 9);
    assert_eq!(cfg.pipeline.patch_size, 512);
    assert_eq!(cfg.to_toml().unwrap(), text);
    let mut expected = RunConfig::preset("c2f-large-ratio").unwrap();
    expected.seed = 9;
    expected.pipeline.patch_size = 512;
    expected.pipeline.patch_stride = 384;
    assert_eq!(cfg, expected);
}
