use std::fs;
use std::path::{Path, PathBuf};

use craquereg::config::{Mode, RunConfig};
use craquereg::detect::ingest_external_detections;
use craquereg::detect::{
    crack_score_map, save_detections, Detections, Tile, TileKind, DESCRIPTOR_DIM,
};
use craquereg::eval::{evaluate, render_overlay, ControlPointSet, OverlayVector};
use craquereg::imgcore::{
    image_dimensions, load_image, rescale, save_png, scaled_dim, BitDepth, TiffStripSource,
};
use craquereg::matching::{read_matches, Correspondence};
use craquereg::pipeline::{
    extract_features, read_result_file, register_external_matches, register_features,
    register_one_stage, write_result_file, ImageFeatures, PipelineConfig, RegistrationResult,
};
use craquereg::refine::{coarse_images, plan_for, refine_result, upscale_point, LevelPlan};
use craquereg::synth::{synth_pair, SynthPairParams};
use craquereg::warp::{warp_image_chunked, warp_to_tiff, WarpTransform};
use craquereg::{Image, Interpolation, PointMap};
use log::info;

use crate::args::{
    ConfigArgs, DetectArgs, EvalArgs, InterpArg, ModeArg, RefineArgs, RegisterArgs, SynthArgs,
    WarpArgs,
};
use crate::Failure;

type CmdResult = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

/// defaults < preset < file < flags
fn load_config(args: &ConfigArgs, mode: Option<ModeArg>) -> Result<RunConfig, Failure> {
    let mut cfg = match &args.preset {
        Some(name) => RunConfig::preset(name)?,
        None => RunConfig::default(),
    };
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
        cfg = cfg
            .layered(&text)
            .map_err(|e| usage(format!("{}: {e}", path.display())))?;
    }
    for kv in &args.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg = cfg.with_override(k.trim(), v.trim())?;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(mode) = mode {
        cfg.mode = match mode {
            ModeArg::OneStage => Mode::OneStage,
            ModeArg::CoarseToFine => Mode::CoarseToFine,
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Prints the configuration when asked; returns whether the command should stop.
fn dump_config(args: &ConfigArgs, cfg: &RunConfig) -> Result<bool, Failure> {
    if args.dump_config {
        print!("{}", cfg.to_toml()?);
    }
    Ok(args.dump_config)
}

fn create_dir(dir: &Path) -> CmdResult {
    fs::create_dir_all(dir).map_err(|e| usage(format!("cannot create {}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> CmdResult {
    fs::write(path, text).map_err(|e| usage(format!("cannot write {}: {e}", path.display())))
}

fn interpolation(arg: InterpArg) -> Interpolation {
    match arg {
        InterpArg::Bilinear => Interpolation::Bilinear,
        InterpArg::Bicubic => Interpolation::Bicubic,
    }
}

enum External {
    None,
    Matches(Vec<Correspondence>),
    Detections(Box<(Detections, Detections)>),
}

fn load_external(args: &RegisterArgs) -> Result<External, Failure> {
    if let Some(path) = &args.matches {
        return Ok(External::Matches(read_matches(path)?));
    }
    if let (Some(a), Some(b)) = (&args.detections_a, &args.detections_b) {
        let (da, db) = (
            ingest_external_detections(a)?,
            ingest_external_detections(b)?,
        );
        return Ok(External::Detections(Box::new((da, db))));
    }
    Ok(External::None)
}

fn features_at(
    det: &Detections,
    size: (usize, usize),
    scale: f64,
) -> Result<ImageFeatures, Failure> {
    let keypoints = det
        .keypoints
        .iter()
        .map(|k| {
            let p = upscale_point(k.point(), scale);
            craquereg::detect::Keypoint::new(p.x, p.y, k.score)
        })
        .collect();
    Ok(ImageFeatures::new(
        size.0,
        size.1,
        keypoints,
        det.descriptors.clone(),
    )?)
}

/// One-stage registration of `a` and `b`, whose pixels sit at `scales`
/// relative to the native images the external inputs refer to.
fn one_stage(
    a: &Image,
    b: &Image,
    scales: (f64, f64),
    external: &External,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<RegistrationResult, Failure> {
    let (sa, sb) = ((a.width(), a.height()), (b.width(), b.height()));
    Ok(match external {
        External::None => register_one_stage(a, b, cfg, seed)?,
        External::Matches(m) => {
            let m: Vec<Correspondence> = m
                .iter()
                .map(|c| {
                    Correspondence::new(
                        upscale_point(c.src_point(), scales.0),
                        upscale_point(c.dst_point(), scales.1),
                        c.confidence,
                    )
                })
                .collect();
            register_external_matches(&m, sa, sb, cfg, seed)?
        }
        External::Detections(d) => {
            let fa = features_at(&d.0, sa, scales.0)?;
            let fb = features_at(&d.1, sb, scales.1)?;
            register_features(&fa, &fb, cfg, seed)?
        }
    })
}

fn maybe_eval(
    cps: Option<&PathBuf>,
    result: &RegistrationResult,
    cfg: &RunConfig,
    out: &Path,
) -> CmdResult {
    let Some(path) = cps else { return Ok(()) };
    let set = ControlPointSet::read(path)?;
    let (fa, fb) = result.frame_scales();
    let report = evaluate(
        &result.forward(),
        &set.at_scales(fa, fb)?,
        &cfg.eval.thresholds,
    )?;
    let text = report.to_text();
    print!("{text}");
    write_text(&out.join("report.txt"), &text)?;
    write_text(&out.join("errors.csv"), &report.errors_csv())
}

struct Artifacts {
    warp: bool,
    overlay: bool,
    tiff: bool,
}

fn at_scale(img: &Image, s: f64) -> Result<Image, Failure> {
    Ok(if s == 1.0 {
        img.clone()
    } else {
        rescale(img, s, Interpolation::Bicubic)?
    })
}

fn write_artifacts(
    out: &Path,
    result: &RegistrationResult,
    a: &Image,
    b: &Image,
    cfg: &RunConfig,
    what: &Artifacts,
) -> CmdResult {
    write_result_file(out.join("result.crqr"), result)?;
    let stats = serde_json::to_string_pretty(&result.stats).map_err(|e| usage(e.to_string()))?;
    write_text(&out.join("stats.json"), &stats)?;
    write_text(&out.join("config.toml"), &cfg.to_toml()?)?;
    if !(what.warp || what.overlay) {
        return Ok(());
    }
    let (fa, fb) = result.frame_scales();
    let src = at_scale(a, fa)?;
    let size = (scaled_dim(b.width(), fb), scaled_dim(b.height(), fb));
    let budget = cfg.warp.chunk_budget_px;
    if what.warp {
        let t = WarpTransform::Backward(result.inverse_model()?);
        let interp = cfg.warp.interpolation;
        if what.tiff {
            warp_to_tiff(
                &src,
                &t,
                size,
                budget,
                interp,
                BitDepth::Sixteen,
                out.join("warped.tif"),
            )?;
        } else {
            save_png(
                &warp_image_chunked(&src, &t, size, budget, interp)?,
                out.join("warped.png"),
            )?;
        }
    }
    if what.overlay {
        let t = WarpTransform::from_forward(&result.global_h)?;
        let warped = warp_image_chunked(&src, &t, size, budget, cfg.warp.interpolation)?;
        let target = at_scale(b, fb)?;
        let mut vectors = Vec::new();
        for (list, kept) in [(&result.correspondences, true), (&result.rejected, false)] {
            for c in list.iter() {
                if let Ok(p) = result.global_h.map_point(c.src_point()) {
                    vectors.push(OverlayVector {
                        src: p,
                        dst: c.dst_point(),
                        kept,
                    });
                }
            }
        }
        save_png(
            &render_overlay(&warped, &target, &vectors, true)?,
            out.join("overlay.png"),
        )?;
    }
    Ok(())
}

fn load_pair(a: &Path, b: &Path, cfg: &RunConfig) -> Result<(Image, Image), Failure> {
    Ok((
        load_image(a, cfg.input.normalize)?,
        load_image(b, cfg.input.normalize)?,
    ))
}

fn refine_from(
    coarse: &RegistrationResult,
    a: &Image,
    b: &Image,
    plan: &LevelPlan,
    cfg: &RunConfig,
) -> Result<RegistrationResult, Failure> {
    Ok(refine_result(
        coarse,
        a,
        b,
        plan,
        &cfg.pipeline,
        &cfg.refine,
        cfg.seed,
    )?)
}

pub fn register(args: RegisterArgs) -> CmdResult {
    let cfg = load_config(&args.config, args.mode)?;
    if dump_config(&args.config, &cfg)? {
        return Ok(());
    }
    let (a, b) = load_pair(&args.image_a, &args.image_b, &cfg)?;
    let external = load_external(&args)?;
    create_dir(&args.output)?;
    let result = match cfg.mode {
        Mode::OneStage => one_stage(&a, &b, (1.0, 1.0), &external, &cfg.pipeline, cfg.seed)?,
        Mode::CoarseToFine => {
            let plan = plan_for(&a, &b, &cfg.refine)?;
            if plan.levels.is_empty() {
                one_stage(&a, &b, (1.0, 1.0), &external, &cfg.pipeline, cfg.seed)?
            } else {
                info!("level plan {plan:?}");
                let (ca, cb) = coarse_images(&a, &b, &plan)?;
                let mut coarse =
                    one_stage(&ca, &cb, plan.coarse, &external, &cfg.pipeline, cfg.seed)?;
                coarse.stats.frame_scale = Some([plan.coarse.0, plan.coarse.1]);
                write_result_file(args.output.join("coarse.crqr"), &coarse)?;
                refine_from(&coarse, &a, &b, &plan, &cfg)?
            }
        }
    };
    let what = Artifacts {
        warp: !args.no_warp,
        overlay: !args.no_overlay,
        tiff: args.tiff,
    };
    write_artifacts(&args.output, &result, &a, &b, &cfg, &what)?;
    maybe_eval(args.cps.as_ref(), &result, &cfg, &args.output)
}

pub fn refine(args: RefineArgs) -> CmdResult {
    let cfg = load_config(&args.config, Some(ModeArg::CoarseToFine))?;
    if dump_config(&args.config, &cfg)? {
        return Ok(());
    }
    let coarse = read_result_file(&args.coarse)?;
    let (a, b) = load_pair(&args.image_a, &args.image_b, &cfg)?;
    let plan = plan_for(&a, &b, &cfg.refine)?;
    let (ca, cb) = coarse.frame_scales();
    if (ca - plan.coarse.0).abs() > 1e-9 || (cb - plan.coarse.1).abs() > 1e-9 {
        return Err(usage(format!(
            "coarse archive frame scales ({ca}, {cb}) differ from the level plan's ({}, {})",
            plan.coarse.0, plan.coarse.1
        )));
    }
    create_dir(&args.output)?;
    let result = refine_from(&coarse, &a, &b, &plan, &cfg)?;
    let what = Artifacts {
        warp: !args.no_warp,
        overlay: !args.no_overlay,
        tiff: args.tiff,
    };
    write_artifacts(&args.output, &result, &a, &b, &cfg, &what)?;
    maybe_eval(args.cps.as_ref(), &result, &cfg, &args.output)
}

fn is_tiff_path(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("tif") || e.eq_ignore_ascii_case("tiff"))
}

pub fn warp(args: WarpArgs) -> CmdResult {
    let result = read_result_file(&args.transform)?;
    let transform = if args.homography_only {
        WarpTransform::from_forward(&result.global_h)?
    } else {
        WarpTransform::Backward(result.inverse_model()?)
    };
    if args.chunk_budget == 0 {
        return Err(usage("--chunk-budget must be positive"));
    }
    let size = match (&args.size, &args.reference) {
        (Some(s), _) => Some(*s),
        (None, Some(r)) => Some(image_dimensions(r)?),
        (None, None) => None,
    };
    let interp = interpolation(args.interpolation);
    let normalize = craquereg::Normalize::None;
    let out = &args.output;
    macro_rules! run {
        ($src:expr, $depth:expr) => {{
            let src = $src;
            let size = size.unwrap_or((
                craquereg::imgcore::RasterSource::width(&src),
                craquereg::imgcore::RasterSource::height(&src),
            ));
            if is_tiff_path(out) {
                warp_to_tiff(
                    &src,
                    &transform,
                    size,
                    args.chunk_budget,
                    interp,
                    $depth,
                    out,
                )?;
            } else {
                save_png(
                    &warp_image_chunked(&src, &transform, size, args.chunk_budget, interp)?,
                    out,
                )?;
            }
        }};
    }
    if is_tiff_path(&args.source) {
        let src = TiffStripSource::open(&args.source, normalize, args.memory_budget)?;
        let depth = src.bit_depth();
        run!(src, depth);
    } else {
        let src = load_image(&args.source, normalize)?;
        let depth = src.bit_depth();
        run!(src, depth);
    }
    Ok(())
}

pub fn eval(args: EvalArgs) -> CmdResult {
    let result = read_result_file(&args.transform)?;
    let set = ControlPointSet::read(&args.cps)?;
    let (fa, fb) = result.frame_scales();
    let set = set.at_scales(fa, fb)?;
    if args.thresholds.iter().any(|t| !(*t > 0.0)) {
        return Err(usage("thresholds must be positive"));
    }
    let report = if args.homography_only {
        evaluate(&result.global_h, &set, &args.thresholds)?
    } else {
        evaluate(&result.forward(), &set, &args.thresholds)?
    };
    let text = report.to_text();
    print!("{text}");
    if let Some(p) = &args.output {
        write_text(p, &text)?;
    }
    if let Some(p) = &args.csv {
        write_text(p, &report.errors_csv())?;
    }
    Ok(())
}

pub fn synth(args: SynthArgs) -> CmdResult {
    let mut params = match &args.params {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| usage(format!("cannot read {}: {e}", p.display())))?;
            craquereg::synth::SynthPairParams::from_toml(&text)
                .map_err(|e| usage(format!("{}: {e}", p.display())))?
        }
        None => SynthPairParams::default(),
    };
    if let Some(w) = args.width {
        params.width = w;
    }
    if let Some(h) = args.height {
        params.height = h;
    }
    if let Some(s) = args.scale_b {
        params.scale_b = s;
    }
    if let Some(m) = args.magnitude {
        params.warp_magnitude = m;
    }
    if params.width == 0 || params.height == 0 || !(params.scale_b > 0.0) {
        return Err(usage("width, height and scale-b must be positive"));
    }
    let pair = synth_pair(args.seed, &params)?;
    let out = &args.output;
    create_dir(out)?;
    save_png(&pair.image_a, out.join("a.png"))?;
    save_png(&pair.image_b, out.join("b.png"))?;
    pair.control_point_set(args.margin)?
        .write_file(out.join("cps.txt"))?;
    let mut buf = Vec::new();
    craquereg::eval::write_points(&mut buf, &pair.network_a.junctions)?;
    write_text(&out.join("junctions_a.txt"), &String::from_utf8_lossy(&buf))?;
    let mut buf = Vec::new();
    craquereg::eval::write_points(&mut buf, &pair.network_b.junctions)?;
    write_text(&out.join("junctions_b.txt"), &String::from_utf8_lossy(&buf))?;
    write_text(&out.join("params.toml"), &params.to_toml()?)?;
    Ok(())
}

pub fn detect(args: DetectArgs) -> CmdResult {
    let cfg = load_config(&args.config, None)?;
    if dump_config(&args.config, &cfg)? {
        return Ok(());
    }
    let image = load_image(&args.image, cfg.input.normalize)?;
    let mut params = cfg.pipeline.detector.clone();
    params.invert |= args.invert;
    let f = extract_features(&image, &params);
    let mut tiles = Vec::new();
    if args.score_map {
        let score = crack_score_map(&image.to_gray(), &params);
        tiles.push(Tile {
            kind: TileKind::ScoreMap,
            origin: (0, 0),
            width: score.width() as u32,
            height: score.height() as u32,
            channels: 1,
            downsample: 1,
            data: score.data().to_vec(),
        });
    }
    info!("{} keypoints", f.keypoints.len());
    let det = Detections {
        keypoints: f.keypoints,
        descriptors: f.descriptors,
        dim: DESCRIPTOR_DIM,
        tiles,
        renormalized: 0,
    };
    save_detections(&args.output, &det)?;
    Ok(())
}
