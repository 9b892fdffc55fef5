use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "craquereg",
    version,
    about = "Multi-modal registration of crack-structured images"
)]
pub struct Cli {
    /// Worker threads [default: number of cores]
    #[arg(long, global = true, env = "CRAQUEREG_THREADS")]
    pub threads: Option<usize>,

    /// More log output (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Register image B onto image A and write the result archive and artifacts
    Register(RegisterArgs),
    /// Re-run coarse-to-fine refinement from a coarse result archive
    Refine(RefineArgs),
    /// Warp an image with a result archive
    Warp(WarpArgs),
    /// Control-point errors of a result archive
    Eval(EvalArgs),
    /// Generate a synthetic image pair with ground truth
    Synth(SynthArgs),
    /// Detect keypoints and dump them in the detection exchange format
    Detect(DetectArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    OneStage,
    CoarseToFine,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum InterpArg {
    Bilinear,
    Bicubic,
}

/// Configuration layering: defaults < --preset < --config < flags.
#[derive(Args, Debug, Clone)]
pub struct ConfigArgs {
    /// Named preset: one-stage-sparse, one-stage-mnn, c2f-small-ratio, c2f-large-ratio
    #[arg(long)]
    pub preset: Option<String>,

    /// TOML configuration file layered over the preset
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Override one key, e.g. --set pipeline.patch_size=512 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,

    /// Seed for all randomized steps [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,

    /// Print the effective configuration as TOML and exit
    #[arg(long)]
    pub dump_config: bool,
}

#[derive(Args, Debug)]
pub struct RegisterArgs {
    /// Image A (the higher-resolution image for coarse-to-fine)
    pub image_a: PathBuf,
    /// Image B
    pub image_b: PathBuf,

    /// Output directory
    #[arg(short, long)]
    pub output: PathBuf,

    /// Registration mode [default: from configuration, one-stage]
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,

    #[command(flatten)]
    pub config: ConfigArgs,

    /// Control points to evaluate (`xA yA xB yB` lines)
    #[arg(long)]
    pub cps: Option<PathBuf>,

    /// External matches (`xA yA xB yB confidence` lines) instead of built-in detection and matching
    #[arg(long, conflicts_with_all = ["detections_a", "detections_b"])]
    pub matches: Option<PathBuf>,

    /// External detections for A (detection exchange format)
    #[arg(long, requires = "detections_b")]
    pub detections_a: Option<PathBuf>,

    /// External detections for B (detection exchange format)
    #[arg(long, requires = "detections_a")]
    pub detections_b: Option<PathBuf>,

    /// Skip writing the warped image
    #[arg(long)]
    pub no_warp: bool,

    /// Skip writing the overlay
    #[arg(long)]
    pub no_overlay: bool,

    /// Write the warped image as a 16-bit strip TIFF instead of PNG
    #[arg(long)]
    pub tiff: bool,
}

#[derive(Args, Debug)]
pub struct RefineArgs {
    /// Image A (higher resolution)
    pub image_a: PathBuf,
    /// Image B
    pub image_b: PathBuf,

    /// Coarse result archive (as written by `register --mode coarse-to-fine`)
    #[arg(long)]
    pub coarse: PathBuf,

    /// Output directory
    #[arg(short, long)]
    pub output: PathBuf,

    #[command(flatten)]
    pub config: ConfigArgs,

    /// Control points to evaluate
    #[arg(long)]
    pub cps: Option<PathBuf>,

    /// Skip writing the warped image
    #[arg(long)]
    pub no_warp: bool,

    /// Skip writing the overlay
    #[arg(long)]
    pub no_overlay: bool,

    /// Write the warped image as a 16-bit strip TIFF instead of PNG
    #[arg(long)]
    pub tiff: bool,
}

#[derive(Args, Debug)]
pub struct WarpArgs {
    /// Image to warp (in the archive's A frame); strip TIFFs are read window by window
    pub source: PathBuf,

    /// Result archive
    #[arg(long)]
    pub transform: PathBuf,

    /// Output image (.png, or .tif/.tiff for a streamed 16-bit TIFF)
    #[arg(short, long)]
    pub output: PathBuf,

    /// Output size as WIDTHxHEIGHT [default: source size]
    #[arg(long, value_parser = parse_size, conflicts_with = "reference")]
    pub size: Option<(usize, usize)>,

    /// Take the output size from this image
    #[arg(long)]
    pub reference: Option<PathBuf>,

    /// Output pixels per chunk
    #[arg(long, default_value_t = craquereg::warp::DEFAULT_CHUNK_BUDGET)]
    pub chunk_budget: usize,

    #[arg(long, value_enum, default_value_t = InterpArg::Bicubic)]
    pub interpolation: InterpArg,

    /// Use the global homography only
    #[arg(long)]
    pub homography_only: bool,

    /// Bytes of decoded source strips kept in memory
    #[arg(long, default_value_t = craquereg::imgcore::DEFAULT_MEMORY_BUDGET)]
    pub memory_budget: usize,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Control points (`xA yA xB yB` lines, optional `#scaleA=<f> scaleB=<f>` header)
    #[arg(long)]
    pub cps: PathBuf,

    /// Result archive
    #[arg(long)]
    pub transform: PathBuf,

    /// Success-rate thresholds in pixels
    #[arg(long, value_delimiter = ',', default_values_t = [1.0, 2.0, 3.0, 5.0, 10.0])]
    pub thresholds: Vec<f64>,

    /// Use the global homography only
    #[arg(long)]
    pub homography_only: bool,

    /// Also write the report here
    #[arg(short, long)]
    pub output: Option<PathBuf>,

    /// Write per-point errors as CSV
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output directory
    #[arg(short, long)]
    pub output: PathBuf,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// TOML file with pair parameters; flags below override it
    #[arg(long)]
    pub params: Option<PathBuf>,

    #[arg(long)]
    pub width: Option<usize>,

    #[arg(long)]
    pub height: Option<usize>,

    /// Resolution of B relative to A
    #[arg(long)]
    pub scale_b: Option<f64>,

    /// Largest ground-truth displacement at the warp's control points, px
    #[arg(long)]
    pub magnitude: Option<f64>,

    /// Keep control points at least this far inside B, px
    #[arg(long, default_value_t = 8.0)]
    pub margin: f64,
}

#[derive(Args, Debug)]
pub struct DetectArgs {
    pub image: PathBuf,

    /// Output file (detection exchange format)
    #[arg(short, long)]
    pub output: PathBuf,

    /// Cracks are brighter than their surroundings
    #[arg(long)]
    pub invert: bool,

    /// Include the crack score map
    #[arg(long)]
    pub score_map: bool,

    #[command(flatten)]
    pub config: ConfigArgs,
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or("expected WIDTHxHEIGHT")?;
    let w: usize = w.trim().parse().map_err(|_| format!("bad width {w:?}"))?;
    let h: usize = h.trim().parse().map_err(|_| format!("bad height {h:?}"))?;
    if w == 0 || h == 0 {
        return Err("size must be positive".into());
    }
    Ok((w, h))
}
