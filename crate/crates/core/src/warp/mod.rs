//! Memory-bounded backward warping.
//!
//! The output is cut into chunks of at most `chunk_budget_px` pixels. For each
//! chunk a grid of source coordinates is evaluated, the source window it
//! touches (plus a 2 px interpolation margin) is read, and the chunk is
//! resampled. Source coordinates are stored as `f32` and shifted by integer
//! window offsets only, so the result does not depend on the budget.

use log::debug;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Homography, HomographyTps, Point, PointMap};
use crate::imgcore::{write_tiff_streaming, BitDepth, Image, Interpolation, RasterSource};

/// Default chunk budget in output pixels.
pub const DEFAULT_CHUNK_BUDGET: usize = 64 << 20;

/// Extra source pixels read around each chunk's footprint.
pub const INTERPOLATION_MARGIN: i64 = 2;

/// Maps output (target) coordinates to source coordinates.
#[derive(Clone, Debug, PartialEq)]
pub enum WarpTransform {
    /// Inverse of a source-to-target homography.
    Homography(Homography),
    /// A target-to-source model evaluated directly.
    Backward(HomographyTps),
}

impl WarpTransform {
    /// Backward map for a forward (source-to-target) homography.
    pub fn from_forward(h: &Homography) -> Result<Self> {
        Ok(WarpTransform::Homography(h.inverse()?))
    }

    pub fn identity() -> Self {
        WarpTransform::Homography(Homography::identity())
    }
}

impl PointMap for WarpTransform {
    fn map_point(&self, p: Point) -> Result<Point> {
        match self {
            WarpTransform::Homography(h) => h.apply(p),
            WarpTransform::Backward(m) => m.map_point(p),
        }
    }
}

/// Source coordinates for every pixel of an output rectangle.
#[derive(Clone, Debug, PartialEq)]
pub struct DisplacementChunk {
    pub origin: (usize, usize),
    pub width: usize,
    pub height: usize,
    /// Source x per output pixel, row-major; NaN where the map is undefined.
    pub dx: Vec<f32>,
    pub dy: Vec<f32>,
}

impl DisplacementChunk {
    /// Bounding box `(x0, y0, x1, y1)` of source pixels needed to sample the
    /// in-bounds coordinates, margin included and clipped to the source.
    fn source_window(&self, sw: usize, sh: usize) -> Option<(usize, usize, usize, usize)> {
        let (mut x0, mut y0, mut x1, mut y1) = (
            f64::INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::NEG_INFINITY,
        );
        for (&x, &y) in self.dx.iter().zip(&self.dy) {
            if inside(x, y, sw, sh) {
                x0 = x0.min(x as f64);
                y0 = y0.min(y as f64);
                x1 = x1.max(x as f64);
                y1 = y1.max(y as f64);
            }
        }
        if x0 > x1 {
            return None;
        }
        let lo = |v: f64| (v.floor() as i64 - INTERPOLATION_MARGIN).max(0) as usize;
        let hi = |v: f64, n: usize| {
            (v.floor() as i64 + 1 + INTERPOLATION_MARGIN).min(n as i64 - 1) as usize
        };
        Some((lo(x0), lo(y0), hi(x1, sw), hi(y1, sh)))
    }
}

#[inline]
fn inside(x: f32, y: f32, w: usize, h: usize) -> bool {
    x >= -0.5 && y >= -0.5 && x <= w as f32 - 0.5 && y <= h as f32 - 0.5
}

/// Evaluates the backward map over `(x0, y0, w, h)` in output space.
pub fn build_displacement_chunk(
    transform: &dyn PointMap,
    rect: (usize, usize, usize, usize),
) -> DisplacementChunk {
    let (x0, y0, w, h) = rect;
    let mut dx = Vec::with_capacity(w * h);
    let mut dy = Vec::with_capacity(w * h);
    for j in 0..h {
        for i in 0..w {
            match transform.map_point(Point::new((x0 + i) as f64, (y0 + j) as f64)) {
                Ok(p) if p.x.is_finite() && p.y.is_finite() => {
                    dx.push(p.x as f32);
                    dy.push(p.y as f32);
                }
                _ => {
                    dx.push(f32::NAN);
                    dy.push(f32::NAN);
                }
            }
        }
    }
    DisplacementChunk {
        origin: (x0, y0),
        width: w,
        height: h,
        dx,
        dy,
    }
}

/// Chunk layout: full-width bands when a row fits in the budget, otherwise
/// square tiles. Rectangles tile the output row band by row band.
pub fn plan_chunks(
    out_size: (usize, usize),
    chunk_budget_px: usize,
) -> Vec<Vec<(usize, usize, usize, usize)>> {
    let (w, h) = out_size;
    let budget = chunk_budget_px.max(1);
    let (tile_w, band_h) = if budget >= w {
        (w, (budget / w).clamp(1, h))
    } else {
        let side = budget.isqrt().max(1);
        (side, side.min(h))
    };
    (0..h)
        .step_by(band_h)
        .map(|y| {
            let bh = band_h.min(h - y);
            (0..w)
                .step_by(tile_w)
                .map(|x| (x, y, tile_w.min(w - x), bh))
                .collect()
        })
        .collect()
}

fn warp_chunk<S: RasterSource>(
    src: &S,
    transform: &dyn PointMap,
    rect: (usize, usize, usize, usize),
    method: Interpolation,
) -> Result<Vec<f32>> {
    let ch = src.channels();
    let (sw, sh) = (src.width(), src.height());
    let chunk = build_displacement_chunk(transform, rect);
    let mut out = vec![0.0f32; rect.2 * rect.3 * ch];
    let Some((wx0, wy0, wx1, wy1)) = chunk.source_window(sw, sh) else {
        return Ok(out);
    };
    debug!(
        "chunk {:?} reads source [{wx0}, {wx1}] x [{wy0}, {wy1}]",
        rect
    );
    let window = src.read_window(wx0, wy0, wx1 - wx0 + 1, wy1 - wy0 + 1)?;
    let (ox, oy) = (wx0 as f64, wy0 as f64);
    for (k, (&x, &y)) in chunk.dx.iter().zip(&chunk.dy).enumerate() {
        if !inside(x, y, sw, sh) {
            continue;
        }
        for c in 0..ch {
            let v = window.sample_channel(x as f64 - ox, y as f64 - oy, c, method);
            out[k * ch + c] = (v as f32).clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// Warps one band of chunks and returns its interleaved rows. Tiles are split
/// further by rows when the band has fewer tiles than worker threads.
fn warp_band<S: RasterSource>(
    src: &S,
    transform: &dyn PointMap,
    width: usize,
    band: &[(usize, usize, usize, usize)],
    method: Interpolation,
) -> Result<Vec<f32>> {
    let ch = src.channels();
    let (y0, band_h) = (band[0].1, band[0].3);
    let splits = rayon::current_num_threads()
        .div_ceil(band.len())
        .clamp(1, band_h);
    let step = band_h.div_ceil(splits);
    let rects: Vec<_> = band
        .iter()
        .flat_map(|&(x, y, w, h)| {
            (y..y + h)
                .step_by(step)
                .map(move |yy| (x, yy, w, step.min(y + h - yy)))
        })
        .collect();
    let tiles: Vec<Result<Vec<f32>>> = rects
        .par_iter()
        .map(|&rect| warp_chunk(src, transform, rect, method))
        .collect();
    let mut rows = vec![0.0f32; width * band_h * ch];
    for (rect, tile) in rects.iter().zip(tiles) {
        let tile = tile?;
        let (x0, ty, tw, th) = *rect;
        for j in 0..th {
            let at = ((ty - y0 + j) * width + x0) * ch;
            rows[at..at + tw * ch].copy_from_slice(&tile[j * tw * ch..(j + 1) * tw * ch]);
        }
    }
    Ok(rows)
}

/// Backward-warps `src` into an image of `out_size`. Output pixels whose
/// source coordinate falls outside the source are 0.
pub fn warp_image_chunked<S: RasterSource>(
    src: &S,
    transform: &dyn PointMap,
    out_size: (usize, usize),
    chunk_budget_px: usize,
    method: Interpolation,
) -> Result<Image> {
    let (w, h) = out_size;
    if w == 0 || h == 0 {
        return Err(Error::EmptyImage);
    }
    let bands = plan_chunks(out_size, chunk_budget_px);
    debug!("warping {w}x{h} in {} bands", bands.len());
    let mut data = Vec::with_capacity(w * h * src.channels());
    for band in &bands {
        data.extend_from_slice(&warp_band(src, transform, w, band, method)?);
    }
    Image::new(w, h, src.channels(), data)
}

/// Like [`warp_image_chunked`] but streams bands into a strip TIFF, so only
/// one band of output is held in memory.
pub fn warp_to_tiff<S: RasterSource>(
    src: &S,
    transform: &dyn PointMap,
    out_size: (usize, usize),
    chunk_budget_px: usize,
    method: Interpolation,
    depth: BitDepth,
    path: impl AsRef<std::path::Path>,
) -> Result<()> {
    let (w, h) = out_size;
    if w == 0 || h == 0 {
        return Err(Error::EmptyImage);
    }
    let bands = plan_chunks(out_size, chunk_budget_px);
    let band_h = bands[0][0].3;
    let mut next = bands.iter();
    write_tiff_streaming(path, w, h, src.channels(), depth, band_h, |_, _| {
        let band = next.next().expect("one strip per band");
        warp_band(src, transform, w, band, method)
    })
}
