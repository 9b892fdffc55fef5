//! Image containers, resampling and patch extraction.
//!
//! Pixel `(i, j)` has its center at the continuous coordinate `(i, j)`.
//! Every sampler uses clamp-to-edge borders, and all bicubic interpolation
//! uses the Catmull-Rom kernel (`a = -0.5`).

mod io;

pub use io::{
    image_dimensions, load_image, save_plane_png, save_png, write_tiff_streaming, RasterSource,
    TiffStripSource, DEFAULT_MEMORY_BUDGET,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bit depth of the raster an image was decoded from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn max_value(self) -> f32 {
        match self {
            BitDepth::Eight => 255.0,
            BitDepth::Sixteen => 65535.0,
        }
    }
}

/// Intensity normalization applied on load.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalize {
    /// Map the global minimum to 0 and the maximum to 1.
    MinMax,
    /// Divide by the maximum representable value of the bit depth.
    #[default]
    None,
}

/// Interpolation kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Bilinear,
    #[default]
    Bicubic,
}

/// A multi-channel raster with intensities in `[0, 1]`, stored row-major and
/// channel-interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    bit_depth: BitDepth,
    data: Vec<f32>,
}

impl Image {
    /// Builds an image from an interleaved buffer. Values outside `[0, 1]` or
    /// non-finite values are rejected.
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyImage);
        }
        if channels != 1 && channels != 3 {
            return Err(Error::UnsupportedLayout(format!("{channels} channels")));
        }
        if data.len() != width * height * channels {
            return Err(Error::invalid(format!(
                "buffer length {} does not match {width}x{height}x{channels}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("intensity {v} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            channels,
            bit_depth: BitDepth::Eight,
            data,
        })
    }

    /// Single-channel image from a generator; values are clamped into `[0, 1]`.
    ///
    /// Panics if either dimension is zero.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        assert!(width > 0 && height > 0, "zero-sized image");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(clamp_unit(f(x, y)));
            }
        }
        Self {
            width,
            height,
            channels: 1,
            bit_depth: BitDepth::Eight,
            data,
        }
    }

    /// Constant single-channel image.
    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self::from_fn(width, height, |_, _| value)
    }

    pub(crate) fn from_raw_unchecked(
        width: usize,
        height: usize,
        channels: usize,
        bit_depth: BitDepth,
        data: Vec<f32>,
    ) -> Self {
        debug_assert_eq!(data.len(), width * height * channels);
        Self {
            width,
            height,
            channels,
            bit_depth,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn bit_depth(&self) -> BitDepth {
        self.bit_depth
    }

    pub fn with_bit_depth(mut self, bit_depth: BitDepth) -> Self {
        self.bit_depth = bit_depth;
        self
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Luminance (ITU-R BT.601 weights) as a scalar plane.
    pub fn to_gray(&self) -> Plane {
        if self.channels == 1 {
            return Plane::new(self.width, self.height, self.data.clone());
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect();
        Plane::new(self.width, self.height, data)
    }

    /// Inverts intensities (`v -> 1 - v`).
    pub fn inverted(&self) -> Image {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v = 1.0 - *v);
        out
    }

    /// Copies the window `[x0, x0 + w) x [y0, y0 + h)`, replicating edge
    /// pixels for any part outside the image.
    pub fn crop_clamped(&self, x0: i64, y0: i64, w: usize, h: usize) -> Image {
        let mut data = Vec::with_capacity(w * h * self.channels);
        for j in 0..h as i64 {
            let sy = clamp_index(y0 + j, self.height);
            for i in 0..w as i64 {
                let sx = clamp_index(x0 + i, self.width);
                let base = (sy * self.width + sx) * self.channels;
                data.extend_from_slice(&self.data[base..base + self.channels]);
            }
        }
        Image::from_raw_unchecked(w, h, self.channels, self.bit_depth, data)
    }

    /// Samples channel `c` at a sub-pixel location.
    #[inline]
    pub fn sample_channel(&self, x: f64, y: f64, c: usize, method: Interpolation) -> f64 {
        sample_interleaved(
            &self.data,
            self.width,
            self.height,
            self.channels,
            c,
            x,
            y,
            method,
        )
    }
}

/// A single-channel real-valued field without a range invariant (score maps,
/// filter responses, feature channels).
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), width * height, "plane buffer size mismatch");
        Self {
            width,
            height,
            data,
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::new(width, height, vec![0.0; width * height])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    /// Value at integer coordinates with clamp-to-edge.
    #[inline]
    pub fn get_clamped(&self, x: i64, y: i64) -> f32 {
        self.data[clamp_index(y, self.height) * self.width + clamp_index(x, self.width)]
    }

    #[inline]
    pub fn sample(&self, x: f64, y: f64, method: Interpolation) -> f64 {
        sample_interleaved(&self.data, self.width, self.height, 1, 0, x, y, method)
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn min(&self) -> f32 {
        self.data.iter().copied().fold(f32::INFINITY, f32::min)
    }

    /// Min-max normalizes into `[0, 1]`; constant planes become all zeros.
    pub fn normalized(&self) -> Plane {
        let (lo, hi) = (self.min(), self.max());
        let range = hi - lo;
        let data = if range > 0.0 && range.is_finite() {
            self.data.iter().map(|v| (v - lo) / range).collect()
        } else {
            vec![0.0; self.data.len()]
        };
        Plane::new(self.width, self.height, data)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Plane {
        Plane::new(
            self.width,
            self.height,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    /// Crops with clamp-to-edge replication.
    pub fn crop_clamped(&self, x0: i64, y0: i64, w: usize, h: usize) -> Plane {
        Plane::from_fn(w, h, |i, j| self.get_clamped(x0 + i as i64, y0 + j as i64))
    }

    /// Converts to a single-channel image, clamping into `[0, 1]`.
    pub fn to_image(&self) -> Image {
        Image::from_fn(self.width, self.height, |x, y| self.get(x, y))
    }
}

#[inline]
pub(crate) fn clamp_unit(v: f32) -> f32 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

#[inline]
pub(crate) fn clamp_index(i: i64, n: usize) -> usize {
    i.clamp(0, n as i64 - 1) as usize
}

/// Catmull-Rom cubic convolution kernel (`a = -0.5`).
#[inline]
pub(crate) fn cubic_kernel(d: f64) -> f64 {
    const A: f64 = -0.5;
    let d = d.abs();
    if d <= 1.0 {
        ((A + 2.0) * d - (A + 3.0)) * d * d + 1.0
    } else if d < 2.0 {
        ((A * d - 5.0 * A) * d + 8.0 * A) * d - 4.0 * A
    } else {
        0.0
    }
}

#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn sample_interleaved(
    data: &[f32],
    w: usize,
    h: usize,
    ch: usize,
    c: usize,
    x: f64,
    y: f64,
    method: Interpolation,
) -> f64 {
    let px = |i: i64, j: i64| -> f64 {
        data[(clamp_index(j, h) * w + clamp_index(i, w)) * ch + c] as f64
    };
    let x = if x.is_finite() {
        x.clamp(-2.0, w as f64 + 1.0)
    } else {
        0.0
    };
    let y = if y.is_finite() {
        y.clamp(-2.0, h as f64 + 1.0)
    } else {
        0.0
    };
    let x0 = x.floor();
    let y0 = y.floor();
    let tx = x - x0;
    let ty = y - y0;
    let (xi, yi) = (x0 as i64, y0 as i64);
    match method {
        Interpolation::Bilinear => {
            let top = px(xi, yi) * (1.0 - tx) + px(xi + 1, yi) * tx;
            if ty == 0.0 {
                return top;
            }
            let bottom = px(xi, yi + 1) * (1.0 - tx) + px(xi + 1, yi + 1) * tx;
            top * (1.0 - ty) + bottom * ty
        }
        Interpolation::Bicubic => {
            if tx == 0.0 && ty == 0.0 {
                return px(xi, yi);
            }
            let wx = [
                cubic_kernel(1.0 + tx),
                cubic_kernel(tx),
                cubic_kernel(1.0 - tx),
                cubic_kernel(2.0 - tx),
            ];
            let wy = [
                cubic_kernel(1.0 + ty),
                cubic_kernel(ty),
                cubic_kernel(1.0 - ty),
                cubic_kernel(2.0 - ty),
            ];
            let mut acc = 0.0;
            for (dj, wyj) in wy.iter().enumerate() {
                if *wyj == 0.0 {
                    continue;
                }
                let mut row = 0.0;
                for (di, wxi) in wx.iter().enumerate() {
                    if *wxi != 0.0 {
                        row += wxi * px(xi + di as i64 - 1, yi + dj as i64 - 1);
                    }
                }
                acc += wyj * row;
            }
            acc
        }
    }
}

/// Samples every channel of `image` at each point (clamp-to-edge outside).
pub fn sample(image: &Image, points: &[(f64, f64)], method: Interpolation) -> Vec<Vec<f32>> {
    points
        .iter()
        .map(|&(x, y)| {
            (0..image.channels)
                .map(|c| image.sample_channel(x, y, c, method) as f32)
                .collect()
        })
        .collect()
}

/// Output dimension for a rescale factor.
pub fn scaled_dim(dim: usize, factor: f64) -> usize {
    (dim as f64 * factor).round().max(0.0) as usize
}

/// One output coordinate's contributing source indices and weights.
#[derive(Clone, Debug)]
struct Taps {
    first: i64,
    weights: Vec<f64>,
}

fn build_taps(out_range: std::ops::Range<usize>, factor: f64, method: Interpolation) -> Vec<Taps> {
    let (support, stretch) = {
        let base = match method {
            Interpolation::Bilinear => 1.0,
            Interpolation::Bicubic => 2.0,
        };
        if factor < 1.0 {
            (base / factor, factor)
        } else {
            (base, 1.0)
        }
    };
    let kernel = |d: f64| match method {
        Interpolation::Bilinear => (1.0 - d.abs()).max(0.0),
        Interpolation::Bicubic => cubic_kernel(d),
    };
    out_range
        .map(|o| {
            let center = (o as f64 + 0.5) / factor - 0.5;
            let first = (center - support).floor() as i64 + 1;
            let last = (center + support).ceil() as i64 - 1;
            let mut weights: Vec<f64> = (first..=last)
                .map(|i| kernel((i as f64 - center) * stretch))
                .collect();
            let sum: f64 = weights.iter().sum();
            if sum != 0.0 && sum != 1.0 {
                weights.iter_mut().for_each(|w| *w /= sum);
            }
            Taps { first, weights }
        })
        .collect()
}

/// Resamples by `factor` (output dimensions `round(dim * factor)`).
///
/// Downscaling widens the kernel by `1 / factor` so the result is
/// anti-aliased. Outputs are clipped to `[0, 1]`.
pub fn rescale(image: &Image, factor: f64, method: Interpolation) -> Result<Image> {
    let (w, h) = rescaled_dims(image, factor)?;
    rescale_window(image, factor, method, (0, 0, w, h))
}

fn rescaled_dims(image: &Image, factor: f64) -> Result<(usize, usize)> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::invalid(format!(
            "rescale factor {factor} must be positive"
        )));
    }
    let w = scaled_dim(image.width, factor);
    let h = scaled_dim(image.height, factor);
    if w == 0 || h == 0 {
        return Err(Error::invalid(format!(
            "rescale factor {factor} gives an empty {w}x{h} image"
        )));
    }
    Ok((w, h))
}

/// Computes the window `(x0, y0, w, h)` of `rescale(image, factor)` without
/// producing the rest of the output. Values are bit-identical to the full
/// rescale.
pub fn rescale_window(
    image: &Image,
    factor: f64,
    method: Interpolation,
    window: (usize, usize, usize, usize),
) -> Result<Image> {
    rescaled_dims(image, factor)?;
    let (ox, oy, ow, oh) = window;
    if ow == 0 || oh == 0 {
        return Err(Error::EmptyImage);
    }
    if factor == 1.0 && ox + ow <= image.width && oy + oh <= image.height {
        return Ok(image.crop_clamped(ox as i64, oy as i64, ow, oh));
    }
    let ch = image.channels;
    let xtaps = build_taps(ox..ox + ow, factor, method);
    let ytaps = build_taps(oy..oy + oh, factor, method);
    let rmin = ytaps.iter().map(|t| t.first).min().unwrap();
    let rmax = ytaps
        .iter()
        .map(|t| t.first + t.weights.len() as i64)
        .max()
        .unwrap();
    let nrows = (rmax - rmin) as usize;

    // horizontal pass over the needed source rows
    let mut tmp = vec![0.0f64; nrows * ow * ch];
    for r in 0..nrows {
        let sy = clamp_index(rmin + r as i64, image.height);
        let src_row = &image.data[sy * image.width * ch..(sy + 1) * image.width * ch];
        let dst_row = &mut tmp[r * ow * ch..(r + 1) * ow * ch];
        for (o, taps) in xtaps.iter().enumerate() {
            for c in 0..ch {
                let mut acc = 0.0;
                for (k, w) in taps.weights.iter().enumerate() {
                    if *w != 0.0 {
                        let sx = clamp_index(taps.first + k as i64, image.width);
                        acc += w * src_row[sx * ch + c] as f64;
                    }
                }
                dst_row[o * ch + c] = acc;
            }
        }
    }

    let mut out = vec![0.0f64; ow * oh * ch];
    for (o, taps) in ytaps.iter().enumerate() {
        let dst_row = &mut out[o * ow * ch..(o + 1) * ow * ch];
        for (k, w) in taps.weights.iter().enumerate() {
            if *w == 0.0 {
                continue;
            }
            let r = (taps.first + k as i64 - rmin) as usize;
            let src_row = &tmp[r * ow * ch..(r + 1) * ow * ch];
            for (d, s) in dst_row.iter_mut().zip(src_row) {
                *d += *w * *s;
            }
        }
    }
    let out = out.into_iter().map(|v| clamp_unit(v as f32)).collect();
    Ok(Image::from_raw_unchecked(ow, oh, ch, image.bit_depth, out))
}

/// How a patch is sampled around its center.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PatchMode {
    /// Pixel-aligned window around `round(center)`.
    #[default]
    Integer,
    /// Bilinear resampling at sub-pixel offsets from `center`.
    SubPixel,
}

/// Location and extent of a patch to extract.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PatchSpec {
    pub center: (f64, f64),
    pub size: usize,
    pub level: usize,
    pub mode: PatchMode,
}

impl PatchSpec {
    pub fn new(center: (f64, f64), size: usize) -> Self {
        Self {
            center,
            size,
            level: 0,
            mode: PatchMode::Integer,
        }
    }

    pub fn sub_pixel(mut self) -> Self {
        self.mode = PatchMode::SubPixel;
        self
    }
}

/// Extracts a `size x size` patch. The patch center sits at index `size / 2`
/// in both modes; borders replicate edge pixels.
pub fn extract_patch(image: &Image, spec: &PatchSpec) -> Result<Image> {
    if spec.size == 0 {
        return Err(Error::invalid("patch size must be positive"));
    }
    let half = (spec.size / 2) as i64;
    match spec.mode {
        PatchMode::Integer => {
            let cx = spec.center.0.round() as i64;
            let cy = spec.center.1.round() as i64;
            Ok(image.crop_clamped(cx - half, cy - half, spec.size, spec.size))
        }
        PatchMode::SubPixel => {
            let ch = image.channels;
            let mut data = Vec::with_capacity(spec.size * spec.size * ch);
            for j in 0..spec.size as i64 {
                let y = spec.center.1 + (j - half) as f64;
                for i in 0..spec.size as i64 {
                    let x = spec.center.0 + (i - half) as f64;
                    for c in 0..ch {
                        data.push(clamp_unit(
                            image.sample_channel(x, y, c, Interpolation::Bilinear) as f32,
                        ));
                    }
                }
            }
            Ok(Image::from_raw_unchecked(
                spec.size,
                spec.size,
                ch,
                image.bit_depth,
                data,
            ))
        }
    }
}

/// Normalized 1-D Gaussian kernel with radius `ceil(3 sigma)`.
pub(crate) fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian blur with clamp-to-edge borders.
pub fn gaussian_blur(plane: &Plane, sigma: f64) -> Plane {
    if sigma <= 0.0 {
        return plane.clone();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let (w, h) = (plane.width, plane.height);
    let mut tmp = vec![0.0f32; w * h];
    for y in 0..h {
        let row = &plane.data[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0f64;
            for (i, kv) in k.iter().enumerate() {
                acc += kv * row[clamp_index(x as i64 + i as i64 - r, w)] as f64;
            }
            tmp[y * w + x] = acc as f32;
        }
    }
    let mut out = vec![0.0f32; w * h];
    let mut acc = vec![0.0f64; w];
    for y in 0..h {
        acc.iter_mut().for_each(|a| *a = 0.0);
        for (i, kv) in k.iter().enumerate() {
            let sy = clamp_index(y as i64 + i as i64 - r, h);
            for (a, s) in acc.iter_mut().zip(&tmp[sy * w..(sy + 1) * w]) {
                *a += kv * *s as f64;
            }
        }
        for (d, a) in out[y * w..(y + 1) * w].iter_mut().zip(&acc) {
            *d = *a as f32;
        }
    }
    Plane::new(w, h, out)
}
