use std::collections::{HashMap, VecDeque};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use image::{DynamicImage, ImageReader};
use tiff::decoder::{Decoder, DecodingResult, Limits};
use tiff::encoder::{colortype, TiffEncoder};
use tiff::tags::Tag;
use tiff::ColorType;

use super::{clamp_unit, BitDepth, Image, Normalize, Plane};
use crate::error::{Error, Result};

/// Default working-set budget for streamed rasters (2 GiB).
pub const DEFAULT_MEMORY_BUDGET: usize = 2 << 30;

/// A raster that can deliver arbitrary windows without holding the whole
/// image in memory.
pub trait RasterSource: Sync {
    fn width(&self) -> usize;
    fn height(&self) -> usize;
    fn channels(&self) -> usize;
    /// Reads `[x0, x0 + w) x [y0, y0 + h)`; the window must lie inside the raster.
    fn read_window(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Image>;
}

impl RasterSource for Image {
    fn width(&self) -> usize {
        self.width
    }

    fn height(&self) -> usize {
        self.height
    }

    fn channels(&self) -> usize {
        self.channels
    }

    fn read_window(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Image> {
        if x0 + w > self.width || y0 + h > self.height || w == 0 || h == 0 {
            return Err(Error::invalid(format!(
                "window {x0},{y0} {w}x{h} outside {}x{}",
                self.width, self.height
            )));
        }
        Ok(self.crop_clamped(x0 as i64, y0 as i64, w, h))
    }
}

fn is_tiff(path: &Path) -> Result<bool> {
    let mut magic = [0u8; 4];
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let n = f.read(&mut magic).map_err(|e| Error::io(path, e))?;
    Ok(n == 4
        && (&magic == b"II*\0" || &magic == b"MM\0*" || &magic[..2] == b"II" && magic[2] == 43))
}

/// Width and height without decoding the pixels.
pub fn image_dimensions(path: impl AsRef<Path>) -> Result<(usize, usize)> {
    let path = path.as_ref();
    if is_tiff(path)? {
        let mut dec = open_tiff(path)?;
        let (w, h) = dec.dimensions().map_err(|e| tiff_err(path, e))?;
        return Ok((w as usize, h as usize));
    }
    let (w, h) = image::image_dimensions(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok((w as usize, h as usize))
}

/// Loads a PNG or TIFF raster (8/16-bit gray, 8/16-bit RGB) as an [`Image`]
/// with intensities in `[0, 1]`.
pub fn load_image(path: impl AsRef<Path>, normalize: Normalize) -> Result<Image> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
        ));
    }
    let (width, height, channels, depth, raw) = if is_tiff(path)? {
        decode_tiff(path)?
    } else {
        decode_with_image_crate(path)?
    };
    if width == 0 || height == 0 {
        return Err(Error::EmptyImage);
    }
    Ok(normalize_raw(
        width, height, channels, depth, raw, normalize,
    ))
}

fn normalize_raw(
    width: usize,
    height: usize,
    channels: usize,
    depth: BitDepth,
    raw: Vec<f32>,
    normalize: Normalize,
) -> Image {
    let data = match normalize {
        Normalize::None => {
            let m = depth.max_value();
            raw.into_iter().map(|v| clamp_unit(v / m)).collect()
        }
        Normalize::MinMax => {
            let lo = raw.iter().copied().fold(f32::INFINITY, f32::min);
            let hi = raw.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            min_max(raw, lo, hi)
        }
    };
    Image::from_raw_unchecked(width, height, channels, depth, data)
}

fn min_max(raw: Vec<f32>, lo: f32, hi: f32) -> Vec<f32> {
    if hi > lo {
        let range = (hi - lo) as f64;
        raw.into_iter()
            .map(|v| clamp_unit(((v - lo) as f64 / range) as f32))
            .collect()
    } else {
        vec![0.0; raw.len()]
    }
}

type Raw = (usize, usize, usize, BitDepth, Vec<f32>);

fn decode_with_image_crate(path: &Path) -> Result<Raw> {
    let decode_err = |message: String| Error::Decode {
        path: path.to_path_buf(),
        message,
    };
    let img = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| decode_err(e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let out = match img {
        DynamicImage::ImageLuma8(b) => (w, h, 1, BitDepth::Eight, to_f32(b.into_raw())),
        DynamicImage::ImageLuma16(b) => (w, h, 1, BitDepth::Sixteen, to_f32(b.into_raw())),
        DynamicImage::ImageRgb8(b) => (w, h, 3, BitDepth::Eight, to_f32(b.into_raw())),
        DynamicImage::ImageRgb16(b) => (w, h, 3, BitDepth::Sixteen, to_f32(b.into_raw())),
        DynamicImage::ImageLumaA8(_) | DynamicImage::ImageRgba8(_) => {
            return Err(Error::UnsupportedLayout("alpha channel".into()))
        }
        DynamicImage::ImageLumaA16(_) | DynamicImage::ImageRgba16(_) => {
            return Err(Error::UnsupportedLayout("alpha channel".into()))
        }
        _ => return Err(Error::UnsupportedBitDepth(32)),
    };
    Ok(out)
}

fn to_f32<T: Copy + Into<f32>>(v: Vec<T>) -> Vec<f32> {
    v.into_iter().map(Into::into).collect()
}

fn tiff_layout(path: &Path, ct: ColorType) -> Result<(usize, BitDepth)> {
    let (channels, bits) = match ct {
        ColorType::Gray(b) => (1, b),
        ColorType::RGB(b) => (3, b),
        other => {
            return Err(Error::Decode {
                path: path.to_path_buf(),
                message: format!("unsupported TIFF color type {other:?}"),
            })
        }
    };
    let depth = match bits {
        8 => BitDepth::Eight,
        16 => BitDepth::Sixteen,
        b => return Err(Error::UnsupportedBitDepth(b as u32)),
    };
    Ok((channels, depth))
}

fn tiff_err(path: &Path, e: tiff::TiffError) -> Error {
    Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn decoding_to_f32(path: &Path, r: DecodingResult) -> Result<Vec<f32>> {
    match r {
        DecodingResult::U8(v) => Ok(to_f32(v)),
        DecodingResult::U16(v) => Ok(to_f32(v)),
        _ => Err(Error::Decode {
            path: path.to_path_buf(),
            message: "unsupported TIFF sample format".into(),
        }),
    }
}

fn open_tiff(path: &Path) -> Result<Decoder<BufReader<File>>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    Decoder::new(BufReader::new(f))
        .map(|d| d.with_limits(Limits::unlimited()))
        .map_err(|e| tiff_err(path, e))
}

fn decode_tiff(path: &Path) -> Result<Raw> {
    let mut dec = open_tiff(path)?;
    let (w, h) = dec.dimensions().map_err(|e| tiff_err(path, e))?;
    let ct = dec.colortype().map_err(|e| tiff_err(path, e))?;
    let (channels, depth) = tiff_layout(path, ct)?;
    let data = decoding_to_f32(path, dec.read_image().map_err(|e| tiff_err(path, e))?)?;
    Ok((w as usize, h as usize, channels, depth, data))
}

/// Strip-organized TIFF opened for windowed reads.
///
/// Decoded strips are cached up to a byte budget and evicted oldest-first.
/// With [`Normalize::MinMax`] the constructor makes one streaming pass over
/// all strips to find the global range.
pub struct TiffStripSource {
    path: PathBuf,
    width: usize,
    height: usize,
    channels: usize,
    depth: BitDepth,
    rows_per_strip: usize,
    range: (f32, f32),
    budget: usize,
    state: Mutex<StripState>,
}

struct StripState {
    decoder: Decoder<BufReader<File>>,
    cache: HashMap<u32, std::sync::Arc<Vec<f32>>>,
    order: VecDeque<u32>,
    cached_bytes: usize,
}

impl TiffStripSource {
    pub fn open(path: impl AsRef<Path>, normalize: Normalize, budget: usize) -> Result<Self> {
        let path = path.as_ref();
        let mut decoder = open_tiff(path)?;
        let (w, h) = decoder.dimensions().map_err(|e| tiff_err(path, e))?;
        if w == 0 || h == 0 {
            return Err(Error::EmptyImage);
        }
        let ct = decoder.colortype().map_err(|e| tiff_err(path, e))?;
        let (channels, depth) = tiff_layout(path, ct)?;
        if decoder.get_chunk_type() != tiff::decoder::ChunkType::Strip {
            return Err(Error::UnsupportedLayout(
                "tiled TIFF; strips required".into(),
            ));
        }
        let rows_per_strip = decoder
            .find_tag_unsigned::<u32>(Tag::RowsPerStrip)
            .map_err(|e| tiff_err(path, e))?
            .unwrap_or(h)
            .min(h) as usize;
        let mut src = Self {
            path: path.to_path_buf(),
            width: w as usize,
            height: h as usize,
            channels,
            depth,
            rows_per_strip,
            range: (0.0, depth.max_value()),
            budget,
            state: Mutex::new(StripState {
                decoder,
                cache: HashMap::new(),
                order: VecDeque::new(),
                cached_bytes: 0,
            }),
        };
        if normalize == Normalize::MinMax {
            let mut lo = f32::INFINITY;
            let mut hi = f32::NEG_INFINITY;
            let strips = src.height.div_ceil(src.rows_per_strip) as u32;
            let state = src.state.get_mut().expect("fresh mutex");
            for s in 0..strips {
                let data = decoding_to_f32(
                    &src.path,
                    state
                        .decoder
                        .read_chunk(s)
                        .map_err(|e| tiff_err(&src.path, e))?,
                )?;
                for v in data {
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
            src.range = (lo, hi);
        }
        Ok(src)
    }

    pub fn bit_depth(&self) -> BitDepth {
        self.depth
    }

    fn strip(&self, state: &mut StripState, index: u32) -> Result<std::sync::Arc<Vec<f32>>> {
        if let Some(s) = state.cache.get(&index) {
            return Ok(s.clone());
        }
        let data = decoding_to_f32(
            &self.path,
            state
                .decoder
                .read_chunk(index)
                .map_err(|e| tiff_err(&self.path, e))?,
        )?;
        let bytes = data.len() * 4;
        let data = std::sync::Arc::new(data);
        while state.cached_bytes + bytes > self.budget {
            let Some(old) = state.order.pop_front() else {
                break;
            };
            if let Some(d) = state.cache.remove(&old) {
                state.cached_bytes -= d.len() * 4;
            }
        }
        if bytes <= self.budget {
            state.cache.insert(index, data.clone());
            state.order.push_back(index);
            state.cached_bytes += bytes;
        }
        Ok(data)
    }

    fn scale(&self, v: f32) -> f32 {
        let (lo, hi) = self.range;
        if hi > lo {
            clamp_unit(((v - lo) as f64 / (hi - lo) as f64) as f32)
        } else {
            0.0
        }
    }
}

impl RasterSource for TiffStripSource {
    fn width(&self) -> usize {
        self.width
    }

    fn height(&self) -> usize {
        self.height
    }

    fn channels(&self) -> usize {
        self.channels
    }

    fn read_window(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Image> {
        if x0 + w > self.width || y0 + h > self.height || w == 0 || h == 0 {
            return Err(Error::invalid(format!(
                "window {x0},{y0} {w}x{h} outside {}x{}",
                self.width, self.height
            )));
        }
        let ch = self.channels;
        let mut out = Vec::with_capacity(w * h * ch);
        let mut state = self.state.lock().expect("strip reader poisoned");
        let mut y = y0;
        while y < y0 + h {
            let s = (y / self.rows_per_strip) as u32;
            let strip = self.strip(&mut state, s)?;
            let strip_y0 = s as usize * self.rows_per_strip;
            let strip_end = (strip_y0 + self.rows_per_strip)
                .min(self.height)
                .min(y0 + h);
            for row in y..strip_end {
                let base = ((row - strip_y0) * self.width + x0) * ch;
                out.extend(strip[base..base + w * ch].iter().map(|&v| self.scale(v)));
            }
            y = strip_end;
        }
        Ok(Image::from_raw_unchecked(w, h, ch, self.depth, out))
    }
}

fn to_u8(v: f32) -> u8 {
    (clamp_unit(v) * 255.0).round() as u8
}

/// Writes an 8-bit PNG.
pub fn save_png(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = image.data().iter().map(|&v| to_u8(v)).collect();
    let color = if image.channels() == 3 {
        image::ExtendedColorType::Rgb8
    } else {
        image::ExtendedColorType::L8
    };
    image::save_buffer_with_format(
        path,
        &bytes,
        image.width() as u32,
        image.height() as u32,
        color,
        image::ImageFormat::Png,
    )
    .map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Writes a scalar plane as an 8-bit PNG after min-max normalization.
pub fn save_plane_png(plane: &Plane, path: impl AsRef<Path>) -> Result<()> {
    save_png(&plane.normalized().to_image(), path)
}

/// Streams a strip-organized TIFF. `produce(y0, rows)` must return the
/// interleaved `[0, 1]` samples for rows `y0..y0 + rows`.
pub fn write_tiff_streaming(
    path: impl AsRef<Path>,
    width: usize,
    height: usize,
    channels: usize,
    depth: BitDepth,
    rows_per_strip: usize,
    mut produce: impl FnMut(usize, usize) -> Result<Vec<f32>>,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = TiffEncoder::new(BufWriter::new(file)).map_err(|e| tiff_err(path, e))?;
    let rows_per_strip = rows_per_strip.clamp(1, height);

    macro_rules! stream {
        ($ct:ty, $conv:expr) => {{
            let mut img = enc
                .new_image::<$ct>(width as u32, height as u32)
                .map_err(|e| tiff_err(path, e))?;
            img.rows_per_strip(rows_per_strip as u32)
                .map_err(|e| tiff_err(path, e))?;
            let mut y = 0;
            while y < height {
                let rows = rows_per_strip.min(height - y);
                let samples = produce(y, rows)?;
                if samples.len() != rows * width * channels {
                    return Err(Error::invalid("strip producer returned wrong length"));
                }
                let buf: Vec<_> = samples.iter().map(|&v| $conv(v)).collect();
                img.write_strip(&buf).map_err(|e| tiff_err(path, e))?;
                y += rows;
            }
            img.finish().map_err(|e| tiff_err(path, e))?;
        }};
    }
    let to_u16 = |v: f32| (clamp_unit(v) * 65535.0).round() as u16;
    match (channels, depth) {
        (1, BitDepth::Eight) => stream!(colortype::Gray8, to_u8),
        (1, BitDepth::Sixteen) => stream!(colortype::Gray16, to_u16),
        (3, BitDepth::Eight) => stream!(colortype::RGB8, to_u8),
        (3, BitDepth::Sixteen) => stream!(colortype::RGB16, to_u16),
        _ => return Err(Error::UnsupportedLayout(format!("{channels} channels"))),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_gray8(path: &Path, w: u32, h: u32, px: &[u8]) {
        image::save_buffer(path, px, w, h, image::ExtendedColorType::L8).unwrap();
    }

    #[test]
    fn png_minmax_and_plain() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        write_gray8(&p, 3, 1, &[0, 128, 255]);
        let img = load_image(&p, Normalize::MinMax).unwrap();
        let d = img.data();
        assert_eq!(d[0], 0.0);
        assert!((d[1] - 0.502).abs() < 1e-3);
        assert_eq!(d[2], 1.0);

        let c = dir.path().join("c.png");
        write_gray8(&c, 2, 2, &[77; 4]);
        let img = load_image(&c, Normalize::MinMax).unwrap();
        assert!(img.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sixteen_bit_tiff_without_normalization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.tif");
        let file = File::create(&p).unwrap();
        let mut enc = TiffEncoder::new(file).unwrap();
        enc.write_image::<colortype::Gray16>(2, 1, &[0u16, 65535])
            .unwrap();
        let img = load_image(&p, Normalize::None).unwrap();
        assert_eq!(img.data(), &[0.0, 1.0]);
        assert_eq!(img.bit_depth(), BitDepth::Sixteen);
    }

    #[test]
    fn missing_file_names_path() {
        let err = load_image("/nonexistent/zz.png", Normalize::None).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/zz.png"));
    }

    #[test]
    fn strip_source_windows_match_full_load() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.tif");
        let (w, h) = (37usize, 53usize);
        let img = Image::from_fn(w, h, |x, y| ((x * 13 + y * 7) % 97) as f32 / 96.0);
        write_tiff_streaming(&p, w, h, 1, BitDepth::Sixteen, 5, |y0, rows| {
            Ok(img.data()[y0 * w..(y0 + rows) * w].to_vec())
        })
        .unwrap();
        let full = load_image(&p, Normalize::MinMax).unwrap();
        // tiny budget forces eviction
        let src = TiffStripSource::open(&p, Normalize::MinMax, 4 * w * 6).unwrap();
        for (x0, y0, ww, hh) in [(0, 0, w, h), (3, 11, 20, 17), (36, 52, 1, 1)] {
            let win = src.read_window(x0, y0, ww, hh).unwrap();
            assert_eq!(win, full.crop_clamped(x0 as i64, y0 as i64, ww, hh));
        }
        assert!(src.read_window(30, 0, 10, 1).is_err());
    }
}
