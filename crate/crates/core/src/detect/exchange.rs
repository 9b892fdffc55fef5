//! Little-endian binary exchange format for externally computed detections.
//!
//! ```text
//! "CRQD" u16 version u64 count u16 dim
//! count x { f64 x, f64 y, f32 score, f32[dim] descriptor }
//! zero or more sections until end of file:
//!   [u8; 4] tag ("SMAP" score map, "FVOL" feature volume)
//!   u32 origin_x, u32 origin_y, u32 width, u32 height,
//!   u16 channels, u16 downsample, f32[width * height * channels]
//! ```
//! Tile origins are in full-resolution pixels, tile sizes in stored pixels.

use std::io::Write;
use std::path::Path;

use super::{Descriptor, FeatureVolume, Keypoint};
use crate::error::{Error, Result};
use crate::imgcore::{rescale, Image, Interpolation, Plane};

pub const MAGIC: &[u8; 4] = b"CRQD";
pub const VERSION: u16 = 1;
const NORM_TOLERANCE: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TileKind {
    ScoreMap,
    FeatureVolume,
}

impl TileKind {
    fn tag(self) -> &'static [u8; 4] {
        match self {
            TileKind::ScoreMap => b"SMAP",
            TileKind::FeatureVolume => b"FVOL",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tile {
    pub kind: TileKind,
    pub origin: (u32, u32),
    pub width: u32,
    pub height: u32,
    pub channels: u16,
    pub downsample: u16,
    pub data: Vec<f32>,
}

impl Tile {
    /// A score-map tile at full resolution: tiles stored with `downsample > 1`
    /// are bicubically upscaled by that factor.
    pub fn score_plane(&self) -> Result<Plane> {
        if self.kind != TileKind::ScoreMap || self.channels != 1 {
            return Err(Error::invalid("tile is not a single-channel score map"));
        }
        let (w, h) = (self.width as usize, self.height as usize);
        if self.downsample <= 1 {
            return Ok(Plane::new(w, h, self.data.clone()));
        }
        let img = Image::new(
            w,
            h,
            1,
            self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        )?;
        let up = rescale(&img, self.downsample as f64, Interpolation::Bicubic)?;
        Ok(Plane::new(up.width(), up.height(), up.into_data()))
    }

    /// A feature tile as a volume (stored resolution), renormalized per pixel.
    pub fn feature_volume(&self) -> Result<FeatureVolume> {
        if self.kind != TileKind::FeatureVolume {
            return Err(Error::invalid("tile is not a feature volume"));
        }
        let c = self.channels as usize;
        let mut data = self.data.clone();
        for px in data.chunks_exact_mut(c) {
            let n = px.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
            if n < 1e-8 {
                px.iter_mut().for_each(|v| *v = 0.0);
            } else {
                px.iter_mut().for_each(|v| *v = (*v as f64 / n) as f32);
            }
        }
        Ok(FeatureVolume::new(
            self.width as usize,
            self.height as usize,
            c,
            data,
        ))
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Detections {
    pub keypoints: Vec<Keypoint>,
    pub descriptors: Vec<Descriptor>,
    pub dim: usize,
    pub tiles: Vec<Tile>,
    /// Descriptors that were not unit length in the file.
    pub renormalized: usize,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Parse {
                offset: self.pos as u64,
                message: format!(
                    "truncated {what}: need {n} bytes, {} left",
                    self.buf.len() - self.pos
                ),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let bytes = self.take(
            n.checked_mul(4)
                .ok_or_else(|| self.err("length overflow"))?,
            what,
        )?;
        Ok(bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }

    fn err(&self, message: &str) -> Error {
        Error::Parse {
            offset: self.pos as u64,
            message: message.to_string(),
        }
    }
}

pub fn parse_detections(bytes: &[u8]) -> Result<Detections> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: "bad magic, expected CRQD".into(),
        });
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::Parse {
            offset: 4,
            message: format!("unsupported version {version}"),
        });
    }
    let count = r.u64("keypoint count")?;
    let dim = r.u16("descriptor dim")? as usize;
    let record = 20 + 4 * dim as u64;
    if count.saturating_mul(record) > (bytes.len() - r.pos) as u64 {
        return Err(r.err(&format!(
            "truncated keypoint block: {count} records of {record} bytes"
        )));
    }
    let mut out = Detections {
        dim,
        ..Detections::default()
    };
    for _ in 0..count {
        let x = r.f64("keypoint x")?;
        let y = r.f64("keypoint y")?;
        let score = f32::from_le_bytes(r.take(4, "keypoint score")?.try_into().unwrap());
        if !(x.is_finite() && y.is_finite() && score.is_finite()) {
            return Err(r.err("non-finite keypoint record"));
        }
        let v = r.f32s(dim, "descriptor")?;
        let norm = v.iter().map(|a| (*a as f64).powi(2)).sum::<f64>().sqrt();
        let desc = if dim > 0 && (norm - 1.0).abs() > NORM_TOLERANCE {
            out.renormalized += 1;
            Descriptor::new(v)
        } else {
            Descriptor::from_unit(v)
        };
        out.keypoints
            .push(Keypoint::new(x, y, score.clamp(0.0, 1.0)));
        out.descriptors.push(desc);
    }
    while r.pos < bytes.len() {
        let at = r.pos as u64;
        let kind = match r.take(4, "section tag")? {
            b"SMAP" => TileKind::ScoreMap,
            b"FVOL" => TileKind::FeatureVolume,
            other => {
                return Err(Error::Parse {
                    offset: at,
                    message: format!("unknown section tag {:?}", String::from_utf8_lossy(other)),
                })
            }
        };
        let ox = r.u32("tile origin")?;
        let oy = r.u32("tile origin")?;
        let width = r.u32("tile width")?;
        let height = r.u32("tile height")?;
        let channels = r.u16("tile channels")?;
        let downsample = r.u16("tile downsample")?;
        if width == 0 || height == 0 || channels == 0 || downsample == 0 {
            return Err(Error::Parse {
                offset: at,
                message: "empty tile geometry".into(),
            });
        }
        let n = width as usize * height as usize * channels as usize;
        let data = r.f32s(n, "tile payload")?;
        out.tiles.push(Tile {
            kind,
            origin: (ox, oy),
            width,
            height,
            channels,
            downsample,
            data,
        });
    }
    if out.renormalized > 0 {
        log::warn!(
            "{} descriptors were not unit length and have been renormalized",
            out.renormalized
        );
    }
    Ok(out)
}

pub fn write_detections(mut w: impl Write, det: &Detections) -> Result<()> {
    let dim = u16::try_from(det.dim).map_err(|_| Error::invalid("descriptor dim exceeds u16"))?;
    if det.descriptors.len() != det.keypoints.len() {
        return Err(Error::invalid("keypoint and descriptor counts differ"));
    }
    let mut buf = Vec::with_capacity(16 + det.keypoints.len() * (20 + 4 * det.dim));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(det.keypoints.len() as u64).to_le_bytes());
    buf.extend_from_slice(&dim.to_le_bytes());
    for (k, d) in det.keypoints.iter().zip(&det.descriptors) {
        if d.dim() != det.dim {
            return Err(Error::invalid(format!(
                "descriptor dim {} != {}",
                d.dim(),
                det.dim
            )));
        }
        buf.extend_from_slice(&k.x.to_le_bytes());
        buf.extend_from_slice(&k.y.to_le_bytes());
        buf.extend_from_slice(&k.score.to_le_bytes());
        for v in d.as_slice() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    for t in &det.tiles {
        if t.data.len() != t.width as usize * t.height as usize * t.channels as usize {
            return Err(Error::invalid("tile payload size mismatch"));
        }
        buf.extend_from_slice(t.kind.tag());
        for v in [t.origin.0, t.origin.1, t.width, t.height] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&t.channels.to_le_bytes());
        buf.extend_from_slice(&t.downsample.to_le_bytes());
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn ingest_external_detections(path: impl AsRef<Path>) -> Result<Detections> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_detections(&bytes)
}

pub fn save_detections(path: impl AsRef<Path>, det: &Detections) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    write_detections(&mut w, det)?;
    w.flush()?;
    Ok(())
}
