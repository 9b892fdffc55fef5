//! `CRQR` result archive: little-endian, versioned, self-describing.
//!
//! ```text
//! magic "CRQR" | version u32
//! homography 9 x f64 (row-major)
//! tps: n u64 | lambda f64 | affine 6 x f64 | n x (cx, cy, wx, wy) f64
//! kept: m u64 | m x correspondence
//! rejected: k u64 | k x correspondence
//! stats: len u64 | JSON bytes
//! correspondence = src (x f64, y f64, score f32) | dst (same) | confidence f32
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{RegistrationResult, StageStats};
use crate::detect::Keypoint;
use crate::error::{Error, Result};
use crate::geometry::{Homography, Point, TpsModel};
use crate::matching::Correspondence;

const MAGIC: &[u8; 4] = b"CRQR";
const VERSION: u32 = 1;

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_corr(out: &mut Vec<u8>, c: &Correspondence) {
    for k in [&c.src, &c.dst] {
        put_f64(out, k.x);
        put_f64(out, k.y);
        out.extend_from_slice(&k.score.to_le_bytes());
    }
    out.extend_from_slice(&c.confidence.to_le_bytes());
}

pub fn write_result(mut w: impl Write, result: &RegistrationResult) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in result.global_h.to_row_array() {
        put_f64(&mut out, v);
    }
    let tps = &result.tps;
    out.extend_from_slice(&(tps.control_points().len() as u64).to_le_bytes());
    put_f64(&mut out, tps.regularization());
    for row in tps.affine() {
        for &v in row {
            put_f64(&mut out, v);
        }
    }
    for (c, w) in tps.control_points().iter().zip(tps.kernel_weights()) {
        for v in [c.x, c.y, w[0], w[1]] {
            put_f64(&mut out, v);
        }
    }
    for list in [&result.correspondences, &result.rejected] {
        out.extend_from_slice(&(list.len() as u64).to_le_bytes());
        for c in list.iter() {
            put_corr(&mut out, c);
        }
    }
    let json = serde_json::to_vec(&result.stats).map_err(|e| Error::invalid(e.to_string()))?;
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    w.write_all(&out)?;
    Ok(())
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return Err(Error::Parse {
                offset: self.pos as u64,
                message: format!("truncated {what}"),
            });
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn count(&mut self, record: usize, what: &str) -> Result<usize> {
        let at = self.pos;
        let n = u64::from_le_bytes(self.take(8, what)?.try_into().unwrap());
        let remaining = (self.data.len() - self.pos) as u64;
        if n.checked_mul(record as u64).is_none_or(|b| b > remaining) {
            return Err(Error::Parse {
                offset: at as u64,
                message: format!("{what} count {n} exceeds the remaining data"),
            });
        }
        Ok(n as usize)
    }

    fn keypoint(&mut self) -> Result<Keypoint> {
        let x = self.f64("keypoint")?;
        let y = self.f64("keypoint")?;
        let s = self.f32("keypoint")?;
        Ok(Keypoint::new(x, y, s))
    }

    fn corrs(&mut self, what: &str) -> Result<Vec<Correspondence>> {
        let n = self.count(44, what)?;
        (0..n)
            .map(|_| {
                let src = self.keypoint()?;
                let dst = self.keypoint()?;
                let confidence = self.f32("confidence")?;
                Ok(Correspondence {
                    src,
                    dst,
                    confidence,
                })
            })
            .collect()
    }
}

pub fn read_result(mut r: impl Read) -> Result<RegistrationResult> {
    let mut data = Vec::new();
    r.read_to_end(&mut data)?;
    let mut c = Cursor {
        data: &data,
        pos: 0,
    };
    if c.take(4, "magic")? != MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: "not a CRQR archive".into(),
        });
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(Error::Parse {
            offset: 4,
            message: format!("unsupported archive version {version}"),
        });
    }
    let mut h = [0.0; 9];
    for v in &mut h {
        *v = c.f64("homography")?;
    }
    let n = c.count(32, "control point")?;
    let lambda = c.f64("regularization")?;
    let mut affine = [[0.0; 3]; 2];
    for row in &mut affine {
        for v in row.iter_mut() {
            *v = c.f64("affine")?;
        }
    }
    let mut cps = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for _ in 0..n {
        cps.push(Point::new(c.f64("control point")?, c.f64("control point")?));
        weights.push([c.f64("weight")?, c.f64("weight")?]);
    }
    let correspondences = c.corrs("correspondence")?;
    let rejected = c.corrs("rejected correspondence")?;
    let len = c.count(1, "stats")?;
    let at = c.pos;
    let stats: StageStats =
        serde_json::from_slice(c.take(len, "stats")?).map_err(|e| Error::Parse {
            offset: at as u64,
            message: e.to_string(),
        })?;
    if c.pos != data.len() {
        return Err(Error::Parse {
            offset: c.pos as u64,
            message: "trailing bytes".into(),
        });
    }
    Ok(RegistrationResult {
        global_h: Homography::from_row_slice(&h),
        tps: TpsModel::from_parts(cps, affine, weights, lambda)?,
        correspondences,
        rejected,
        stats,
    })
}

pub fn write_result_file(path: impl AsRef<Path>, result: &RegistrationResult) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    write_result(&mut w, result)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_result_file(path: impl AsRef<Path>) -> Result<RegistrationResult> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_result(std::io::BufReader::new(f))
}
