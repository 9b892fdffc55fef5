//! Control-point accuracy metrics and false-color overlays.

mod overlay;

pub use overlay::{render_overlay, OverlayVector};

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point, PointMap};

/// Annotated `(src, dst)` pairs. Each side's coordinates are given at
/// resolution `scale_*` relative to that image's native resolution, e.g.
/// 0.5 for points clicked on a half-size rendition.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlPointSet {
    pub pairs: Vec<(Point, Point)>,
    pub scale_a: f64,
    pub scale_b: f64,
}

fn rescale_point(p: Point, f: f64) -> Point {
    Point::new((p.x + 0.5) * f - 0.5, (p.y + 0.5) * f - 0.5)
}

impl ControlPointSet {
    pub fn new(pairs: Vec<(Point, Point)>, scale_a: f64, scale_b: f64) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::invalid("control point set is empty"));
        }
        if pairs.iter().any(|(a, b)| {
            !(a.x.is_finite() && a.y.is_finite() && b.x.is_finite() && b.y.is_finite())
        }) {
            return Err(Error::invalid("control point coordinates must be finite"));
        }
        for s in [scale_a, scale_b] {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::invalid(format!(
                    "control point scale {s} must be positive"
                )));
            }
        }
        Ok(Self {
            pairs,
            scale_a,
            scale_b,
        })
    }

    /// The same points expressed at resolutions `scale_a` / `scale_b`.
    pub fn at_scales(&self, scale_a: f64, scale_b: f64) -> Result<Self> {
        let (fa, fb) = (scale_a / self.scale_a, scale_b / self.scale_b);
        let pairs = self
            .pairs
            .iter()
            .map(|&(a, b)| (rescale_point(a, fa), rescale_point(b, fb)))
            .collect();
        Self::new(pairs, scale_a, scale_b)
    }

    /// Parses `xA yA xB yB` lines with an optional `#scaleA=<f> scaleB=<f>`
    /// header (both default to 1). Other `#` lines are comments.
    pub fn parse(text: &str) -> Result<Self> {
        let (mut sa, mut sb) = (1.0, 1.0);
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            let err = |message: String| Error::ParseLine {
                line: i + 1,
                message,
            };
            if let Some(rest) = line.strip_prefix('#') {
                for tok in rest.split_whitespace() {
                    let Some((k, v)) = tok.split_once('=') else {
                        continue;
                    };
                    let v: f64 = match k {
                        "scaleA" | "scaleB" => {
                            v.parse().map_err(|_| err(format!("bad scale {v:?}")))?
                        }
                        _ => continue,
                    };
                    if k == "scaleA" {
                        sa = v;
                    } else {
                        sb = v;
                    }
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let v: Vec<f64> = line
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|_| err(format!("bad number {t:?}")))
                })
                .collect::<Result<_>>()?;
            if v.len() != 4 {
                return Err(err(format!("expected 4 values, got {}", v.len())));
            }
            pairs.push((Point::new(v[0], v[1]), Point::new(v[2], v[3])));
        }
        Self::new(pairs, sa, sb)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn write(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "#scaleA={} scaleB={}", self.scale_a, self.scale_b)?;
        for (a, b) in &self.pairs {
            writeln!(w, "{} {} {} {}", a.x, a.y, b.x, b.y)?;
        }
        Ok(())
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write(std::io::BufWriter::new(f))
    }
}

/// Writes `x y` lines (junction lists and similar point files).
pub fn write_points(mut w: impl Write, points: &[Point]) -> Result<()> {
    for p in points {
        writeln!(w, "{} {}", p.x, p.y)?;
    }
    Ok(())
}

/// Success indicators of one image pair at threshold `epsilon`, or success
/// rates over many pairs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuccessRate {
    pub epsilon: f64,
    /// Fraction with ME below `epsilon`.
    pub me: f64,
    /// Fraction with MAE below `epsilon`.
    pub mae: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub me: f64,
    pub mae: f64,
    pub sr: Vec<SuccessRate>,
    pub errors: Vec<f64>,
}

impl EvalReport {
    /// `key=value` lines: `me`, `mae`, `sr@<eps>` (ME-based) and
    /// `sr_mae@<eps>` (MAE-based).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "me={}", self.me).unwrap();
        writeln!(s, "mae={}", self.mae).unwrap();
        for r in &self.sr {
            writeln!(s, "sr@{}={}", r.epsilon, r.me).unwrap();
        }
        for r in &self.sr {
            writeln!(s, "sr_mae@{}={}", r.epsilon, r.mae).unwrap();
        }
        s
    }

    /// Per-point errors as `index,error` CSV.
    pub fn errors_csv(&self) -> String {
        let mut s = String::from("index,error\n");
        for (i, e) in self.errors.iter().enumerate() {
            writeln!(s, "{i},{e}").unwrap();
        }
        s
    }
}

/// Errors `|T(src) - dst|`, their mean and maximum, and the per-pair success
/// indicators for each threshold.
pub fn evaluate(
    transform: &dyn PointMap,
    cps: &ControlPointSet,
    thresholds: &[f64],
) -> Result<EvalReport> {
    if cps.pairs.is_empty() {
        return Err(Error::invalid("control point set is empty"));
    }
    let errors = cps
        .pairs
        .iter()
        .map(|&(a, b)| Ok((transform.map_point(a)? - b).norm()))
        .collect::<Result<Vec<f64>>>()?;
    let me = errors.iter().sum::<f64>() / errors.len() as f64;
    let mae = errors.iter().copied().fold(0.0, f64::max);
    let sr = thresholds
        .iter()
        .map(|&epsilon| SuccessRate {
            epsilon,
            me: f64::from(u8::from(me < epsilon)),
            mae: f64::from(u8::from(mae < epsilon)),
        })
        .collect();
    Ok(EvalReport {
        me,
        mae,
        sr,
        errors,
    })
}

/// Success rates over image pairs: the fraction of reports whose ME (MAE)
/// lies below each threshold.
pub fn success_rates(reports: &[EvalReport], thresholds: &[f64]) -> Vec<SuccessRate> {
    let n = reports.len().max(1) as f64;
    thresholds
        .iter()
        .map(|&epsilon| SuccessRate {
            epsilon,
            me: reports.iter().filter(|r| r.me < epsilon).count() as f64 / n,
            mae: reports.iter().filter(|r| r.mae < epsilon).count() as f64 / n,
        })
        .collect()
}

#[cfg(test)]
mod tests;
