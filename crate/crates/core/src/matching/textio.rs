use std::io::{BufRead, Write};
use std::path::Path;

use super::Correspondence;
use crate::error::{Error, Result};
use crate::geometry::Point;

/// Parses `xA yA xB yB confidence` lines; `#` starts a comment.
pub fn parse_matches(reader: impl BufRead) -> Result<Vec<Correspondence>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let vals: Vec<f64> = body
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::ParseLine {
                line: i + 1,
                message: e.to_string(),
            })?;
        if vals.len() != 5 || vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::ParseLine {
                line: i + 1,
                message: format!("expected 5 finite numbers, got {}", vals.len()),
            });
        }
        out.push(Correspondence::new(
            Point::new(vals[0], vals[1]),
            Point::new(vals[2], vals[3]),
            vals[4].clamp(0.0, 1.0) as f32,
        ));
    }
    Ok(out)
}

pub fn read_matches(path: impl AsRef<Path>) -> Result<Vec<Correspondence>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_matches(std::io::BufReader::new(f))
}

pub fn write_matches(mut w: impl Write, matches: &[Correspondence]) -> Result<()> {
    writeln!(w, "# xA yA xB yB confidence")?;
    for m in matches {
        writeln!(
            w,
            "{} {} {} {} {}",
            m.src.x, m.src.y, m.dst.x, m.dst.y, m.confidence
        )?;
    }
    Ok(())
}
