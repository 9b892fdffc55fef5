use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_xorshift::XorShiftRng;
use serde::{Deserialize, Serialize};

use crate::geometry::Point;

/// Layout knobs for the jittered-grid Voronoi crack generator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrackParams {
    /// Grid cell size in pixels (one Voronoi site per cell).
    pub cell_size: f64,
    /// Site jitter as a fraction of the cell size.
    pub site_jitter: f64,
    /// Post-hoc vertex jitter as a fraction of the cell size.
    pub vertex_jitter: f64,
    /// Probability that an edge survives.
    pub density: f64,
    pub stroke_width: (f64, f64),
}

impl Default for CrackParams {
    fn default() -> Self {
        Self {
            cell_size: 40.0,
            site_jitter: 0.4,
            vertex_jitter: 0.08,
            density: 0.85,
            stroke_width: (1.0, 2.0),
        }
    }
}

/// A crack layout in continuous pixel coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct CrackNetwork {
    pub width: usize,
    pub height: usize,
    pub segments: Vec<Vec<Point>>,
    /// Stroke width per segment.
    pub stroke_widths: Vec<f64>,
    /// Points where three or more segments meet.
    pub junctions: Vec<Point>,
    /// Two-segment vertices turning by more than 45 degrees.
    pub bends: Vec<Point>,
}

impl CrackNetwork {
    pub fn from_segments(
        width: usize,
        height: usize,
        segments: Vec<Vec<Point>>,
        stroke_width: f64,
    ) -> Self {
        let stroke_widths = vec![stroke_width; segments.len()];
        let (junctions, bends) = topology(&segments);
        Self {
            width,
            height,
            segments,
            stroke_widths,
            junctions,
            bends,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Inserts points so that consecutive polyline vertices are at most `step`
    /// apart.
    pub fn densified(&self, step: f64) -> CrackNetwork {
        let segments = self
            .segments
            .iter()
            .map(|poly| {
                let mut out = vec![poly[0]];
                for w in poly.windows(2) {
                    let k = ((w[1] - w[0]).norm() / step).ceil().max(1.0) as usize;
                    for i in 1..=k {
                        out.push(w[0] + (w[1] - w[0]) * (i as f64 / k as f64));
                    }
                }
                out
            })
            .collect();
        CrackNetwork {
            segments,
            ..self.clone()
        }
    }

    /// Applies `f` to every vertex, junction and bend; the canvas becomes
    /// `width x height`, stroke widths are multiplied by `width_scale`.
    pub fn mapped(
        &self,
        width: usize,
        height: usize,
        width_scale: f64,
        f: impl Fn(Point) -> Point,
    ) -> CrackNetwork {
        CrackNetwork {
            width,
            height,
            segments: self
                .segments
                .iter()
                .map(|p| p.iter().map(|q| f(*q)).collect())
                .collect(),
            stroke_widths: self.stroke_widths.iter().map(|w| w * width_scale).collect(),
            junctions: self.junctions.iter().map(|q| f(*q)).collect(),
            bends: self.bends.iter().map(|q| f(*q)).collect(),
        }
    }
}

/// Junctions and bends from segment endpoint incidence.
fn topology(segments: &[Vec<Point>]) -> (Vec<Point>, Vec<Point>) {
    let mut ends: Vec<(Point, Point)> = Vec::new();
    for poly in segments {
        if poly.len() < 2 {
            continue;
        }
        ends.push((poly[0], poly[1]));
        ends.push((poly[poly.len() - 1], poly[poly.len() - 2]));
    }
    let mut slot: HashMap<(i64, i64), usize> = HashMap::new();
    let mut groups: Vec<(Point, Vec<Point>)> = Vec::new();
    for (end, next) in ends {
        let key = ((end.x * 1e6).round() as i64, (end.y * 1e6).round() as i64);
        let g = *slot.entry(key).or_insert_with(|| {
            groups.push((end, Vec::new()));
            groups.len() - 1
        });
        groups[g].1.push(next);
    }
    let mut junctions = Vec::new();
    let mut bends = Vec::new();
    for (p, nbrs) in groups {
        if nbrs.len() >= 3 {
            junctions.push(p);
        } else if nbrs.len() == 2 {
            let a = nbrs[0] - p;
            let b = nbrs[1] - p;
            let cos = a.dot(&b) / (a.norm() * b.norm()).max(1e-300);
            // straight continuation has the neighbors opposite (angle 180)
            let turn = 180.0 - cos.clamp(-1.0, 1.0).acos().to_degrees();
            if turn > 45.0 {
                bends.push(p);
            }
        }
    }
    (junctions, bends)
}

/// Voronoi sites on a jittered grid, indexed `j * cols + i`.
pub(crate) fn jittered_sites(
    rng: &mut XorShiftRng,
    width: usize,
    height: usize,
    params: &CrackParams,
) -> (Vec<Point>, usize, usize) {
    let c = params.cell_size;
    let cols = ((width as f64) / c).ceil().max(1.0) as usize;
    let rows = ((height as f64) / c).ceil().max(1.0) as usize;
    let mut sites = Vec::with_capacity(cols * rows);
    for j in 0..rows {
        for i in 0..cols {
            let jx = rng.random_range(-params.site_jitter..=params.site_jitter);
            let jy = rng.random_range(-params.site_jitter..=params.site_jitter);
            sites.push(Point::new(
                (i as f64 + 0.5 + jx) * c - 0.5,
                (j as f64 + 0.5 + jy) * c - 0.5,
            ));
        }
    }
    (sites, cols, rows)
}

type Labeled = Vec<(Point, Option<usize>)>;

/// Clips a polygon (vertices with the label of the edge leaving them) to the
/// half-plane closer to `s` than to `t`; the new edge is labeled `t_index`.
fn clip(poly: &Labeled, s: Point, t: Point, t_index: usize) -> Labeled {
    let n = t - s;
    let mid = (s.coords + t.coords) * 0.5;
    let side = |p: &Point| n.dot(&(p.coords - mid));
    let mut out = Vec::with_capacity(poly.len() + 1);
    for k in 0..poly.len() {
        let (a, la) = poly[k];
        let (b, _) = poly[(k + 1) % poly.len()];
        let (da, db) = (side(&a), side(&b));
        if da <= 0.0 {
            out.push((a, la));
            if db > 0.0 {
                let x = a + (b - a) * (da / (da - db));
                out.push((x, Some(t_index)));
            }
        } else if db <= 0.0 {
            let x = a + (b - a) * (da / (da - db));
            out.push((x, la));
        }
    }
    out
}

/// Voronoi edges of the sites clipped to the canvas, as `(a, b)` endpoint
/// pairs from the cell of the lower-indexed site.
pub(crate) fn voronoi_edges(
    sites: &[Point],
    cols: usize,
    rows: usize,
    width: usize,
    height: usize,
) -> Vec<(Point, Point)> {
    let (x0, y0) = (-0.5, -0.5);
    let (x1, y1) = (width as f64 - 0.5, height as f64 - 0.5);
    let canvas: Labeled = vec![
        (Point::new(x0, y0), None),
        (Point::new(x1, y0), None),
        (Point::new(x1, y1), None),
        (Point::new(x0, y1), None),
    ];
    let mut edges = Vec::new();
    for j in 0..rows as i64 {
        for i in 0..cols as i64 {
            let si = (j as usize) * cols + i as usize;
            let mut poly = canvas.clone();
            for dj in -3..=3i64 {
                for di in -3..=3i64 {
                    let (ni, nj) = (i + di, j + dj);
                    if (di == 0 && dj == 0)
                        || ni < 0
                        || nj < 0
                        || ni >= cols as i64
                        || nj >= rows as i64
                    {
                        continue;
                    }
                    let ti = nj as usize * cols + ni as usize;
                    poly = clip(&poly, sites[si], sites[ti], ti);
                    if poly.is_empty() {
                        break;
                    }
                }
            }
            for k in 0..poly.len() {
                if let (a, Some(t)) = poly[k] {
                    let b = poly[(k + 1) % poly.len()].0;
                    if t > si && (b - a).norm() > 1e-9 {
                        edges.push((a, b));
                    }
                }
            }
        }
    }
    edges
}

/// Seeded crack layout with default geometry at the given edge density.
pub fn generate_craquelure(seed: u64, width: usize, height: usize, density: f64) -> CrackNetwork {
    generate_craquelure_with(
        seed,
        width,
        height,
        &CrackParams {
            density,
            ..CrackParams::default()
        },
    )
}

pub fn generate_craquelure_with(
    seed: u64,
    width: usize,
    height: usize,
    params: &CrackParams,
) -> CrackNetwork {
    let mut rng = XorShiftRng::seed_from_u64(seed);
    let (sites, cols, rows) = jittered_sites(&mut rng, width, height, params);
    let edges = voronoi_edges(&sites, cols, rows, width, height);

    // merge endpoints shared between cells
    let tol = 1e-6 * params.cell_size;
    let mut vertices: Vec<Point> = Vec::new();
    let mut index: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    let mut vertex_id = |p: Point| -> usize {
        let key = (
            (p.x / (10.0 * tol)).floor() as i64,
            (p.y / (10.0 * tol)).floor() as i64,
        );
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(ids) = index.get(&(key.0 + dx, key.1 + dy)) {
                    for &id in ids {
                        if (vertices[id] - p).norm() <= tol {
                            return id;
                        }
                    }
                }
            }
        }
        vertices.push(p);
        index.entry(key).or_default().push(vertices.len() - 1);
        vertices.len() - 1
    };
    let mut kept: Vec<(usize, usize, f64)> = Vec::new();
    let density = params.density.clamp(0.0, 1.0);
    for (a, b) in edges {
        let (ia, ib) = (vertex_id(a), vertex_id(b));
        let keep = rng.random::<f64>() < density;
        let w = rng.random_range(params.stroke_width.0..=params.stroke_width.1);
        if keep && ia != ib {
            kept.push((ia, ib, w));
        }
    }

    let (xmax, ymax) = (width as f64 - 0.5, height as f64 - 0.5);
    let on_border = |p: &Point| {
        p.x <= -0.5 + 1e-9 || p.y <= -0.5 + 1e-9 || p.x >= xmax - 1e-9 || p.y >= ymax - 1e-9
    };
    let amp = params.vertex_jitter * params.cell_size;
    let moved: Vec<Point> = vertices
        .iter()
        .map(|p| {
            let jx = rng.random_range(-1.0..=1.0) * amp;
            let jy = rng.random_range(-1.0..=1.0) * amp;
            if on_border(p) || amp == 0.0 {
                *p
            } else {
                Point::new(
                    (p.x + jx).clamp(0.0, xmax - 0.5),
                    (p.y + jy).clamp(0.0, ymax - 0.5),
                )
            }
        })
        .collect();

    let segments: Vec<Vec<Point>> = kept
        .iter()
        .map(|&(a, b, _)| vec![moved[a], moved[b]])
        .collect();
    let stroke_widths = kept.iter().map(|&(_, _, w)| w).collect();
    let (junctions, bends) = topology(&segments);
    CrackNetwork {
        width,
        height,
        segments,
        stroke_widths,
        junctions,
        bends,
    }
}
