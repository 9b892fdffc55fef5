use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{check_homography_validity, Homography, HomographyValidityConfig, Point};
use crate::matching::Correspondence;
use crate::pipeline::mix_seed;
use crate::robust::{robust_homography, DEFAULT_MAX_ITERS};

/// Non-overlapping square cells tiling an image, row-major.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionGrid {
    pub width: usize,
    pub height: usize,
    pub region_size: usize,
    pub cols: usize,
    pub rows: usize,
}

impl RegionGrid {
    pub fn new(width: usize, height: usize, region_size: usize) -> Result<Self> {
        if width == 0 || height == 0 || region_size == 0 {
            return Err(Error::invalid(
                "region grid needs a non-empty image and region size",
            ));
        }
        Ok(Self {
            width,
            height,
            region_size,
            cols: width.div_ceil(region_size),
            rows: height.div_ceil(region_size),
        })
    }

    pub fn len(&self) -> usize {
        self.cols * self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cell containing `p`; points outside the image go to the nearest cell.
    pub fn cell_of(&self, p: Point) -> usize {
        let idx = |v: f64, n: usize| {
            let k = (v + 0.5).floor() / self.region_size as f64;
            (k.max(0.0) as usize).min(n - 1)
        };
        idx(p.y, self.rows) * self.cols + idx(p.x, self.cols)
    }

    /// `(x0, y0, width, height)` of a cell, clipped to the image.
    pub fn rect(&self, cell: usize) -> (usize, usize, usize, usize) {
        let (cx, cy) = (cell % self.cols, cell / self.cols);
        let (x0, y0) = (cx * self.region_size, cy * self.region_size);
        (
            x0,
            y0,
            self.region_size.min(self.width - x0),
            self.region_size.min(self.height - y0),
        )
    }

    /// Manhattan cell distance.
    pub fn distance(&self, a: usize, b: usize) -> usize {
        let (ax, ay) = ((a % self.cols) as i64, (a / self.cols) as i64);
        let (bx, by) = ((b % self.cols) as i64, (b / self.cols) as i64);
        ((ax - bx).abs() + (ay - by).abs()) as usize
    }

    /// Correspondence indices per cell, assigned by their source point.
    pub fn assign(&self, corrs: &[Correspondence]) -> Vec<Vec<usize>> {
        let mut cells = vec![Vec::new(); self.len()];
        for (i, c) in corrs.iter().enumerate() {
            cells[self.cell_of(c.src_point())].push(i);
        }
        cells
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegionFilterParams {
    pub min_pairs: usize,
    pub fit_threshold: f64,
    pub max_iters: usize,
    pub validity: HomographyValidityConfig,
}

impl Default for RegionFilterParams {
    fn default() -> Self {
        Self {
            min_pairs: 20,
            fit_threshold: 3.0,
            max_iters: DEFAULT_MAX_ITERS,
            validity: HomographyValidityConfig::default(),
        }
    }
}

/// How a cell's points were checked.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellCheck {
    Empty,
    Own,
    /// Merged with all cells up to this ring distance.
    Merged(usize),
    /// Ring growth reached the whole image.
    Global,
    /// No valid homography even globally; the cell's points were dropped.
    Dropped,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegionFilterOutcome {
    pub kept: Vec<Correspondence>,
    pub removed: usize,
    pub checks: Vec<CellCheck>,
    /// Unchecked cell count before the growth loop and after each of its
    /// iterations.
    pub unchecked_history: Vec<usize>,
}

fn fit_valid(
    corrs: &[Correspondence],
    idx: &[usize],
    params: &RegionFilterParams,
    seed: u64,
) -> Option<Homography> {
    if idx.len() < params.min_pairs.max(4) {
        return None;
    }
    let src: Vec<Point> = idx.iter().map(|&i| corrs[i].src_point()).collect();
    let dst: Vec<Point> = idx.iter().map(|&i| corrs[i].dst_point()).collect();
    let fit = robust_homography(&src, &dst, params.fit_threshold, params.max_iters, seed).ok()?;
    check_homography_validity(&fit.homography, &params.validity).ok()?;
    Some(fit.homography)
}

/// Per-cell homography check with neighbourhood growing for cells that are
/// too sparse or yield no valid homography on their own.
pub fn remove_outliers_regionwise(
    corrs: &[Correspondence],
    grid: &RegionGrid,
    th_out: f64,
    params: &RegionFilterParams,
    seed: u64,
) -> RegionFilterOutcome {
    let cells = grid.assign(corrs);
    let mut keep = vec![true; corrs.len()];
    let mut checks: Vec<Option<CellCheck>> = vec![None; grid.len()];

    let filter = |h: &Homography, members: &[usize], keep: &mut [bool]| {
        for &i in members {
            let ok = h
                .apply(corrs[i].src_point())
                .is_ok_and(|q| (q - corrs[i].dst_point()).norm() <= th_out);
            keep[i] = ok;
        }
    };

    for (c, members) in cells.iter().enumerate() {
        if members.is_empty() {
            checks[c] = Some(CellCheck::Empty);
        } else if let Some(h) = fit_valid(corrs, members, params, mix_seed(seed, c as u64, 0)) {
            filter(&h, members, &mut keep);
            checks[c] = Some(CellCheck::Own);
        }
    }

    let max_ring = (grid.cols + grid.rows).saturating_sub(2);
    let mut unchecked: Vec<usize> = (0..grid.len()).filter(|&c| checks[c].is_none()).collect();
    let mut history = vec![unchecked.len()];
    while let Some(&c) = unchecked.first() {
        let mut check = None;
        for ring in 1..=max_ring.max(1) {
            let mut near: Vec<usize> = (0..grid.len())
                .filter(|&o| grid.distance(c, o) <= ring)
                .collect();
            near.sort_by_key(|&o| (grid.distance(c, o), o));
            let merged: Vec<usize> = near
                .iter()
                .flat_map(|&o| cells[o].iter().copied())
                .collect();
            let global = ring >= max_ring;
            if let Some(h) = fit_valid(
                corrs,
                &merged,
                params,
                mix_seed(seed, c as u64, ring as u64),
            ) {
                filter(&h, &cells[c], &mut keep);
                check = Some(if global {
                    CellCheck::Global
                } else {
                    CellCheck::Merged(ring)
                });
                break;
            }
            if global {
                break;
            }
        }
        let check = check.unwrap_or_else(|| {
            warn!(
                "no valid homography for region {c} even globally; dropping its {} points",
                cells[c].len()
            );
            cells[c].iter().for_each(|&i| keep[i] = false);
            CellCheck::Dropped
        });
        checks[c] = Some(check);
        let before = unchecked.len();
        unchecked.remove(0);
        assert!(unchecked.len() < before);
        history.push(unchecked.len());
    }

    let kept: Vec<Correspondence> = corrs
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(c, _)| *c)
        .collect();
    RegionFilterOutcome {
        removed: corrs.len() - kept.len(),
        kept,
        checks: checks.into_iter().map(|c| c.unwrap()).collect(),
        unchecked_history: history,
    }
}
