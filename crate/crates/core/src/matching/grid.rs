use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_PATCH_SIZE: usize = 32;

/// Overlapping square patches covering an image, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub width: usize,
    pub height: usize,
    pub patch_size: usize,
    pub stride: usize,
    pub xs: Vec<usize>,
    pub ys: Vec<usize>,
}

/// A patch window clipped to the image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchRect {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

fn axis_origins(dim: usize, size: usize, stride: usize) -> Vec<usize> {
    if dim <= size {
        return vec![0];
    }
    let last = dim - size;
    let mut out: Vec<usize> = (0..)
        .map(|k| k * stride)
        .take_while(|&o| o < last)
        .collect();
    if out.last() != Some(&last) {
        out.push(last);
    }
    out
}

pub fn make_patch_grid(
    width: usize,
    height: usize,
    patch_size: usize,
    stride: usize,
) -> Result<PatchGrid> {
    if patch_size < MIN_PATCH_SIZE {
        return Err(Error::invalid(format!(
            "patch size {patch_size} below {MIN_PATCH_SIZE}"
        )));
    }
    if stride == 0 || stride > patch_size {
        return Err(Error::invalid(format!(
            "stride {stride} must be in 1..={patch_size}"
        )));
    }
    if width == 0 || height == 0 {
        return Err(Error::EmptyImage);
    }
    Ok(PatchGrid {
        width,
        height,
        patch_size,
        stride,
        xs: axis_origins(width, patch_size, stride),
        ys: axis_origins(height, patch_size, stride),
    })
}

impl PatchGrid {
    pub fn len(&self) -> usize {
        self.xs.len() * self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn origins(&self) -> Vec<(usize, usize)> {
        self.ys
            .iter()
            .flat_map(|&y| self.xs.iter().map(move |&x| (x, y)))
            .collect()
    }

    pub fn rect(&self, index: usize) -> PatchRect {
        let (ix, iy) = (index % self.xs.len(), index / self.xs.len());
        let (x0, y0) = (self.xs[ix], self.ys[iy]);
        PatchRect {
            x0,
            y0,
            width: self.patch_size.min(self.width - x0),
            height: self.patch_size.min(self.height - y0),
        }
    }

    /// Patch center in coordinates normalized by the image size.
    pub fn normalized_center(&self, index: usize) -> (f64, f64) {
        let r = self.rect(index);
        (
            (r.x0 as f64 + r.width as f64 / 2.0) / self.width as f64,
            (r.y0 as f64 + r.height as f64 / 2.0) / self.height as f64,
        )
    }
}

/// Patch pairs whose normalized centers differ by at most
/// `radius * stride_a / dim_a` along each axis.
pub fn candidate_pairs(
    a: &PatchGrid,
    b: &PatchGrid,
    search_radius_patches: usize,
) -> Vec<(usize, usize)> {
    let tol_x = search_radius_patches as f64 * a.stride as f64 / a.width as f64 + 1e-9;
    let tol_y = search_radius_patches as f64 * a.stride as f64 / a.height as f64 + 1e-9;
    let cb: Vec<(f64, f64)> = (0..b.len()).map(|j| b.normalized_center(j)).collect();
    let mut out = Vec::new();
    for i in 0..a.len() {
        let (ax, ay) = a.normalized_center(i);
        for (j, &(bx, by)) in cb.iter().enumerate() {
            if (ax - bx).abs() <= tol_x && (ay - by).abs() <= tol_y {
                out.push((i, j));
            }
        }
    }
    out
}
