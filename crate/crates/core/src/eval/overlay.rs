use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::imgcore::Image;

const BLUE: [f32; 3] = [0.0, 0.0, 1.0];
const RED: [f32; 3] = [1.0, 0.0, 0.0];
const ORANGE: [f32; 3] = [1.0, 0.5, 0.0];
const GREEN: [f32; 3] = [0.0, 1.0, 0.0];

/// A displacement vector from a warped source point to its target point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OverlayVector {
    pub src: Point,
    pub dst: Point,
    pub kept: bool,
}

struct Canvas {
    w: usize,
    h: usize,
    rgb: Vec<f32>,
}

impl Canvas {
    fn blend(&mut self, x: i64, y: i64, color: [f32; 3], alpha: f64) {
        if alpha <= 0.0 || x < 0 || y < 0 || x >= self.w as i64 || y >= self.h as i64 {
            return;
        }
        let a = alpha.min(1.0) as f32;
        let at = (y as usize * self.w + x as usize) * 3;
        for (c, &v) in color.iter().enumerate() {
            self.rgb[at + c] = self.rgb[at + c] * (1.0 - a) + v * a;
        }
    }

    /// Xiaolin Wu anti-aliased line.
    fn line(&mut self, p: Point, q: Point, color: [f32; 3]) {
        let (mut x0, mut y0, mut x1, mut y1) = (p.x, p.y, q.x, q.y);
        let steep = (y1 - y0).abs() > (x1 - x0).abs();
        if steep {
            std::mem::swap(&mut x0, &mut y0);
            std::mem::swap(&mut x1, &mut y1);
        }
        if x0 > x1 {
            std::mem::swap(&mut x0, &mut x1);
            std::mem::swap(&mut y0, &mut y1);
        }
        let dx = x1 - x0;
        let gradient = if dx == 0.0 { 1.0 } else { (y1 - y0) / dx };
        let fpart = |v: f64| v - v.floor();
        let mut plot = |x: f64, y: f64, a: f64| {
            let (x, y) = (x as i64, y as i64);
            if steep {
                self.blend(y, x, color, a)
            } else {
                self.blend(x, y, color, a)
            }
        };

        let xend = x0.round();
        let yend = y0 + gradient * (xend - x0);
        let xgap = 1.0 - fpart(x0 + 0.5);
        let xpxl1 = xend;
        plot(xpxl1, yend.floor(), (1.0 - fpart(yend)) * xgap);
        plot(xpxl1, yend.floor() + 1.0, fpart(yend) * xgap);
        let mut intery = yend + gradient;

        let xend = x1.round();
        let yend = y1 + gradient * (xend - x1);
        let xgap = fpart(x1 + 0.5);
        let xpxl2 = xend;
        plot(xpxl2, yend.floor(), (1.0 - fpart(yend)) * xgap);
        plot(xpxl2, yend.floor() + 1.0, fpart(yend) * xgap);

        let mut x = xpxl1 + 1.0;
        while x < xpxl2 {
            plot(x, intery.floor(), 1.0 - fpart(intery));
            plot(x, intery.floor() + 1.0, fpart(intery));
            intery += gradient;
            x += 1.0;
        }
    }

    /// Disk of diameter 3 px.
    fn disk(&mut self, p: Point, color: [f32; 3]) {
        let (cx, cy) = (p.x.round() as i64, p.y.round() as i64);
        for y in cy - 2..=cy + 2 {
            for x in cx - 2..=cx + 2 {
                if (x as f64 - p.x).hypot(y as f64 - p.y) <= 1.5 {
                    self.blend(x, y, color, 1.0);
                }
            }
        }
    }
}

/// False-color overlay: red and blue carry the warped A image, green carries
/// B, so aligned structure looks gray and misalignment shows as magenta or
/// green fringes. Vectors are drawn blue when kept and red when removed;
/// with `draw_keypoints` their ends get disks (target orange, source green).
pub fn render_overlay(
    a_warped: &Image,
    b: &Image,
    vectors: &[OverlayVector],
    draw_keypoints: bool,
) -> Result<Image> {
    let (w, h) = (a_warped.width(), a_warped.height());
    if (b.width(), b.height()) != (w, h) {
        return Err(Error::invalid(format!(
            "overlay inputs differ in size: {w}x{h} vs {}x{}",
            b.width(),
            b.height()
        )));
    }
    let (ga, gb) = (a_warped.to_gray(), b.to_gray());
    let mut rgb = Vec::with_capacity(w * h * 3);
    for (&va, &vb) in ga.data().iter().zip(gb.data()) {
        rgb.extend_from_slice(&[va, vb, va]);
    }
    let mut canvas = Canvas { w, h, rgb };
    for v in vectors {
        canvas.line(v.src, v.dst, if v.kept { BLUE } else { RED });
    }
    if draw_keypoints {
        for v in vectors {
            canvas.disk(v.dst, ORANGE);
            canvas.disk(v.src, GREEN);
        }
    }
    Image::new(
        w,
        h,
        3,
        canvas.rgb.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
    )
}
