use std::collections::HashMap;

use super::Correspondence;
use crate::geometry::Point;

struct SpatialHash {
    cell: f64,
    buckets: HashMap<(i64, i64), Vec<Point>>,
}

impl SpatialHash {
    fn new(cell: f64) -> Self {
        Self {
            cell: cell.max(1e-9),
            buckets: HashMap::new(),
        }
    }

    fn key(&self, p: Point) -> (i64, i64) {
        (
            (p.x / self.cell).floor() as i64,
            (p.y / self.cell).floor() as i64,
        )
    }

    fn any_within(&self, p: Point, r: f64) -> bool {
        let (kx, ky) = self.key(p);
        (-1..=1).any(|dy| {
            (-1..=1).any(|dx| {
                self.buckets
                    .get(&(kx + dx, ky + dy))
                    .is_some_and(|v| v.iter().any(|q| (q - p).norm() <= r))
            })
        })
    }

    fn insert(&mut self, p: Point) {
        let k = self.key(p);
        self.buckets.entry(k).or_default().push(p);
    }
}

/// Greedy by descending confidence (ties by source y, then x): a pair is
/// kept only if both its source and its target are farther than `radius`
/// from every kept source and target respectively.
pub fn dedupe_points(correspondences: &[Correspondence], radius: f64) -> Vec<Correspondence> {
    let mut order: Vec<&Correspondence> = correspondences.iter().collect();
    order.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then(a.src.y.total_cmp(&b.src.y))
            .then(a.src.x.total_cmp(&b.src.x))
            .then(a.dst.y.total_cmp(&b.dst.y))
            .then(a.dst.x.total_cmp(&b.dst.x))
    });
    let mut src_hash = SpatialHash::new(radius);
    let mut dst_hash = SpatialHash::new(radius);
    let mut out = Vec::new();
    for c in order {
        let (s, d) = (c.src_point(), c.dst_point());
        if src_hash.any_within(s, radius) || dst_hash.any_within(d, radius) {
            continue;
        }
        src_hash.insert(s);
        dst_hash.insert(d);
        out.push(*c);
    }
    out
}
