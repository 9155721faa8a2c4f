//! Nearest point of a disk intersected with half-planes.
//!
//! The minimiser of a distance over a convex planar set is either the target
//! itself or lies on one or two active boundaries, so it suffices to test the
//! target, its projection onto every boundary and every pairwise boundary
//! intersection.

use crate::geom::Point2;

/// `{q : normal·q ≥ offset}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfPlane {
    pub normal: Point2,
    pub offset: f64,
}

impl HalfPlane {
    pub fn slack(&self, q: Point2) -> f64 {
        self.normal.dot(q) - self.offset
    }
}

/// `{q : ‖q − center‖ ≤ radius}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Disk {
    pub center: Point2,
    pub radius: f64,
}

const TOL: f64 = 1e-10;

fn feasible(q: Point2, disk: Option<&Disk>, planes: &[HalfPlane]) -> bool {
    q.is_finite()
        && disk.is_none_or(|d| q.dist(d.center) <= d.radius * (1.0 + TOL) + TOL)
        && planes
            .iter()
            .all(|h| h.slack(q) >= -TOL * (1.0 + h.offset.abs() + h.normal.norm()))
}

fn line_intersection(a: &HalfPlane, b: &HalfPlane) -> Option<Point2> {
    let det = a.normal.x * b.normal.y - a.normal.y * b.normal.x;
    if det.abs() < 1e-14 * a.normal.norm() * b.normal.norm() {
        return None;
    }
    Some(Point2::new(
        (a.offset * b.normal.y - a.normal.y * b.offset) / det,
        (a.normal.x * b.offset - a.offset * b.normal.x) / det,
    ))
}

fn line_circle(h: &HalfPlane, d: &Disk) -> Vec<Point2> {
    let nn = h.normal.dot(h.normal);
    let foot = d.center + h.normal * ((h.offset - h.normal.dot(d.center)) / nn);
    let dist2 = foot.dist(d.center).powi(2);
    let r2 = d.radius * d.radius;
    if dist2 > r2 {
        return Vec::new();
    }
    let along = Point2::new(-h.normal.y, h.normal.x) * ((r2 - dist2).sqrt() / nn.sqrt());
    vec![foot + along, foot - along]
}

/// Point of `disk ∩ planes` closest to `target`, `None` when empty.
///
/// Planes with a vanishing normal are either always satisfied or make the
/// set empty, depending on the sign of their offset.
pub fn nearest_feasible(target: Point2, disk: Option<&Disk>, planes: &[HalfPlane]) -> Option<Point2> {
    let mut live = Vec::with_capacity(planes.len());
    for h in planes {
        if h.normal.norm() < 1e-14 {
            if h.offset > 0.0 {
                return None;
            }
        } else {
            live.push(*h);
        }
    }
    let planes = &live[..];
    if feasible(target, disk, planes) {
        return Some(target);
    }
    let mut cands = Vec::new();
    for h in planes {
        let nn = h.normal.dot(h.normal);
        cands.push(target + h.normal * ((h.offset - h.normal.dot(target)) / nn));
    }
    if let Some(d) = disk {
        let r = target - d.center;
        let dir = if r.norm() > 0.0 {
            r * (1.0 / r.norm())
        } else {
            Point2::new(1.0, 0.0)
        };
        cands.push(d.center + dir * d.radius);
        for h in planes {
            cands.extend(line_circle(h, d));
        }
    }
    for (i, a) in planes.iter().enumerate() {
        for b in &planes[i + 1..] {
            cands.extend(line_intersection(a, b));
        }
    }
    cands
        .into_iter()
        .filter(|&q| feasible(q, disk, planes))
        .min_by(|a, b| a.dist(target).total_cmp(&b.dist(target)))
}
