//! Planar geometry helpers: points, axis-aligned boxes, segment queries.

use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Add for Vec2 {
    type Output = Vec2;

    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;

    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn scale(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        libm::hypot(self.x, self.y)
    }

    pub fn distance(self, o: Vec2) -> f64 {
        self.sub(o).norm()
    }
}

/// Direction of `v` in degrees, in (-180, 180].
pub fn heading_of(v: Vec2) -> f64 {
    libm::atan2(v.y, v.x).to_degrees()
}

/// Unit vector pointing along `deg`.
pub fn unit_from_heading(deg: f64) -> Vec2 {
    let r = deg.to_radians();
    Vec2::new(libm::cos(r), libm::sin(r))
}

/// Wraps an angle difference into (-180, 180].
pub fn wrap_180(deg: f64) -> f64 {
    let mut a = deg % 360.0;
    if a <= -180.0 {
        a += 360.0;
    } else if a > 180.0 {
        a -= 360.0;
    }
    a
}

/// Normalizes a heading into [0, 360).
pub fn normalize_heading(deg: f64) -> f64 {
    let a = deg % 360.0;
    let a = if a < 0.0 { a + 360.0 } else { a };
    if a >= 360.0 {
        0.0
    } else {
        a
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec2,
    pub max: Vec2,
}

impl Aabb {
    pub fn new(min: Vec2, max: Vec2) -> Self {
        Self { min, max }
    }

    pub fn from_center(center: Vec2, hx: f64, hy: f64) -> Self {
        Self {
            min: Vec2::new(center.x - hx, center.y - hy),
            max: Vec2::new(center.x + hx, center.y + hy),
        }
    }

    pub fn center(&self) -> Vec2 {
        Vec2::new(
            (self.min.x + self.max.x) / 2.0,
            (self.min.y + self.max.y) / 2.0,
        )
    }

    pub fn inflate(&self, by: f64) -> Aabb {
        Aabb {
            min: Vec2::new(self.min.x - by, self.min.y - by),
            max: Vec2::new(self.max.x + by, self.max.y + by),
        }
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    pub fn contains_strict(&self, p: Vec2) -> bool {
        p.x > self.min.x && p.x < self.max.x && p.y > self.min.y && p.y < self.max.y
    }

    /// True when the two boxes share a region of positive area.
    pub fn overlaps_strict(&self, o: &Aabb) -> bool {
        self.min.x < o.max.x && o.min.x < self.max.x && self.min.y < o.max.y && o.min.y < self.max.y
    }

    /// True when the closed boxes touch or overlap.
    pub fn intersects(&self, o: &Aabb) -> bool {
        self.min.x <= o.max.x
            && o.min.x <= self.max.x
            && self.min.y <= o.max.y
            && o.min.y <= self.max.y
    }

    pub fn corners(&self) -> [Vec2; 4] {
        [
            self.min,
            Vec2::new(self.max.x, self.min.y),
            self.max,
            Vec2::new(self.min.x, self.max.y),
        ]
    }

    /// Euclidean distance from `p` to the closed box (0 inside).
    pub fn distance_to(&self, p: Vec2) -> f64 {
        let dx = (self.min.x - p.x).max(0.0).max(p.x - self.max.x);
        let dy = (self.min.y - p.y).max(0.0).max(p.y - self.max.y);
        libm::hypot(dx, dy)
    }

    /// Parameter interval `[t0, t1]` ⊆ [0, 1] of the segment `a→b` lying in the
    /// closed box, or `None` when they do not meet.
    pub fn clip_segment(&self, a: Vec2, b: Vec2) -> Option<(f64, f64)> {
        let d = b.sub(a);
        let mut t0 = 0.0_f64;
        let mut t1 = 1.0_f64;
        for (p, dp, lo, hi) in [
            (a.x, d.x, self.min.x, self.max.x),
            (a.y, d.y, self.min.y, self.max.y),
        ] {
            if dp == 0.0 {
                if p < lo || p > hi {
                    return None;
                }
            } else {
                let mut ta = (lo - p) / dp;
                let mut tb = (hi - p) / dp;
                if ta > tb {
                    std::mem::swap(&mut ta, &mut tb);
                }
                t0 = t0.max(ta);
                t1 = t1.min(tb);
                if t0 > t1 {
                    return None;
                }
            }
        }
        Some((t0, t1))
    }

    /// True when a positive-length piece of the segment runs through the open
    /// interior of the box. Segments grazing an edge or a corner do not count.
    pub fn segment_crosses_interior(&self, a: Vec2, b: Vec2) -> bool {
        match self.clip_segment(a, b) {
            Some((t0, t1)) if t1 > t0 => {
                let mid = a.add(b.sub(a).scale((t0 + t1) / 2.0));
                self.contains_strict(mid)
            }
            _ => false,
        }
    }
}

/// Parameter `t` along `a→b` at which it meets segment `c→d`, if any.
pub fn segment_intersection(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> Option<f64> {
    let r = b.sub(a);
    let s = d.sub(c);
    let denom = r.cross(s);
    let qp = c.sub(a);
    if denom.abs() < 1e-12 {
        // parallel; collinear overlap counts from the first shared point
        if qp.cross(r).abs() > 1e-12 {
            return None;
        }
        let rr = r.dot(r);
        if rr == 0.0 {
            return None;
        }
        let t_c = qp.dot(r) / rr;
        let t_d = d.sub(a).dot(r) / rr;
        let (lo, hi) = if t_c < t_d { (t_c, t_d) } else { (t_d, t_c) };
        if hi < 0.0 || lo > 1.0 {
            return None;
        }
        return Some(lo.max(0.0));
    }
    let t = qp.cross(s) / denom;
    let u = qp.cross(r) / denom;
    if (0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u) {
        Some(t)
    } else {
        None
    }
}

pub fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b.sub(a);
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return p.distance(a);
    }
    let t = (p.sub(a).dot(ab) / len2).clamp(0.0, 1.0);
    p.distance(a.add(ab.scale(t)))
}

/// Minimum distance between segment `a→b` and a closed box.
pub fn segment_box_distance(a: Vec2, b: Vec2, bx: &Aabb) -> f64 {
    if bx.clip_segment(a, b).is_some() {
        return 0.0;
    }
    let mut best = bx.distance_to(a).min(bx.distance_to(b));
    for c in bx.corners() {
        best = best.min(point_segment_distance(c, a, b));
    }
    best
}

/// Oriented rectangle given by a base point, a unit direction, a length along
/// the direction and a half-width across it.
#[derive(Debug, Clone, Copy)]
pub struct Corridor {
    pub origin: Vec2,
    pub dir: Vec2,
    pub length: f64,
    pub half_width: f64,
}

impl Corridor {
    pub fn corners(&self) -> [Vec2; 4] {
        let n = Vec2::new(-self.dir.y, self.dir.x);
        let fwd = self.dir.scale(self.length);
        let side = n.scale(self.half_width);
        [
            self.origin.sub(side),
            self.origin.add(side),
            self.origin.add(fwd).add(side),
            self.origin.add(fwd).sub(side),
        ]
    }

    /// Separating-axis test against an axis-aligned box.
    pub fn intersects(&self, bx: &Aabb) -> bool {
        let rect = self.corners();
        let boxc = bx.corners();
        let n = Vec2::new(-self.dir.y, self.dir.x);
        let axes = [Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0), self.dir, n];
        for axis in axes {
            let (a0, a1) = project(&rect, axis);
            let (b0, b1) = project(&boxc, axis);
            if a1 < b0 || b1 < a0 {
                return false;
            }
        }
        true
    }
}

fn project(pts: &[Vec2; 4], axis: Vec2) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for p in pts {
        let v = p.dot(axis);
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}
