//! Small geometric primitives shared by the scene and ray modules.

use nalgebra::{Point3 as NPoint3, Vector3};

/// A point in local building coordinates (meters, z up, z = 0 at ground).
pub type Point3 = NPoint3<f64>;
/// A free vector in the same frame.
pub type Vec3 = Vector3<f64>;

/// Relative parameter margin used to exclude segment endpoints from
/// intersection tests.
pub(crate) const SEGMENT_EPS: f64 = 1e-9;

pub fn point(x: f64, y: f64, z: f64) -> Point3 {
    Point3::new(x, y, z)
}

pub fn is_finite(p: &Point3) -> bool {
    p.x.is_finite() && p.y.is_finite() && p.z.is_finite()
}

/// Unit vector along `v`, or `None` when `v` has (numerically) zero length.
pub fn unit(v: &Vec3) -> Option<Vec3> {
    let n = v.norm();
    if n > 0.0 && n.is_finite() {
        Some(v / n)
    } else {
        None
    }
}

/// An oriented plane through `origin` with unit `normal`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub origin: Point3,
    pub normal: Vec3,
}

impl Plane {
    pub fn new(origin: Point3, normal: Vec3) -> Self {
        Self { origin, normal }
    }

    pub fn signed_distance(&self, p: &Point3) -> f64 {
        (p - self.origin).dot(&self.normal)
    }

    /// Parameter `t` at which `a + t (b - a)` meets the plane, if the segment
    /// is not parallel to it.
    pub fn segment_parameter(&self, a: &Point3, b: &Point3) -> Option<f64> {
        let d = b - a;
        let denom = self.normal.dot(&d);
        if denom.abs() <= 1e-14 * d.norm().max(1e-300) {
            return None;
        }
        Some(self.normal.dot(&(self.origin - a)) / denom)
    }
}

/// Reflect `p` across `plane`: `p - 2 ((p - o) . n) n`.
pub fn mirror_across(p: &Point3, plane: &Plane) -> Point3 {
    p - plane.normal * (2.0 * plane.signed_distance(p))
}

/// Rectangle given by a corner and two orthogonal side vectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub origin: Point3,
    pub side_u: Vec3,
    pub side_v: Vec3,
    pub normal: Vec3,
}

/// Tolerance on corner coplanarity and closure.
pub const COPLANAR_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RectDefect {
    Degenerate,
    NotCoplanar,
    NotRectangular,
}

impl Rect {
    /// Builds a rectangle from four corners given in perimeter order.
    pub fn from_corners(c: &[Point3; 4]) -> Result<Self, RectDefect> {
        let u = c[1] - c[0];
        let v = c[3] - c[0];
        let lu = u.norm();
        let lv = v.norm();
        if !(lu > 0.0 && lv > 0.0) {
            return Err(RectDefect::Degenerate);
        }
        let normal = unit(&u.cross(&v)).ok_or(RectDefect::Degenerate)?;
        let plane = Plane::new(c[0], normal);
        if plane.signed_distance(&c[2]).abs() > COPLANAR_TOL {
            return Err(RectDefect::NotCoplanar);
        }
        let scale = lu.max(lv);
        if (u.dot(&v) / (lu * lv)).abs() > 1e-9 || (c[0] + u + v - c[2]).norm() > COPLANAR_TOL * scale.max(1.0) {
            return Err(RectDefect::NotRectangular);
        }
        Ok(Self { origin: c[0], side_u: u, side_v: v, normal })
    }

    pub fn plane(&self) -> Plane {
        Plane::new(self.origin, self.normal)
    }

    /// Normalized in-plane coordinates of `p` (its projection onto the plane).
    pub fn local(&self, p: &Point3) -> (f64, f64) {
        let d = p - self.origin;
        (d.dot(&self.side_u) / self.side_u.norm_squared(), d.dot(&self.side_v) / self.side_v.norm_squared())
    }

    /// Closed containment test for a point lying in the rectangle's plane.
    pub fn contains_in_plane(&self, p: &Point3, tol: f64) -> bool {
        let (s, r) = self.local(p);
        s >= -tol && s <= 1.0 + tol && r >= -tol && r <= 1.0 + tol
    }

    /// Strict containment with a relative margin.
    pub fn strictly_contains_in_plane(&self, p: &Point3, margin: f64) -> bool {
        let (s, r) = self.local(p);
        s > margin && s < 1.0 - margin && r > margin && r < 1.0 - margin
    }

    /// Intersection point of the open segment `(a, b)` with the rectangle.
    pub fn intersect_open_segment(&self, a: &Point3, b: &Point3) -> Option<Point3> {
        let t = self.plane().segment_parameter(a, b)?;
        if !(t > SEGMENT_EPS && t < 1.0 - SEGMENT_EPS) {
            return None;
        }
        let x = a + (b - a) * t;
        self.contains_in_plane(&x, 1e-12).then_some(x)
    }

    pub fn corners(&self) -> [Point3; 4] {
        [
            self.origin,
            self.origin + self.side_u,
            self.origin + self.side_u + self.side_v,
            self.origin + self.side_v,
        ]
    }
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Point3,
    pub max: Point3,
}

impl Aabb {
    pub fn contains_closed(&self, p: &Point3, tol: f64) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] - tol && p[i] <= self.max[i] + tol)
    }

    pub fn contains_strict(&self, p: &Point3, margin: f64) -> bool {
        (0..3).all(|i| p[i] > self.min[i] + margin && p[i] < self.max[i] - margin)
    }

    pub fn center(&self) -> Point3 {
        nalgebra::center(&self.min, &self.max)
    }

    /// Parameter interval of the segment `a + t (b - a)`, `t` in `[0, 1]`,
    /// that lies inside the closed box.
    pub fn clip_segment(&self, a: &Point3, b: &Point3) -> Option<(f64, f64)> {
        let d = b - a;
        let (mut t0, mut t1) = (0.0_f64, 1.0_f64);
        for i in 0..3 {
            if d[i].abs() < 1e-300 {
                if a[i] < self.min[i] || a[i] > self.max[i] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / d[i];
            let mut lo = (self.min[i] - a[i]) * inv;
            let mut hi = (self.max[i] - a[i]) * inv;
            if lo > hi {
                core::mem::swap(&mut lo, &mut hi);
            }
            t0 = t0.max(lo);
            t1 = t1.min(hi);
            if t0 > t1 {
                return None;
            }
        }
        Some((t0, t1))
    }

    /// True when the segment runs through the open interior of the box.
    /// The overlap with a convex box is a single chord, so testing its
    /// midpoint is enough.
    pub fn segment_passes_interior(&self, a: &Point3, b: &Point3) -> bool {
        match self.clip_segment(a, b) {
            Some((t0, t1)) => {
                let m = a + (b - a) * (0.5 * (t0 + t1));
                self.contains_strict(&m, 1e-9)
            }
            None => false,
        }
    }
}
