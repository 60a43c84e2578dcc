//! Planar primitives used by the positioning rules.
//!
//! Coordinates are continuous pixel coordinates with the origin at the
//! top-left pixel and `y` growing downwards.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("non-finite coordinate ({0}, {1})")]
    NonFinite(f64, f64),
    #[error("zero-length segment at ({0}, {1})")]
    Degenerate(f64, f64),
    #[error("image bounds must be at least 1x1, got {0}x{1}")]
    EmptyBounds(u32, u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn sub(self, other: Point) -> Point {
        Point::new(self.x - other.x, self.y - other.y)
    }

    pub fn add(self, other: Point) -> Point {
        Point::new(self.x + other.x, self.y + other.y)
    }

    pub fn scale(self, k: f64) -> Point {
        Point::new(self.x * k, self.y * k)
    }

    pub fn dot(self, other: Point) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 3D cross product.
    pub fn cross(self, other: Point) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    fn total_cmp(&self, other: &Point) -> Ordering {
        self.x.total_cmp(&other.x).then(self.y.total_cmp(&other.y))
    }
}

/// A line segment with distinct, finite endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[Point; 2]", into = "[Point; 2]")]
pub struct Segment {
    p0: Point,
    p1: Point,
}

impl Segment {
    pub fn new(p0: Point, p1: Point) -> Result<Self, GeometryError> {
        for p in [p0, p1] {
            if !p.is_finite() {
                return Err(GeometryError::NonFinite(p.x, p.y));
            }
        }
        if p0 == p1 {
            return Err(GeometryError::Degenerate(p0.x, p0.y));
        }
        Ok(Self { p0, p1 })
    }

    pub fn p0(&self) -> Point {
        self.p0
    }

    pub fn p1(&self) -> Point {
        self.p1
    }

    pub fn direction(&self) -> Point {
        self.p1.sub(self.p0)
    }

    pub fn length(&self) -> f64 {
        distance(self.p0, self.p1)
    }

    pub fn reversed(&self) -> Segment {
        Segment { p0: self.p1, p1: self.p0 }
    }

    fn total_cmp(&self, other: &Segment) -> Ordering {
        self.p0.total_cmp(&other.p0).then(self.p1.total_cmp(&other.p1))
    }
}

impl TryFrom<[Point; 2]> for Segment {
    type Error = GeometryError;

    fn try_from(value: [Point; 2]) -> Result<Self, Self::Error> {
        Segment::new(value[0], value[1])
    }
}

impl From<Segment> for [Point; 2] {
    fn from(s: Segment) -> Self {
        [s.p0, s.p1]
    }
}

/// Image extent in whole pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Bounds {
    pub width: u32,
    pub height: u32,
}

impl Bounds {
    pub fn new(width: u32, height: u32) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 {
            return Err(GeometryError::EmptyBounds(width, height));
        }
        Ok(Self { width, height })
    }

    pub fn contains(&self, p: Point) -> bool {
        point_in_bounds(p, *self)
    }
}

/// Intersection of the infinite lines through `a` and `b`.
///
/// Returns `None` when the lines are parallel, i.e. the cross determinant of
/// the two directions is below `1e-9` times the product of their lengths.
/// The result does not depend on argument order.
pub fn line_intersection(a: Segment, b: Segment) -> Option<Point> {
    let (a, b) = match a.total_cmp(&b) {
        Ordering::Greater => (b, a),
        _ => (a, b),
    };
    let da = a.direction();
    let db = b.direction();
    let det = da.cross(db);
    if det.abs() < 1e-9 * da.norm() * db.norm() {
        return None;
    }
    let t = b.p0.sub(a.p0).cross(db) / det;
    Some(a.p0.add(da.scale(t)))
}

/// Inclusive pixel-index test: `0 <= x <= width - 1` and likewise for `y`.
pub fn point_in_bounds(p: Point, b: Bounds) -> bool {
    p.x >= 0.0 && p.y >= 0.0 && p.x <= f64::from(b.width - 1) && p.y <= f64::from(b.height - 1)
}

pub fn distance(p: Point, q: Point) -> f64 {
    p.sub(q).norm()
}

/// Distance from `p` to the infinite line through `s`.
pub fn perpendicular_distance(p: Point, s: Segment) -> f64 {
    let d = s.direction();
    (d.cross(p.sub(s.p0)) / d.norm()).abs()
}

/// Orthogonal projection of `p` onto the infinite line through `s`.
pub fn project_onto_line(p: Point, s: Segment) -> Point {
    let d = s.direction();
    let t = p.sub(s.p0).dot(d) / d.dot(d);
    s.p0.add(d.scale(t))
}
