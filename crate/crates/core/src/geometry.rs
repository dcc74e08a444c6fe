//! 2-D points, similarity transforms and convex polygons.

use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_sq(self) -> f64 {
        self.x * self.x + self.y * self.y
    }

    pub fn distance(self, other: Point) -> f64 {
        (self - other).norm()
    }

    pub fn dot(self, other: Point) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn cross(self, other: Point) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }
}

pub fn centroid(points: &[Point]) -> Point {
    let n = points.len().max(1) as f64;
    let (sx, sy) = points
        .iter()
        .fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
    Point::new(sx / n, sy / n)
}

/// `p ↦ scale · R(rotation) · p + translation`, no reflection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    pub scale: f64,
    /// Radians, counter-clockwise in a y-up frame.
    pub rotation: f64,
    pub translation: Point,
}

impl Default for Similarity {
    fn default() -> Self {
        Self::identity()
    }
}

impl Similarity {
    pub const fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: 0.0,
            translation: Point::new(0.0, 0.0),
        }
    }

    pub fn new(scale: f64, rotation: f64, translation: Point) -> Self {
        Self {
            scale,
            rotation,
            translation,
        }
    }

    /// Linear part as `(a, b)` with matrix `[[a, -b], [b, a]]`.
    fn linear(&self) -> (f64, f64) {
        let (s, c) = self.rotation.sin_cos();
        (self.scale * c, self.scale * s)
    }

    pub fn apply(&self, p: Point) -> Point {
        let (a, b) = self.linear();
        Point::new(
            a * p.x - b * p.y + self.translation.x,
            b * p.x + a * p.y + self.translation.y,
        )
    }

    pub fn apply_all(&self, points: &[Point]) -> Vec<Point> {
        points.iter().map(|&p| self.apply(p)).collect()
    }

    pub fn inverse(&self) -> Similarity {
        let inv_scale = 1.0 / self.scale;
        let rot = Similarity::new(inv_scale, -self.rotation, Point::default());
        let t = rot.apply(self.translation);
        Similarity::new(inv_scale, -self.rotation, Point::new(-t.x, -t.y))
    }

    /// `self ∘ first`: applies `first`, then `self`.
    pub fn compose(&self, first: &Similarity) -> Similarity {
        Similarity::new(
            self.scale * first.scale,
            self.rotation + first.rotation,
            self.apply(first.translation),
        )
    }

    /// Distance from the identity in parameter space (angle wrapped to (-π, π]).
    pub fn deviation_from_identity(&self) -> f64 {
        let angle = wrap_angle(self.rotation).abs();
        (self.scale - 1.0)
            .abs()
            .max(angle)
            .max(self.translation.norm())
    }
}

pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut w = a % two_pi;
    if w <= -std::f64::consts::PI {
        w += two_pi;
    } else if w > std::f64::consts::PI {
        w -= two_pi;
    }
    w
}

/// Convex hull by Andrew's monotone chain, counter-clockwise, collinear points dropped.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts: Vec<Point> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let turn = |o: Point, a: Point, b: Point| (a - o).cross(b - o);
    let mut hull: Vec<Point> = Vec::with_capacity(2 * pts.len());
    for &p in &pts {
        while hull.len() >= 2 && turn(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len && turn(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0
        {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

/// Signed area (positive for counter-clockwise).
pub fn polygon_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| poly[i].cross(poly[(i + 1) % n]))
        .sum::<f64>()
        / 2.0
}

/// Inclusive containment test for a counter-clockwise convex polygon.
pub fn convex_contains(poly: &[Point], p: Point) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    (0..n).all(|i| {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        (b - a).cross(p - a) >= 0.0
    })
}

/// Horizontal span `[x0, x1]` of a convex polygon at height `y`, if any.
pub fn convex_span_at(poly: &[Point], y: f64) -> Option<(f64, f64)> {
    let n = poly.len();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let (ymin, ymax) = if a.y <= b.y { (a.y, b.y) } else { (b.y, a.y) };
        if y < ymin || y > ymax {
            continue;
        }
        if a.y == b.y {
            lo = lo.min(a.x.min(b.x));
            hi = hi.max(a.x.max(b.x));
        } else {
            let t = (y - a.y) / (b.y - a.y);
            let x = a.x + t * (b.x - a.x);
            lo = lo.min(x);
            hi = hi.max(x);
        }
    }
    (lo <= hi).then_some((lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn inverse_round_trips() {
        let t = Similarity::new(2.5, 0.7, Point::new(3.0, -4.0));
        let p = Point::new(1.25, -7.5);
        let q = t.inverse().apply(t.apply(p));
        assert!((q - p).norm() < 1e-12);
        let id = t.compose(&t.inverse());
        assert!(id.deviation_from_identity() < 1e-12);
    }

    #[test]
    fn rotation_quarter_turn() {
        let t = Similarity::new(1.0, PI / 2.0, Point::default());
        let q = t.apply(Point::new(1.0, 0.0));
        assert!((q - Point::new(0.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn hull_of_square_with_interior() {
        let pts = [
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(0.0, 1.0),
            Point::new(0.5, 0.5),
            Point::new(0.5, 0.0),
        ];
        let hull = convex_hull(&pts);
        assert_eq!(hull.len(), 4);
        assert!((polygon_area(&hull) - 1.0).abs() < 1e-15);
        assert!(convex_contains(&hull, Point::new(0.5, 0.5)));
        assert!(convex_contains(&hull, Point::new(1.0, 0.5)));
        assert!(!convex_contains(&hull, Point::new(1.01, 0.5)));
        assert_eq!(convex_span_at(&hull, 0.3), Some((0.0, 1.0)));
        assert_eq!(convex_span_at(&hull, 1.3), None);
    }

    #[test]
    fn wrap() {
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(-0.5) + 0.5).abs() < 1e-15);
    }
}
