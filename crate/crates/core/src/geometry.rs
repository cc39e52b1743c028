//! Planar primitives shared by every other module.
//!
//! All predicates use closed-set semantics: touching counts as intersecting.
//! Comparisons are exact; callers inflate radii when they want a margin.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    /// Panics on non-finite coordinates.
    pub fn new(x: f64, y: f64) -> Self {
        assert!(x.is_finite() && y.is_finite(), "non-finite point ({x}, {y})");
        Self { x, y }
    }

    pub fn try_new(x: f64, y: f64) -> Option<Self> {
        (x.is_finite() && y.is_finite()).then_some(Self { x, y })
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn dist(self, other: Point2) -> f64 {
        dist(self, other)
    }

    pub fn translate(self, dx: f64, dy: f64) -> Self {
        Self { x: self.x + dx, y: self.y + dy }
    }

    pub fn lerp(self, other: Point2, t: f64) -> Self {
        Self { x: self.x + (other.x - self.x) * t, y: self.y + (other.y - self.y) * t }
    }
}

impl From<[f64; 2]> for Point2 {
    fn from([x, y]: [f64; 2]) -> Self {
        Self { x, y }
    }
}

impl From<Point2> for [f64; 2] {
    fn from(p: Point2) -> Self {
        [p.x, p.y]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment2 {
    pub a: Point2,
    pub b: Point2,
}

impl Segment2 {
    pub fn new(a: Point2, b: Point2) -> Self {
        Self { a, b }
    }

    pub fn length(&self) -> f64 {
        dist(self.a, self.b)
    }

    /// Closest point of the closed segment to `p`.
    pub fn closest_point(&self, p: Point2) -> Point2 {
        let dx = self.b.x - self.a.x;
        let dy = self.b.y - self.a.y;
        let len2 = dx * dx + dy * dy;
        if len2 == 0.0 {
            return self.a;
        }
        let t = (((p.x - self.a.x) * dx + (p.y - self.a.y) * dy) / len2).clamp(0.0, 1.0);
        self.a.lerp(self.b, t)
    }

    pub fn distance_to_point(&self, p: Point2) -> f64 {
        // Work relative to `a` so the result depends only on coordinate differences.
        let (dx, dy) = (self.b.x - self.a.x, self.b.y - self.a.y);
        let (vx, vy) = (p.x - self.a.x, p.y - self.a.y);
        let len2 = dx * dx + dy * dy;
        let t = if len2 == 0.0 { 0.0 } else { ((vx * dx + vy * dy) / len2).clamp(0.0, 1.0) };
        let (ex, ey) = (vx - dx * t, vy - dy * t);
        (ex * ex + ey * ey).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub center: Point2,
    pub radius: f64,
}

impl Circle {
    pub fn new(center: Point2, radius: f64) -> Self {
        assert!(radius >= 0.0, "negative radius {radius}");
        Self { center, radius }
    }

    pub fn contains(&self, p: Point2) -> bool {
        point_in_circle(p, self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: Point2,
    pub max: Point2,
}

impl Rect {
    pub fn new(min: Point2, max: Point2) -> Self {
        assert!(min.x <= max.x && min.y <= max.y, "inverted rect {min:?}..{max:?}");
        Self { min, max }
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn center(&self) -> Point2 {
        self.min.lerp(self.max, 0.5)
    }

    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        self.contains(other.min) && self.contains(other.max)
    }

    /// Whether the disc lies entirely inside the rectangle.
    pub fn contains_circle(&self, c: &Circle) -> bool {
        c.center.x - c.radius >= self.min.x
            && c.center.x + c.radius <= self.max.x
            && c.center.y - c.radius >= self.min.y
            && c.center.y + c.radius <= self.max.y
    }

    /// Rectangle grown by `margin` on every side.
    pub fn inflate(&self, margin: f64) -> Rect {
        Rect { min: self.min.translate(-margin, -margin), max: self.max.translate(margin, margin) }
    }

    pub fn distance_to_point(&self, p: Point2) -> f64 {
        let dx = (self.min.x - p.x).max(0.0).max(p.x - self.max.x);
        let dy = (self.min.y - p.y).max(0.0).max(p.y - self.max.y);
        (dx * dx + dy * dy).sqrt()
    }
}

pub fn dist(p: Point2, q: Point2) -> f64 {
    let (dx, dy) = (p.x - q.x, p.y - q.y);
    (dx * dx + dy * dy).sqrt()
}

pub fn point_in_circle(p: Point2, c: &Circle) -> bool {
    dist(p, c.center) <= c.radius
}

/// True iff the closed segment comes within `c.radius` of the center.
pub fn segment_intersects_circle(s: &Segment2, c: &Circle) -> bool {
    s.distance_to_point(c.center) <= c.radius
}

/// Liang-Barsky clip of the segment against the closed rectangle.
pub fn segment_intersects_rect(s: &Segment2, r: &Rect) -> bool {
    let dx = s.b.x - s.a.x;
    let dy = s.b.y - s.a.y;
    let mut t0 = 0.0_f64;
    let mut t1 = 1.0_f64;
    let edges = [(-dx, s.a.x - r.min.x), (dx, r.max.x - s.a.x), (-dy, s.a.y - r.min.y), (dy, r.max.y - s.a.y)];
    for (p, q) in edges {
        if p == 0.0 {
            if q < 0.0 {
                return false;
            }
        } else {
            let t = q / p;
            if p < 0.0 {
                t0 = t0.max(t);
            } else {
                t1 = t1.min(t);
            }
            if t0 > t1 {
                return false;
            }
        }
    }
    true
}
