//! Planar geometry in image coordinates (x right, y down).
//!
//! Angles are measured from the +x axis and are positive counter-clockwise
//! as seen on screen, so a direction `theta` is the vector
//! `(cos theta, -sin theta)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, o: Point) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Point) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }

    pub fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }

    pub fn scale(self, k: f64) -> Point {
        Point::new(self.x * k, self.y * k)
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Screen-space rotation by `phi` (counter-clockwise as displayed) about `origin`.
    pub fn rotate_about(self, origin: Point, phi: f64) -> Point {
        let d = self.sub(origin);
        let (s, c) = phi.sin_cos();
        Point::new(origin.x + c * d.x + s * d.y, origin.y - s * d.x + c * d.y)
    }
}

/// Unit vector pointing along `theta`.
pub fn direction(theta: f64) -> Point {
    Point::new(theta.cos(), -theta.sin())
}

/// Unit vector perpendicular to `direction(theta)`, pointing down the page when `theta = 0`.
pub fn normal(theta: f64) -> Point {
    Point::new(theta.sin(), theta.cos())
}

/// Maps an undirected line angle into `(-pi/2, pi/2]`.
pub fn normalize_angle(theta: f64) -> f64 {
    let mut t = theta % PI;
    if t > PI / 2.0 {
        t -= PI;
    } else if t <= -PI / 2.0 {
        t += PI;
    }
    t
}

/// Signed shoelace area; positive for counter-clockwise order in a y-up frame.
pub fn signed_area(points: &[Point]) -> f64 {
    let n = points.len();
    (0..n).map(|i| points[i].cross(points[(i + 1) % n])).sum::<f64>() / 2.0
}

/// Oriented rectangle: centre, extent along `theta`, extent across it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotatedRect {
    pub center: Point,
    pub width: f64,
    pub height: f64,
    pub theta: f64,
}

impl RotatedRect {
    /// Corners in reading order: top-left, top-right, bottom-right, bottom-left
    /// (for `theta = 0`).
    pub fn corners(&self) -> [Point; 4] {
        let u = direction(self.theta).scale(self.width / 2.0);
        let v = normal(self.theta).scale(self.height / 2.0);
        let c = self.center;
        [c.sub(u).sub(v), c.add(u).sub(v), c.add(u).add(v), c.sub(u).add(v)]
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    pub fn contains(&self, p: Point) -> bool {
        let d = p.sub(self.center);
        d.dot(direction(self.theta)).abs() <= self.width / 2.0
            && d.dot(normal(self.theta)).abs() <= self.height / 2.0
    }

    pub fn to_poly(&self) -> Result<ConvexPoly> {
        ConvexPoly::new(self.corners().to_vec())
    }
}

const AREA_EPS: f64 = 1e-12;

/// A convex polygon with positive area, stored counter-clockwise (y-up sense).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexPoly {
    vertices: Vec<Point>,
}

impl ConvexPoly {
    /// Accepts either winding; rejects non-convex or zero-area input.
    pub fn new(mut vertices: Vec<Point>) -> Result<Self> {
        if vertices.len() < 3 || vertices.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
            return Err(Error::DegenerateGeometry(format!("polygon with {} vertices", vertices.len())));
        }
        let area = signed_area(&vertices);
        if area.abs() <= AREA_EPS {
            return Err(Error::DegenerateGeometry("polygon has zero area".into()));
        }
        if area < 0.0 {
            vertices.reverse();
        }
        let n = vertices.len();
        for i in 0..n {
            let a = vertices[i];
            let b = vertices[(i + 1) % n];
            let c = vertices[(i + 2) % n];
            if b.sub(a).cross(c.sub(b)) < -1e-9 * (1.0 + area.abs()) {
                return Err(Error::DegenerateGeometry("polygon is not convex".into()));
            }
        }
        Ok(Self { vertices })
    }

    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        Self::new(vec![Point::new(x0, y0), Point::new(x1, y0), Point::new(x1, y1), Point::new(x0, y1)])
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices)
    }

    pub fn contains(&self, p: Point) -> bool {
        let n = self.vertices.len();
        (0..n).all(|i| {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            b.sub(a).cross(p.sub(a)) >= 0.0
        })
    }

    pub fn translate(&self, d: Point) -> Self {
        Self { vertices: self.vertices.iter().map(|p| p.add(d)).collect() }
    }

    /// Area of the intersection with `other`.
    pub fn intersection_area(&self, other: &ConvexPoly) -> f64 {
        // Clip the polygon with more vertices by the one with fewer edges; the
        // result is symmetric up to rounding, so order canonically to make it exact.
        let (subject, clip) = if (self.vertices.len(), self.key()) <= (other.vertices.len(), other.key()) {
            (other, self)
        } else {
            (self, other)
        };
        clip_area(&subject.vertices, &clip.vertices)
    }

    pub fn iou(&self, other: &ConvexPoly) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    fn key(&self) -> [u64; 2] {
        let p = self.vertices[0];
        [p.x.to_bits(), p.y.to_bits()]
    }
}

/// Sutherland-Hodgman clipping of `subject` by the convex `clip`, returning the area.
fn clip_area(subject: &[Point], clip: &[Point]) -> f64 {
    let mut output = subject.to_vec();
    let n = clip.len();
    for i in 0..n {
        if output.is_empty() {
            return 0.0;
        }
        let a = clip[i];
        let b = clip[(i + 1) % n];
        let edge = b.sub(a);
        let side = |p: Point| edge.cross(p.sub(a));
        let input = std::mem::take(&mut output);
        let m = input.len();
        for j in 0..m {
            let cur = input[j];
            let prev = input[(j + m - 1) % m];
            let sc = side(cur);
            let sp = side(prev);
            if sc >= 0.0 {
                if sp < 0.0 {
                    output.push(intersect(prev, cur, sp, sc));
                }
                output.push(cur);
            } else if sp >= 0.0 {
                output.push(intersect(prev, cur, sp, sc));
            }
        }
    }
    if output.len() < 3 {
        0.0
    } else {
        signed_area(&output).max(0.0)
    }
}

fn intersect(p: Point, q: Point, sp: f64, sq: f64) -> Point {
    let t = sp / (sp - sq);
    p.add(q.sub(p).scale(t))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_cases() {
        let unit = ConvexPoly::rect(0.0, 0.0, 1.0, 1.0).unwrap();
        assert_eq!(unit.intersection_area(&unit), 1.0);
        let a = ConvexPoly::rect(0.0, 0.0, 2.0, 2.0).unwrap();
        let b = ConvexPoly::rect(1.0, 0.0, 3.0, 2.0).unwrap();
        assert_eq!(a.intersection_area(&b), 2.0);
        assert!((a.iou(&b) - 1.0 / 3.0).abs() < 1e-15);
        let far = ConvexPoly::rect(10.0, 10.0, 11.0, 11.0).unwrap();
        assert_eq!(a.intersection_area(&far), 0.0);
    }

    #[test]
    fn rejects_degenerate_and_concave() {
        assert!(ConvexPoly::rect(0.0, 0.0, 0.0, 1.0).is_err());
        let dart = vec![
            Point::new(0.0, 0.0),
            Point::new(2.0, 1.0),
            Point::new(4.0, 0.0),
            Point::new(2.0, 4.0),
        ];
        assert!(ConvexPoly::new(dart).is_err());
        assert!(ConvexPoly::new(vec![Point::new(0.0, 0.0), Point::new(1.0, 1.0)]).is_err());
    }

    #[test]
    fn winding_is_normalised() {
        let cw = ConvexPoly::new(vec![
            Point::new(0.0, 0.0),
            Point::new(0.0, 1.0),
            Point::new(1.0, 1.0),
            Point::new(1.0, 0.0),
        ])
        .unwrap();
        assert_eq!(cw.area(), 1.0);
        assert!(cw.contains(Point::new(0.5, 0.5)));
        assert!(!cw.contains(Point::new(1.5, 0.5)));
    }

    #[test]
    fn angle_normalisation() {
        use std::f64::consts::FRAC_PI_2;
        assert_eq!(normalize_angle(FRAC_PI_2), FRAC_PI_2);
        assert!((normalize_angle(-FRAC_PI_2) - FRAC_PI_2).abs() < 1e-15);
        assert!((normalize_angle(PI) - 0.0).abs() < 1e-15);
        assert!((normalize_angle(0.75 * PI) + 0.25 * PI).abs() < 1e-15);
        assert!((normalize_angle(-0.3) + 0.3).abs() < 1e-15);
    }

    #[test]
    fn rotated_rect_corners() {
        let r = RotatedRect { center: Point::new(10.0, 20.0), width: 4.0, height: 2.0, theta: 0.0 };
        let c = r.corners();
        assert_eq!(c[0], Point::new(8.0, 19.0));
        assert_eq!(c[2], Point::new(12.0, 21.0));
        let tilted = RotatedRect { theta: std::f64::consts::FRAC_PI_2, ..r };
        // Pointing up the page: the long side is vertical.
        let p = tilted.to_poly().unwrap();
        assert!(p.contains(Point::new(10.0, 21.9)));
        assert!(!p.contains(Point::new(11.5, 20.0)));
        assert!((p.area() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn screen_rotation_matches_direction() {
        let o = Point::new(0.0, 0.0);
        let p = direction(0.0).rotate_about(o, 0.4);
        let q = direction(0.4);
        assert!((p.x - q.x).abs() < 1e-15 && (p.y - q.y).abs() < 1e-15);
    }
}
