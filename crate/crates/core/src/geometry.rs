//! Planar primitives in level-0 pixel units.
//!
//! Pixel `(i, j)` covers `[i, i+1) × [j, j+1)`; rasterization tests pixel
//! centers. Polygon membership uses the even-odd crossing rule, evaluated with
//! the same arithmetic for single points and for whole scanlines so the two
//! always agree.

use alloc::vec::Vec;

use crate::raster::BinaryGrid;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    pub vertices: Vec<Point>,
}

impl Polygon {
    pub fn new(vertices: Vec<Point>) -> Self {
        Self { vertices }
    }

    fn edges(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    #[inline]
    fn edge_crossing(a: Point, b: Point, y: f64) -> Option<f64> {
        ((a.y > y) != (b.y > y)).then(|| a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y))
    }

    /// X coordinates where the horizontal line at `y` crosses the outline, sorted.
    pub fn crossings(&self, y: f64) -> Vec<f64> {
        let mut xs: Vec<f64> = self.edges().filter_map(|(a, b)| Self::edge_crossing(a, b, y)).collect();
        xs.sort_by(f64::total_cmp);
        xs
    }

    pub fn contains(&self, p: Point) -> bool {
        self.edges().filter_map(|(a, b)| Self::edge_crossing(a, b, p.y)).filter(|&x| x > p.x).count() % 2 == 1
    }

    /// Whether pixel `(i, j)` (center rule) lies inside.
    pub fn contains_pixel(&self, i: u64, j: u64) -> bool {
        self.contains(Point::new(i as f64 + 0.5, j as f64 + 0.5))
    }

    pub fn bounding_box(&self) -> (f64, f64, f64, f64) {
        let mut bb = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for v in &self.vertices {
            bb.0 = bb.0.min(v.x);
            bb.1 = bb.1.min(v.y);
            bb.2 = bb.2.max(v.x);
            bb.3 = bb.3.max(v.y);
        }
        bb
    }

    pub fn area(&self) -> f64 {
        libm::fabs(shoelace(&self.vertices))
    }

    /// Conservative overlap test against the half-open rectangle
    /// `[x0, x1) × [y0, y1)`: touching outlines count as overlap.
    pub fn intersects_rect(&self, x0: f64, y0: f64, x1: f64, y1: f64) -> bool {
        let (bx0, by0, bx1, by1) = self.bounding_box();
        if bx1 < x0 || bx0 > x1 || by1 < y0 || by0 > y1 {
            return false;
        }
        if self.vertices.iter().any(|v| v.x >= x0 && v.x <= x1 && v.y >= y0 && v.y <= y1) {
            return true;
        }
        let corners = [Point::new(x0, y0), Point::new(x1, y0), Point::new(x1, y1), Point::new(x0, y1)];
        if corners.iter().any(|&c| self.contains(c)) {
            return true;
        }
        let rect_edges =
            [(corners[0], corners[1]), (corners[1], corners[2]), (corners[2], corners[3]), (corners[3], corners[0])];
        self.edges().any(|(a, b)| rect_edges.iter().any(|&(c, d)| segments_intersect(a, b, c, d)))
    }

    /// Center-rule rasterization onto a level with the given downsample
    /// factor and dimensions.
    pub fn rasterize(&self, width: usize, height: usize, factor: u64) -> BinaryGrid {
        let mut grid = BinaryGrid::new(width, height);
        self.rasterize_into(&mut grid, factor);
        grid
    }

    pub fn rasterize_into(&self, grid: &mut BinaryGrid, factor: u64) {
        let f = factor as f64;
        let (_, by0, _, by1) = self.bounding_box();
        let j0 = libm::floor((by0 / f - 0.5).max(0.0)) as usize;
        let j1 = (libm::ceil(by1 / f) as usize).min(grid.height());
        for j in j0..j1 {
            let y = (j as f64 + 0.5) * f;
            let xs = self.crossings(y);
            for pair in xs.chunks_exact(2) {
                // Even-odd: centers in [enter, leave) are inside.
                let start = (libm::ceil(pair[0] / f - 0.5).max(0.0) as usize).saturating_sub(1);
                for i in start..grid.width() {
                    let cx = (i as f64 + 0.5) * f;
                    if cx >= pair[1] {
                        break;
                    }
                    if cx >= pair[0] {
                        grid.set(i, j, true);
                    }
                }
            }
        }
    }
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

pub fn segments_intersect(a: Point, b: Point, c: Point, d: Point) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(c, d, a))
        || (d2 == 0.0 && on_segment(c, d, b))
        || (d3 == 0.0 && on_segment(a, b, c))
        || (d4 == 0.0 && on_segment(a, b, d))
}

/// Signed shoelace area (counter-clockwise positive in a y-up frame).
pub fn shoelace(pts: &[Point]) -> f64 {
    let n = pts.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let (a, b) = (pts[i], pts[(i + 1) % n]);
        acc += a.x * b.y - b.x * a.y;
    }
    acc / 2.0
}

/// Convex hull by Andrew's monotone chain; collinear points are dropped.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts: Vec<Point> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Point> = Vec::with_capacity(2 * pts.len());
    for &p in &pts {
        while hull.len() >= 2 && orient(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len && orient(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

/// Rotated ellipse; `angle` in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub semi_a: f64,
    pub semi_b: f64,
    pub angle: f64,
}

impl Ellipse {
    /// Implicit form `q(p) ≤ 1` inside.
    pub fn level(&self, p: Point) -> f64 {
        let (s, c) = libm::sincos(self.angle);
        let (u, v) = (p.x - self.cx, p.y - self.cy);
        let along = u * c + v * s;
        let across = -u * s + v * c;
        (along * along) / (self.semi_a * self.semi_a) + (across * across) / (self.semi_b * self.semi_b)
    }

    pub fn contains(&self, p: Point) -> bool {
        self.level(p) <= 1.0
    }

    /// Interior x-interval on the horizontal line at `y`, if any.
    pub fn span_at(&self, y: f64) -> Option<(f64, f64)> {
        let (s, c) = libm::sincos(self.angle);
        let ia = 1.0 / (self.semi_a * self.semi_a);
        let ib = 1.0 / (self.semi_b * self.semi_b);
        let v = y - self.cy;
        let qa = c * c * ia + s * s * ib;
        let qb = 2.0 * v * s * c * (ia - ib);
        let qc = v * v * (s * s * ia + c * c * ib) - 1.0;
        let disc = qb * qb - 4.0 * qa * qc;
        if disc < 0.0 {
            return None;
        }
        let root = libm::sqrt(disc);
        Some((self.cx + (-qb - root) / (2.0 * qa), self.cx + (-qb + root) / (2.0 * qa)))
    }

    /// Axis-aligned bounding radius.
    pub fn extent(&self) -> (f64, f64) {
        let (s, c) = libm::sincos(self.angle);
        let rx = libm::sqrt((self.semi_a * c) * (self.semi_a * c) + (self.semi_b * s) * (self.semi_b * s));
        let ry = libm::sqrt((self.semi_a * s) * (self.semi_a * s) + (self.semi_b * c) * (self.semi_b * c));
        (rx, ry)
    }

    pub fn to_polygon(&self, n: usize) -> Polygon {
        let (s, c) = libm::sincos(self.angle);
        let vertices = (0..n)
            .map(|k| {
                let t = 2.0 * core::f64::consts::PI * k as f64 / n as f64;
                let (st, ct) = libm::sincos(t);
                let (u, v) = (self.semi_a * ct, self.semi_b * st);
                Point::new(self.cx + u * c - v * s, self.cy + u * s + v * c)
            })
            .collect();
        Polygon::new(vertices)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn square(x0: f64, y0: f64, x1: f64, y1: f64) -> Polygon {
        Polygon::new(vec![Point::new(x0, y0), Point::new(x1, y0), Point::new(x1, y1), Point::new(x0, y1)])
    }

    #[test]
    fn point_in_square() {
        let sq = square(2.0, 2.0, 6.0, 5.0);
        assert!(sq.contains(Point::new(3.0, 3.0)));
        assert!(!sq.contains(Point::new(7.0, 3.0)));
        assert!(sq.contains_pixel(2, 2));
        assert!(!sq.contains_pixel(6, 2));
        assert_eq!(sq.area(), 12.0);
    }

    #[test]
    fn rasterize_matches_pointwise() {
        let e = Ellipse { cx: 31.3, cy: 22.7, semi_a: 17.0, semi_b: 9.5, angle: 0.6 };
        let poly = e.to_polygon(48);
        for factor in [1u64, 2, 3] {
            let (w, h) = (64usize.div_ceil(factor as usize), 48usize.div_ceil(factor as usize));
            let g = poly.rasterize(w, h, factor);
            for j in 0..h {
                for i in 0..w {
                    let f = factor as f64;
                    let p = Point::new((i as f64 + 0.5) * f, (j as f64 + 0.5) * f);
                    assert_eq!(g.get(i, j), poly.contains(p), "({i},{j}) f={factor}");
                }
            }
        }
    }

    #[test]
    fn ellipse_span_agrees_with_level() {
        let e = Ellipse { cx: 50.0, cy: 40.0, semi_a: 30.0, semi_b: 12.0, angle: 1.1 };
        for yi in 0..80 {
            let y = yi as f64 + 0.5;
            for xi in 0..100 {
                let x = xi as f64 + 0.5;
                let inside_span = e.span_at(y).is_some_and(|(a, b)| x >= a && x <= b);
                let lvl = e.level(Point::new(x, y));
                if (lvl - 1.0).abs() > 1e-9 {
                    assert_eq!(inside_span, lvl <= 1.0);
                }
            }
        }
    }

    #[test]
    fn rect_overlap() {
        let sq = square(10.0, 10.0, 20.0, 20.0);
        assert!(sq.intersects_rect(0.0, 0.0, 12.0, 12.0));
        assert!(sq.intersects_rect(12.0, 12.0, 14.0, 14.0));
        assert!(sq.intersects_rect(0.0, 0.0, 40.0, 40.0));
        assert!(!sq.intersects_rect(21.0, 0.0, 40.0, 40.0));
        // Cross shape: edges pass through without vertices/corners inside.
        assert!(sq.intersects_rect(15.0, 0.0, 16.0, 40.0));
    }

    #[test]
    fn hull_of_square_grid() {
        let pts: Vec<Point> = (0..4).flat_map(|i| (0..4).map(move |j| Point::new(i as f64, j as f64))).collect();
        let hull = convex_hull(&pts);
        assert_eq!(hull.len(), 4);
        assert_eq!(libm::fabs(shoelace(&hull)), 9.0);
    }
}
