//! Planar primitives shared by rasterization, matching and the simulator.

use std::f64::consts::PI;

use crate::scene::OrientedBox;

pub type Point = [f64; 2];

/// Wraps an angle into the half-open interval (-pi, pi].
pub fn normalize_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Shoelace area; positive for counter-clockwise vertex order.
pub fn signed_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let [x0, y0] = poly[i];
        let [x1, y1] = poly[(i + 1) % n];
        acc += x0 * y1 - x1 * y0;
    }
    0.5 * acc
}

pub fn polygon_area(poly: &[Point]) -> f64 {
    signed_area(poly).abs()
}

/// Even-odd crossing test. Points exactly on an edge may land on either side.
pub fn point_in_polygon(p: Point, poly: &[Point]) -> bool {
    let n = poly.len();
    let mut inside = false;
    let mut j = n.wrapping_sub(1);
    for i in 0..n {
        let [xi, yi] = poly[i];
        let [xj, yj] = poly[j];
        if (yi > p[1]) != (yj > p[1]) {
            let x_cross = xj + (p[1] - yj) * (xi - xj) / (yi - yj);
            if p[0] < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Sutherland-Hodgman clipping of `subject` by the convex counter-clockwise
/// polygon `clip`.
pub fn clip_convex(subject: &[Point], clip: &[Point]) -> Vec<Point> {
    let mut output: Vec<Point> = subject.to_vec();
    let m = clip.len();
    for e in 0..m {
        if output.is_empty() {
            break;
        }
        let a = clip[e];
        let b = clip[(e + 1) % m];
        let input = std::mem::take(&mut output);
        let k = input.len();
        for i in 0..k {
            let cur = input[i];
            let prev = input[(i + k - 1) % k];
            let cur_in = cross(a, b, cur) >= 0.0;
            let prev_in = cross(a, b, prev) >= 0.0;
            if cur_in {
                if !prev_in {
                    output.push(line_intersection(prev, cur, a, b));
                }
                output.push(cur);
            } else if prev_in {
                output.push(line_intersection(prev, cur, a, b));
            }
        }
    }
    output
}

fn line_intersection(p: Point, q: Point, a: Point, b: Point) -> Point {
    let d1 = [q[0] - p[0], q[1] - p[1]];
    let d2 = [b[0] - a[0], b[1] - a[1]];
    let denom = d1[0] * d2[1] - d1[1] * d2[0];
    if denom.abs() < 1e-300 {
        return p;
    }
    let t = ((a[0] - p[0]) * d2[1] - (a[1] - p[1]) * d2[0]) / denom;
    [p[0] + t * d1[0], p[1] + t * d1[1]]
}

/// Area of the intersection of two convex counter-clockwise polygons.
pub fn convex_intersection_area(a: &[Point], b: &[Point]) -> f64 {
    polygon_area(&clip_convex(a, b))
}

/// Segment `from -> to` against the open interior of `b`. Returns the
/// parameter in [0, 1] at which the segment first enters the interior, or
/// `None` when it never does.
pub fn segment_box_entry(from: Point, to: Point, b: &OrientedBox) -> Option<f64> {
    let (p0, d) = to_box_frame(from, to, b);
    let half = [0.5 * b.l, 0.5 * b.w];
    let mut t_lo = f64::NEG_INFINITY;
    let mut t_hi = f64::INFINITY;
    for axis in 0..2 {
        if d[axis] == 0.0 {
            if p0[axis].abs() >= half[axis] {
                return None;
            }
        } else {
            let t1 = (-half[axis] - p0[axis]) / d[axis];
            let t2 = (half[axis] - p0[axis]) / d[axis];
            let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
            t_lo = t_lo.max(lo);
            t_hi = t_hi.min(hi);
        }
    }
    if t_lo < t_hi && t_hi > 0.0 && t_lo < 1.0 {
        Some(t_lo.max(0.0))
    } else {
        None
    }
}

/// Distance along the unit ray `origin + s * dir` (s > 0) to the first point
/// of the box boundary. Origins inside the box report 0.
pub fn ray_box_distance(origin: Point, dir: Point, b: &OrientedBox) -> Option<f64> {
    let far = [origin[0] + dir[0], origin[1] + dir[1]];
    let (p0, d) = to_box_frame(origin, far, b);
    let half = [0.5 * b.l, 0.5 * b.w];
    if p0[0].abs() <= half[0] && p0[1].abs() <= half[1] {
        return Some(0.0);
    }
    let mut t_lo = f64::NEG_INFINITY;
    let mut t_hi = f64::INFINITY;
    for axis in 0..2 {
        if d[axis] == 0.0 {
            if p0[axis].abs() > half[axis] {
                return None;
            }
        } else {
            let t1 = (-half[axis] - p0[axis]) / d[axis];
            let t2 = (half[axis] - p0[axis]) / d[axis];
            let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
            t_lo = t_lo.max(lo);
            t_hi = t_hi.min(hi);
        }
    }
    if t_lo <= t_hi && t_lo > 0.0 {
        Some(t_lo)
    } else {
        None
    }
}

/// Expresses the segment in box coordinates: (start, direction) with the
/// length axis first.
fn to_box_frame(from: Point, to: Point, b: &OrientedBox) -> (Point, Point) {
    let (s, c) = b.yaw.sin_cos();
    let rx = from[0] - b.cx;
    let ry = from[1] - b.cy;
    let dx = to[0] - from[0];
    let dy = to[1] - from[1];
    (
        [c * rx + s * ry, -s * rx + c * ry],
        [c * dx + s * dy, -s * dx + c * dy],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_is_half_open() {
        assert_eq!(normalize_angle(PI), PI);
        assert_eq!(normalize_angle(-PI), PI);
        assert!((normalize_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((normalize_angle(0.25) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn square_area_and_containment() {
        let sq = [[0.0, 0.0], [2.0, 0.0], [2.0, 2.0], [0.0, 2.0]];
        assert!((signed_area(&sq) - 4.0).abs() < 1e-12);
        assert!(point_in_polygon([1.0, 1.0], &sq));
        assert!(!point_in_polygon([3.0, 1.0], &sq));
    }

    #[test]
    fn clipping_overlapping_squares() {
        let a = [[0.0, 0.0], [2.0, 0.0], [2.0, 2.0], [0.0, 2.0]];
        let b = [[1.0, 0.0], [3.0, 0.0], [3.0, 2.0], [1.0, 2.0]];
        assert!((convex_intersection_area(&a, &b) - 2.0).abs() < 1e-12);
        let far = [[10.0, 0.0], [12.0, 0.0], [12.0, 2.0], [10.0, 2.0]];
        assert_eq!(convex_intersection_area(&a, &far), 0.0);
    }

    #[test]
    fn segment_entry_through_box() {
        let b = OrientedBox::new(10.0, 0.0, 2.0, 4.0, 0.0);
        // box spans x in [8, 12]
        let t = segment_box_entry([0.0, 0.0], [20.0, 0.0], &b).unwrap();
        assert!((t - 0.4).abs() < 1e-12);
        assert!(segment_box_entry([0.0, 5.0], [20.0, 5.0], &b).is_none());
        assert!(segment_box_entry([0.0, 0.0], [5.0, 0.0], &b).is_none());
    }

    #[test]
    fn ray_distance_to_near_face() {
        let b = OrientedBox::new(12.25, 0.0, 2.0, 4.5, 0.0);
        let d = ray_box_distance([0.0, 0.0], [1.0, 0.0], &b).unwrap();
        assert!((d - 10.0).abs() < 1e-12);
        assert!(ray_box_distance([0.0, 0.0], [-1.0, 0.0], &b).is_none());
    }
}
