//! Plane geometry primitives shared by the map, fusion and free-space layers.
//!
//! Everything here is small, allocation-light and deterministic: points,
//! segment projections, polygon area/containment, convex hulls and segment
//! intersection tests. Angles are radians; distances are meters.

use serde::{Deserialize, Serialize};

use crate::scalar::Real;

/// A point (or free 2-D vector) in the map frame, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint<T> {
    pub x: T,
    pub y: T,
}

impl<T: Real> TrackPoint<T> {
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    pub fn distance_to(&self, other: &Self) -> T {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }

    /// Component-wise difference `self - other`, as a vector.
    pub fn minus(&self, other: &Self) -> Self {
        Self::new(self.x - other.x, self.y - other.y)
    }

    pub fn plus(&self, other: &Self) -> Self {
        Self::new(self.x + other.x, self.y + other.y)
    }

    pub fn scaled(&self, k: T) -> Self {
        Self::new(self.x * k, self.y * k)
    }

    pub fn dot(&self, other: &Self) -> T {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the cross product `self × other`.
    pub fn cross(&self, other: &Self) -> T {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(&self) -> T {
        self.dot(self).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Result of projecting a point onto a segment.
#[derive(Debug, Clone, Copy)]
pub struct SegmentProjection<T> {
    /// Normalized position along the segment, clamped to `[0, 1]`.
    pub t: T,
    /// Closest point on the segment.
    pub closest: TrackPoint<T>,
    /// Euclidean distance from the query point to `closest`.
    pub distance: T,
    /// Signed lateral offset: positive when the query point lies left of the
    /// segment direction `a -> b`. For degenerate segments this is the plain
    /// distance with positive sign.
    pub signed_lateral: T,
}

/// Projects `p` onto the segment `a..b` (clamped to the endpoints).
pub fn project_on_segment<T: Real>(
    p: &TrackPoint<T>,
    a: &TrackPoint<T>,
    b: &TrackPoint<T>,
) -> SegmentProjection<T> {
    let ab = b.minus(a);
    let len2 = ab.dot(&ab);
    if len2 <= T::zero() {
        let d = p.distance_to(a);
        return SegmentProjection {
            t: T::zero(),
            closest: *a,
            distance: d,
            signed_lateral: d,
        };
    }
    let t = crate::scalar::clamp(p.minus(a).dot(&ab) / len2, T::zero(), T::one());
    let closest = a.plus(&ab.scaled(t));
    let distance = p.distance_to(&closest);
    let side = ab.cross(&p.minus(a));
    let signed_lateral = if side < T::zero() { -distance } else { distance };
    SegmentProjection {
        t,
        closest,
        distance,
        signed_lateral,
    }
}

/// Distance from `p` to the infinite line through `a` and `b`; falls back to
/// the point distance when the two anchors coincide. This is the deviation
/// measure used by polyline simplification.
pub fn line_distance<T: Real>(p: &TrackPoint<T>, a: &TrackPoint<T>, b: &TrackPoint<T>) -> T {
    let ab = b.minus(a);
    let len = ab.norm();
    if len <= T::zero() {
        return p.distance_to(a);
    }
    (ab.cross(&p.minus(a)) / len).abs()
}

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle<T: Real>(a: T) -> T {
    let two_pi = T::PI() + T::PI();
    let mut r = a % two_pi;
    if r <= -T::PI() {
        r += two_pi;
    } else if r > T::PI() {
        r -= two_pi;
    }
    r
}

/// Signed area of a simple polygon (positive for counter-clockwise vertex
/// order). The polygon is implicitly closed.
pub fn polygon_signed_area<T: Real>(poly: &[TrackPoint<T>]) -> T {
    if poly.len() < 3 {
        return T::zero();
    }
    let mut acc = T::zero();
    for i in 0..poly.len() {
        let a = &poly[i];
        let b = &poly[(i + 1) % poly.len()];
        acc += a.cross(b);
    }
    acc / T::of(2.0)
}

/// Point-in-polygon test with a boundary tolerance: returns true when `p` is
/// strictly inside (even-odd rule) or within `eps` of any edge.
pub fn point_in_polygon<T: Real>(p: &TrackPoint<T>, poly: &[TrackPoint<T>], eps: T) -> bool {
    if poly.is_empty() {
        return false;
    }
    if poly.len() == 1 {
        return p.distance_to(&poly[0]) <= eps;
    }
    let mut inside = false;
    for i in 0..poly.len() {
        let a = &poly[i];
        let b = &poly[(i + 1) % poly.len()];
        if project_on_segment(p, a, b).distance <= eps {
            return true;
        }
        // Even-odd ray cast along +x.
        let crosses = (a.y > p.y) != (b.y > p.y);
        if crosses {
            let x_hit = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if x_hit > p.x {
                inside = !inside;
            }
        }
    }
    inside
}

/// True when segments `a1..a2` and `b1..b2` touch or cross (collinear overlap
/// counts as intersecting).
pub fn segments_intersect<T: Real>(
    a1: &TrackPoint<T>,
    a2: &TrackPoint<T>,
    b1: &TrackPoint<T>,
    b2: &TrackPoint<T>,
) -> bool {
    let d1 = a2.minus(a1).cross(&b1.minus(a1));
    let d2 = a2.minus(a1).cross(&b2.minus(a1));
    let d3 = b2.minus(b1).cross(&a1.minus(b1));
    let d4 = b2.minus(b1).cross(&a2.minus(b1));
    let zero = T::zero();
    if ((d1 > zero && d2 < zero) || (d1 < zero && d2 > zero))
        && ((d3 > zero && d4 < zero) || (d3 < zero && d4 > zero))
    {
        return true;
    }
    let on = |d: T, p: &TrackPoint<T>, q1: &TrackPoint<T>, q2: &TrackPoint<T>| {
        d == zero
            && p.x >= q1.x.min(q2.x)
            && p.x <= q1.x.max(q2.x)
            && p.y >= q1.y.min(q2.y)
            && p.y <= q1.y.max(q2.y)
    };
    on(d1, b1, a1, a2) || on(d2, b2, a1, a2) || on(d3, a1, b1, b2) || on(d4, a2, b1, b2)
}

/// True when two convex polygons overlap or touch. Vertex containment plus
/// edge intersection covers all convex/convex contact cases.
pub fn convex_polygons_overlap<T: Real>(a: &[TrackPoint<T>], b: &[TrackPoint<T>]) -> bool {
    if a.is_empty() || b.is_empty() {
        return false;
    }
    if b.iter().any(|p| point_in_polygon(p, a, T::zero()))
        || a.iter().any(|p| point_in_polygon(p, b, T::zero()))
    {
        return true;
    }
    for i in 0..a.len() {
        let a1 = &a[i];
        let a2 = &a[(i + 1) % a.len()];
        for j in 0..b.len() {
            if segments_intersect(a1, a2, &b[j], &b[(j + 1) % b.len()]) {
                return true;
            }
        }
    }
    false
}

/// True when a disk of `radius` around `center` touches the convex polygon:
/// either the center is inside, or some edge passes within `radius` of it.
pub fn circle_intersects_convex<T: Real>(
    center: &TrackPoint<T>,
    radius: T,
    poly: &[TrackPoint<T>],
) -> bool {
    if poly.is_empty() {
        return false;
    }
    if point_in_polygon(center, poly, T::zero()) {
        return true;
    }
    (0..poly.len()).any(|i| {
        project_on_segment(center, &poly[i], &poly[(i + 1) % poly.len()]).distance <= radius
    })
}

/// Convex hull by Andrew's monotone chain, counter-clockwise, without
/// repeating the first vertex. Duplicate input points are tolerated; collinear
/// points on the hull boundary are dropped. Inputs with fewer than three
/// distinct points return them sorted (a point or a segment).
pub fn convex_hull<T: Real>(points: &[TrackPoint<T>]) -> Vec<TrackPoint<T>> {
    let mut pts: Vec<TrackPoint<T>> = points.to_vec();
    pts.sort_by(|a, b| {
        a.x.partial_cmp(&b.x)
            .unwrap()
            .then(a.y.partial_cmp(&b.y).unwrap())
    });
    pts.dedup_by(|a, b| a.x == b.x && a.y == b.y);
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<TrackPoint<T>> = Vec::with_capacity(pts.len() * 2);
    let turns_right = |hull: &[TrackPoint<T>], p: &TrackPoint<T>| {
        let o = hull[hull.len() - 2];
        let a = hull[hull.len() - 1];
        a.minus(&o).cross(&p.minus(&o)) <= T::zero()
    };
    // Lower chain.
    for p in &pts {
        while hull.len() >= 2 && turns_right(&hull, p) {
            hull.pop();
        }
        hull.push(*p);
    }
    // Upper chain; never pop into the lower chain.
    let lower_len = hull.len() + 1;
    for p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len && turns_right(&hull, p) {
            hull.pop();
        }
        hull.push(*p);
    }
    hull.pop(); // last point equals the first
    hull
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(x: f64, y: f64) -> TrackPoint<f64> {
        TrackPoint::new(x, y)
    }

    #[test]
    fn segment_projection_basics() {
        let a = p(0.0, 0.0);
        let b = p(10.0, 0.0);
        let pr = project_on_segment(&p(3.0, 4.0), &a, &b);
        assert!((pr.t - 0.3).abs() < 1e-12);
        assert!((pr.distance - 4.0).abs() < 1e-12);
        assert!((pr.signed_lateral - 4.0).abs() < 1e-12);

        // Right of the direction of travel is negative.
        let pr = project_on_segment(&p(3.0, -4.0), &a, &b);
        assert!((pr.signed_lateral + 4.0).abs() < 1e-12);

        // Beyond the end the projection clamps.
        let pr = project_on_segment(&p(12.0, 1.0), &a, &b);
        assert!((pr.t - 1.0).abs() < 1e-12);
        assert!((pr.distance - (4.0 + 1.0f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn degenerate_segment_projects_to_point() {
        let a = p(2.0, 2.0);
        let pr = project_on_segment(&p(5.0, 6.0), &a, &a);
        assert!((pr.distance - 5.0).abs() < 1e-12);
        assert_eq!(pr.t, 0.0);
    }

    #[test]
    fn line_distance_matches_hand_values() {
        let a = p(0.0, 0.0);
        let b = p(10.0, 0.0);
        assert!((line_distance(&p(20.0, 3.0), &a, &b) - 3.0).abs() < 1e-12);
        assert!((line_distance(&p(5.0, -2.0), &a, &b) - 2.0).abs() < 1e-12);
        assert!((line_distance(&p(1.0, 1.0), &a, &a) - 2.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn normalize_angle_wraps() {
        use std::f64::consts::PI;
        assert!((normalize_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((normalize_angle(-3.0 * PI) - PI).abs() < 1e-12);
        assert!((normalize_angle(0.3f64) - 0.3).abs() < 1e-12);
        let w = normalize_angle(-0.1 - 2.0 * PI);
        assert!((w + 0.1).abs() < 1e-12);
    }

    #[test]
    fn polygon_area_square() {
        let sq = [p(0.0, 0.0), p(2.0, 0.0), p(2.0, 2.0), p(0.0, 2.0)];
        assert!((polygon_signed_area(&sq) - 4.0).abs() < 1e-12);
        let cw: Vec<_> = sq.iter().rev().copied().collect();
        assert!((polygon_signed_area(&cw) + 4.0).abs() < 1e-12);
    }

    #[test]
    fn point_in_polygon_interior_boundary_exterior() {
        let sq = [p(0.0, 0.0), p(2.0, 0.0), p(2.0, 2.0), p(0.0, 2.0)];
        assert!(point_in_polygon(&p(1.0, 1.0), &sq, 0.0));
        assert!(point_in_polygon(&p(2.0, 1.0), &sq, 1e-9));
        assert!(!point_in_polygon(&p(2.5, 1.0), &sq, 0.0));
        assert!(point_in_polygon(&p(2.4, 1.0), &sq, 0.5));
    }

    #[test]
    fn segment_intersection_cases() {
        // Proper crossing.
        assert!(segments_intersect(
            &p(0.0, 0.0),
            &p(2.0, 2.0),
            &p(0.0, 2.0),
            &p(2.0, 0.0)
        ));
        // Shared endpoint.
        assert!(segments_intersect(
            &p(0.0, 0.0),
            &p(1.0, 0.0),
            &p(1.0, 0.0),
            &p(2.0, 1.0)
        ));
        // Collinear overlap.
        assert!(segments_intersect(
            &p(0.0, 0.0),
            &p(2.0, 0.0),
            &p(1.0, 0.0),
            &p(3.0, 0.0)
        ));
        // Parallel, disjoint.
        assert!(!segments_intersect(
            &p(0.0, 0.0),
            &p(2.0, 0.0),
            &p(0.0, 1.0),
            &p(2.0, 1.0)
        ));
    }

    #[test]
    fn convex_overlap_contained_and_disjoint() {
        let big = [p(0.0, 0.0), p(4.0, 0.0), p(4.0, 4.0), p(0.0, 4.0)];
        let small = [p(1.0, 1.0), p(2.0, 1.0), p(2.0, 2.0), p(1.0, 2.0)];
        let far = [p(10.0, 10.0), p(11.0, 10.0), p(11.0, 11.0), p(10.0, 11.0)];
        assert!(convex_polygons_overlap(&big, &small));
        assert!(convex_polygons_overlap(&small, &big));
        assert!(!convex_polygons_overlap(&big, &far));
    }

    #[test]
    fn circle_touches_convex_polygon() {
        let square = [p(0.0, 0.0), p(4.0, 0.0), p(4.0, 4.0), p(0.0, 4.0)];
        // Center inside.
        assert!(circle_intersects_convex(&p(2.0, 2.0), 0.1, &square));
        // Outside, disk reaches an edge (distance 0.5 <= r).
        assert!(circle_intersects_convex(&p(4.5, 2.0), 0.5, &square));
        // Outside, just short of the edge.
        assert!(!circle_intersects_convex(&p(4.51, 2.0), 0.5, &square));
        // Near a corner: distance to (4,4) is sqrt(2)*0.5 ~ 0.707.
        assert!(!circle_intersects_convex(&p(4.5, 4.5), 0.7, &square));
        assert!(circle_intersects_convex(&p(4.5, 4.5), 0.71, &square));
        assert!(!circle_intersects_convex(&p(0.0, 0.0), 1.0, &[]));
    }

    #[test]
    fn hull_of_square_with_interior_points() {
        let pts = [
            p(0.0, 0.0),
            p(2.0, 0.0),
            p(2.0, 2.0),
            p(0.0, 2.0),
            p(1.0, 1.0),
            p(0.5, 0.5),
            p(1.0, 0.0), // collinear on an edge
        ];
        let h = convex_hull(&pts);
        assert_eq!(h.len(), 4);
        assert!(polygon_signed_area(&h) > 0.0);
        for q in &pts {
            assert!(point_in_polygon(q, &h, 1e-9));
        }
    }

    #[test]
    fn hull_degenerate_inputs() {
        assert_eq!(convex_hull::<f64>(&[]).len(), 0);
        assert_eq!(convex_hull(&[p(1.0, 1.0)]).len(), 1);
        assert_eq!(convex_hull(&[p(1.0, 1.0), p(1.0, 1.0)]).len(), 1);
        // Collinear points collapse to the two extremes.
        let h = convex_hull(&[p(0.0, 0.0), p(1.0, 1.0), p(2.0, 2.0)]);
        assert_eq!(h.len(), 2);
    }

    proptest! {
        #[test]
        fn hull_contains_all_inputs_and_is_convex(
            xs in proptest::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..40)
        ) {
            let pts: Vec<_> = xs.iter().map(|&(x, y)| p(x, y)).collect();
            let h = convex_hull(&pts);
            prop_assert!(!h.is_empty());
            if h.len() >= 3 {
                // Counter-clockwise and convex at every corner.
                for i in 0..h.len() {
                    let o = h[i];
                    let a = h[(i + 1) % h.len()];
                    let b = h[(i + 2) % h.len()];
                    prop_assert!(a.minus(&o).cross(&b.minus(&o)) > 0.0);
                }
                for q in &pts {
                    prop_assert!(point_in_polygon(q, &h, 1e-7));
                }
            }
        }
    }
}
