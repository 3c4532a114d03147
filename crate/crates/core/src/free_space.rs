//! Free-space detection from lidar point clouds.
//!
//! Obstacle *tracking* (see [`crate::fusion`]) only finds objects a detector
//! has learned to classify. Free-space detection is the complementary safety
//! net: instead of asking "which objects are there?" it asks "is the space
//! the vehicle is about to sweep actually empty?" and treats any unexplained
//! geometry as occupied.
//!
//! Pipeline: merge the clouds of all lidars into the map frame (using the
//! vehicle pose at each point's timestamp — clouds are not captured in an
//! instant), keep only returns inside the clearance gauge around the track,
//! cluster the survivors by density, wrap each cluster in a convex hull
//! (degenerate clusters get inflated to a minimal square so a single hard
//! return is never lost), and — in conservative mode — extend occlusion
//! shadows behind every hull, because space the sensor cannot see must not be
//! declared free.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{convex_hull, normalize_angle, polygon_signed_area, TrackPoint};
use crate::localization::Pose2D;
use crate::scalar::Real;
use crate::track_map::TrackMap;

/// One lidar return in the sensor frame, meters, with its capture timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LidarPoint<T> {
    pub x: T,
    pub y: T,
    pub z: T,
    pub t_s: T,
}

/// Rigid mount of a sensor in the vehicle frame (planar pose plus height).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorExtrinsic<T> {
    pub x: T,
    pub y: T,
    pub z: T,
    pub yaw: T,
}

/// A cloud from one sensor for one processing cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorCloud<T> {
    pub sensor: String,
    pub points: Vec<LidarPoint<T>>,
}

/// A lidar return transformed into the map frame; `z` is height above rail.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignedPoint<T> {
    pub position: TrackPoint<T>,
    pub z: T,
}

/// Height/width window that matters for collisions: returns below `z_min`
/// are ground or rail clutter, above `z_max` clear the vehicle, and beyond
/// `lateral_half_width` of the centerline they are outside the swept volume.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClearanceGauge<T> {
    pub z_min: T,
    pub z_max: T,
    pub lateral_half_width: T,
}

impl<T: Real> Default for ClearanceGauge<T> {
    fn default() -> Self {
        ClearanceGauge {
            z_min: T::of(0.3),
            z_max: T::of(3.8),
            lateral_half_width: T::of(1.5),
        }
    }
}

/// Convex region of space considered occupied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupiedPolygon<T> {
    /// Counter-clockwise vertices.
    pub vertices: Vec<TrackPoint<T>>,
    /// Lidar returns that support this region (0 for occlusion shadows).
    pub point_count: usize,
    /// True when the region is inferred (not directly observed): the volume
    /// hidden behind an obstacle in conservative mode.
    pub is_shadow: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FreeSpaceConfig<T> {
    /// Density-connectivity radius for clustering, meters.
    pub cluster_eps: T,
    /// Clusters with fewer points are discarded as noise.
    pub min_points: usize,
    /// Extend occlusion shadows behind obstacles.
    pub conservative: bool,
    /// Sensor range used to bound occlusion shadows, meters.
    pub max_range: T,
}

impl<T: Real> Default for FreeSpaceConfig<T> {
    fn default() -> Self {
        FreeSpaceConfig {
            cluster_eps: T::of(0.5),
            min_points: 3,
            conservative: false,
            max_range: T::of(80.0),
        }
    }
}

#[derive(Debug, Error)]
pub enum FreeSpaceError {
    #[error("no extrinsic calibration for sensor `{sensor}`")]
    MissingExtrinsic { sensor: String },
}

// ---- alignment ----

/// Merges sensor clouds into the map frame.
///
/// Each point is transformed sensor → vehicle (static extrinsic) and vehicle
/// → map using the vehicle pose *at the point's own timestamp*, supplied by
/// `pose_at`. A spinning lidar sweeps tens of milliseconds per revolution; at
/// tram speeds ignoring that smears obstacles by decimeters. Output order is
/// deterministic: clouds in input order, points in cloud order.
pub fn align_clouds<T: Real>(
    clouds: &[SensorCloud<T>],
    extrinsics: &BTreeMap<String, SensorExtrinsic<T>>,
    mut pose_at: impl FnMut(T) -> Pose2D<T>,
) -> Result<Vec<AlignedPoint<T>>, FreeSpaceError> {
    let mut out = Vec::with_capacity(clouds.iter().map(|c| c.points.len()).sum());
    for cloud in clouds {
        let ext = extrinsics
            .get(&cloud.sensor)
            .ok_or_else(|| FreeSpaceError::MissingExtrinsic {
                sensor: cloud.sensor.clone(),
            })?;
        let (ext_sin, ext_cos) = ext.yaw.sin_cos();
        for p in &cloud.points {
            // Sensor frame -> vehicle frame.
            let vx = ext.x + p.x * ext_cos - p.y * ext_sin;
            let vy = ext.y + p.x * ext_sin + p.y * ext_cos;
            // Vehicle frame -> map frame at the point's capture time.
            let pose = pose_at(p.t_s);
            let (h_sin, h_cos) = pose.heading.sin_cos();
            out.push(AlignedPoint {
                position: TrackPoint::new(
                    pose.x + vx * h_cos - vy * h_sin,
                    pose.y + vx * h_sin + vy * h_cos,
                ),
                z: p.z + ext.z,
            });
        }
    }
    Ok(out)
}

/// Keeps only returns inside the clearance gauge: height window plus lateral
/// corridor around the centerline.
pub fn gauge_filter<T: Real>(
    points: &[AlignedPoint<T>],
    gauge: &ClearanceGauge<T>,
    map: &TrackMap<T>,
) -> Vec<AlignedPoint<T>> {
    points
        .iter()
        .filter(|p| {
            p.z >= gauge.z_min
                && p.z <= gauge.z_max
                && map.project(&p.position).distance <= gauge.lateral_half_width
        })
        .copied()
        .collect()
}

// ---- clustering ----

/// Density-connected clustering: points within `eps` of each other belong to
/// the same cluster (transitively); clusters smaller than `min_points` are
/// discarded as noise. Returns sorted index lists, ordered by each cluster's
/// smallest member, so output is deterministic for a given input order.
pub fn cluster<T: Real>(points: &[TrackPoint<T>], eps: T, min_points: usize) -> Vec<Vec<usize>> {
    if points.is_empty() || !(eps > T::zero()) {
        return Vec::new();
    }
    // Uniform grid with eps-sized cells: neighbors of a point can only live
    // in the 3x3 cell block around it.
    let cell = |p: &TrackPoint<T>| -> (i64, i64) {
        (
            (p.x / eps).floor().to_i64().unwrap_or(0),
            (p.y / eps).floor().to_i64().unwrap_or(0),
        )
    };
    let mut grid: BTreeMap<(i64, i64), Vec<usize>> = BTreeMap::new();
    for (i, p) in points.iter().enumerate() {
        grid.entry(cell(p)).or_default().push(i);
    }
    let eps2 = eps * eps;
    let mut visited = vec![false; points.len()];
    let mut clusters = Vec::new();
    for start in 0..points.len() {
        if visited[start] {
            continue;
        }
        visited[start] = true;
        let mut members = vec![start];
        let mut queue = vec![start];
        while let Some(i) = queue.pop() {
            let (cx, cy) = cell(&points[i]);
            for dx in -1..=1 {
                for dy in -1..=1 {
                    let Some(bucket) = grid.get(&(cx + dx, cy + dy)) else {
                        continue;
                    };
                    for &j in bucket {
                        if !visited[j] {
                            let d = points[i].minus(&points[j]);
                            if d.dot(&d) <= eps2 {
                                visited[j] = true;
                                members.push(j);
                                queue.push(j);
                            }
                        }
                    }
                }
            }
        }
        if members.len() >= min_points {
            members.sort_unstable();
            clusters.push(members);
        }
    }
    clusters
}

// ---- hulls ----

fn ensure_ccw<T: Real>(mut poly: Vec<TrackPoint<T>>) -> Vec<TrackPoint<T>> {
    if polygon_signed_area(&poly) < T::zero() {
        poly.reverse();
    }
    poly
}

/// Convex hull of a cluster. Degenerate clusters (single point or collinear
/// points) have zero area and would vanish from overlap tests, so they are
/// inflated to a square / rectangle of side `degenerate_side` instead —
/// a confirmed lidar return must keep spatial extent.
pub fn hull_polygon<T: Real>(
    points: &[TrackPoint<T>],
    degenerate_side: T,
) -> Vec<TrackPoint<T>> {
    let h = convex_hull(points);
    let half = degenerate_side * T::of(0.5);
    match h.len() {
        0 => Vec::new(),
        1 => {
            let p = h[0];
            ensure_ccw(vec![
                TrackPoint::new(p.x - half, p.y - half),
                TrackPoint::new(p.x + half, p.y - half),
                TrackPoint::new(p.x + half, p.y + half),
                TrackPoint::new(p.x - half, p.y + half),
            ])
        }
        2 => {
            let (a, b) = (h[0], h[1]);
            let dir = b.minus(&a);
            let len = dir.norm();
            let n = TrackPoint::new(-dir.y / len, dir.x / len).scaled(half);
            ensure_ccw(vec![a.plus(&n), b.plus(&n), b.minus(&n), a.minus(&n)])
        }
        _ => h,
    }
}

// ---- occlusion shadows ----

/// Builds the occluded region behind each polygon as seen from `origin`:
/// the quad spanned by the polygon's two angular-extreme (tangent) vertices,
/// extended radially out to `max_range`. Space inside this region produced no
/// returns *because it is hidden*, so conservative planning treats it as
/// occupied. Polygons containing the origin or fully beyond range yield none.
pub fn occlusion_shadows<T: Real>(
    polygons: &[OccupiedPolygon<T>],
    origin: TrackPoint<T>,
    max_range: T,
) -> Vec<OccupiedPolygon<T>> {
    let mut shadows = Vec::new();
    for poly in polygons {
        if poly.vertices.len() < 3 {
            continue;
        }
        // Reference direction: polygon centroid as seen from the origin.
        let n = T::from_usize(poly.vertices.len()).unwrap();
        let cx = poly.vertices.iter().map(|v| v.x).sum::<T>() / n;
        let cy = poly.vertices.iter().map(|v| v.y).sum::<T>() / n;
        let center_dir = (cy - origin.y).atan2(cx - origin.x);

        let mut right: Option<(T, TrackPoint<T>)> = None; // most negative offset
        let mut left: Option<(T, TrackPoint<T>)> = None; // most positive offset
        let mut nearest = T::infinity();
        for v in &poly.vertices {
            let d = v.distance_to(&origin);
            if d <= T::zero() {
                continue;
            }
            nearest = nearest.min(d);
            let ang = normalize_angle((v.y - origin.y).atan2(v.x - origin.x) - center_dir);
            if right.map_or(true, |(a, _)| ang < a) {
                right = Some((ang, *v));
            }
            if left.map_or(true, |(a, _)| ang > a) {
                left = Some((ang, *v));
            }
        }
        let (Some((_, vr)), Some((_, vl))) = (right, left) else {
            continue;
        };
        if nearest >= max_range || vr == vl {
            continue;
        }
        let extend = |v: TrackPoint<T>| -> TrackPoint<T> {
            let d = v.minus(&origin);
            let len = d.norm();
            origin.plus(&d.scaled(max_range / len))
        };
        let quad = ensure_ccw(vec![vr, extend(vr), extend(vl), vl]);
        shadows.push(OccupiedPolygon {
            vertices: quad,
            point_count: 0,
            is_shadow: true,
        });
    }
    shadows
}

// ---- full pipeline ----

/// Complete free-space stage on already-aligned points: gauge filter,
/// clustering, hulls and (in conservative mode) occlusion shadows from the
/// sensor origin. Every non-noise return inside the gauge ends up inside one
/// of the returned polygons.
pub fn detect_occupied<T: Real>(
    aligned: &[AlignedPoint<T>],
    map: &TrackMap<T>,
    gauge: &ClearanceGauge<T>,
    cfg: &FreeSpaceConfig<T>,
    sensor_origin: TrackPoint<T>,
) -> Vec<OccupiedPolygon<T>> {
    let kept = gauge_filter(aligned, gauge, map);
    let positions: Vec<TrackPoint<T>> = kept.iter().map(|p| p.position).collect();
    let clusters = cluster(&positions, cfg.cluster_eps, cfg.min_points);
    let degenerate_side = cfg.cluster_eps * T::of(0.5);
    let mut polygons: Vec<OccupiedPolygon<T>> = clusters
        .iter()
        .map(|members| {
            let pts: Vec<TrackPoint<T>> = members.iter().map(|&i| positions[i]).collect();
            OccupiedPolygon {
                vertices: hull_polygon(&pts, degenerate_side),
                point_count: members.len(),
                is_shadow: false,
            }
        })
        .collect();
    if cfg.conservative {
        let shadows = occlusion_shadows(&polygons, sensor_origin, cfg.max_range);
        polygons.extend(shadows);
    }
    polygons
}
