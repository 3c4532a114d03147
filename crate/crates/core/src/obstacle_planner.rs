//! Obstacle handling: detection zones, movement authority and warning bell.
//!
//! The planner places two nested corridors along the upcoming track — a
//! narrow *collision* zone the vehicle will physically sweep and a wider
//! *warning* zone around it — and intersects them with everything the
//! perception side reports: confirmed fused tracks and occupied free-space
//! polygons. An intrusion into the collision zone pulls the movement
//! authority limit to a stop offset in front of the obstacle; an intrusion
//! into the warning zone alone never brakes the vehicle, it only rings the
//! warning bell. Zone widths widen at platforms and crossings, where people
//! stand close to the rails.

use serde::{Deserialize, Serialize};

use crate::free_space::OccupiedPolygon;
use crate::fusion::{FusedTrack, ObjectClass, TrackStatus};
use crate::geom::{circle_intersects_convex, convex_polygons_overlap, TrackPoint};
use crate::scalar::Real;
use crate::signal_planner::{MalSource, MovementAuthorityLimit, PlannerFault};
use crate::track_map::{ElementKind, MapError, TrackMap};

/// Zone geometry defaults, exposed to scenario configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ZoneConfig<T> {
    /// Half-width of the collision corridor, meters.
    pub collision_half_width_m: T,
    /// Half-width of the warning corridor on plain track, meters.
    pub warning_half_width_m: T,
    /// Warning half-width across platforms and crossings, meters.
    pub special_warning_half_width_m: T,
}

impl<T: Real> Default for ZoneConfig<T> {
    fn default() -> Self {
        ZoneConfig {
            collision_half_width_m: T::of(1.5),
            warning_half_width_m: T::of(3.0),
            special_warning_half_width_m: T::of(4.0),
        }
    }
}

/// Stopping and bell behavior, exposed to scenario configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObstacleDynamics<T> {
    /// Service brake deceleration used for the bell's braking-distance test.
    pub a_service: T,
    /// Ring the bell whenever a collision intrusion is closer than this.
    pub bell_distance_m: T,
    /// The MAL is placed this far in front of the nearest intrusion.
    pub stop_offset_m: T,
}

impl<T: Real> Default for ObstacleDynamics<T> {
    fn default() -> Self {
        ObstacleDynamics {
            a_service: T::of(1.2),
            bell_distance_m: T::of(30.0),
            stop_offset_m: T::of(5.0),
        }
    }
}

/// One quad of a zone corridor covering the chainage span `[s_start, s_end]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ZonePiece<T> {
    pub s_start: T,
    pub s_end: T,
    /// Counter-clockwise quad: right edge forward, left edge back.
    pub quad: [TrackPoint<T>; 4],
    pub half_width: T,
}

/// Collision and warning corridors ahead of the vehicle, piecewise so an
/// intrusion can be resolved to a chainage. Pieces are contiguous and
/// ordered; piece boundaries fall on every meter and on special-element
/// edges, so width changes are exact.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionZones<T> {
    pub origin_s: T,
    /// End of the covered span (clamped to the track length).
    pub end_s: T,
    pub collision: Vec<ZonePiece<T>>,
    pub warning: Vec<ZonePiece<T>>,
}

/// What the obstacle side demands from the vehicle this cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObstacleDecision<T> {
    pub mal: MovementAuthorityLimit<T>,
    pub bell: bool,
    /// Chainage of the nearest collision-zone intrusion, if any.
    pub nearest_obstacle_s: Option<T>,
}

/// Which perception output an anomaly refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObstacleRef {
    /// Fused track id.
    Track(u64),
    /// Index into the occupied-polygon list.
    Polygon(usize),
}

/// Inputs the planner ignores but a healthy system should not produce.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ObstacleAnomaly<T> {
    /// A confirmed obstacle within collision width of the centerline sits
    /// behind the vehicle: either it was driven past (a miss upstream) or
    /// localization jumped ahead of it.
    BehindVehicle { source: ObstacleRef, s_m: T },
}

// ---- zone construction ----

fn special_spans<T: Real>(map: &TrackMap<T>, s0: T, s1: T) -> Vec<(T, T)> {
    map.elements()
        .iter()
        .filter(|e| {
            matches!(
                e.kind,
                ElementKind::Platform { .. }
                    | ElementKind::RoadCrossing
                    | ElementKind::PedestrianCrossing
            )
        })
        .filter(|e| e.s_end > s0 && e.s_start < s1)
        .map(|e| (e.s_start.max(s0), e.s_end.min(s1)))
        .collect()
}

fn corridor_pieces<T: Real>(
    map: &TrackMap<T>,
    breaks: &[T],
    width_at: impl Fn(T) -> T,
) -> Result<Vec<ZonePiece<T>>, MapError> {
    let mut pieces = Vec::with_capacity(breaks.len().saturating_sub(1));
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        let half = width_at((a + b) * T::of(0.5));
        let (pa, ha) = map.point_at(a)?;
        let (pb, hb) = map.point_at(b)?;
        let na = TrackPoint::new(-ha.sin(), ha.cos());
        let nb = TrackPoint::new(-hb.sin(), hb.cos());
        pieces.push(ZonePiece {
            s_start: a,
            s_end: b,
            quad: [
                pa.minus(&na.scaled(half)),
                pb.minus(&nb.scaled(half)),
                pb.plus(&nb.scaled(half)),
                pa.plus(&na.scaled(half)),
            ],
            half_width: half,
        });
    }
    Ok(pieces)
}

/// Builds the detection zones over `[s, s + lookahead]`, truncated at the
/// track end. The warning corridor widens over platform and crossing spans.
pub fn build_zones<T: Real>(
    map: &TrackMap<T>,
    s: T,
    lookahead: T,
    cfg: &ZoneConfig<T>,
) -> Result<DetectionZones<T>, MapError> {
    if !(lookahead > T::zero()) || !lookahead.is_finite() {
        return Err(MapError::InvalidRange {
            s0: s.to_f64().unwrap_or(f64::NAN),
            s1: (s + lookahead).to_f64().unwrap_or(f64::NAN),
        });
    }
    let s0 = s.max(T::zero()).min(map.length());
    let s1 = (s + lookahead).min(map.length());
    if s1 - s0 <= T::of(1e-9) {
        // At (or past) the end of the track there is nothing left to sweep.
        return Ok(DetectionZones {
            origin_s: s0,
            end_s: s0,
            collision: Vec::new(),
            warning: Vec::new(),
        });
    }
    let specials = special_spans(map, s0, s1);
    // Breakpoints: every meter plus exact special-element edges.
    let mut breaks = Vec::new();
    let mut cursor = s0;
    while cursor < s1 {
        breaks.push(cursor);
        cursor = cursor + T::one();
    }
    breaks.push(s1);
    for &(a, b) in &specials {
        breaks.push(a);
        breaks.push(b);
    }
    breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    breaks.dedup_by(|a, b| (*a - *b).abs() < T::of(1e-9));

    let collision = corridor_pieces(map, &breaks, |_| cfg.collision_half_width_m)?;
    let warning = corridor_pieces(map, &breaks, |mid| {
        if specials.iter().any(|&(a, b)| mid >= a && mid < b) {
            cfg.special_warning_half_width_m
        } else {
            cfg.warning_half_width_m
        }
    })?;
    Ok(DetectionZones {
        origin_s: s0,
        end_s: s1,
        collision,
        warning,
    })
}

// ---- intrusion tests ----

/// An obstacle's shape, unified over both perception sources.
enum Footprint<'a, T> {
    Disk { center: TrackPoint<T>, radius: T },
    Convex(&'a [TrackPoint<T>]),
}

impl<T: Real> Footprint<'_, T> {
    fn intersects(&self, quad: &[TrackPoint<T>; 4]) -> bool {
        match self {
            Footprint::Disk { center, radius } => {
                circle_intersects_convex(center, *radius, quad)
            }
            Footprint::Convex(poly) => convex_polygons_overlap(poly, quad),
        }
    }

    /// Earliest chainage the footprint can reach (along-track projection of
    /// its rear extent).
    fn min_chainage(&self, map: &TrackMap<T>) -> T {
        match self {
            Footprint::Disk { center, radius } => map.project(center).s - *radius,
            Footprint::Convex(poly) => poly
                .iter()
                .map(|v| map.project(v).s)
                .fold(T::infinity(), T::min),
        }
    }

    fn lateral_distance(&self, map: &TrackMap<T>) -> T {
        match self {
            Footprint::Disk { center, radius } => {
                (map.project(center).distance - *radius).max(T::zero())
            }
            Footprint::Convex(poly) => poly
                .iter()
                .map(|v| map.project(v).distance)
                .fold(T::infinity(), T::min),
        }
    }
}

/// Collision footprint radius by object class. Pedestrians are small but
/// never smaller than a shoulder width; vehicles get half their typical
/// width; unknown objects a cautious middle ground.
pub fn class_footprint_radius<T: Real>(class: ObjectClass) -> T {
    T::of(match class {
        ObjectClass::Pedestrian => 0.3,
        ObjectClass::Car => 1.0,
        ObjectClass::Tram => 1.3,
        ObjectClass::Infrastructure => 0.3,
        ObjectClass::Unknown => 0.5,
    })
}

/// Chainage at which the footprint first intrudes the piecewise corridor, or
/// `None`. The piece grid resolves *where* the overlap happens; the
/// footprint's own rear extent refines the answer inside that piece.
fn first_intrusion<T: Real>(
    fp: &Footprint<T>,
    pieces: &[ZonePiece<T>],
    map: &TrackMap<T>,
) -> Option<T> {
    let piece = pieces.iter().find(|piece| fp.intersects(&piece.quad))?;
    Some(
        fp.min_chainage(map)
            .max(piece.s_start)
            .min(piece.s_end),
    )
}

/// Chainage at which a disk footprint first intrudes the given corridor, or
/// `None`. Exposed for ground-truth bookkeeping (the simulator measures real
/// margins with the same geometry the planner uses).
pub fn disk_intrusion_chainage<T: Real>(
    center: &TrackPoint<T>,
    radius: T,
    pieces: &[ZonePiece<T>],
    map: &TrackMap<T>,
) -> Option<T> {
    first_intrusion(
        &Footprint::Disk {
            center: *center,
            radius,
        },
        pieces,
        map,
    )
}

// ---- decision ----

/// Evaluates all confirmed tracks and occupied polygons against the zones.
///
/// The nearest collision-zone intrusion sets the MAL to `stop_offset` in
/// front of it (clamped so it never falls behind the vehicle); with no
/// intrusion the MAL is the zone horizon end. The bell rings when the
/// collision intrusion is within braking distance or within
/// `bell_distance_m`, or when any obstacle touches only the warning zone —
/// for those, ringing is the *only* response. Obstacles projecting behind
/// the vehicle are ignored; the ones within collision width of the
/// centerline are reported as anomalies, because a healthy run never passes
/// that close to a confirmed obstacle.
pub fn decide<T: Real>(
    vehicle: &crate::localization::TrackFix<T>,
    tracks: &[FusedTrack<T>],
    polygons: &[OccupiedPolygon<T>],
    zones: &DetectionZones<T>,
    dynamics: &ObstacleDynamics<T>,
    map: &TrackMap<T>,
) -> (ObstacleDecision<T>, Vec<ObstacleAnomaly<T>>) {
    let mut anomalies = Vec::new();
    let mut nearest_collision: Option<T> = None;
    let mut warning_only = false;

    let mut consider = |fp: Footprint<T>, source: ObstacleRef| {
        let rear_s = fp.min_chainage(map);
        let front_reach = match &fp {
            Footprint::Disk { radius, .. } => rear_s + *radius + *radius,
            Footprint::Convex(poly) => poly
                .iter()
                .map(|v| map.project(v).s)
                .fold(T::neg_infinity(), T::max),
        };
        if front_reach < vehicle.s_m {
            if fp.lateral_distance(map) <= zones
                .collision
                .first()
                .map_or(T::of(1.5), |p| p.half_width)
            {
                anomalies.push(ObstacleAnomaly::BehindVehicle {
                    source,
                    s_m: rear_s,
                });
            }
            return;
        }
        if let Some(s_obs) = first_intrusion(&fp, &zones.collision, map) {
            nearest_collision = Some(match nearest_collision {
                Some(cur) => cur.min(s_obs),
                None => s_obs,
            });
        } else if first_intrusion(&fp, &zones.warning, map).is_some() {
            warning_only = true;
        }
    };

    for track in tracks {
        if track.status != TrackStatus::Confirmed {
            continue;
        }
        consider(
            Footprint::Disk {
                center: track.position(),
                radius: class_footprint_radius(track.class),
            },
            ObstacleRef::Track(track.id.0),
        );
    }
    for (i, poly) in polygons.iter().enumerate() {
        if poly.vertices.is_empty() {
            continue;
        }
        consider(Footprint::Convex(&poly.vertices), ObstacleRef::Polygon(i));
    }

    let decision = match nearest_collision {
        Some(s_obs) => {
            let gap = s_obs - vehicle.s_m;
            let braking = vehicle.speed_mps * vehicle.speed_mps
                / (T::of(2.0) * dynamics.a_service);
            ObstacleDecision {
                mal: MovementAuthorityLimit {
                    limit_s: (s_obs - dynamics.stop_offset_m).max(vehicle.s_m),
                    source: MalSource::Obstacle,
                },
                bell: gap < braking || gap < dynamics.bell_distance_m || warning_only,
                nearest_obstacle_s: Some(s_obs),
            }
        }
        None => ObstacleDecision {
            mal: MovementAuthorityLimit {
                limit_s: zones.end_s,
                source: MalSource::TrackEnd,
            },
            bell: warning_only,
            nearest_obstacle_s: None,
        },
    };
    (decision, anomalies)
}

// ---- grid separators ----

/// Pulls a movement authority limit out of grid-separator intervals: the
/// vehicle must not come to a halt under a dead section of overhead wire, so
/// a limit inside `[s0, s1)` moves to `s0 - margin`. Cascades across
/// adjacent separators. Fails when the pulled-back limit would land behind
/// the vehicle — there is no legal place left to stop.
pub fn grid_separator_adjust<T: Real>(
    mal: MovementAuthorityLimit<T>,
    map: &TrackMap<T>,
    vehicle_s: T,
    margin: T,
) -> Result<MovementAuthorityLimit<T>, PlannerFault> {
    let separators: Vec<(T, T)> = map
        .elements()
        .iter()
        .filter(|e| matches!(e.kind, ElementKind::GridSeparator))
        .map(|e| (e.s_start, e.s_end))
        .collect();
    let mut limit = mal.limit_s;
    // Each adjustment moves the limit strictly backward, so one pass per
    // separator suffices.
    for _ in 0..=separators.len() {
        match separators
            .iter()
            .find(|&&(a, b)| limit >= a && limit < b)
        {
            Some(&(a, _)) => limit = a - margin,
            None => break,
        }
    }
    if limit < vehicle_s {
        return Err(PlannerFault::InfeasibleStop {
            limit_s: limit.to_f64().unwrap_or(f64::NAN),
            vehicle_s: vehicle_s.to_f64().unwrap_or(f64::NAN),
        });
    }
    Ok(MovementAuthorityLimit {
        limit_s: limit,
        source: mal.source,
    })
}
