//! Track map: simplified centerline, chainage and infrastructure elements.
//!
//! The map is built from a recorded reference trajectory (a dense polyline of
//! map-frame points). Construction simplifies the polyline with a bounded
//! deviation, computes cumulative chainage (arc length along the simplified
//! line, the 1-D coordinate every other module works in) and attaches
//! infrastructure elements addressed by chainage intervals.
//!
//! At runtime the map answers three questions:
//!
//! * [`TrackMap::point_at`] — where in the plane is chainage `s`?
//! * [`TrackMap::project`] — what chainage is closest to a plane point?
//! * [`TrackMap::digital_horizon`] — which elements lie in the window ahead?

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{project_on_segment, TrackPoint};
use crate::scalar::Real;
use crate::signal_state::{SignalClass, SignalHiddenState, SignalId};

// ---- infrastructure elements ----

/// Static description of a signal mast attached to the map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalDescriptor<T> {
    pub id: SignalId,
    pub class: SignalClass,
    /// Chainage where the vehicle must come to rest when the signal demands a
    /// halt. Defaults to a configured offset before the mast when absent.
    #[serde(default = "none_opt")]
    pub stop_point_s: Option<T>,
    /// Last chainage at which the vehicle may still abandon an approach and
    /// brake back to the stop point. Defaults to an offset before the stop
    /// point when absent.
    #[serde(default = "none_opt")]
    pub commit_point_s: Option<T>,
    /// Aspects that permit this vehicle to pass (route-dependent: a tram
    /// turning right needs `GoRight`, not `GoStraight`).
    pub allowed_go_states: Vec<SignalHiddenState>,
}

fn none_opt<T>() -> Option<T> {
    None
}

/// What an infrastructure element is, with its kind-specific attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum ElementKind<T> {
    /// Passenger platform; the vehicle front should rest at `stop_point_s`.
    Platform { stop_point_s: T },
    Signal(SignalDescriptor<T>),
    RoadCrossing,
    PedestrianCrossing,
    /// Permanent speed restriction over the element interval.
    SpeedLimit { limit_mps: T },
    /// Physical separation from road traffic; the vehicle must not come to a
    /// halt inside this interval.
    GridSeparator,
}

impl<T> ElementKind<T> {
    pub fn name(&self) -> &'static str {
        match self {
            ElementKind::Platform { .. } => "Platform",
            ElementKind::Signal(_) => "Signal",
            ElementKind::RoadCrossing => "RoadCrossing",
            ElementKind::PedestrianCrossing => "PedestrianCrossing",
            ElementKind::SpeedLimit { .. } => "SpeedLimit",
            ElementKind::GridSeparator => "GridSeparator",
        }
    }
}

/// An element anchored to the chainage interval `[s_start, s_end]`. Point
/// elements (signals) use `s_start == s_end`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfrastructureElement<T> {
    pub s_start: T,
    pub s_end: T,
    #[serde(flatten)]
    pub kind: ElementKind<T>,
}

impl<T: Real> InfrastructureElement<T> {
    pub fn at_point(s: T, kind: ElementKind<T>) -> Self {
        Self {
            s_start: s,
            s_end: s,
            kind,
        }
    }

    pub fn over(s_start: T, s_end: T, kind: ElementKind<T>) -> Self {
        Self {
            s_start,
            s_end,
            kind,
        }
    }

    pub fn signal(&self) -> Option<&SignalDescriptor<T>> {
        match &self.kind {
            ElementKind::Signal(d) => Some(d),
            _ => None,
        }
    }
}

// ---- errors ----

#[derive(Debug, Error)]
pub enum MapError {
    #[error("trajectory needs at least two distinct points, got {0}")]
    TooFewPoints(usize),
    #[error("non-finite coordinate at trajectory point {index}")]
    NonFinite { index: usize },
    #[error("simplification tolerance must be positive and finite, got {value}")]
    InvalidTolerance { value: f64 },
    #[error("element {index} ({kind}): chainage [{s_start}, {s_end}] invalid for track of length {length}")]
    ElementOutOfRange {
        index: usize,
        kind: &'static str,
        s_start: f64,
        s_end: f64,
        length: f64,
    },
    #[error("element {index} ({kind}): {message}")]
    ElementInvalid {
        index: usize,
        kind: &'static str,
        message: String,
    },
    #[error("duplicate signal id {id} (elements {first} and {second})")]
    DuplicateSignalId {
        id: SignalId,
        first: usize,
        second: usize,
    },
    #[error("chainage {s} outside track [0, {length}]")]
    ChainageOutOfRange { s: f64, length: f64 },
    #[error("invalid chainage range [{s0}, {s1}]")]
    InvalidRange { s0: f64, s1: f64 },
    #[error("corridor half-width must be positive, got {value}")]
    InvalidHalfWidth { value: f64 },
    #[error("lookahead must be positive, got {value}")]
    InvalidLookahead { value: f64 },
    #[error("trajectory csv: {message}{}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Csv {
        line: Option<u64>,
        message: String,
    },
    #[error("stored chainage diverges from geometry at index {index}")]
    ChainageMismatch { index: usize },
}

fn f<T: Real>(v: T) -> f64 {
    v.to_f64().unwrap_or(f64::NAN)
}

// ---- polyline simplification ----

/// Simplifies a polyline with the Douglas–Peucker split rule: a vertex is
/// dropped only while every dropped vertex stays within `tolerance` of the
/// chord between its two kept anchors, so the deviation between the input and
/// the simplified line is bounded by `tolerance`. Endpoints are always kept;
/// consecutive duplicate points are removed first.
pub fn simplify_polyline<T: Real>(
    points: &[TrackPoint<T>],
    tolerance: T,
) -> Result<Vec<TrackPoint<T>>, MapError> {
    if !(tolerance > T::zero()) || !tolerance.is_finite() {
        return Err(MapError::InvalidTolerance { value: f(tolerance) });
    }
    for (i, p) in points.iter().enumerate() {
        if !p.is_finite() {
            return Err(MapError::NonFinite { index: i });
        }
    }
    let mut pts: Vec<TrackPoint<T>> = Vec::with_capacity(points.len());
    for p in points {
        if pts.last().map_or(true, |q: &TrackPoint<T>| q != p) {
            pts.push(*p);
        }
    }
    if pts.len() < 2 {
        return Err(MapError::TooFewPoints(pts.len()));
    }

    let mut keep = vec![false; pts.len()];
    keep[0] = true;
    keep[pts.len() - 1] = true;
    // Explicit stack instead of recursion: reference trajectories can be
    // hundreds of thousands of points with adversarial split patterns.
    let mut stack = vec![(0usize, pts.len() - 1)];
    while let Some((lo, hi)) = stack.pop() {
        if hi <= lo + 1 {
            continue;
        }
        let (a, b) = (pts[lo], pts[hi]);
        let mut worst = T::zero();
        let mut worst_idx = lo;
        for (i, p) in pts.iter().enumerate().take(hi).skip(lo + 1) {
            // Distance to the chord segment (not the infinite line) so the
            // bound holds for polylines that hook back past an anchor.
            let d = project_on_segment(p, &a, &b).distance;
            if d > worst {
                worst = d;
                worst_idx = i;
            }
        }
        if worst > tolerance {
            keep[worst_idx] = true;
            stack.push((lo, worst_idx));
            stack.push((worst_idx, hi));
        }
    }
    Ok(pts
        .into_iter()
        .zip(keep)
        .filter_map(|(p, k)| k.then_some(p))
        .collect())
}

// ---- the map ----

/// Chainage and lateral offset of a plane point relative to the centerline.
#[derive(Debug, Clone, Copy)]
pub struct TrackProjection<T> {
    /// Chainage of the closest centerline point. Ties resolve to the lowest
    /// chainage.
    pub s: T,
    /// Euclidean distance to the centerline.
    pub distance: T,
    /// Signed lateral offset, positive left of the direction of travel.
    pub signed_lateral: T,
}

/// One element visible in the digital horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonEvent<T> {
    /// Distance from the query chainage to the element start, clamped to zero
    /// when the query point is already inside the element interval.
    pub distance_m: T,
    pub element: InfrastructureElement<T>,
}

/// Forward-looking slice of the map: elements and centerline geometry in
/// `(s, s + lookahead]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DigitalHorizon<T> {
    pub origin_s: T,
    /// End of the window, clamped to the track length.
    pub end_s: T,
    /// Events ordered by distance (ties keep map order).
    pub events: Vec<HorizonEvent<T>>,
    /// Centerline polyline covering `[origin_s, end_s]`.
    pub geometry: Vec<TrackPoint<T>>,
}

impl<T: Real> DigitalHorizon<T> {
    /// Signals in the window, nearest first.
    pub fn signals(&self) -> impl Iterator<Item = (&HorizonEvent<T>, &SignalDescriptor<T>)> {
        self.events
            .iter()
            .filter_map(|e| e.element.signal().map(|d| (e, d)))
    }
}

/// Immutable track map shared by every module. Post-construction the map is
/// read-only, so it can sit behind an `Arc` and be queried concurrently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTrackMap<T>")]
#[serde(bound(deserialize = "T: Real"))]
pub struct TrackMap<T> {
    points: Vec<TrackPoint<T>>,
    cumulative_chainage: Vec<T>,
    elements: Vec<InfrastructureElement<T>>,
}

#[derive(Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
struct RawTrackMap<T> {
    points: Vec<TrackPoint<T>>,
    cumulative_chainage: Vec<T>,
    elements: Vec<InfrastructureElement<T>>,
}

impl<T: Real> TryFrom<RawTrackMap<T>> for TrackMap<T> {
    type Error = MapError;

    /// Revalidates a deserialized map: geometry finite, stored chainage
    /// consistent with the points, elements well-formed. Guarantees that any
    /// `TrackMap` in the program satisfies the constructor invariants no
    /// matter where it came from.
    fn try_from(raw: RawTrackMap<T>) -> Result<Self, MapError> {
        if raw.points.len() < 2 {
            return Err(MapError::TooFewPoints(raw.points.len()));
        }
        for (i, p) in raw.points.iter().enumerate() {
            if !p.is_finite() {
                return Err(MapError::NonFinite { index: i });
            }
        }
        let chainage = cumulative_chainage(&raw.points);
        if chainage.len() != raw.cumulative_chainage.len() {
            return Err(MapError::ChainageMismatch { index: 0 });
        }
        let tol = T::of(1e-6);
        for (i, (a, b)) in chainage
            .iter()
            .zip(raw.cumulative_chainage.iter())
            .enumerate()
        {
            if (*a - *b).abs() > tol {
                return Err(MapError::ChainageMismatch { index: i });
            }
        }
        let mut elements = raw.elements;
        validate_elements(&elements, *chainage.last().unwrap())?;
        sort_elements(&mut elements);
        Ok(TrackMap {
            points: raw.points,
            cumulative_chainage: chainage,
            elements,
        })
    }
}

fn cumulative_chainage<T: Real>(points: &[TrackPoint<T>]) -> Vec<T> {
    let mut chainage = Vec::with_capacity(points.len());
    let mut acc = T::zero();
    chainage.push(acc);
    for w in points.windows(2) {
        acc += w[0].distance_to(&w[1]);
        chainage.push(acc);
    }
    chainage
}

fn validate_elements<T: Real>(
    elements: &[InfrastructureElement<T>],
    length: T,
) -> Result<(), MapError> {
    let mut signal_seen: Vec<(SignalId, usize)> = Vec::new();
    for (index, e) in elements.iter().enumerate() {
        let kind = e.kind.name();
        let bad_range = !e.s_start.is_finite()
            || !e.s_end.is_finite()
            || e.s_start < T::zero()
            || e.s_end > length
            || e.s_start > e.s_end;
        if bad_range {
            return Err(MapError::ElementOutOfRange {
                index,
                kind,
                s_start: f(e.s_start),
                s_end: f(e.s_end),
                length: f(length),
            });
        }
        match &e.kind {
            ElementKind::SpeedLimit { limit_mps } => {
                if !(*limit_mps > T::zero()) || !limit_mps.is_finite() {
                    return Err(MapError::ElementInvalid {
                        index,
                        kind,
                        message: format!("speed limit must be positive, got {}", f(*limit_mps)),
                    });
                }
            }
            ElementKind::Platform { stop_point_s } => {
                if *stop_point_s < e.s_start || *stop_point_s > e.s_end {
                    return Err(MapError::ElementInvalid {
                        index,
                        kind,
                        message: format!(
                            "stop point {} outside platform [{}, {}]",
                            f(*stop_point_s),
                            f(e.s_start),
                            f(e.s_end)
                        ),
                    });
                }
            }
            ElementKind::Signal(d) => {
                if let Some((_, first)) = signal_seen.iter().find(|(id, _)| *id == d.id) {
                    return Err(MapError::DuplicateSignalId {
                        id: d.id,
                        first: *first,
                        second: index,
                    });
                }
                signal_seen.push((d.id, index));
                if let Some(sp) = d.stop_point_s {
                    if !(T::zero()..=e.s_start).contains(&sp) {
                        return Err(MapError::ElementInvalid {
                            index,
                            kind,
                            message: format!(
                                "stop point {} must lie in [0, mast {}]",
                                f(sp),
                                f(e.s_start)
                            ),
                        });
                    }
                    if let Some(cp) = d.commit_point_s {
                        if cp > sp || cp < T::zero() {
                            return Err(MapError::ElementInvalid {
                                index,
                                kind,
                                message: format!(
                                    "commit point {} must lie in [0, stop point {}]",
                                    f(cp),
                                    f(sp)
                                ),
                            });
                        }
                    }
                }
                if d.allowed_go_states.is_empty() && d.class == SignalClass::StopGo {
                    return Err(MapError::ElementInvalid {
                        index,
                        kind,
                        message: "stop/go signal allows no go aspect; it could never be passed"
                            .into(),
                    });
                }
                for st in &d.allowed_go_states {
                    let valid = match d.class {
                        SignalClass::StopGo => st.is_go(),
                        SignalClass::Switch => st.class() == SignalClass::Switch,
                    };
                    if !valid {
                        return Err(MapError::ElementInvalid {
                            index,
                            kind,
                            message: format!(
                                "allowed state {st:?} can never grant passage on a {:?} signal",
                                d.class
                            ),
                        });
                    }
                }
            }
            _ => {}
        }
    }
    Ok(())
}

fn sort_elements<T: Real>(elements: &mut [InfrastructureElement<T>]) {
    elements.sort_by(|a, b| {
        a.s_start
            .partial_cmp(&b.s_start)
            .unwrap()
            .then(a.s_end.partial_cmp(&b.s_end).unwrap())
    });
}

/// Builds a map from a raw reference trajectory: dedupe, simplify with the
/// given deviation tolerance, compute chainage and validate the elements.
pub fn build_map<T: Real>(
    trajectory: &[TrackPoint<T>],
    tolerance: T,
    elements: Vec<InfrastructureElement<T>>,
) -> Result<TrackMap<T>, MapError> {
    let points = simplify_polyline(trajectory, tolerance)?;
    let cumulative_chainage = cumulative_chainage(&points);
    let length = *cumulative_chainage.last().unwrap();
    validate_elements(&elements, length)?;
    let mut elements = elements;
    sort_elements(&mut elements);
    Ok(TrackMap {
        points,
        cumulative_chainage,
        elements,
    })
}

impl<T: Real> TrackMap<T> {
    pub fn length(&self) -> T {
        *self.cumulative_chainage.last().unwrap()
    }

    pub fn points(&self) -> &[TrackPoint<T>] {
        &self.points
    }

    pub fn chainage(&self) -> &[T] {
        &self.cumulative_chainage
    }

    /// Elements sorted by `s_start`.
    pub fn elements(&self) -> &[InfrastructureElement<T>] {
        &self.elements
    }

    /// All signal masts with their chainage.
    pub fn signals(&self) -> impl Iterator<Item = (T, &SignalDescriptor<T>)> {
        self.elements
            .iter()
            .filter_map(|e| e.signal().map(|d| (e.s_start, d)))
    }

    /// Index of the segment containing chainage `s` (the last segment for
    /// `s == length`). Caller guarantees `0 <= s <= length`.
    fn segment_index(&self, s: T) -> usize {
        let n_seg = self.points.len() - 1;
        let idx = self
            .cumulative_chainage
            .partition_point(|c| *c <= s)
            .saturating_sub(1);
        idx.min(n_seg - 1)
    }

    /// Plane position and heading (radians) at chainage `s`. At a vertex the
    /// heading of the following segment applies.
    pub fn point_at(&self, s: T) -> Result<(TrackPoint<T>, T), MapError> {
        if !s.is_finite() || s < T::zero() || s > self.length() {
            return Err(MapError::ChainageOutOfRange {
                s: f(s),
                length: f(self.length()),
            });
        }
        let i = self.segment_index(s);
        let a = self.points[i];
        let b = self.points[i + 1];
        let seg_len = self.cumulative_chainage[i + 1] - self.cumulative_chainage[i];
        let t = if seg_len > T::zero() {
            (s - self.cumulative_chainage[i]) / seg_len
        } else {
            T::zero()
        };
        let p = a.plus(&b.minus(&a).scaled(t));
        let heading = (b.y - a.y).atan2(b.x - a.x);
        Ok((p, heading))
    }

    /// Projects a plane point onto the centerline. Always succeeds; the
    /// caller decides what distance still counts as "on the track". When two
    /// segments are equally close (e.g. the apex of a switchback) the lower
    /// chainage wins, keeping the result deterministic.
    pub fn project(&self, point: &TrackPoint<T>) -> TrackProjection<T> {
        let mut best = TrackProjection {
            s: T::zero(),
            distance: T::infinity(),
            signed_lateral: T::infinity(),
        };
        for i in 0..self.points.len() - 1 {
            let pr = project_on_segment(point, &self.points[i], &self.points[i + 1]);
            if pr.distance < best.distance {
                let seg_len = self.cumulative_chainage[i + 1] - self.cumulative_chainage[i];
                best = TrackProjection {
                    s: self.cumulative_chainage[i] + pr.t * seg_len,
                    distance: pr.distance,
                    signed_lateral: pr.signed_lateral,
                };
            }
        }
        best
    }

    /// Digital horizon: all elements whose interval intersects `(s, s + lookahead]`
    /// together with the centerline geometry of the window. Elements the
    /// vehicle is currently inside report distance zero; elements entirely
    /// behind `s` are excluded.
    pub fn digital_horizon(&self, s: T, lookahead: T) -> Result<DigitalHorizon<T>, MapError> {
        if !(lookahead > T::zero()) || !lookahead.is_finite() {
            return Err(MapError::InvalidLookahead {
                value: f(lookahead),
            });
        }
        if !s.is_finite() || s < T::zero() || s > self.length() {
            return Err(MapError::ChainageOutOfRange {
                s: f(s),
                length: f(self.length()),
            });
        }
        let end_s = (s + lookahead).min(self.length());
        // Elements are sorted by s_start, so distance_m is already
        // non-decreasing over this scan.
        let events: Vec<HorizonEvent<T>> = self
            .elements
            .iter()
            .filter(|e| e.s_end > s && e.s_start <= end_s)
            .map(|e| HorizonEvent {
                distance_m: (e.s_start - s).max(T::zero()),
                element: e.clone(),
            })
            .collect();
        let geometry = self.sample_polyline(s, end_s)?;
        Ok(DigitalHorizon {
            origin_s: s,
            end_s,
            events,
            geometry,
        })
    }

    /// Centerline polyline covering `[s0, s1]`: interpolated endpoints plus
    /// every map vertex strictly between them.
    fn sample_polyline(&self, s0: T, s1: T) -> Result<Vec<TrackPoint<T>>, MapError> {
        let (start, _) = self.point_at(s0)?;
        let (end, _) = self.point_at(s1)?;
        let mut out = vec![start];
        for (i, &c) in self.cumulative_chainage.iter().enumerate() {
            if c > s0 && c < s1 {
                out.push(self.points[i]);
            }
        }
        if s1 > s0 {
            out.push(end);
        }
        Ok(out)
    }

    /// Swept corridor polygon around the centerline over `[s0, s1]` with the
    /// given half-width: samples every meter (plus the exact end), offsets
    /// along the local normal and closes right side + reversed left side into
    /// a counter-clockwise polygon. Assumes curve radii well above the
    /// half-width, which holds for tram geometry.
    pub fn clearance_corridor(
        &self,
        s0: T,
        s1: T,
        half_width: T,
    ) -> Result<Vec<TrackPoint<T>>, MapError> {
        if !(half_width > T::zero()) || !half_width.is_finite() {
            return Err(MapError::InvalidHalfWidth {
                value: f(half_width),
            });
        }
        if !s0.is_finite() || !s1.is_finite() || s0 >= s1 {
            return Err(MapError::InvalidRange {
                s0: f(s0),
                s1: f(s1),
            });
        }
        if s0 < T::zero() || s1 > self.length() {
            return Err(MapError::ChainageOutOfRange {
                s: f(if s0 < T::zero() { s0 } else { s1 }),
                length: f(self.length()),
            });
        }
        let step = T::one();
        let mut left = Vec::new();
        let mut right = Vec::new();
        let mut s = s0;
        loop {
            let (p, heading) = self.point_at(s)?;
            let normal = TrackPoint::new(-heading.sin(), heading.cos());
            left.push(p.plus(&normal.scaled(half_width)));
            right.push(p.minus(&normal.scaled(half_width)));
            if s >= s1 {
                break;
            }
            s = (s + step).min(s1);
        }
        right.extend(left.into_iter().rev());
        Ok(right)
    }
}

// ---- trajectory csv ----

/// Reads a reference trajectory from CSV with the header `x_m,y_m` (extra
/// columns are ignored). Coordinates in meters.
pub fn read_trajectory_csv<T: Real>(
    reader: impl std::io::Read,
) -> Result<Vec<TrackPoint<T>>, MapError> {
    #[derive(Deserialize)]
    #[serde(bound(deserialize = "T: Real"))]
    struct Row<T> {
        x_m: T,
        y_m: T,
    }

    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| MapError::Csv {
            line: Some(1),
            message: e.to_string(),
        })?
        .clone();
    for required in ["x_m", "y_m"] {
        if !headers.iter().any(|h| h == required) {
            return Err(MapError::Csv {
                line: Some(1),
                message: format!("missing column `{required}` (header: {headers:?})"),
            });
        }
    }
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<Row<T>>().enumerate() {
        let row = row.map_err(|e| MapError::Csv {
            line: e.position().map(|p| p.line()),
            message: e.to_string(),
        })?;
        let p = TrackPoint::new(row.x_m, row.y_m);
        if !p.is_finite() {
            return Err(MapError::Csv {
                // +2: one for the header, one for 1-based numbering.
                line: Some(i as u64 + 2),
                message: "non-finite coordinate".into(),
            });
        }
        out.push(p);
    }
    Ok(out)
}
