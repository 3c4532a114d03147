//! Chainage-based localization with dead-reckoning fallback.
//!
//! The route is known, so localization is one-dimensional: reduce a 2-D pose
//! estimate (INS with map-matched corrections) to a chainage `s` along the
//! track. When the INS drops out, odometry dead reckoning carries the fix
//! forward with a drift bound that grows with distance traveled. A monotone
//! filter rejects the physically impossible case of the chainage jumping
//! backwards while the vehicle moves forward.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::normalize_angle;
use crate::scalar::Real;
use crate::track_map::TrackMap;

/// Full planar pose as delivered by the INS, map frame, SI units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2D<T> {
    pub x: T,
    pub y: T,
    /// Heading in radians, `(-pi, pi]`.
    pub heading: T,
    pub speed_mps: T,
    pub yaw_rate: T,
    pub t_s: T,
}

/// How the current chainage fix was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FixMode {
    /// 2-D pose projected onto the track centerline.
    Projected,
    /// Carried forward by integrating measured speed (INS dropout).
    DeadReckoned,
}

/// 1-D localization result: where along the track, how fast, how trustworthy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackFix<T> {
    pub s_m: T,
    pub speed_mps: T,
    pub mode: FixMode,
    /// 1-sigma bound on the chainage error. Resets to the INS accuracy on a
    /// projected fix and grows with traveled distance while dead reckoning.
    pub position_std_m: T,
}

/// A pose farther than this from the centerline cannot belong to a
/// rail-bound vehicle; it indicates a mis-allocated map or a corrupted pose
/// and must be failed loudly instead of snapped.
pub const OFF_TRACK_THRESHOLD_M: f64 = 10.0;

/// Chainage accuracy of a fresh map-matched INS fix, meters (manufacturer
/// accuracy of the fused INS position output).
pub const PROJECTED_FIX_STD_M: f64 = 0.01;

/// Default dead-reckoning drift growth: meters of 1-sigma chainage error per
/// meter traveled on odometry alone.
pub const DRIFT_RATE_M_PER_M: f64 = 0.05;

/// Chainage may regress by at most this much between consecutive fixes before
/// the regression counts as an anomaly rather than projection jitter.
pub const MONOTONE_TOLERANCE_M: f64 = 0.05;

#[derive(Debug, Error)]
pub enum LocalizationError {
    #[error("pose is {distance:.2} m from the track (limit {threshold} m)")]
    OffTrack { distance: f64, threshold: f64 },
}

/// Projects a 2-D pose onto the track and returns the chainage fix.
///
/// Fails with [`LocalizationError::OffTrack`] when the pose lies farther than
/// [`OFF_TRACK_THRESHOLD_M`] from the centerline; such a pose means the
/// vehicle is not on the mapped route and downstream planning must not run.
pub fn project_to_track<T: Real>(
    map: &TrackMap<T>,
    pose: &Pose2D<T>,
) -> Result<TrackFix<T>, LocalizationError> {
    let pr = map.project(&crate::geom::TrackPoint::new(pose.x, pose.y));
    let threshold = T::of(OFF_TRACK_THRESHOLD_M);
    if pr.distance > threshold {
        return Err(LocalizationError::OffTrack {
            distance: pr.distance.to_f64().unwrap_or(f64::NAN),
            threshold: OFF_TRACK_THRESHOLD_M,
        });
    }
    Ok(TrackFix {
        s_m: pr.s,
        speed_mps: pose.speed_mps.max(T::zero()),
        mode: FixMode::Projected,
        position_std_m: T::of(PROJECTED_FIX_STD_M),
    })
}

/// Advances a fix by integrating the measured speed over `dt`, clamped to the
/// track length. The uncertainty grows by `drift_rate` per meter traveled,
/// modelling unmeasured wheel slip and odometry scale error.
pub fn dead_reckon<T: Real>(
    prev: &TrackFix<T>,
    speed_mps: T,
    dt: T,
    track_length: T,
    drift_rate: T,
) -> TrackFix<T> {
    let ds = speed_mps.max(T::zero()) * dt.max(T::zero());
    TrackFix {
        s_m: (prev.s_m + ds).min(track_length),
        speed_mps: speed_mps.max(T::zero()),
        mode: FixMode::DeadReckoned,
        position_std_m: prev.position_std_m + drift_rate * ds,
    }
}

/// Enforces non-decreasing chainage. Jitter-sized regressions (within `tol`)
/// are silently absorbed by holding the previous value; larger regressions
/// are also held but flagged as an anomaly for the event log.
pub fn monotone_filter<T: Real>(prev_s: T, candidate_s: T, tol: T) -> (T, bool) {
    let filtered = candidate_s.max(prev_s);
    let anomaly = (prev_s - candidate_s) > tol;
    (filtered, anomaly)
}

/// INS error model used by the simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InsConfig<T> {
    pub position_std_m: T,
    pub speed_std_mps: T,
    pub heading_std_rad: T,
    /// Time windows `[start_s, end_s)` during which the INS delivers nothing
    /// (tunnel, jamming, maintenance reboot).
    pub dropouts: Vec<(T, T)>,
}

impl<T: Real> Default for InsConfig<T> {
    fn default() -> Self {
        InsConfig {
            position_std_m: T::of(PROJECTED_FIX_STD_M),
            speed_std_mps: T::of(0.014), // 0.05 km/h velocity accuracy class
            heading_std_rad: T::of(0.002),
            dropouts: Vec::new(),
        }
    }
}

/// Applies the INS error model to a ground-truth pose. Returns `None` inside
/// a dropout window, otherwise the pose with white noise on position, heading
/// and speed.
pub fn simulate_ins<T, R>(truth: &Pose2D<T>, cfg: &InsConfig<T>, rng: &mut R) -> Option<Pose2D<T>>
where
    T: Real,
    R: Rng + ?Sized,
    StandardNormal: Distribution<T>,
{
    if cfg
        .dropouts
        .iter()
        .any(|&(a, b)| truth.t_s >= a && truth.t_s < b)
    {
        return None;
    }
    let mut noise = |std: T| -> T {
        let n: T = StandardNormal.sample(rng);
        n * std
    };
    Some(Pose2D {
        x: truth.x + noise(cfg.position_std_m),
        y: truth.y + noise(cfg.position_std_m),
        heading: normalize_angle(truth.heading + noise(cfg.heading_std_rad)),
        speed_mps: (truth.speed_mps + noise(cfg.speed_std_mps)).max(T::zero()),
        yaw_rate: truth.yaw_rate,
        t_s: truth.t_s,
    })
}
