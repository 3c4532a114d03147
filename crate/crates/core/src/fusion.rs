//! Late fusion of object detections from heterogeneous sensors.
//!
//! Radar, lidar and camera pipelines each deliver classified object
//! detections in the map frame. This module fuses them into persistent
//! tracks: a constant-velocity Kalman filter per object, Mahalanobis-gated
//! greedy nearest-neighbour association, and an M-hits / K-misses lifecycle
//! from tentative birth to confirmed to deletion. Covariance updates use the
//! Joseph form, which stays symmetric positive semi-definite under rounding
//! where the textbook `(I - KH)P` form slowly corrupts.
//!
//! Track state is `[x, y, vx, vy]` in map coordinates. Association gates on
//! the position innovation only; velocity measurements (radar) enter the
//! update once a pair is gated.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::TrackPoint;
use crate::mat::{self, Mat, Mat2, Mat4};
use crate::scalar::Real;
use crate::track_map::TrackMap;

/// Chi-squared 99% quantile with 2 degrees of freedom: the default gate for
/// 2-D position innovations.
pub const GATE_CHI2_99_2DOF: f64 = 9.21;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SensorKind {
    Radar,
    Lidar,
    Camera,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ObjectClass {
    Pedestrian,
    Car,
    Tram,
    /// Static street furniture: poles, masts, fences, signs.
    Infrastructure,
    Unknown,
}

/// One classified object detection in the map frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectMeasurement<T> {
    pub sensor: SensorKind,
    pub position: TrackPoint<T>,
    /// Measurement noise of `position`, map frame.
    pub position_cov: Mat2<T>,
    /// Over-ground velocity if the sensor measures it (radar).
    pub velocity: Option<[T; 2]>,
    pub velocity_cov: Option<Mat2<T>>,
    pub class: ObjectClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrackStatus {
    /// Newborn; not yet trustworthy enough for planning.
    Tentative,
    /// Seen often enough to act on.
    Confirmed,
    /// Marked for removal.
    Dead,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TrackId(pub u64);

/// A fused object track.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedTrack<T> {
    pub id: TrackId,
    /// `[x, y, vx, vy]`, map frame.
    pub state: [T; 4],
    pub cov: Mat4<T>,
    /// Majority class over the recent vote window.
    pub class: ObjectClass,
    /// Most recent class votes, oldest first, capped at the configured window.
    pub class_votes: Vec<ObjectClass>,
    /// Total measurement updates received.
    pub hits: u32,
    /// Consecutive cycles without an update.
    pub misses: u32,
    pub status: TrackStatus,
}

impl<T: Real> FusedTrack<T> {
    pub fn position(&self) -> TrackPoint<T> {
        TrackPoint::new(self.state[0], self.state[1])
    }

    pub fn speed(&self) -> T {
        (self.state[2] * self.state[2] + self.state[3] * self.state[3]).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerParams<T> {
    /// White-acceleration process noise intensity, (m/s²)²·s.
    pub process_noise_q: T,
    /// Mahalanobis² association gate.
    pub gate_chi2: T,
    /// Hits needed to confirm a tentative track.
    pub m_confirm: u32,
    /// Consecutive misses that kill a track.
    pub k_delete: u32,
    /// 1-sigma prior speed for newborn tracks without a velocity measurement.
    pub initial_velocity_std: T,
    /// Length of the class majority-vote window.
    pub class_window: usize,
}

impl<T: Real> Default for TrackerParams<T> {
    fn default() -> Self {
        TrackerParams {
            process_noise_q: T::of(0.5),
            gate_chi2: T::of(GATE_CHI2_99_2DOF),
            m_confirm: 3,
            k_delete: 5,
            initial_velocity_std: T::of(3.0),
            class_window: 10,
        }
    }
}

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("innovation covariance is singular (track {0:?})")]
    SingularInnovation(TrackId),
    #[error("non-positive time step {0}")]
    InvalidTimeStep(f64),
}

// ---- prediction ----

/// Propagates a track by `dt` under the constant-velocity model with
/// white-acceleration process noise of intensity `q`.
pub fn predict_track<T: Real>(
    track: &FusedTrack<T>,
    dt: T,
    q: T,
) -> Result<FusedTrack<T>, FusionError> {
    if !(dt > T::zero()) || !dt.is_finite() {
        return Err(FusionError::InvalidTimeStep(dt.to_f64().unwrap_or(f64::NAN)));
    }
    let mut f = mat::identity::<T, 4>();
    f[0][2] = dt;
    f[1][3] = dt;

    let dt2 = dt * dt;
    let dt3 = dt2 * dt;
    let dt4 = dt3 * dt;
    let quarter = T::of(0.25);
    let half = T::of(0.5);
    let mut qm = mat::zeros::<T, 4>();
    qm[0][0] = q * dt4 * quarter;
    qm[1][1] = q * dt4 * quarter;
    qm[0][2] = q * dt3 * half;
    qm[2][0] = qm[0][2];
    qm[1][3] = qm[0][2];
    qm[3][1] = qm[0][2];
    qm[2][2] = q * dt2;
    qm[3][3] = q * dt2;

    let mut next = track.clone();
    next.state = mat::mat_vec(&f, &track.state);
    let mut cov = mat::mul(&mat::mul(&f, &track.cov), &mat::transpose(&f));
    cov = mat::add(&cov, &qm);
    mat::symmetrize(&mut cov);
    next.cov = cov;
    Ok(next)
}

// ---- association ----

/// Position-innovation covariance `S = P_pos + R`.
fn innovation_cov<T: Real>(track: &FusedTrack<T>, meas: &ObjectMeasurement<T>) -> Mat2<T> {
    let mut s = [
        [track.cov[0][0], track.cov[0][1]],
        [track.cov[1][0], track.cov[1][1]],
    ];
    s = mat::add(&s, &meas.position_cov);
    mat::symmetrize(&mut s);
    s
}

/// Squared Mahalanobis distance of the position innovation.
pub fn mahalanobis2<T: Real>(
    track: &FusedTrack<T>,
    meas: &ObjectMeasurement<T>,
) -> Result<T, FusionError> {
    let s = innovation_cov(track, meas);
    let nu = [
        meas.position.x - track.state[0],
        meas.position.y - track.state[1],
    ];
    mat::spd_quad_form(&s, &nu).ok_or(FusionError::SingularInnovation(track.id))
}

/// Result of gated nearest-neighbour association.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Association {
    /// `(track index, measurement index)` pairs, each index used at most once.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_measurements: Vec<usize>,
}

/// Greedy global-nearest-neighbour assignment with a Mahalanobis² gate.
///
/// All gated candidate pairs are ranked by distance (ties broken by track id,
/// then measurement index, so results are reproducible), then consumed
/// greedily. Pairs whose innovation covariance is singular are skipped — the
/// track keeps living on misses rather than poisoning the assignment.
pub fn associate<T: Real>(
    tracks: &[FusedTrack<T>],
    measurements: &[ObjectMeasurement<T>],
    gate_chi2: T,
) -> Association {
    let mut candidates: Vec<(T, TrackId, usize, usize)> = Vec::new();
    for (ti, track) in tracks.iter().enumerate() {
        for (mi, meas) in measurements.iter().enumerate() {
            if let Ok(d2) = mahalanobis2(track, meas) {
                if d2 <= gate_chi2 {
                    candidates.push((d2, track.id, ti, mi));
                }
            }
        }
    }
    candidates.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap()
            .then(a.1.cmp(&b.1))
            .then(a.3.cmp(&b.3))
    });
    let mut track_used = vec![false; tracks.len()];
    let mut meas_used = vec![false; measurements.len()];
    let mut pairs = Vec::new();
    for (_, _, ti, mi) in candidates {
        if !track_used[ti] && !meas_used[mi] {
            track_used[ti] = true;
            meas_used[mi] = true;
            pairs.push((ti, mi));
        }
    }
    Association {
        pairs,
        unmatched_tracks: (0..tracks.len()).filter(|i| !track_used[*i]).collect(),
        unmatched_measurements: (0..measurements.len())
            .filter(|i| !meas_used[*i])
            .collect(),
    }
}

// ---- update ----

/// Joseph-form Kalman update with an `M`-dimensional measurement
/// `z = H·x + v`, `v ~ N(0, R)`. Returns `None` when `S` is not SPD.
fn joseph_update<T: Real, const M: usize>(
    state: &[T; 4],
    cov: &Mat4<T>,
    z: &[T; M],
    h: &[[T; 4]; M],
    r: &Mat<T, M>,
) -> Option<([T; 4], Mat4<T>)> {
    // S = H P Hᵀ + R.
    let mut ph_t = [[T::zero(); M]; 4]; // P·Hᵀ (4xM)
    for i in 0..4 {
        for j in 0..M {
            for k in 0..4 {
                ph_t[i][j] += cov[i][k] * h[j][k];
            }
        }
    }
    let mut s = *r;
    for i in 0..M {
        for j in 0..M {
            for k in 0..4 {
                s[i][j] += h[i][k] * ph_t[k][j];
            }
        }
    }
    mat::symmetrize(&mut s);
    let l = mat::cholesky(&s)?;

    // K = P Hᵀ S⁻¹, column by column via the factored solve.
    let mut k_gain = [[T::zero(); M]; 4];
    for col in 0..4 {
        let rhs: [T; M] = std::array::from_fn(|j| ph_t[col][j]);
        let x = mat::cholesky_solve(&l, &rhs);
        for j in 0..M {
            k_gain[col][j] = x[j];
        }
    }

    // Innovation and state update.
    let mut nu = [T::zero(); M];
    for j in 0..M {
        let mut pred = T::zero();
        for k in 0..4 {
            pred += h[j][k] * state[k];
        }
        nu[j] = z[j] - pred;
    }
    let mut new_state = *state;
    for i in 0..4 {
        for j in 0..M {
            new_state[i] += k_gain[i][j] * nu[j];
        }
    }

    // Joseph form: P⁺ = (I - K H) P (I - K H)ᵀ + K R Kᵀ.
    let mut ikh = mat::identity::<T, 4>();
    for i in 0..4 {
        for j in 0..4 {
            for m in 0..M {
                ikh[i][j] -= k_gain[i][m] * h[m][j];
            }
        }
    }
    let mut new_cov = mat::mul(&mat::mul(&ikh, cov), &mat::transpose(&ikh));
    for i in 0..4 {
        for j in 0..4 {
            let mut krk = T::zero();
            for a in 0..M {
                for b in 0..M {
                    krk += k_gain[i][a] * r[a][b] * k_gain[j][b];
                }
            }
            new_cov[i][j] += krk;
        }
    }
    mat::symmetrize(&mut new_cov);
    Some((new_state, new_cov))
}

/// Majority vote over the window; ties keep the current class when it is
/// among the leaders, otherwise the tied class seen most recently.
fn majority_class(votes: &[ObjectClass], current: ObjectClass) -> ObjectClass {
    let mut tally: Vec<(ObjectClass, usize, usize)> = Vec::new(); // (class, count, last index)
    for (i, v) in votes.iter().enumerate() {
        match tally.iter_mut().find(|(c, _, _)| c == v) {
            Some(entry) => {
                entry.1 += 1;
                entry.2 = i;
            }
            None => tally.push((*v, 1, i)),
        }
    }
    let Some(max) = tally.iter().map(|t| t.1).max() else {
        return current;
    };
    let leaders: Vec<_> = tally.iter().filter(|t| t.1 == max).collect();
    if leaders.iter().any(|(c, _, _)| *c == current) {
        return current;
    }
    leaders
        .iter()
        .max_by_key(|(_, _, last)| *last)
        .map(|(c, _, _)| *c)
        .unwrap()
}

/// Fuses one gated measurement into a track: Joseph-form Kalman update (2-D
/// position, or 4-D when the sensor also measured velocity), hit bookkeeping
/// and a class-majority vote.
pub fn update_track<T: Real>(
    track: &FusedTrack<T>,
    meas: &ObjectMeasurement<T>,
    params: &TrackerParams<T>,
) -> Result<FusedTrack<T>, FusionError> {
    let zero = T::zero();
    let one = T::one();
    let updated = match (meas.velocity, meas.velocity_cov) {
        (Some(v), Some(vc)) => {
            let h: [[T; 4]; 4] = mat::identity();
            let z = [meas.position.x, meas.position.y, v[0], v[1]];
            let mut r = mat::zeros::<T, 4>();
            r[0][0] = meas.position_cov[0][0];
            r[0][1] = meas.position_cov[0][1];
            r[1][0] = meas.position_cov[1][0];
            r[1][1] = meas.position_cov[1][1];
            r[2][2] = vc[0][0];
            r[2][3] = vc[0][1];
            r[3][2] = vc[1][0];
            r[3][3] = vc[1][1];
            joseph_update(&track.state, &track.cov, &z, &h, &r)
        }
        _ => {
            let h = [[one, zero, zero, zero], [zero, one, zero, zero]];
            let z = [meas.position.x, meas.position.y];
            joseph_update(&track.state, &track.cov, &z, &h, &meas.position_cov)
        }
    };
    let (state, cov) = updated.ok_or(FusionError::SingularInnovation(track.id))?;
    let mut next = track.clone();
    next.state = state;
    next.cov = cov;
    next.hits += 1;
    next.misses = 0;
    next.class_votes.push(meas.class);
    let overflow = next.class_votes.len().saturating_sub(params.class_window);
    if overflow > 0 {
        next.class_votes.drain(..overflow);
    }
    next.class = majority_class(&next.class_votes, next.class);
    Ok(next)
}

// ---- lifecycle ----

fn spawn_track<T: Real>(
    meas: &ObjectMeasurement<T>,
    id: TrackId,
    params: &TrackerParams<T>,
) -> FusedTrack<T> {
    let (vel, vel_var) = match (meas.velocity, meas.velocity_cov) {
        (Some(v), Some(vc)) => (v, [vc[0][0], vc[1][1]]),
        _ => {
            let v0 = params.initial_velocity_std * params.initial_velocity_std;
            ([T::zero(), T::zero()], [v0, v0])
        }
    };
    let mut cov = mat::zeros::<T, 4>();
    cov[0][0] = meas.position_cov[0][0];
    cov[0][1] = meas.position_cov[0][1];
    cov[1][0] = meas.position_cov[1][0];
    cov[1][1] = meas.position_cov[1][1];
    cov[2][2] = vel_var[0];
    cov[3][3] = vel_var[1];
    FusedTrack {
        id,
        state: [meas.position.x, meas.position.y, vel[0], vel[1]],
        cov,
        class: meas.class,
        class_votes: vec![meas.class],
        hits: 1,
        misses: 0,
        status: TrackStatus::Tentative,
    }
}

/// Applies the M/K lifecycle after an association cycle: unmatched tracks
/// accumulate a miss and die after `k_delete` consecutive misses, matched
/// tentative tracks confirm at `m_confirm` hits, and every unmatched
/// measurement spawns a tentative track. Dead tracks are removed.
pub fn manage_tracks<T: Real>(
    tracks: &mut Vec<FusedTrack<T>>,
    unmatched_track_indices: &[usize],
    unmatched_measurements: &[&ObjectMeasurement<T>],
    params: &TrackerParams<T>,
    next_id: &mut u64,
) {
    for &ti in unmatched_track_indices {
        let t = &mut tracks[ti];
        t.misses += 1;
        if t.misses >= params.k_delete {
            t.status = TrackStatus::Dead;
        }
    }
    for t in tracks.iter_mut() {
        if t.status == TrackStatus::Tentative && t.hits >= params.m_confirm {
            t.status = TrackStatus::Confirmed;
        }
    }
    tracks.retain(|t| t.status != TrackStatus::Dead);
    for meas in unmatched_measurements {
        let id = TrackId(*next_id);
        *next_id += 1;
        tracks.push(spawn_track(meas, id, params));
    }
}

// ---- map prefilter ----

/// Drops `Infrastructure` and `Unknown` detections outside the clearance
/// corridor (|lateral| > `corridor_half_width`): catenary poles and fences
/// line the whole route and would otherwise flood the tracker. Detections of
/// potentially moving classes (pedestrian, car, tram) always pass — something
/// misclassified and off-corridor now may step into it next second.
pub fn infrastructure_prefilter<T: Real>(
    measurements: &[ObjectMeasurement<T>],
    map: &TrackMap<T>,
    corridor_half_width: T,
) -> Vec<ObjectMeasurement<T>> {
    measurements
        .iter()
        .filter(|m| match m.class {
            ObjectClass::Infrastructure | ObjectClass::Unknown => {
                map.project(&m.position).distance <= corridor_half_width
            }
            _ => true,
        })
        .copied()
        .collect()
}

// ---- the tracker ----

/// Stateful multi-object tracker: predict → associate → update → manage.
#[derive(Debug, Clone)]
pub struct Tracker<T> {
    pub params: TrackerParams<T>,
    tracks: Vec<FusedTrack<T>>,
    next_id: u64,
}

impl<T: Real> Tracker<T> {
    pub fn new(params: TrackerParams<T>) -> Self {
        Tracker {
            params,
            tracks: Vec::new(),
            next_id: 0,
        }
    }

    pub fn tracks(&self) -> &[FusedTrack<T>] {
        &self.tracks
    }

    pub fn confirmed(&self) -> impl Iterator<Item = &FusedTrack<T>> {
        self.tracks
            .iter()
            .filter(|t| t.status == TrackStatus::Confirmed)
    }

    /// One fusion cycle over `dt` with the measurements of this cycle.
    pub fn step(
        &mut self,
        dt: T,
        measurements: &[ObjectMeasurement<T>],
    ) -> Result<(), FusionError> {
        for track in &mut self.tracks {
            *track = predict_track(track, dt, self.params.process_noise_q)?;
        }
        let assoc = associate(&self.tracks, measurements, self.params.gate_chi2);
        for (ti, mi) in &assoc.pairs {
            match update_track(&self.tracks[*ti], &measurements[*mi], &self.params) {
                Ok(updated) => self.tracks[*ti] = updated,
                Err(e) => {
                    // A singular innovation on an already-gated pair is a
                    // numerical pathology; keep the predicted track alive.
                    log::warn!("update failed, keeping prediction: {e}");
                }
            }
        }
        let unmatched_meas: Vec<&ObjectMeasurement<T>> = assoc
            .unmatched_measurements
            .iter()
            .map(|i| &measurements[*i])
            .collect();
        manage_tracks(
            &mut self.tracks,
            &assoc.unmatched_tracks,
            &unmatched_meas,
            &self.params,
            &mut self.next_id,
        );
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::TrackPoint;
    use crate::track_map::build_map;
    use proptest::prelude::*;

    fn meas(x: f64, y: f64, std: f64, class: ObjectClass) -> ObjectMeasurement<f64> {
        ObjectMeasurement {
            sensor: SensorKind::Lidar,
            position: TrackPoint::new(x, y),
            position_cov: [[std * std, 0.0], [0.0, std * std]],
            velocity: None,
            velocity_cov: None,
            class,
        }
    }

    fn fresh_track(x: f64, y: f64) -> FusedTrack<f64> {
        spawn_track(
            &meas(x, y, 0.5, ObjectClass::Pedestrian),
            TrackId(0),
            &TrackerParams::default(),
        )
    }

    #[test]
    fn predict_moves_state_and_inflates_covariance() {
        let mut t = fresh_track(10.0, 5.0);
        t.state = [10.0, 5.0, 2.0, -1.0];
        let p = predict_track(&t, 0.5, 0.5).unwrap();
        assert!((p.state[0] - 11.0).abs() < 1e-12);
        assert!((p.state[1] - 4.5).abs() < 1e-12);
        assert!((p.state[2] - 2.0).abs() < 1e-12);
        // Hand-computed Q terms for dt = 0.5, q = 0.5.
        let dt4_4 = 0.5f64.powi(4) / 4.0;
        let dt3_2 = 0.5f64.powi(3) / 2.0;
        let dt2 = 0.25;
        // New position variance = old + 2·dt·cross + dt²·vel var + Q00.
        let expected_p00 = t.cov[0][0] + 0.25 * t.cov[2][2] + 0.5 * dt4_4;
        assert!((p.cov[0][0] - expected_p00).abs() < 1e-12);
        assert!((p.cov[2][2] - (t.cov[2][2] + 0.5 * dt2)).abs() < 1e-12);
        assert!((p.cov[0][2] - (0.5 * t.cov[2][2] + 0.5 * dt3_2)).abs() < 1e-12);
        assert!(predict_track(&t, 0.0, 0.5).is_err());
    }

    #[test]
    fn mahalanobis_matches_closed_form_2x2_inverse() {
        let mut t = fresh_track(0.0, 0.0);
        t.cov[0][0] = 0.8;
        t.cov[1][1] = 0.3;
        t.cov[0][1] = 0.1;
        t.cov[1][0] = 0.1;
        let m = meas(1.5, -0.7, 0.4, ObjectClass::Car);
        let d2 = mahalanobis2(&t, &m).unwrap();
        // Oracle: explicit 2x2 inverse of S = P_pos + R.
        let s = [[0.8 + 0.16, 0.1], [0.1, 0.3 + 0.16]];
        let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
        let nu = [1.5, -0.7];
        let expected = (s[1][1] * nu[0] * nu[0] - 2.0 * s[0][1] * nu[0] * nu[1]
            + s[0][0] * nu[1] * nu[1])
            / det;
        assert!((d2 - expected).abs() < 1e-10, "{d2} vs {expected}");
    }

    #[test]
    fn update_pulls_state_toward_measurement_and_shrinks_covariance() {
        let params = TrackerParams::default();
        let t = fresh_track(0.0, 0.0);
        let m = meas(1.0, 0.0, 0.5, ObjectClass::Pedestrian);
        let u = update_track(&t, &m, &params).unwrap();
        assert!(u.state[0] > 0.0 && u.state[0] < 1.0);
        assert!(u.cov[0][0] < t.cov[0][0]);
        assert_eq!(u.hits, 2);
        assert_eq!(u.misses, 0);
        // Covariance stays SPD and symmetric.
        assert!(mat::cholesky(&u.cov).is_some());
        for i in 0..4 {
            for j in 0..4 {
                assert!((u.cov[i][j] - u.cov[j][i]).abs() < 1e-15);
            }
        }
    }

    /// Joseph form must agree with the textbook update on a well-conditioned
    /// problem (they differ only in rounding behavior).
    #[test]
    fn joseph_matches_textbook_form() {
        let t = {
            let mut t = fresh_track(2.0, -1.0);
            t.state = [2.0, -1.0, 0.5, 0.2];
            t.cov = [
                [1.0, 0.1, 0.2, 0.0],
                [0.1, 0.8, 0.0, 0.1],
                [0.2, 0.0, 2.0, 0.3],
                [0.0, 0.1, 0.3, 1.5],
            ];
            t
        };
        let r = [[0.25, 0.05], [0.05, 0.3]];
        let z = [2.4, -0.8];

        // Textbook: K = P Hᵀ S⁻¹, P⁺ = (I - K H) P.
        let s = [
            [t.cov[0][0] + r[0][0], t.cov[0][1] + r[0][1]],
            [t.cov[1][0] + r[1][0], t.cov[1][1] + r[1][1]],
        ];
        let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
        let s_inv = [
            [s[1][1] / det, -s[0][1] / det],
            [-s[1][0] / det, s[0][0] / det],
        ];
        let mut k = [[0.0; 2]; 4];
        for i in 0..4 {
            for j in 0..2 {
                for a in 0..2 {
                    k[i][j] += t.cov[i][a] * s_inv[a][j];
                }
            }
        }
        let nu = [z[0] - t.state[0], z[1] - t.state[1]];
        let mut x_ref = t.state;
        for i in 0..4 {
            x_ref[i] += k[i][0] * nu[0] + k[i][1] * nu[1];
        }
        let mut p_ref = t.cov;
        for i in 0..4 {
            for j in 0..4 {
                p_ref[i][j] -= k[i][0] * t.cov[0][j] + k[i][1] * t.cov[1][j];
            }
        }

        let h = [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]];
        let (x_j, p_j) = joseph_update(&t.state, &t.cov, &z, &h, &r).unwrap();
        for i in 0..4 {
            assert!((x_j[i] - x_ref[i]).abs() < 1e-10);
            for j in 0..4 {
                assert!((p_j[i][j] - p_ref[i][j]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn velocity_measurement_tightens_velocity_estimate() {
        let params = TrackerParams::default();
        let t = fresh_track(0.0, 0.0);
        let mut m = meas(0.2, 0.0, 0.5, ObjectClass::Car);
        m.sensor = SensorKind::Radar;
        m.velocity = Some([4.0, 0.0]);
        m.velocity_cov = Some([[0.09, 0.0], [0.0, 0.09]]);
        let u = update_track(&t, &m, &params).unwrap();
        assert!(u.cov[2][2] < t.cov[2][2] * 0.05);
        assert!(u.state[2] > 3.0, "vx should move toward 4, got {}", u.state[2]);
    }

    #[test]
    fn association_prefers_nearest_and_respects_gate() {
        let mut t0 = fresh_track(0.0, 0.0);
        t0.id = TrackId(0);
        let mut t1 = fresh_track(10.0, 0.0);
        t1.id = TrackId(1);
        let tracks = vec![t0, t1];
        let ms = vec![
            meas(9.8, 0.1, 0.5, ObjectClass::Pedestrian),
            meas(0.3, -0.2, 0.5, ObjectClass::Pedestrian),
            meas(50.0, 50.0, 0.5, ObjectClass::Pedestrian), // far beyond any gate
        ];
        let a = associate(&tracks, &ms, GATE_CHI2_99_2DOF);
        assert_eq!(a.pairs, vec![(1, 0), (0, 1)]);
        assert_eq!(a.unmatched_tracks, Vec::<usize>::new());
        assert_eq!(a.unmatched_measurements, vec![2]);
    }

    #[test]
    fn association_tie_breaks_by_track_id_then_measurement_index() {
        // Two identical tracks, two identical measurements: everything ties.
        let mut t0 = fresh_track(0.0, 0.0);
        t0.id = TrackId(3);
        let mut t1 = fresh_track(0.0, 0.0);
        t1.id = TrackId(7);
        let tracks = vec![t1.clone(), t0.clone()]; // deliberately out of id order
        let ms = vec![
            meas(0.1, 0.0, 0.5, ObjectClass::Pedestrian),
            meas(0.1, 0.0, 0.5, ObjectClass::Pedestrian),
        ];
        let a = associate(&tracks, &ms, GATE_CHI2_99_2DOF);
        // Lowest track id (3, stored at index 1) takes measurement 0.
        assert_eq!(a.pairs, vec![(1, 0), (0, 1)]);
    }

    #[test]
    fn lifecycle_confirm_and_delete() {
        let params = TrackerParams::default();
        let mut tracker = Tracker::new(params);
        // Spawn + confirm after m_confirm hits.
        for k in 0..3 {
            tracker
                .step(0.1, &[meas(5.0, 0.0, 0.5, ObjectClass::Pedestrian)])
                .unwrap();
            let t = &tracker.tracks()[0];
            if k < 2 {
                assert_eq!(t.status, TrackStatus::Tentative, "after {} hits", k + 1);
            }
        }
        assert_eq!(tracker.tracks()[0].status, TrackStatus::Confirmed);
        assert_eq!(tracker.confirmed().count(), 1);

        // Then starve it: k_delete consecutive misses remove it.
        for _ in 0..5 {
            assert_eq!(tracker.tracks().len(), 1);
            tracker.step(0.1, &[]).unwrap();
        }
        assert!(tracker.tracks().is_empty());
    }

    #[test]
    fn interleaved_hit_resets_miss_counter() {
        let mut tracker = Tracker::new(TrackerParams::default());
        let m = meas(5.0, 0.0, 0.5, ObjectClass::Car);
        tracker.step(0.1, &[m]).unwrap();
        for _ in 0..4 {
            tracker.step(0.1, &[]).unwrap(); // 4 misses, one short of deletion
        }
        assert_eq!(tracker.tracks().len(), 1);
        tracker.step(0.1, &[meas(5.0, 0.0, 2.0, ObjectClass::Car)]).unwrap();
        assert_eq!(tracker.tracks()[0].misses, 0);
        for _ in 0..4 {
            tracker.step(0.1, &[]).unwrap();
        }
        assert_eq!(tracker.tracks().len(), 1, "counter should have reset");
    }

    #[test]
    fn class_follows_majority_vote() {
        let params = TrackerParams::default();
        let mut t = fresh_track(0.0, 0.0); // one Pedestrian vote
        assert_eq!(t.class, ObjectClass::Pedestrian);
        // Two Car votes: majority flips.
        for _ in 0..2 {
            t = update_track(&t, &meas(0.0, 0.0, 0.5, ObjectClass::Car), &params).unwrap();
        }
        assert_eq!(t.class, ObjectClass::Car);
        // A 1-1-... tie keeps the current class.
        let mut t2 = fresh_track(0.0, 0.0);
        t2 = update_track(&t2, &meas(0.0, 0.0, 0.5, ObjectClass::Pedestrian), &params).unwrap();
        t2 = update_track(&t2, &meas(0.0, 0.0, 0.5, ObjectClass::Car), &params).unwrap();
        t2 = update_track(&t2, &meas(0.0, 0.0, 0.5, ObjectClass::Car), &params).unwrap();
        // votes: P P C C -> tie, current class (Pedestrian) holds.
        assert_eq!(t2.class, ObjectClass::Pedestrian);
        // Window caps at class_window votes.
        let mut t3 = fresh_track(0.0, 0.0);
        for _ in 0..15 {
            t3 = update_track(&t3, &meas(0.0, 0.0, 0.5, ObjectClass::Car), &params).unwrap();
        }
        assert_eq!(t3.class_votes.len(), params.class_window);
        assert_eq!(t3.class, ObjectClass::Car);
    }

    #[test]
    fn prefilter_drops_offcorridor_clutter_only() {
        let pts = vec![TrackPoint::new(0.0, 0.0), TrackPoint::new(200.0, 0.0)];
        let map = build_map(&pts, 0.01, vec![]).unwrap();
        let ms = vec![
            meas(50.0, 4.0, 0.5, ObjectClass::Infrastructure), // pole beside the track
            meas(60.0, 1.0, 0.5, ObjectClass::Infrastructure), // something on the track
            meas(70.0, 4.0, 0.5, ObjectClass::Unknown),
            meas(80.0, 6.0, 0.5, ObjectClass::Pedestrian), // off corridor but mobile
            meas(90.0, 0.0, 0.5, ObjectClass::Car),
        ];
        let kept = infrastructure_prefilter(&ms, &map, 2.5);
        let xs: Vec<f64> = kept.iter().map(|m| m.position.x).collect();
        assert_eq!(xs, vec![60.0, 80.0, 90.0]);
    }

    #[test]
    fn tracker_follows_a_moving_pedestrian() {
        let mut tracker = Tracker::new(TrackerParams::default());
        // Pedestrian walking +y at 1.5 m/s, sampled at 10 Hz with small noise
        // injected deterministically via a fixed offset pattern.
        let offsets = [0.05, -0.04, 0.02, -0.01, 0.03];
        for k in 0..40 {
            let t = k as f64 * 0.1;
            let y = 1.5 * t;
            let noise = offsets[k % offsets.len()];
            tracker
                .step(
                    0.1,
                    &[meas(30.0 + noise, y - noise, 0.3, ObjectClass::Pedestrian)],
                )
                .unwrap();
        }
        assert_eq!(tracker.tracks().len(), 1);
        let t = &tracker.tracks()[0];
        assert_eq!(t.status, TrackStatus::Confirmed);
        assert!((t.state[3] - 1.5).abs() < 0.3, "vy estimate {}", t.state[3]);
        assert!((t.state[1] - 1.5 * 3.9).abs() < 0.5);
    }

    #[test]
    fn tracker_keeps_two_crossing_objects_apart() {
        let mut tracker = Tracker::new(TrackerParams::default());
        // Object A walks +x along y = 0.8; object B walks -x along y = -0.8.
        for k in 0..60 {
            let t = k as f64 * 0.1;
            let ms = vec![
                meas(10.0 + 2.0 * t, 0.8, 0.2, ObjectClass::Pedestrian),
                meas(22.0 - 2.0 * t, -0.8, 0.2, ObjectClass::Pedestrian),
            ];
            tracker.step(0.1, &ms).unwrap();
        }
        assert_eq!(tracker.tracks().len(), 2);
        let a = &tracker.tracks()[0];
        let b = &tracker.tracks()[1];
        // No identity swap: velocities keep their signs.
        assert!(a.state[2] > 1.0 && b.state[2] < -1.0);
        assert!((a.state[1] - 0.8).abs() < 0.4);
        assert!((b.state[1] + 0.8).abs() < 0.4);
    }

    proptest! {
        /// Greedy association against an independently coded oracle.
        #[test]
        fn association_matches_brute_force_oracle(
            tracks_xy in proptest::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 0..6),
            meas_xy in proptest::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 0..6),
        ) {
            let tracks: Vec<FusedTrack<f64>> = tracks_xy
                .iter()
                .enumerate()
                .map(|(i, &(x, y))| {
                    let mut t = fresh_track(x, y);
                    t.id = TrackId(100 - i as u64); // ids deliberately reversed
                    t
                })
                .collect();
            let ms: Vec<ObjectMeasurement<f64>> = meas_xy
                .iter()
                .map(|&(x, y)| meas(x, y, 1.0, ObjectClass::Unknown))
                .collect();
            let gate = 9.21;
            let got = associate(&tracks, &ms, gate);

            // Oracle: repeatedly take the global minimum (d², id, mi) pair.
            let mut d2 = vec![vec![f64::INFINITY; ms.len()]; tracks.len()];
            for ti in 0..tracks.len() {
                for mi in 0..ms.len() {
                    if let Ok(d) = mahalanobis2(&tracks[ti], &ms[mi]) {
                        if d <= gate {
                            d2[ti][mi] = d;
                        }
                    }
                }
            }
            let mut free_t: Vec<usize> = (0..tracks.len()).collect();
            let mut free_m: Vec<usize> = (0..ms.len()).collect();
            let mut expected = Vec::new();
            loop {
                let mut best: Option<(f64, u64, usize, usize)> = None;
                for &ti in &free_t {
                    for &mi in &free_m {
                        let cand = (d2[ti][mi], tracks[ti].id.0, ti, mi);
                        if cand.0.is_finite()
                            && best.map_or(true, |b| {
                                (cand.0, cand.1, cand.3) < (b.0, b.1, b.3)
                            })
                        {
                            best = Some(cand);
                        }
                    }
                }
                match best {
                    Some((_, _, ti, mi)) => {
                        expected.push((ti, mi));
                        free_t.retain(|t| *t != ti);
                        free_m.retain(|m| *m != mi);
                    }
                    None => break,
                }
            }
            let mut got_sorted = got.pairs.clone();
            got_sorted.sort_unstable();
            expected.sort_unstable();
            prop_assert_eq!(got_sorted, expected);
        }

        /// Joseph updates never break symmetry or positive definiteness.
        #[test]
        fn update_preserves_spd(
            x in -20.0f64..20.0, y in -20.0f64..20.0,
            zx in -20.0f64..20.0, zy in -20.0f64..20.0,
            std in 0.05f64..3.0,
        ) {
            let params = TrackerParams::default();
            let mut t = fresh_track(x, y);
            for _ in 0..3 {
                t = predict_track(&t, 0.1, 0.5).unwrap();
                t = update_track(&t, &meas(zx, zy, std, ObjectClass::Car), &params).unwrap();
            }
            prop_assert!(mat::cholesky(&t.cov).is_some());
            prop_assert!(t.state.iter().all(|v| v.is_finite()));
        }
    }
}
