//! Movement authority from signal aspects.
//!
//! Every planning subsystem expresses its constraint as a Movement Authority
//! Limit (MAL): an absolute chainage the vehicle front must not pass, tagged
//! with its source. The signal planner walks the digital horizon front to
//! back: a signal whose estimated aspect grants passage is skipped, anything
//! unknown or restrictive demands a halt at the signal's stop point. The
//! arbiter then fuses the per-subsystem MALs by taking the minimum.
//!
//! Approach logic mirrors line-of-sight driving: the *stop point* is where
//! the vehicle rests in front of a closed signal (far enough back to keep the
//! mast inside the camera's field of view); the *commit point* is the last
//! chainage where a service brake can still settle at the stop point. Between
//! the two, a `GetReady` aspect (proceed permission about to end) is resolved
//! by the commit rule: already committed — or physically unable to stop —
//! means carry on through; otherwise brake.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::localization::TrackFix;
use crate::scalar::Real;
use crate::signal_state::{SignalHiddenState, SignalId};
use crate::track_map::{DigitalHorizon, SignalDescriptor};

/// Which subsystem produced a movement authority limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MalSource {
    Signal,
    Obstacle,
    /// No constraint from the subsystem; the limit is the end of the known
    /// horizon (or of the track itself).
    TrackEnd,
}

/// Absolute chainage the vehicle must not pass, plus its origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MovementAuthorityLimit<T> {
    pub limit_s: T,
    pub source: MalSource,
}

/// Geometry defaults for signals that do not pin their own points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SignalPlannerConfig<T> {
    /// Stop point distance in front of the mast.
    pub stop_offset_m: T,
    /// Commit point distance in front of the stop point.
    pub commit_gap_m: T,
}

impl<T: Real> Default for SignalPlannerConfig<T> {
    fn default() -> Self {
        SignalPlannerConfig {
            stop_offset_m: T::of(5.0),
            commit_gap_m: T::of(10.0),
        }
    }
}

/// Outcome of the commit rule at a `GetReady` aspect.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommitDecision {
    /// Brake and come to rest at the stop point.
    StopAtSignal,
    /// Carry on: already past the commit point, or a service-brake stop
    /// before the stop point is no longer physically possible.
    Proceed,
}

#[derive(Debug, Error)]
pub enum PlannerFault {
    #[error(
        "signal {id}: aspect demands a halt at {stop_point_s:.2} m but the vehicle is already at {vehicle_s:.2} m"
    )]
    PassedSignal {
        id: SignalId,
        stop_point_s: f64,
        vehicle_s: f64,
    },
    #[error(
        "movement authority {limit_s:.2} m falls inside a grid separator and the previous gap ends behind the vehicle at {vehicle_s:.2} m"
    )]
    InfeasibleStop { limit_s: f64, vehicle_s: f64 },
}

/// Resolves the effective stop and commit points of a signal. Descriptor
/// overrides win; defaults derive from the mast chainage and the config.
/// Points that would land before the track origin clamp to zero with a
/// warning (a signal that close to the origin is a map smell, not a fault).
pub fn resolve_signal_points<T: Real>(
    mast_s: T,
    descriptor: &SignalDescriptor<T>,
    cfg: &SignalPlannerConfig<T>,
) -> (T, T) {
    let mut stop = descriptor
        .stop_point_s
        .unwrap_or(mast_s - cfg.stop_offset_m);
    if stop < T::zero() {
        log::warn!(
            "signal {}: stop point {stop} clamped to track origin",
            descriptor.id
        );
        stop = T::zero();
    }
    let mut commit = descriptor
        .commit_point_s
        .unwrap_or(stop - cfg.commit_gap_m)
        .min(stop);
    if commit < T::zero() {
        commit = T::zero();
    }
    (stop, commit)
}

/// The commit rule for a `GetReady` aspect: proceed when the vehicle is past
/// the commit point, or when the service-brake stopping distance already
/// overshoots the stop point (braking would strand the vehicle beyond it).
pub fn commit_rule<T: Real>(
    vehicle_s: T,
    speed_mps: T,
    stop_point_s: T,
    commit_point_s: T,
    a_service: T,
) -> CommitDecision {
    let braking = speed_mps * speed_mps / (T::of(2.0) * a_service);
    if vehicle_s > commit_point_s || braking > stop_point_s - vehicle_s {
        CommitDecision::Proceed
    } else {
        CommitDecision::StopAtSignal
    }
}

/// Movement authority from the signals in the horizon.
///
/// Signals are visited nearest first. An aspect contained in the signal's
/// `allowed_go_states` grants passage; `GetReady` defers to the commit rule;
/// everything else — including `None` (aspect not yet known with enough
/// confidence) — demands a halt at the signal's stop point. The first halt
/// demand wins. With no demand the authority extends to the horizon end.
///
/// A halt demand whose stop point lies behind the vehicle cannot be planned
/// anymore and is reported as [`PlannerFault::PassedSignal`]; the caller
/// decides the fallback (the simulator logs it and commands an immediate
/// controlled stop).
pub fn signal_mal<T: Real>(
    fix: &TrackFix<T>,
    horizon: &DigitalHorizon<T>,
    aspects: &BTreeMap<SignalId, Option<SignalHiddenState>>,
    cfg: &SignalPlannerConfig<T>,
    a_service: T,
) -> Result<MovementAuthorityLimit<T>, PlannerFault> {
    for (event, descriptor) in horizon.signals() {
        let mast_s = event.element.s_start;
        let (stop_s, commit_s) = resolve_signal_points(mast_s, descriptor, cfg);
        let aspect = aspects.get(&descriptor.id).copied().flatten();
        let demands_halt = match aspect {
            Some(state) if descriptor.allowed_go_states.contains(&state) => false,
            Some(SignalHiddenState::GetReady) => {
                commit_rule(fix.s_m, fix.speed_mps, stop_s, commit_s, a_service)
                    == CommitDecision::StopAtSignal
            }
            _ => true,
        };
        if demands_halt {
            if stop_s < fix.s_m {
                return Err(PlannerFault::PassedSignal {
                    id: descriptor.id,
                    stop_point_s: stop_s.to_f64().unwrap_or(f64::NAN),
                    vehicle_s: fix.s_m.to_f64().unwrap_or(f64::NAN),
                });
            }
            return Ok(MovementAuthorityLimit {
                limit_s: stop_s,
                source: MalSource::Signal,
            });
        }
    }
    Ok(MovementAuthorityLimit {
        limit_s: horizon.end_s,
        source: MalSource::TrackEnd,
    })
}

/// Fuses two movement authority limits: the smaller limit wins; on an exact
/// tie the more specific source prevails (`Signal` over `Obstacle` over
/// `TrackEnd`), so logs attribute a co-located stop to the signal.
pub fn arbitrate_mal<T: Real>(
    a: MovementAuthorityLimit<T>,
    b: MovementAuthorityLimit<T>,
) -> MovementAuthorityLimit<T> {
    fn rank(s: MalSource) -> u8 {
        match s {
            MalSource::Signal => 0,
            MalSource::Obstacle => 1,
            MalSource::TrackEnd => 2,
        }
    }
    if a.limit_s < b.limit_s {
        a
    } else if b.limit_s < a.limit_s {
        b
    } else if rank(a.source) <= rank(b.source) {
        a
    } else {
        b
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::TrackPoint;
    use crate::localization::FixMode;
    use crate::signal_state::SignalClass;
    use crate::signal_state::SignalHiddenState::*;
    use crate::track_map::{build_map, ElementKind, InfrastructureElement, TrackMap};

    fn fix(s: f64, v: f64) -> TrackFix<f64> {
        TrackFix {
            s_m: s,
            speed_mps: v,
            mode: FixMode::Projected,
            position_std_m: 0.01,
        }
    }

    fn descriptor(id: u32) -> SignalDescriptor<f64> {
        SignalDescriptor {
            id: SignalId(id),
            class: SignalClass::StopGo,
            stop_point_s: None,
            commit_point_s: None,
            allowed_go_states: vec![GoStraight],
        }
    }

    fn map_with_signals(signals: &[(f64, SignalDescriptor<f64>)]) -> TrackMap<f64> {
        let pts = vec![TrackPoint::new(0.0, 0.0), TrackPoint::new(2000.0, 0.0)];
        let elements = signals
            .iter()
            .map(|(s, d)| InfrastructureElement::at_point(*s, ElementKind::Signal(d.clone())))
            .collect();
        build_map(&pts, 0.01, elements).unwrap()
    }

    fn aspects(
        entries: &[(u32, Option<SignalHiddenState>)],
    ) -> BTreeMap<SignalId, Option<SignalHiddenState>> {
        entries.iter().map(|(id, a)| (SignalId(*id), *a)).collect()
    }

    const A_SERVICE: f64 = 1.2;

    #[test]
    fn default_points_and_clamping() {
        let cfg = SignalPlannerConfig::default();
        let (stop, commit) = resolve_signal_points(500.0, &descriptor(1), &cfg);
        assert_eq!(stop, 495.0);
        assert_eq!(commit, 485.0);

        // Explicit override wins.
        let mut d = descriptor(2);
        d.stop_point_s = Some(490.0);
        d.commit_point_s = Some(470.0);
        let (stop, commit) = resolve_signal_points(500.0, &d, &cfg);
        assert_eq!(stop, 490.0);
        assert_eq!(commit, 470.0);

        // Signal close to the track origin clamps both points to zero.
        let (stop, commit) = resolve_signal_points(3.0, &descriptor(3), &cfg);
        assert_eq!(stop, 0.0);
        assert_eq!(commit, 0.0);
    }

    #[test]
    fn commit_rule_truth_table() {
        // Stop point 495, commit 485, service brake 1.2 m/s².
        // Slow and before commit: stopping is comfortable.
        assert_eq!(
            commit_rule(400.0, 10.0, 495.0, 485.0, A_SERVICE),
            CommitDecision::StopAtSignal
        );
        // Past the commit point: carry on regardless of speed.
        assert_eq!(
            commit_rule(485.1, 3.0, 495.0, 485.0, A_SERVICE),
            CommitDecision::Proceed
        );
        // Before commit but too fast to rest by the stop point:
        // braking distance 13.89²/2.4 = 80.4 m > 495 - 420 = 75 m.
        assert_eq!(
            commit_rule(420.0, 13.89, 495.0, 485.0, A_SERVICE),
            CommitDecision::Proceed
        );
        // Same position, slower: 10²/2.4 = 41.7 m < 75 m.
        assert_eq!(
            commit_rule(420.0, 10.0, 495.0, 485.0, A_SERVICE),
            CommitDecision::StopAtSignal
        );
    }

    #[test]
    fn unknown_aspect_demands_stop_at_default_point() {
        let map = map_with_signals(&[(500.0, descriptor(1))]);
        let h = map.digital_horizon(300.0, 400.0).unwrap();
        let cfg = SignalPlannerConfig::default();
        let mal = signal_mal(&fix(300.0, 10.0), &h, &aspects(&[(1, None)]), &cfg, A_SERVICE)
            .unwrap();
        assert_eq!(mal.limit_s, 495.0);
        assert_eq!(mal.source, MalSource::Signal);
        // Missing map entry entirely behaves the same.
        let mal = signal_mal(&fix(300.0, 10.0), &h, &aspects(&[]), &cfg, A_SERVICE).unwrap();
        assert_eq!(mal.limit_s, 495.0);
    }

    #[test]
    fn allowed_go_aspect_passes_to_next_signal() {
        let map = map_with_signals(&[(500.0, descriptor(1)), (800.0, descriptor(2))]);
        let h = map.digital_horizon(300.0, 600.0).unwrap();
        let cfg = SignalPlannerConfig::default();
        let mal = signal_mal(
            &fix(300.0, 10.0),
            &h,
            &aspects(&[(1, Some(GoStraight)), (2, Some(Stop))]),
            &cfg,
            A_SERVICE,
        )
        .unwrap();
        assert_eq!(mal.limit_s, 795.0);
        assert_eq!(mal.source, MalSource::Signal);
    }

    #[test]
    fn wrong_direction_go_is_a_stop_demand() {
        // The route needs GoStraight; the signal shows GoLeft.
        let map = map_with_signals(&[(500.0, descriptor(1))]);
        let h = map.digital_horizon(300.0, 400.0).unwrap();
        let cfg = SignalPlannerConfig::default();
        let mal = signal_mal(
            &fix(300.0, 10.0),
            &h,
            &aspects(&[(1, Some(GoLeft))]),
            &cfg,
            A_SERVICE,
        )
        .unwrap();
        assert_eq!(mal.limit_s, 495.0);
    }

    #[test]
    fn get_ready_resolves_through_commit_rule() {
        let map = map_with_signals(&[(500.0, descriptor(1))]);
        let cfg = SignalPlannerConfig::default();
        let got = aspects(&[(1, Some(GetReady))]);

        // Early approach: plan the stop.
        let h = map.digital_horizon(400.0, 400.0).unwrap();
        let mal = signal_mal(&fix(400.0, 10.0), &h, &got, &cfg, A_SERVICE).unwrap();
        assert_eq!(mal.limit_s, 495.0);

        // Past the commit point (485): proceed to the horizon end.
        let h = map.digital_horizon(490.0, 400.0).unwrap();
        let mal = signal_mal(&fix(490.0, 10.0), &h, &got, &cfg, A_SERVICE).unwrap();
        assert_eq!(mal.source, MalSource::TrackEnd);
        assert_eq!(mal.limit_s, 890.0);

        // Before commit but too fast to stop: proceed.
        let h = map.digital_horizon(420.0, 400.0).unwrap();
        let mal = signal_mal(&fix(420.0, 13.89), &h, &got, &cfg, A_SERVICE).unwrap();
        assert_eq!(mal.source, MalSource::TrackEnd);
    }

    #[test]
    fn no_signals_extends_to_horizon_end() {
        let map = map_with_signals(&[]);
        let h = map.digital_horizon(100.0, 250.0).unwrap();
        let cfg = SignalPlannerConfig::default();
        let mal = signal_mal(&fix(100.0, 10.0), &h, &aspects(&[]), &cfg, A_SERVICE).unwrap();
        assert_eq!(mal.limit_s, 350.0);
        assert_eq!(mal.source, MalSource::TrackEnd);
    }

    #[test]
    fn stop_demand_behind_vehicle_is_a_fault() {
        let map = map_with_signals(&[(500.0, descriptor(1))]);
        // Vehicle at 497: between stop point (495) and mast (500), and the
        // aspect flips to Stop.
        let h = map.digital_horizon(497.0, 400.0).unwrap();
        let cfg = SignalPlannerConfig::default();
        let err = signal_mal(
            &fix(497.0, 5.0),
            &h,
            &aspects(&[(1, Some(Stop))]),
            &cfg,
            A_SERVICE,
        )
        .unwrap_err();
        match err {
            PlannerFault::PassedSignal { id, stop_point_s, vehicle_s } => {
                assert_eq!(id, SignalId(1));
                assert_eq!(stop_point_s, 495.0);
                assert_eq!(vehicle_s, 497.0);
            }
            other => panic!("unexpected fault {other:?}"),
        }
    }

    #[test]
    fn arbitration_takes_minimum_with_signal_tie_break() {
        let sig = MovementAuthorityLimit {
            limit_s: 495.0,
            source: MalSource::Signal,
        };
        let obs = MovementAuthorityLimit {
            limit_s: 480.0,
            source: MalSource::Obstacle,
        };
        assert_eq!(arbitrate_mal(sig, obs).limit_s, 480.0);
        assert_eq!(arbitrate_mal(sig, obs).source, MalSource::Obstacle);
        assert_eq!(arbitrate_mal(obs, sig).source, MalSource::Obstacle);

        let obs_tie = MovementAuthorityLimit {
            limit_s: 495.0,
            source: MalSource::Obstacle,
        };
        assert_eq!(arbitrate_mal(sig, obs_tie).source, MalSource::Signal);
        assert_eq!(arbitrate_mal(obs_tie, sig).source, MalSource::Signal);

        let end = MovementAuthorityLimit {
            limit_s: 495.0,
            source: MalSource::TrackEnd,
        };
        assert_eq!(arbitrate_mal(end, obs_tie).source, MalSource::Obstacle);
    }
}
