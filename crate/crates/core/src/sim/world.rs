//! The closed-loop world: scripted environment, synthetic sensors,
//! perception, planning, control, and the vehicle plant wired together in a
//! fixed per-tick order. All randomness flows from one seeded generator; the
//! wall clock is read only for runtime statistics that never enter the
//! event log.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::control::{
    braking_curve_violated, braking_distance, integrate_plant, Controller,
};
use crate::free_space::{align_clouds, detect_occupied, OccupiedPolygon, SensorExtrinsic};
use crate::fusion::{infrastructure_prefilter, Tracker};
use crate::localization::{
    dead_reckon, monotone_filter, project_to_track, simulate_ins, FixMode, Pose2D, TrackFix,
};
use crate::obstacle_planner::{
    build_zones, decide, disk_intrusion_chainage, grid_separator_adjust, ObstacleAnomaly,
    ObstacleRef,
};
use crate::signal_filter::{plausibility_gate, predict, update, SignalBelief};
use crate::signal_planner::{
    arbitrate_mal, resolve_signal_points, signal_mal, MalSource, MovementAuthorityLimit,
};
use crate::signal_state::{SignalHiddenState, SignalId};
use crate::track_map::{ElementKind, TrackMap};

use super::events::{Event, EventPayload, FaultRecord, TickRecord};
use super::metrics::{MetricsReport, RuntimeStats};
use super::scenario::Scenario;
use super::sensors::{
    clutter_poles, synthesize_chamber_detections, synthesize_lidar_cloud,
    synthesize_object_measurements,
};

/// Chainage-uncertainty growth per meter of dead reckoning.
const DEAD_RECKON_DRIFT_PER_M: f64 = 0.05;

/// Overrides applied on top of the scenario file.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Replaces the scenario seed.
    pub seed: Option<u64>,
    /// Forces free-space conservative mode on/off (no effect when the
    /// scenario has no free-space stage).
    pub conservative_free_space: Option<bool>,
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: MetricsReport,
    pub events: Vec<Event>,
    /// True when a safety fault terminated the run early.
    pub halted: bool,
}

fn truth_pose(map: &TrackMap<f64>, s: f64, v: f64, t: f64) -> Pose2D<f64> {
    let (pt, heading) = map.point_at(s).expect("truth stays on the track");
    Pose2D {
        x: pt.x,
        y: pt.y,
        heading,
        speed_mps: v,
        yaw_rate: 0.0,
        t_s: t,
    }
}

fn anomaly_text(a: &ObstacleAnomaly<f64>) -> String {
    match a {
        ObstacleAnomaly::BehindVehicle { source, s_m } => {
            let src = match source {
                ObstacleRef::Track(id) => format!("track {id}"),
                ObstacleRef::Polygon(i) => format!("polygon {i}"),
            };
            format!("obstacle ({src}) at {s_m:.2} m is behind the vehicle")
        }
    }
}

/// Executes one scenario deterministically and returns the event log plus
/// metrics. The map must be the one resolved from `scenario.map`.
pub fn run(scenario: &Scenario, map: &TrackMap<f64>, opts: &RunOptions) -> RunOutput {
    let started = Instant::now();
    let seed = opts.seed.or(scenario.seed).unwrap_or(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dt = scenario.dt_s;
    let planned_ticks = ((scenario.duration_s / dt).ceil() as u64).max(1);

    let vehicle = scenario.vehicle;
    let mut fs_cfg = scenario.free_space.clone();
    if let (Some(fs), Some(flag)) = (&mut fs_cfg, opts.conservative_free_space) {
        fs.config.conservative = flag;
    }
    let lidar_extrinsics: BTreeMap<String, SensorExtrinsic<f64>> = scenario
        .sensors
        .lidar
        .iter()
        .map(|l| (l.sensor.clone(), l.extrinsic))
        .collect();
    let poles = clutter_poles(map, &scenario.sensors.clutter);
    let obstacle_enabled =
        !scenario.sensors.object_sensors.is_empty() || fs_cfg.is_some();

    // Scripted truth of every signal: the program when present, otherwise the
    // fail-safe first aspect of the class (halt / locked).
    let programs: BTreeMap<u32, &super::scenario::SignalProgram> = scenario
        .signal_programs
        .iter()
        .map(|p| (p.signal_id, p))
        .collect();
    let truth_aspect = |id: SignalId, class: crate::signal_state::SignalClass, t: f64| {
        programs
            .get(&id.0)
            .and_then(|p| p.state_at(t))
            .unwrap_or(class.hidden_states()[0])
    };

    let mut beliefs: BTreeMap<SignalId, SignalBelief<f64>> = map
        .signals()
        .map(|(_, d)| (d.id, SignalBelief::uniform(d.id, d.class)))
        .collect();

    let mut controller = Controller::new(scenario.controller);
    let mut tracker = Tracker::new(scenario.fusion);
    let mut last_fusion_t = 0.0f64;
    let mut latest_polygons: Vec<OccupiedPolygon<f64>> = Vec::new();

    let mut truth_s = scenario.start_s;
    let mut truth_v = scenario.start_speed_mps;
    let mut prev_truth_s = truth_s;
    let mut prev_truth_v = truth_v;
    let mut fix = TrackFix {
        s_m: truth_s,
        speed_mps: truth_v,
        mode: FixMode::Projected,
        position_std_m: scenario.sensors.ins.position_std_m,
    };
    let monotone_tol = 5.0 * scenario.sensors.ins.position_std_m;

    let mut report = MetricsReport::new(&scenario.name, seed);
    let mut events: Vec<Event> = Vec::with_capacity(planned_ticks as usize + 2);
    let mut halted = false;

    let mut prev_bell = false;
    let mut prev_standing = truth_v < scenario.controller.stop_speed_mps;
    let mut prev_overrun = false;
    let mut prev_speeding = false;
    let mut had_intrusion = false;

    let mut tick_total_us = 0.0f64;
    let mut tick_max_us = 0.0f64;
    let mut executed: u64 = 0;

    'ticks: for k in 0..planned_ticks {
        let tick_started = Instant::now();
        let t = k as f64 * dt;
        let mut anomalies: Vec<String> = Vec::new();
        let pose = truth_pose(map, truth_s, truth_v, t);

        // --- signal recognition -----------------------------------------
        if let Some(cam) = &scenario.sensors.signal_camera {
            if k % cam.period_ticks as u64 == 0 {
                let frame_dt = cam.period_ticks as f64 * dt;
                for (mast_s, desc) in map.signals() {
                    let state = truth_aspect(desc.id, desc.class, t);
                    let detections =
                        synthesize_chamber_detections(state, mast_s, truth_s, cam, &mut rng);
                    let belief = beliefs.get_mut(&desc.id).expect("belief per signal");
                    *belief = predict(belief, frame_dt, &scenario.signal_filter.transitions);
                    if !detections.is_empty() {
                        let gated = plausibility_gate(&detections, desc.class);
                        *belief = update(belief, &gated, &scenario.signal_filter.sensor_model);
                    }
                }
            }
        }

        // --- localization -------------------------------------------------
        match simulate_ins(&pose, &scenario.sensors.ins, &mut rng) {
            Some(ins_pose) => match project_to_track(map, &ins_pose) {
                Ok(mut f) => {
                    let (s, backward) = monotone_filter(fix.s_m, f.s_m, monotone_tol);
                    if backward {
                        anomalies.push(format!(
                            "localization: fix jumped backwards from {:.2} m to {:.2} m",
                            fix.s_m, f.s_m
                        ));
                        report.anomalies += 1;
                    }
                    f.s_m = s;
                    fix = f;
                }
                Err(e) => {
                    events.push(Event {
                        tick: k,
                        t_s: t,
                        payload: EventPayload::Fault(FaultRecord {
                            fault: "off_track".into(),
                            message: e.to_string(),
                        }),
                    });
                    report.safety_faults += 1;
                    halted = true;
                    executed = k;
                    break 'ticks;
                }
            },
            None => {
                fix = dead_reckon(
                    &fix,
                    fix.speed_mps,
                    dt,
                    map.length(),
                    DEAD_RECKON_DRIFT_PER_M,
                );
            }
        }

        // --- signal planning -----------------------------------------------
        let horizon = map
            .digital_horizon(fix.s_m, scenario.horizon_lookahead_m)
            .expect("fix stays within the track");
        let aspects: BTreeMap<SignalId, Option<SignalHiddenState>> = beliefs
            .iter()
            .map(|(id, b)| {
                let aspect = if scenario.sensors.signal_camera.is_some() {
                    b.map_state(scenario.signal_filter.map_threshold)
                } else {
                    None
                };
                (*id, aspect)
            })
            .collect();
        let mut mal = match signal_mal(
            &fix,
            &horizon,
            &aspects,
            &scenario.signal_planner,
            vehicle.a_service,
        ) {
            Ok(m) => m,
            Err(fault) => {
                anomalies.push(fault.to_string());
                report.anomalies += 1;
                let bd = braking_distance(fix.speed_mps, vehicle.a_service).unwrap_or(0.0);
                MovementAuthorityLimit {
                    limit_s: fix.s_m + bd + 0.5,
                    source: MalSource::Signal,
                }
            }
        };

        // --- obstacle pipeline ---------------------------------------------
        let mut bell = false;
        let mut nearest_obstacle_s = None;
        if obstacle_enabled {
            let due: Vec<_> = scenario
                .sensors
                .object_sensors
                .iter()
                .filter(|s| k % s.period_ticks as u64 == 0)
                .cloned()
                .collect();
            if !due.is_empty() {
                let measurements = synthesize_object_measurements(
                    &scenario.actors,
                    &poles,
                    t,
                    crate::geom::TrackPoint::new(pose.x, pose.y),
                    &due,
                    &scenario.sensors.clutter,
                    &mut rng,
                );
                let kept = infrastructure_prefilter(
                    &measurements,
                    map,
                    scenario.obstacle_planner.zones.warning_half_width_m,
                );
                if let Err(e) = tracker.step(t - last_fusion_t, &kept) {
                    events.push(Event {
                        tick: k,
                        t_s: t,
                        payload: EventPayload::Fault(FaultRecord {
                            fault: "fusion_numerics".into(),
                            message: e.to_string(),
                        }),
                    });
                    report.safety_faults += 1;
                    halted = true;
                    executed = k;
                    break 'ticks;
                }
                last_fusion_t = t;
            }
            if let (Some(fs), Some(lidar)) = (&fs_cfg, &scenario.sensors.lidar) {
                if k % lidar.period_ticks as u64 == 0 {
                    let cloud =
                        synthesize_lidar_cloud(&scenario.actors, t, &pose, lidar, &mut rng);
                    let fix_pose = {
                        let (pt, heading) =
                            map.point_at(fix.s_m).expect("fix stays within the track");
                        Pose2D {
                            x: pt.x,
                            y: pt.y,
                            heading,
                            speed_mps: fix.speed_mps,
                            yaw_rate: 0.0,
                            t_s: t,
                        }
                    };
                    let aligned =
                        align_clouds(std::slice::from_ref(&cloud), &lidar_extrinsics, |_| {
                            fix_pose.clone()
                        })
                        .expect("lidar extrinsic is configured");
                    latest_polygons = detect_occupied(
                        &aligned,
                        map,
                        &fs.gauge,
                        &fs.config,
                        crate::geom::TrackPoint::new(fix_pose.x, fix_pose.y),
                    );
                }
            }
            let zones = build_zones(
                map,
                fix.s_m,
                scenario.obstacle_planner.lookahead_m,
                &scenario.obstacle_planner.zones,
            )
            .expect("validated lookahead");
            let (decision, obstacle_anomalies) = decide(
                &fix,
                tracker.tracks(),
                &latest_polygons,
                &zones,
                &scenario.obstacle_planner.dynamics,
                map,
            );
            for a in &obstacle_anomalies {
                anomalies.push(anomaly_text(a));
                report.anomalies += 1;
            }
            bell = decision.bell;
            nearest_obstacle_s = decision.nearest_obstacle_s;
            mal = arbitrate_mal(mal, decision.mal);
        }

        // --- arbitration and separator feasibility ---------------------------
        mal = arbitrate_mal(
            mal,
            MovementAuthorityLimit {
                limit_s: map.length(),
                source: MalSource::TrackEnd,
            },
        );
        match grid_separator_adjust(mal, map, fix.s_m, scenario.separator_margin_m) {
            Ok(adjusted) => mal = adjusted,
            Err(fault) => {
                anomalies.push(fault.to_string());
                report.anomalies += 1;
            }
        }

        // --- safety envelope on ground truth ---------------------------------
        // A violation is fatal only if the same limit was satisfiable at the
        // previous truth state: then the controller had the budget and lost
        // it. A limit that appears already violated (an obstacle surfacing
        // inside the braking distance) is a world-imposed infeasibility and
        // is handled through the margin metrics instead.
        let truth_fix = TrackFix {
            s_m: truth_s,
            speed_mps: truth_v,
            mode: FixMode::Projected,
            position_std_m: 0.0,
        };
        let prev_fix = TrackFix {
            s_m: prev_truth_s,
            speed_mps: prev_truth_v,
            mode: FixMode::Projected,
            position_std_m: 0.0,
        };
        if braking_curve_violated(&truth_fix, &mal, &vehicle)
            && !braking_curve_violated(&prev_fix, &mal, &vehicle)
        {
            events.push(Event {
                tick: k,
                t_s: t,
                payload: EventPayload::Fault(FaultRecord {
                    fault: "braking_curve_violation".into(),
                    message: format!(
                        "{:.2} m/s at {:.2} m violates the service braking curve to the \
                         {:?} limit at {:.2} m",
                        truth_v, truth_s, mal.source, mal.limit_s
                    ),
                }),
            });
            report.safety_faults += 1;
            halted = true;
            executed = k;
            break 'ticks;
        }

        // --- control and plant -----------------------------------------------
        let cmd = controller.command(&fix, &mal, &horizon, &vehicle, dt);
        let (next_s, next_v) = integrate_plant(truth_s, truth_v, cmd.accel_mps2, dt, map.length());
        prev_truth_s = truth_s;
        prev_truth_v = truth_v;
        truth_s = next_s;
        truth_v = next_v;

        // --- ground-truth metrics ---------------------------------------------
        for (mast_s, desc) in map.signals() {
            let (stop_s, _) = resolve_signal_points(mast_s, desc, &scenario.signal_planner);
            if prev_truth_s < stop_s && truth_s >= stop_s {
                let state = truth_aspect(desc.id, desc.class, t);
                if desc.allowed_go_states.contains(&state) {
                    report.go_encounters += 1;
                } else if state.demands_stop()
                    || state.class() == crate::signal_state::SignalClass::Switch
                {
                    report.signal_pass_violations += 1;
                }
            }
        }

        let mut truth_intrusion: Option<f64> = None;
        if !scenario.actors.is_empty() {
            let zones = build_zones(
                map,
                truth_s,
                scenario.obstacle_planner.lookahead_m,
                &scenario.obstacle_planner.zones,
            )
            .expect("validated lookahead");
            for actor in &scenario.actors {
                let Some(center) = actor.position_at(t) else {
                    continue;
                };
                if let Some(s_obs) =
                    disk_intrusion_chainage(&center, actor.radius(), &zones.collision, map)
                {
                    let margin = s_obs - truth_s;
                    truth_intrusion = Some(truth_intrusion.map_or(margin, |m: f64| m.min(margin)));
                }
            }
            if let Some(margin) = truth_intrusion {
                report.min_obstacle_margin_m = Some(
                    report
                        .min_obstacle_margin_m
                        .map_or(margin, |m| m.min(margin)),
                );
                if !had_intrusion {
                    had_intrusion = true;
                    let bd = braking_distance(truth_v, vehicle.a_service).unwrap_or(0.0);
                    report.margin_deficient = bd > margin;
                }
            }
        }

        let standing = truth_v < scenario.controller.stop_speed_mps;
        if standing && !prev_standing {
            if mal.source == MalSource::Obstacle && truth_intrusion.is_none() {
                report.false_stops += 1;
            }
            if mal.source == MalSource::Signal && controller.dwell().is_none() {
                for (mast_s, desc) in map.signals() {
                    let (stop_s, _) =
                        resolve_signal_points(mast_s, desc, &scenario.signal_planner);
                    let state = truth_aspect(desc.id, desc.class, t);
                    if desc.allowed_go_states.contains(&state)
                        && truth_s <= stop_s
                        && stop_s - truth_s <= 30.0
                        && (mal.limit_s - stop_s).abs() <= 1.0
                    {
                        report.unnecessary_go_stops += 1;
                        break;
                    }
                }
            }
        }
        prev_standing = standing;

        if controller.dwell().is_some() && !events.is_empty() {
            // Dwell just started this tick? Record the stop error once.
            let started_now = match events.last() {
                Some(Event {
                    payload: EventPayload::Tick(rec),
                    ..
                }) => !rec.dwell,
                _ => true,
            };
            if started_now {
                let mut best: Option<f64> = None;
                for e in map.elements() {
                    if let ElementKind::Platform { stop_point_s } = e.kind {
                        let err = truth_s - stop_point_s;
                        if best.map_or(true, |b: f64| err.abs() < b.abs()) {
                            best = Some(err);
                        }
                    }
                }
                if let Some(err) = best {
                    report.platform_stop_errors_m.push(err);
                }
            }
        }

        if bell && !prev_bell {
            report.bell_activations += 1;
        }
        prev_bell = bell;

        let overrun = truth_s > mal.limit_s + 1e-9;
        if overrun && !prev_overrun {
            report.mal_violations += 1;
        }
        prev_overrun = overrun;

        let mut active_limit = vehicle.v_max;
        for e in map.elements() {
            if let ElementKind::SpeedLimit { limit_mps } = e.kind {
                if truth_s >= e.s_start && truth_s <= e.s_end {
                    active_limit = active_limit.min(limit_mps);
                }
            }
        }
        let speeding = truth_v > active_limit + 0.1;
        if speeding && !prev_speeding {
            report.speed_limit_violations += 1;
        }
        prev_speeding = speeding;

        // --- event record ------------------------------------------------------
        let signals: BTreeMap<String, Option<SignalHiddenState>> = horizon
            .signals()
            .map(|(_, desc)| (desc.id.to_string(), aspects[&desc.id]))
            .collect();
        events.push(Event {
            tick: k,
            t_s: t,
            payload: EventPayload::Tick(TickRecord {
                s_m: truth_s,
                speed_mps: truth_v,
                fix_s_m: fix.s_m,
                fix_mode: fix.mode,
                accel_mps2: cmd.accel_mps2,
                mal_limit_s: mal.limit_s,
                mal_source: mal.source,
                bell,
                dwell: controller.dwell().is_some(),
                nearest_obstacle_s,
                signals,
                anomalies,
            }),
        });

        executed = k + 1;
        let us = tick_started.elapsed().as_secs_f64() * 1e6;
        tick_total_us += us;
        tick_max_us = tick_max_us.max(us);
    }

    report.ticks = executed;
    report.duration_s = executed as f64 * dt;
    report.final_s_m = truth_s;
    report.final_speed_mps = truth_v;
    report.halted = halted;
    events.push(Event {
        tick: executed,
        t_s: executed as f64 * dt,
        payload: EventPayload::Report(report.without_runtime()),
    });
    report.runtime = Some(RuntimeStats {
        total_ms: started.elapsed().as_secs_f64() * 1e3,
        mean_tick_us: if executed > 0 {
            tick_total_us / executed as f64
        } else {
            0.0
        },
        max_tick_us: tick_max_us,
    });

    RunOutput {
        report,
        events,
        halted,
    }
}
