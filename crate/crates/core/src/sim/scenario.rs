//! Scenario schema: everything a deterministic run needs, in one JSON file.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{ControllerConfig, VehicleParams};
use crate::free_space::{ClearanceGauge, FreeSpaceConfig, SensorExtrinsic};
use crate::fusion::{ObjectClass, SensorKind, TrackerParams};
use crate::geom::TrackPoint;
use crate::localization::InsConfig;
use crate::obstacle_planner::{class_footprint_radius, ObstacleDynamics, ZoneConfig};
use crate::signal_filter::{SensorModel, TransitionConfig};
use crate::signal_planner::SignalPlannerConfig;
use crate::signal_state::SignalHiddenState;
use crate::track_map::{InfrastructureElement, MapError, TrackMap};

/// Where the run's track map comes from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum MapSource {
    /// A map JSON produced by the map builder; relative paths resolve
    /// against the scenario file's directory.
    File { path: String },
    /// The full map embedded in the scenario.
    Inline { map: TrackMap<f64> },
    /// A straight test track of the given length with inline elements.
    Straight {
        length_m: f64,
        #[serde(default)]
        elements: Vec<InfrastructureElement<f64>>,
    },
}

impl MapSource {
    pub fn load(&self, base_dir: Option<&Path>) -> Result<TrackMap<f64>, ScenarioError> {
        match self {
            MapSource::File { path } => {
                let full = match base_dir {
                    Some(dir) => dir.join(path),
                    None => path.into(),
                };
                let text = std::fs::read_to_string(&full).map_err(|e| ScenarioError::Io {
                    path: full.display().to_string(),
                    source: e,
                })?;
                serde_json::from_str(&text).map_err(|e| ScenarioError::Json {
                    path: full.display().to_string(),
                    source: e,
                })
            }
            MapSource::Inline { map } => Ok(map.clone()),
            MapSource::Straight { length_m, elements } => Ok(crate::track_map::build_map(
                &[
                    TrackPoint::new(0.0, 0.0),
                    TrackPoint::new(*length_m, 0.0),
                ],
                0.01,
                elements.clone(),
            )?),
        }
    }
}

/// A scripted object in the world. Its position follows the waypoint
/// schedule by linear interpolation: absent before the first waypoint,
/// frozen at the last one afterwards. A single waypoint is a static object
/// that materializes at its timestamp.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Actor {
    pub name: String,
    pub class: ObjectClass,
    /// Collision footprint radius; defaults to the class footprint.
    #[serde(default)]
    pub footprint_radius_m: Option<f64>,
    pub waypoints: Vec<Waypoint>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Waypoint {
    pub t_s: f64,
    pub x_m: f64,
    pub y_m: f64,
}

impl Actor {
    pub fn radius(&self) -> f64 {
        self.footprint_radius_m
            .unwrap_or_else(|| class_footprint_radius(self.class))
    }

    /// Position at time `t`, or `None` if the actor has not appeared yet.
    pub fn position_at(&self, t: f64) -> Option<TrackPoint<f64>> {
        let first = self.waypoints.first()?;
        if t < first.t_s {
            return None;
        }
        let mut prev = first;
        for wp in &self.waypoints[1..] {
            if t < wp.t_s {
                let span = wp.t_s - prev.t_s;
                let u = if span > 0.0 { (t - prev.t_s) / span } else { 1.0 };
                return Some(TrackPoint::new(
                    prev.x_m + u * (wp.x_m - prev.x_m),
                    prev.y_m + u * (wp.y_m - prev.y_m),
                ));
            }
            prev = wp;
        }
        Some(TrackPoint::new(prev.x_m, prev.y_m))
    }

    /// Over-ground velocity at time `t` (zero outside the schedule).
    pub fn velocity_at(&self, t: f64) -> [f64; 2] {
        if self.waypoints.len() < 2 || t < self.waypoints[0].t_s {
            return [0.0, 0.0];
        }
        for w in self.waypoints.windows(2) {
            if t < w[1].t_s {
                let span = w[1].t_s - w[0].t_s;
                if span <= 0.0 {
                    return [0.0, 0.0];
                }
                return [(w[1].x_m - w[0].x_m) / span, (w[1].y_m - w[0].y_m) / span];
            }
        }
        [0.0, 0.0]
    }
}

/// Timed aspect sequence for one signal: the aspect at time `t` is the last
/// step at or before `t` (the first step before that).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SignalProgram {
    pub signal_id: u32,
    pub steps: Vec<ProgramStep>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ProgramStep {
    pub t_s: f64,
    pub state: SignalHiddenState,
}

impl SignalProgram {
    pub fn state_at(&self, t: f64) -> Option<SignalHiddenState> {
        let mut current = self.steps.first()?.state;
        for step in &self.steps {
            if step.t_s <= t {
                current = step.state;
            } else {
                break;
            }
        }
        Some(current)
    }
}

/// Signal-recognition camera model: a scalar range gate plus per-chamber
/// detection and corruption probabilities.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct SignalCameraConfig {
    pub range_m: f64,
    /// Probability a lit chamber yields a detection per frame.
    pub p_tp: f64,
    /// Probability an emitted detection carries a wrong label.
    pub p_conf: f64,
    /// Frame period in ticks (2 ticks at dt=0.05 -> 10 Hz).
    pub period_ticks: u32,
}

impl Default for SignalCameraConfig {
    fn default() -> Self {
        SignalCameraConfig {
            range_m: 90.0,
            p_tp: 0.9,
            p_conf: 0.0,
            period_ticks: 2,
        }
    }
}

/// One object-detection sensor (radar/camera/lidar classifier output).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectSensorConfig {
    pub name: String,
    pub kind: SensorKind,
    pub range_m: f64,
    pub sigma_m: f64,
    /// Some(sigma) when the sensor measures over-ground velocity (radar).
    pub velocity_sigma_mps: Option<f64>,
    pub p_detect: f64,
    pub period_ticks: u32,
}

impl Default for ObjectSensorConfig {
    fn default() -> Self {
        ObjectSensorConfig {
            name: "radar".to_string(),
            kind: SensorKind::Radar,
            range_m: 80.0,
            sigma_m: 0.3,
            velocity_sigma_mps: Some(0.3),
            p_detect: 0.95,
            period_ticks: 2,
        }
    }
}

/// Static clutter sources along the line: power poles / fence posts that
/// object sensors keep reporting (the most commonly detected objects in the
/// field). Poles are placed deterministically from the rate: one every
/// `100/rate` meters, alternating sides at the lateral offset.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct ClutterConfig {
    pub poles_per_100m: f64,
    pub lateral_offset_m: f64,
    pub p_detect: f64,
    pub sigma_m: f64,
    /// Fraction of clutter detections classified Unknown instead of
    /// Infrastructure.
    pub unknown_fraction: f64,
}

impl Default for ClutterConfig {
    fn default() -> Self {
        ClutterConfig {
            poles_per_100m: 0.0,
            lateral_offset_m: 3.2,
            p_detect: 0.7,
            sigma_m: 0.5,
            unknown_fraction: 0.25,
        }
    }
}

/// Lidar used by free-space detection.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct LidarConfig {
    pub sensor: String,
    pub range_m: f64,
    pub points_per_actor: u32,
    pub sigma_m: f64,
    pub period_ticks: u32,
    pub extrinsic: SensorExtrinsic<f64>,
}

impl Default for LidarConfig {
    fn default() -> Self {
        LidarConfig {
            sensor: "lidar_top".to_string(),
            range_m: 80.0,
            points_per_actor: 10,
            sigma_m: 0.03,
            period_ticks: 2,
            extrinsic: SensorExtrinsic {
                x: 2.0,
                y: 0.0,
                z: 2.2,
                yaw: 0.0,
            },
        }
    }
}

/// All sensor models of a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorSuite {
    pub ins: InsConfig<f64>,
    /// `None` disables signal recognition: beliefs stay uninformed and every
    /// signal is treated as an unknown aspect (a stop demand).
    pub signal_camera: Option<SignalCameraConfig>,
    pub object_sensors: Vec<ObjectSensorConfig>,
    pub clutter: ClutterConfig,
    pub lidar: Option<LidarConfig>,
}

impl Default for SensorSuite {
    fn default() -> Self {
        SensorSuite {
            ins: InsConfig::default(),
            signal_camera: Some(SignalCameraConfig::default()),
            object_sensors: vec![ObjectSensorConfig::default()],
            clutter: ClutterConfig::default(),
            lidar: None,
        }
    }
}

/// Signal-filter tuning.
///
/// The defaults calibrate the filter against the chamber camera rather than
/// an ideal detector. The camera both misses lit chambers and corrupts their
/// labels, so `p_tp` is the probability a lit chamber is reported *as
/// itself* (detection times correct label), and `p_fp` is inflated well
/// above the raw mislabel rate: it bounds how much a single contradictory
/// frame can move the posterior, so one corrupted frame cannot outweigh
/// seconds of consistent evidence and flap the planner's aspect decision.
/// The forward rate matches multi-second aspect holding times.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct SignalFilterConfig {
    pub sensor_model: SensorModel<f64>,
    pub transitions: TransitionConfig<f64>,
    /// Posterior mass required before a MAP aspect is acted upon.
    pub map_threshold: f64,
}

impl Default for SignalFilterConfig {
    fn default() -> Self {
        SignalFilterConfig {
            sensor_model: SensorModel {
                p_tp: 0.72,
                p_fp: 0.12,
            },
            transitions: TransitionConfig {
                step_s: 0.1,
                p_forward: 0.005,
                epsilon: 1e-4,
            },
            map_threshold: 0.9,
        }
    }
}

/// Free-space stage setup; present = enabled (requires a lidar).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FreeSpaceSetup {
    pub gauge: ClearanceGauge<f64>,
    pub config: FreeSpaceConfig<f64>,
}

impl Default for FreeSpaceSetup {
    fn default() -> Self {
        FreeSpaceSetup {
            gauge: ClearanceGauge::default(),
            config: FreeSpaceConfig::default(),
        }
    }
}

/// Obstacle-planner setup.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct ObstaclePlannerSetup {
    pub zones: ZoneConfig<f64>,
    pub dynamics: ObstacleDynamics<f64>,
    pub lookahead_m: f64,
}

impl Default for ObstaclePlannerSetup {
    fn default() -> Self {
        ObstaclePlannerSetup {
            zones: ZoneConfig::default(),
            dynamics: ObstacleDynamics::default(),
            lookahead_m: 150.0,
        }
    }
}

fn default_dt() -> f64 {
    0.05
}

fn default_horizon() -> f64 {
    200.0
}

fn default_separator_margin() -> f64 {
    2.0
}

/// A complete, self-contained run description.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    /// RNG seed. `None` means "not pinned by the scenario"; the runner falls
    /// back to an external override or the default seed (1).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub duration_s: f64,
    #[serde(default = "default_dt")]
    pub dt_s: f64,
    pub map: MapSource,
    #[serde(default)]
    pub start_s: f64,
    #[serde(default)]
    pub start_speed_mps: f64,
    #[serde(default)]
    pub vehicle: VehicleParams<f64>,
    #[serde(default)]
    pub controller: ControllerConfig<f64>,
    #[serde(default)]
    pub signal_planner: SignalPlannerConfig<f64>,
    #[serde(default)]
    pub signal_filter: SignalFilterConfig,
    #[serde(default)]
    pub fusion: TrackerParams<f64>,
    #[serde(default)]
    pub free_space: Option<FreeSpaceSetup>,
    #[serde(default)]
    pub obstacle_planner: ObstaclePlannerSetup,
    #[serde(default)]
    pub sensors: SensorSuite,
    #[serde(default)]
    pub actors: Vec<Actor>,
    #[serde(default)]
    pub signal_programs: Vec<SignalProgram>,
    #[serde(default = "default_horizon")]
    pub horizon_lookahead_m: f64,
    #[serde(default = "default_separator_margin")]
    pub separator_margin_m: f64,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid JSON in {path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
    #[error("map construction failed: {0}")]
    Map(#[from] MapError),
    #[error("scenario invalid:\n{}", .0.join("\n"))]
    Validation(Vec<String>),
}

impl Scenario {
    /// Semantic validation against the resolved map. Returns one issue per
    /// offending JSON path; empty means valid.
    pub fn validate(&self, map: &TrackMap<f64>) -> Vec<String> {
        let mut issues = Vec::new();
        let mut push = |path: &str, msg: String| issues.push(format!("{path}: {msg}"));

        if !(self.duration_s > 0.0) {
            push("duration_s", "must be > 0".into());
        }
        if !(self.dt_s > 0.0 && self.dt_s <= 1.0) {
            push("dt_s", "must be in (0, 1]".into());
        }
        if self.vehicle.validate().is_err() {
            push("vehicle", "all parameters must be positive and finite".into());
        }
        if !(0.0..=map.length()).contains(&self.start_s) {
            push(
                "start_s",
                format!("outside the track [0, {:.1}]", map.length()),
            );
        }
        if self.start_speed_mps < 0.0 {
            push("start_speed_mps", "must be >= 0".into());
        }
        if !(self.horizon_lookahead_m > 0.0) {
            push("horizon_lookahead_m", "must be > 0".into());
        }
        if !(self.obstacle_planner.lookahead_m > 0.0) {
            push("obstacle_planner.lookahead_m", "must be > 0".into());
        }

        let mut names = BTreeSet::new();
        for (i, actor) in self.actors.iter().enumerate() {
            let path = format!("actors[{i}]");
            if actor.waypoints.is_empty() {
                push(&path, "needs at least one waypoint".into());
            }
            if !actor
                .waypoints
                .windows(2)
                .all(|w| w[0].t_s <= w[1].t_s)
            {
                push(&format!("{path}.waypoints"), "timestamps must be sorted".into());
            }
            if !names.insert(actor.name.clone()) {
                push(&format!("{path}.name"), format!("duplicate name `{}`", actor.name));
            }
            if !(actor.radius() > 0.0) {
                push(&format!("{path}.footprint_radius_m"), "must be > 0".into());
            }
        }

        let signal_classes: std::collections::BTreeMap<u32, crate::signal_state::SignalClass> =
            map.signals()
                .map(|(_, d)| (d.id.0, d.class))
                .collect();
        let mut programmed = BTreeSet::new();
        for (i, prog) in self.signal_programs.iter().enumerate() {
            let path = format!("signal_programs[{i}]");
            match signal_classes.get(&prog.signal_id) {
                None => push(
                    &format!("{path}.signal_id"),
                    format!("signal {} not in map", prog.signal_id),
                ),
                Some(class) => {
                    for (j, step) in prog.steps.iter().enumerate() {
                        if step.state.class() != *class {
                            push(
                                &format!("{path}.steps[{j}].state"),
                                format!("{:?} is not a {:?} aspect", step.state, class),
                            );
                        }
                    }
                }
            }
            if prog.steps.is_empty() {
                push(&format!("{path}.steps"), "needs at least one step".into());
            }
            if !prog.steps.windows(2).all(|w| w[0].t_s <= w[1].t_s) {
                push(&format!("{path}.steps"), "timestamps must be sorted".into());
            }
            if !programmed.insert(prog.signal_id) {
                push(
                    &format!("{path}.signal_id"),
                    format!("duplicate program for signal {}", prog.signal_id),
                );
            }
        }

        if let Some(cam) = &self.sensors.signal_camera {
            if !(cam.p_tp > 0.0 && cam.p_tp <= 1.0) {
                push("sensors.signal_camera.p_tp", "must be in (0, 1]".into());
            }
            if !(0.0..1.0).contains(&cam.p_conf) {
                push("sensors.signal_camera.p_conf", "must be in [0, 1)".into());
            }
            if cam.period_ticks == 0 {
                push("sensors.signal_camera.period_ticks", "must be >= 1".into());
            }
        }
        for (i, s) in self.sensors.object_sensors.iter().enumerate() {
            let path = format!("sensors.object_sensors[{i}]");
            if !(s.p_detect > 0.0 && s.p_detect <= 1.0) {
                push(&format!("{path}.p_detect"), "must be in (0, 1]".into());
            }
            if !(s.sigma_m > 0.0) {
                push(&format!("{path}.sigma_m"), "must be > 0".into());
            }
            if s.period_ticks == 0 {
                push(&format!("{path}.period_ticks"), "must be >= 1".into());
            }
        }
        if self.free_space.is_some() && self.sensors.lidar.is_none() {
            push("free_space", "requires sensors.lidar to be configured".into());
        }
        if let Some(l) = &self.sensors.lidar {
            if l.period_ticks == 0 {
                push("sensors.lidar.period_ticks", "must be >= 1".into());
            }
        }
        issues
    }
}

/// Loads a scenario file and its map, fully validated.
pub fn load_scenario(path: &Path) -> Result<(Scenario, TrackMap<f64>), ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let scenario: Scenario = serde_json::from_str(&text).map_err(|e| ScenarioError::Json {
        path: path.display().to_string(),
        source: e,
    })?;
    let map = scenario.map.load(path.parent())?;
    let issues = scenario.validate(&map);
    if !issues.is_empty() {
        return Err(ScenarioError::Validation(issues));
    }
    Ok((scenario, map))
}
