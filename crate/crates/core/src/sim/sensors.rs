//! Synthetic sensor models: range-gated, seeded-noise measurement generators
//! working directly in the map frame.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::free_space::{LidarPoint, SensorCloud};
use crate::fusion::{ObjectClass, ObjectMeasurement};
use crate::geom::TrackPoint;
use crate::localization::Pose2D;
use crate::signal_filter::ChamberDetection;
use crate::signal_state::{ChamberLabel, SignalHiddenState};
use crate::track_map::TrackMap;

use super::scenario::{Actor, ClutterConfig, LidarConfig, ObjectSensorConfig, SignalCameraConfig};

/// One detector frame for a signal showing `state`, seen from `vehicle_s`.
///
/// Within range (mast ahead by at most `range_m`): every lit chamber of the
/// class template yields a detection with probability `p_tp`, whose label is
/// corrupted to a uniformly random *wrong* chamber label of the same class
/// with probability `p_conf`; every unlit chamber contributes an explicit
/// `Empty` detection ("looked, nothing lit there"). Out of range, or with the
/// mast already behind the vehicle: no detections at all.
pub fn synthesize_chamber_detections<R: Rng + ?Sized>(
    state: SignalHiddenState,
    mast_s: f64,
    vehicle_s: f64,
    cfg: &SignalCameraConfig,
    rng: &mut R,
) -> Vec<ChamberDetection<f64>> {
    let ahead = mast_s - vehicle_s;
    if !(0.0..=cfg.range_m).contains(&ahead) {
        return Vec::new();
    }
    let chambers = state.class().chambers();
    let lit = state.lit_chambers();
    let mut out = Vec::with_capacity(chambers.len());
    for &chamber in chambers {
        if lit.contains(&chamber) {
            if rng.random::<f64>() < cfg.p_tp {
                let label = if cfg.p_conf > 0.0 && rng.random::<f64>() < cfg.p_conf {
                    wrong_label(chamber, chambers, rng)
                } else {
                    chamber
                };
                out.push(ChamberDetection {
                    label,
                    confidence: 1.0,
                });
            }
        } else {
            out.push(ChamberDetection {
                label: ChamberLabel::Empty,
                confidence: 1.0,
            });
        }
    }
    out
}

fn wrong_label<R: Rng + ?Sized>(
    truth: ChamberLabel,
    chambers: &[ChamberLabel],
    rng: &mut R,
) -> ChamberLabel {
    let others: Vec<ChamberLabel> = chambers.iter().copied().filter(|c| *c != truth).collect();
    others[rng.random_range(0..others.len())]
}

/// Deterministic static clutter along the line: one pole every
/// `100 / poles_per_100m` meters, alternating sides at the lateral offset.
/// Returns map-frame positions; empty when the rate is zero.
pub fn clutter_poles(map: &TrackMap<f64>, cfg: &ClutterConfig) -> Vec<TrackPoint<f64>> {
    if cfg.poles_per_100m <= 0.0 {
        return Vec::new();
    }
    let spacing = 100.0 / cfg.poles_per_100m;
    let mut poles = Vec::new();
    let mut s = spacing / 2.0;
    let mut side = 1.0;
    while s < map.length() {
        if let Ok((pt, heading)) = map.point_at(s) {
            poles.push(TrackPoint::new(
                pt.x - side * cfg.lateral_offset_m * heading.sin(),
                pt.y + side * cfg.lateral_offset_m * heading.cos(),
            ));
        }
        side = -side;
        s += spacing;
    }
    poles
}

/// One object-detection frame across all configured sensors.
///
/// Sensors fire in declaration order, actors in declaration order, clutter
/// poles in chainage order — the RNG draw sequence is fixed. Each visible
/// actor yields one measurement per sensor (trams: 2–4 split fragments, the
/// characteristic radar behavior on long reflective bodies), position noise
/// is isotropic Gaussian, and velocity is attached only by sensors that
/// measure it.
pub fn synthesize_object_measurements<R: Rng + ?Sized>(
    actors: &[Actor],
    poles: &[TrackPoint<f64>],
    t: f64,
    vehicle_xy: TrackPoint<f64>,
    sensors: &[ObjectSensorConfig],
    clutter: &ClutterConfig,
    rng: &mut R,
) -> Vec<ObjectMeasurement<f64>> {
    let mut out = Vec::new();
    for sensor in sensors {
        let noise = Normal::new(0.0, sensor.sigma_m).expect("validated sigma");
        let pos_cov = [[sensor.sigma_m.powi(2), 0.0], [0.0, sensor.sigma_m.powi(2)]];
        for actor in actors {
            let Some(center) = actor.position_at(t) else {
                continue;
            };
            if center.distance_to(&vehicle_xy) > sensor.range_m {
                continue;
            }
            if rng.random::<f64>() >= sensor.p_detect {
                continue;
            }
            let velocity = actor.velocity_at(t);
            let fragments: Vec<TrackPoint<f64>> = if actor.class == ObjectClass::Tram {
                let n = rng.random_range(2..=4u32);
                let speed = (velocity[0].powi(2) + velocity[1].powi(2)).sqrt();
                let axis = if speed > 1e-9 {
                    [velocity[0] / speed, velocity[1] / speed]
                } else {
                    [1.0, 0.0]
                };
                (0..n)
                    .map(|i| {
                        let offset = (i as f64 - (n as f64 - 1.0) / 2.0) * 1.5;
                        TrackPoint::new(center.x + offset * axis[0], center.y + offset * axis[1])
                    })
                    .collect()
            } else {
                vec![center]
            };
            for frag in fragments {
                out.push(measure(
                    frag, velocity, actor.class, sensor, &noise, pos_cov, rng,
                ));
            }
        }
        for pole in poles {
            if pole.distance_to(&vehicle_xy) > sensor.range_m {
                continue;
            }
            if rng.random::<f64>() >= clutter.p_detect {
                continue;
            }
            let class = if rng.random::<f64>() < clutter.unknown_fraction {
                ObjectClass::Unknown
            } else {
                ObjectClass::Infrastructure
            };
            let clutter_noise = Normal::new(0.0, clutter.sigma_m).expect("validated sigma");
            let cov = [
                [clutter.sigma_m.powi(2), 0.0],
                [0.0, clutter.sigma_m.powi(2)],
            ];
            out.push(measure(
                *pole,
                [0.0, 0.0],
                class,
                sensor,
                &clutter_noise,
                cov,
                rng,
            ));
        }
    }
    out
}

fn measure<R: Rng + ?Sized>(
    position: TrackPoint<f64>,
    velocity: [f64; 2],
    class: ObjectClass,
    sensor: &ObjectSensorConfig,
    noise: &Normal<f64>,
    pos_cov: [[f64; 2]; 2],
    rng: &mut R,
) -> ObjectMeasurement<f64> {
    let noisy = TrackPoint::new(
        position.x + noise.sample(rng),
        position.y + noise.sample(rng),
    );
    let (vel, vel_cov) = match sensor.velocity_sigma_mps {
        Some(vs) => {
            let vn = Normal::new(0.0, vs).expect("validated sigma");
            (
                Some([velocity[0] + vn.sample(rng), velocity[1] + vn.sample(rng)]),
                Some([[vs.powi(2), 0.0], [0.0, vs.powi(2)]]),
            )
        }
        None => (None, None),
    };
    ObjectMeasurement {
        sensor: sensor.kind,
        position: noisy,
        position_cov: pos_cov,
        velocity: vel,
        velocity_cov: vel_cov,
        class,
    }
}

/// One lidar sweep: surface points sampled on every in-range actor,
/// expressed in the sensor frame (so the free-space aligner can put them
/// back) and stamped with the sweep time.
pub fn synthesize_lidar_cloud<R: Rng + ?Sized>(
    actors: &[Actor],
    t: f64,
    vehicle: &Pose2D<f64>,
    cfg: &LidarConfig,
    rng: &mut R,
) -> SensorCloud<f64> {
    let mut points = Vec::new();
    let (sin_v, cos_v) = vehicle.heading.sin_cos();
    let (sin_e, cos_e) = cfg.extrinsic.yaw.sin_cos();
    let noise = Normal::new(0.0, cfg.sigma_m).expect("validated sigma");
    for actor in actors {
        let Some(center) = actor.position_at(t) else {
            continue;
        };
        let dx = center.x - vehicle.x;
        let dy = center.y - vehicle.y;
        if (dx * dx + dy * dy).sqrt() > cfg.range_m {
            continue;
        }
        let radius = actor.radius();
        for _ in 0..cfg.points_per_actor {
            let angle = rng.random::<f64>() * std::f64::consts::TAU;
            let r = radius * rng.random::<f64>().sqrt();
            let wx = center.x + r * angle.cos() + noise.sample(rng);
            let wy = center.y + r * angle.sin() + noise.sample(rng);
            let wz = 0.5 + 1.2 * rng.random::<f64>();
            // Map frame -> vehicle frame.
            let rx = wx - vehicle.x;
            let ry = wy - vehicle.y;
            let vx = cos_v * rx + sin_v * ry;
            let vy = -sin_v * rx + cos_v * ry;
            // Vehicle frame -> sensor frame.
            let sx = vx - cfg.extrinsic.x;
            let sy = vy - cfg.extrinsic.y;
            points.push(LidarPoint {
                x: cos_e * sx + sin_e * sy,
                y: -sin_e * sx + cos_e * sy,
                z: wz - cfg.extrinsic.z,
                t_s: t,
            });
        }
    }
    SensorCloud {
        sensor: cfg.sensor.clone(),
        points,
    }
}
