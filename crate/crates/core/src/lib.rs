//! Deterministic simulation library for an autonomous tram software stack.
//!
//! The crate models the on-board pipeline of a driverless tram operating on
//! a known route: a track map with a digital horizon, chainage-based
//! localization, probabilistic tram-signal state estimation, multi-sensor
//! obstacle fusion, lidar free-space detection, movement-authority planning
//! and a longitudinal vehicle controller — plus a seeded closed-loop
//! simulator that exercises all of it and writes replayable logs.
//!
//! All numeric modules are generic over the [`scalar::Real`] scalar
//! (`f32`/`f64`). The simulator and the type aliases at the crate root are
//! `f64`.

pub mod control;
pub mod free_space;
pub mod fusion;
pub mod geom;
pub mod localization;
pub mod mat;
pub mod obstacle_planner;
pub mod scalar;
pub mod signal_filter;
pub mod signal_planner;
pub mod signal_state;
pub mod sim;
pub mod track_map;

pub use scalar::Real;

/// Double-precision aliases for the common types; the simulator, the CLI and
/// most applications use these.
pub type TrackPointF64 = geom::TrackPoint<f64>;
pub type TrackMapF64 = track_map::TrackMap<f64>;
pub type DigitalHorizonF64 = track_map::DigitalHorizon<f64>;
pub type InfrastructureElementF64 = track_map::InfrastructureElement<f64>;
pub type Pose2DF64 = localization::Pose2D<f64>;
pub type TrackFixF64 = localization::TrackFix<f64>;
pub type SignalBeliefF64 = signal_filter::SignalBelief<f64>;
pub type MovementAuthorityLimitF64 = signal_planner::MovementAuthorityLimit<f64>;
pub type ObjectMeasurementF64 = fusion::ObjectMeasurement<f64>;
pub type FusedTrackF64 = fusion::FusedTrack<f64>;
pub type OccupiedPolygonF64 = free_space::OccupiedPolygon<f64>;
pub type VehicleParamsF64 = control::VehicleParams<f64>;
