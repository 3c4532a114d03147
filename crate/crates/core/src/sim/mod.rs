//! Deterministic closed-loop simulation harness.
//!
//! Couples the planning/perception stack to a scripted world: a kinematic
//! vehicle plant, waypoint-driven actors, timed signal programs, and noisy
//! sensor models driven by a single seeded RNG. Identical scenario + seed
//! produces a byte-identical event log.

pub mod events;
pub mod metrics;
pub mod scenario;
pub mod sensors;
pub mod world;

pub use events::{parse_jsonl, to_jsonl, Event, EventPayload, FaultRecord, LogParseError, TickRecord};
pub use metrics::{MetricsReport, RuntimeStats};
pub use scenario::{load_scenario, MapSource, Scenario, ScenarioError};
pub use world::{run, RunOptions, RunOutput};
