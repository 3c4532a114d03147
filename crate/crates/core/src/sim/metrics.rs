//! Run metrics: the quantities the safety claims are judged on.

use serde::{Deserialize, Serialize};

/// Wall-clock execution statistics. Kept out of the event log (which must be
/// byte-deterministic) and reported only in `report.json`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuntimeStats {
    pub total_ms: f64,
    pub mean_tick_us: f64,
    pub max_tick_us: f64,
}

/// Aggregated outcome of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub seed: u64,
    pub ticks: u64,
    pub duration_s: f64,
    /// Ground-truth final state.
    pub final_s_m: f64,
    pub final_speed_mps: f64,
    /// Stop-point crossings while the true aspect demanded a halt.
    pub signal_pass_violations: u64,
    /// Stop-point crossings while the true aspect permitted passage.
    pub go_encounters: u64,
    /// Full stops in a signal approach while the true aspect permitted
    /// passage and the binding limit came from the signal subsystem.
    pub unnecessary_go_stops: u64,
    /// Smallest ground-truth gap (m) between the vehicle and any obstacle
    /// intruding the collision corridor; `None` when nothing ever intruded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_obstacle_margin_m: Option<f64>,
    /// True when, at the moment an obstacle first intruded, the service
    /// braking distance already exceeded the available gap — the stop budget
    /// was physically insufficient no matter what the controller did.
    pub margin_deficient: bool,
    /// Signed stop error (m) per platform halt, truth chainage minus stop
    /// point (positive = overshoot).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub platform_stop_errors_m: Vec<f64>,
    /// Rising edges of the warning bell.
    pub bell_activations: u64,
    /// Full stops commanded by the obstacle subsystem with no ground-truth
    /// obstacle in the collision corridor at that moment.
    pub false_stops: u64,
    /// Rising edges of the vehicle being past the arbitrated limit.
    pub mal_violations: u64,
    /// Rising edges of ground-truth speed exceeding the active limit
    /// by more than 0.1 m/s.
    pub speed_limit_violations: u64,
    /// Logged non-fatal irregularities.
    pub anomalies: u64,
    /// Fatal faults (0 or 1; a fault halts the run).
    pub safety_faults: u64,
    /// True when the run ended early on a safety fault.
    pub halted: bool,
    /// Wall-clock stats; absent in the event-log copy of this report.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runtime: Option<RuntimeStats>,
}

impl MetricsReport {
    pub fn new(scenario: &str, seed: u64) -> Self {
        MetricsReport {
            scenario: scenario.to_string(),
            seed,
            ticks: 0,
            duration_s: 0.0,
            final_s_m: 0.0,
            final_speed_mps: 0.0,
            signal_pass_violations: 0,
            go_encounters: 0,
            unnecessary_go_stops: 0,
            min_obstacle_margin_m: None,
            margin_deficient: false,
            platform_stop_errors_m: Vec::new(),
            bell_activations: 0,
            false_stops: 0,
            mal_violations: 0,
            speed_limit_violations: 0,
            anomalies: 0,
            safety_faults: 0,
            halted: false,
            runtime: None,
        }
    }

    /// Copy for the event log: identical except wall-clock data is dropped.
    pub fn without_runtime(&self) -> Self {
        MetricsReport {
            runtime: None,
            ..self.clone()
        }
    }
}
