//! JSON-Lines event log: one self-describing record per line.
//!
//! The log is the determinism artifact — identical scenario + seed must
//! reproduce it byte for byte. Everything serialized here is therefore either
//! exact (integers, enums, strings) or derived purely from seeded
//! computation; wall-clock data never enters the log.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::localization::FixMode;
use crate::signal_planner::MalSource;
use crate::signal_state::SignalHiddenState;

use super::metrics::MetricsReport;

/// One log line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub tick: u64,
    pub t_s: f64,
    #[serde(flatten)]
    pub payload: EventPayload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventPayload {
    /// Regular per-tick state snapshot.
    Tick(TickRecord),
    /// A fatal safety fault; the run halts right after logging it.
    Fault(FaultRecord),
    /// Final metrics, appended as the last line of every completed log.
    Report(MetricsReport),
}

/// Vehicle and planner state at the end of a tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    /// Ground-truth chainage and speed of the plant.
    pub s_m: f64,
    pub speed_mps: f64,
    /// Localization output the planners acted on.
    pub fix_s_m: f64,
    pub fix_mode: FixMode,
    /// Commanded acceleration applied over this tick.
    pub accel_mps2: f64,
    /// Arbitrated movement authority.
    pub mal_limit_s: f64,
    pub mal_source: MalSource,
    pub bell: bool,
    pub dwell: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nearest_obstacle_s: Option<f64>,
    /// Thresholded MAP aspect per horizon signal (`None` = undecided).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub signals: BTreeMap<String, Option<SignalHiddenState>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub anomalies: Vec<String>,
}

/// A fault that terminates the run (exit code 3 at the CLI).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultRecord {
    /// Stable machine-readable fault name.
    pub fault: String,
    pub message: String,
}

#[derive(Debug, Error)]
#[error("line {line}: {source}")]
pub struct LogParseError {
    /// 1-based line number of the offending record.
    pub line: usize,
    pub source: serde_json::Error,
}

/// Serializes events as JSON Lines (one record per line, trailing newline).
pub fn to_jsonl(events: &[Event]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e).expect("event serialization cannot fail"));
        out.push('\n');
    }
    out
}

/// Parses a JSON-Lines log; blank lines are ignored, the first malformed
/// line fails with its line number.
pub fn parse_jsonl(text: &str) -> Result<Vec<Event>, LogParseError> {
    let mut events = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        events.push(serde_json::from_str(line).map_err(|e| LogParseError {
            line: i + 1,
            source: e,
        })?);
    }
    Ok(events)
}
