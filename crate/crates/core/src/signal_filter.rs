//! Bayes filter over hidden signal aspects from noisy chamber detections.
//!
//! A camera-based detector looks at a signal and reports which chambers seem
//! lit, each with a confidence. Single frames are unreliable (sun glare, rain,
//! partial occlusion), so aspect decisions integrate evidence over time: a
//! discrete Bayes filter per signal maintains a probability for every hidden
//! state of the signal's class.
//!
//! * **Predict** applies a cyclic transition model: aspects advance along
//!   [`SignalHiddenState::cycle_successors`] with a rate calibrated per time
//!   step, plus a tiny uniform leak so no state ever starves.
//! * **Update** multiplies in per-chamber likelihoods from a true/false
//!   positive sensor model. A frame with no detections at all is "no
//!   observation" and leaves the belief untouched.
//! * **Decision** is thresholded MAP: the planner only acts on an aspect once
//!   its posterior clears [`MAP_THRESHOLD`]; anything less reads as `None`
//!   ("unknown", which the planner treats as a stop demand).

use serde::{Deserialize, Serialize};

use crate::scalar::Real;
use crate::signal_state::{ChamberLabel, SignalClass, SignalHiddenState, SignalId};

/// Posterior probability a MAP aspect must reach before the planner may rely
/// on it.
pub const MAP_THRESHOLD: f64 = 0.9;

/// One classified chamber from a detector frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChamberDetection<T> {
    pub label: ChamberLabel,
    /// Classifier confidence in `[0, 1]`; carried for logging/diagnostics.
    pub confidence: T,
}

/// True/false-positive model of the chamber detector.
///
/// `p_tp`: probability a lit chamber is reported lit in a frame.
/// `p_fp`: probability an unlit chamber is reported lit in a frame.
/// Both must lie strictly inside `(0, 1)` so likelihoods never hit exact
/// zero and the filter can always recover from contradictory evidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorModel<T> {
    pub p_tp: T,
    pub p_fp: T,
}

impl<T: Real> Default for SensorModel<T> {
    fn default() -> Self {
        SensorModel {
            p_tp: T::of(0.9),
            p_fp: T::of(0.05),
        }
    }
}

/// Transition model of the aspect cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransitionConfig<T> {
    /// Reference time step the forward rate is calibrated for.
    pub step_s: T,
    /// Probability of advancing one step along the cycle within `step_s`.
    pub p_forward: T,
    /// Uniform leak to every non-successor state per predict call.
    pub epsilon: T,
}

impl<T: Real> Default for TransitionConfig<T> {
    fn default() -> Self {
        TransitionConfig {
            step_s: T::of(0.1),
            p_forward: T::of(0.05),
            epsilon: T::of(1e-4),
        }
    }
}

/// Probability distribution over the hidden aspects of one signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalBelief<T> {
    pub signal_id: SignalId,
    /// Support: the hidden states of the signal's class, in class order.
    pub states: Vec<SignalHiddenState>,
    /// Probabilities aligned with `states`; maintained normalized.
    pub probs: Vec<T>,
}

impl<T: Real> SignalBelief<T> {
    /// Uninformed prior: uniform over the class's hidden states.
    pub fn uniform(signal_id: SignalId, class: SignalClass) -> Self {
        let states: Vec<_> = class.hidden_states().to_vec();
        let p = T::one() / T::from_usize(states.len()).unwrap();
        let probs = vec![p; states.len()];
        SignalBelief {
            signal_id,
            states,
            probs,
        }
    }

    pub fn prob(&self, state: SignalHiddenState) -> T {
        self.states
            .iter()
            .position(|s| *s == state)
            .map_or(T::zero(), |i| self.probs[i])
    }

    /// Total probability of aspects that demand a halt.
    pub fn prob_stop_demand(&self) -> T {
        self.states
            .iter()
            .zip(&self.probs)
            .filter(|(s, _)| s.demands_stop())
            .map(|(_, p)| *p)
            .sum()
    }

    /// Thresholded MAP decision: the most probable aspect if its posterior
    /// reaches `threshold`, else `None`. Ties resolve to the first state in
    /// support order, deterministically.
    pub fn map_state(&self, threshold: T) -> Option<SignalHiddenState> {
        let mut best = 0;
        for i in 1..self.probs.len() {
            if self.probs[i] > self.probs[best] {
                best = i;
            }
        }
        (self.probs[best] >= threshold).then(|| self.states[best])
    }

    fn normalize(&mut self) -> bool {
        let sum: T = self.probs.iter().copied().sum();
        if sum <= T::zero() || !sum.is_finite() {
            return false;
        }
        for p in &mut self.probs {
            *p /= sum;
        }
        true
    }

    fn reset_uniform(&mut self) {
        let p = T::one() / T::from_usize(self.states.len()).unwrap();
        for q in &mut self.probs {
            *q = p;
        }
    }
}

/// Propagates the belief forward by `dt` seconds through the cyclic
/// transition model. The forward probability is rescaled to the actual step:
/// `p_fwd(dt) = 1 - (1 - p_forward)^(dt / step_s)`. States with several cycle
/// successors split the forward mass evenly; every other state receives the
/// `epsilon` leak. Non-positive `dt` is a no-op.
pub fn predict<T: Real>(belief: &SignalBelief<T>, dt: T, cfg: &TransitionConfig<T>) -> SignalBelief<T> {
    if dt <= T::zero() {
        return belief.clone();
    }
    let n = belief.states.len();
    let p_fwd = T::one() - (T::one() - cfg.p_forward).powf(dt / cfg.step_s);
    let mut next = belief.clone();
    for q in &mut next.probs {
        *q = T::zero();
    }
    for (i, &state) in belief.states.iter().enumerate() {
        let succ: Vec<usize> = state
            .cycle_successors()
            .iter()
            .filter_map(|s| belief.states.iter().position(|t| t == s))
            .collect();
        let mut row = vec![T::zero(); n];
        let mut self_mass = T::one();
        if !succ.is_empty() {
            let share = p_fwd / T::from_usize(succ.len()).unwrap();
            for &j in &succ {
                row[j] = share;
            }
            self_mass -= p_fwd;
        }
        for j in 0..n {
            if j != i && !succ.contains(&j) {
                row[j] = cfg.epsilon;
                self_mass -= cfg.epsilon;
            }
        }
        row[i] = self_mass.max(T::zero());
        let p_i = belief.probs[i];
        for j in 0..n {
            next.probs[j] += row[j] * p_i;
        }
    }
    if !next.normalize() {
        next.reset_uniform();
    }
    next
}

/// Bayes measurement update from one detector frame.
///
/// Each chamber of the signal class contributes a likelihood factor per
/// state: a chamber reported lit `n` times contributes `p_tp^n` when the
/// state lights it and `p_fp^n` when it does not; a chamber not reported in
/// the frame contributes `1 - p_tp` / `1 - p_fp` respectively. An explicit
/// [`ChamberLabel::Empty`] detection asserts "signal seen, nothing lit" and
/// contributes the all-absent factors; an empty `detections` slice means no
/// observation happened and returns the belief unchanged.
///
/// If the posterior mass underflows to zero (contradictory evidence at
/// extreme sensor settings) the belief resets to uniform and a warning is
/// logged — the filter must degrade to "unknown", never panic.
pub fn update<T: Real>(
    belief: &SignalBelief<T>,
    detections: &[ChamberDetection<T>],
    model: &SensorModel<T>,
) -> SignalBelief<T> {
    if detections.is_empty() {
        return belief.clone();
    }
    let class = belief.states[0].class();
    let chambers = class.chambers();
    let mut counts = vec![0u32; chambers.len()];
    for d in detections {
        if let Some(i) = chambers.iter().position(|c| *c == d.label) {
            counts[i] += 1;
        }
        // Empty (or an out-of-class label that slipped past the gate)
        // contributes no lit-chamber count; absence factors below cover it.
    }
    let mut next = belief.clone();
    for (si, &state) in belief.states.iter().enumerate() {
        let lit = state.lit_chambers();
        let mut like = T::one();
        for (ci, &chamber) in chambers.iter().enumerate() {
            let is_lit = lit.contains(&chamber);
            like *= if counts[ci] > 0 {
                let p = if is_lit { model.p_tp } else { model.p_fp };
                p.powi(counts[ci] as i32)
            } else if is_lit {
                T::one() - model.p_tp
            } else {
                T::one() - model.p_fp
            };
        }
        next.probs[si] = belief.probs[si] * like;
    }
    if !next.normalize() {
        log::warn!(
            "signal {}: zero posterior mass after update, resetting to uniform",
            belief.signal_id
        );
        next.reset_uniform();
    }
    next
}

/// Drops detections that are implausible for the signal's class: a stop/go
/// signal cannot light switch chambers and vice versa. `Empty` always passes.
pub fn plausibility_gate<T: Real>(
    detections: &[ChamberDetection<T>],
    class: SignalClass,
) -> Vec<ChamberDetection<T>> {
    detections
        .iter()
        .filter(|d| d.label == ChamberLabel::Empty || class.chambers().contains(&d.label))
        .copied()
        .collect()
}
