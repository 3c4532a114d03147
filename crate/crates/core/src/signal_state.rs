//! Tram signal vocabulary: light chambers, hidden aspect states and the
//! cyclic aspect sequence.
//!
//! Tram signals here are chamber matrices rather than colored lights. A
//! camera-based detector reports which chambers appear lit; the filter in
//! [`crate::signal_filter`] turns those noisy reports into a belief over the
//! hidden aspect. Two signal classes exist:
//!
//! * **Stop/Go signals** — chambers `A` (stop bar), `F0` (halt), `F1`/`F2`/`F3`
//!   (proceed straight/right/left) and `F4` (expect halt). Aspects cycle
//!   `STOP → STOP_REGISTERED → GO_* → GET_READY → STOP`.
//! * **Switch signals** — chambers `W0`, `W12`, `W13` announcing the locked
//!   switch direction. These do not cycle; they follow the interlocking.

use serde::{Deserialize, Serialize};

/// Identifier of a signal mast, unique within one map.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SignalId(pub u32);

impl std::fmt::Display for SignalId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "S{}", self.0)
    }
}

/// A light chamber a detector can classify.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum ChamberLabel {
    /// Stop bar, lit together with `F0` once the vehicle is registered.
    A,
    /// Halt.
    F0,
    /// Proceed straight.
    F1,
    /// Proceed right.
    F2,
    /// Proceed left.
    F3,
    /// Expect halt (transition aspect before `F0`).
    F4,
    /// Switch: locked, no route.
    W0,
    /// Switch locked for the right branch.
    W12,
    /// Switch locked for the left branch.
    W13,
    /// Detector looked at the signal and saw no lit chamber.
    Empty,
}

/// Hidden aspect of a signal, the state the filter estimates.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum SignalHiddenState {
    /// `F0` lit: halt.
    Stop,
    /// `F0` + `A` lit: halt, vehicle registered for a slot.
    StopRegistered,
    /// `F4` lit: proceed permission ends shortly.
    GetReady,
    /// `F1` lit.
    GoStraight,
    /// `F2` lit.
    GoRight,
    /// `F3` lit.
    GoLeft,
    /// `W12` lit.
    SwitchLockedRight,
    /// `W13` lit.
    SwitchLockedLeft,
}

/// The two signal families; determines which chambers and hidden states apply.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum SignalClass {
    StopGo,
    Switch,
}

impl SignalHiddenState {
    /// Chambers lit while the signal shows this aspect.
    pub fn lit_chambers(self) -> &'static [ChamberLabel] {
        use ChamberLabel::*;
        match self {
            SignalHiddenState::Stop => &[F0],
            SignalHiddenState::StopRegistered => &[F0, A],
            SignalHiddenState::GetReady => &[F4],
            SignalHiddenState::GoStraight => &[F1],
            SignalHiddenState::GoRight => &[F2],
            SignalHiddenState::GoLeft => &[F3],
            SignalHiddenState::SwitchLockedRight => &[W12],
            SignalHiddenState::SwitchLockedLeft => &[W13],
        }
    }

    pub fn class(self) -> SignalClass {
        match self {
            SignalHiddenState::SwitchLockedRight | SignalHiddenState::SwitchLockedLeft => {
                SignalClass::Switch
            }
            _ => SignalClass::StopGo,
        }
    }

    /// True for aspects that grant movement past the signal.
    pub fn is_go(self) -> bool {
        matches!(
            self,
            SignalHiddenState::GoStraight
                | SignalHiddenState::GoRight
                | SignalHiddenState::GoLeft
        )
    }

    /// True for aspects that demand a halt in front of the signal.
    pub fn demands_stop(self) -> bool {
        matches!(
            self,
            SignalHiddenState::Stop | SignalHiddenState::StopRegistered
        )
    }

    /// Aspects this one can move to in the regular cycle. Switch aspects are
    /// driven by the interlocking and have no autonomous successors.
    pub fn cycle_successors(self) -> &'static [SignalHiddenState] {
        use SignalHiddenState::*;
        match self {
            Stop => &[StopRegistered],
            StopRegistered => &[GoStraight, GoRight, GoLeft],
            GoStraight | GoRight | GoLeft => &[GetReady],
            GetReady => &[Stop],
            SwitchLockedRight | SwitchLockedLeft => &[],
        }
    }
}

impl SignalClass {
    /// All hidden states a signal of this class can show.
    pub fn hidden_states(self) -> &'static [SignalHiddenState] {
        use SignalHiddenState::*;
        match self {
            SignalClass::StopGo => &[
                Stop,
                StopRegistered,
                GetReady,
                GoStraight,
                GoRight,
                GoLeft,
            ],
            SignalClass::Switch => &[SwitchLockedRight, SwitchLockedLeft],
        }
    }

    /// Chambers physically present on a signal of this class.
    pub fn chambers(self) -> &'static [ChamberLabel] {
        use ChamberLabel::*;
        match self {
            SignalClass::StopGo => &[A, F0, F1, F2, F3, F4],
            SignalClass::Switch => &[W0, W12, W13],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn templates_use_only_class_chambers() {
        for class in [SignalClass::StopGo, SignalClass::Switch] {
            for state in class.hidden_states() {
                assert_eq!(state.class(), class);
                for ch in state.lit_chambers() {
                    assert!(
                        class.chambers().contains(ch),
                        "{state:?} lights {ch:?} outside class {class:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn templates_are_distinct_within_a_class() {
        for class in [SignalClass::StopGo, SignalClass::Switch] {
            let states = class.hidden_states();
            for i in 0..states.len() {
                for j in (i + 1)..states.len() {
                    assert_ne!(
                        states[i].lit_chambers(),
                        states[j].lit_chambers(),
                        "{:?} and {:?} share a template",
                        states[i],
                        states[j]
                    );
                }
            }
        }
    }

    #[test]
    fn cycle_is_closed_and_returns_to_stop() {
        use SignalHiddenState::*;
        // Every successor stays inside the stop/go state set.
        for s in SignalClass::StopGo.hidden_states() {
            for n in s.cycle_successors() {
                assert_eq!(n.class(), SignalClass::StopGo);
            }
        }
        // Following the cycle from STOP reaches STOP again in four hops.
        let mut state = Stop;
        for _ in 0..4 {
            state = state.cycle_successors()[0];
        }
        assert_eq!(state, Stop);
        assert!(GetReady.cycle_successors() == &[Stop]);
        assert!(SwitchLockedLeft.cycle_successors().is_empty());
    }

    #[test]
    fn stop_and_go_predicates() {
        use SignalHiddenState::*;
        assert!(Stop.demands_stop() && StopRegistered.demands_stop());
        assert!(!GetReady.demands_stop() && !GoStraight.demands_stop());
        assert!(GoStraight.is_go() && GoRight.is_go() && GoLeft.is_go());
        assert!(!Stop.is_go() && !GetReady.is_go() && !SwitchLockedRight.is_go());
    }

    #[test]
    fn serde_names_are_stable() {
        let j = serde_json::to_string(&SignalHiddenState::StopRegistered).unwrap();
        assert_eq!(j, "\"StopRegistered\"");
        let c: ChamberLabel = serde_json::from_str("\"F4\"").unwrap();
        assert_eq!(c, ChamberLabel::F4);
        let id: SignalId = serde_json::from_str("7").unwrap();
        assert_eq!(id, SignalId(7));
    }
}
