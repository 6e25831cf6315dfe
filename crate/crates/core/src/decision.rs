//! Aggregation of short-term (need) and long-term (value) Q-values into a
//! deterministic action choice.
//!
//! Ties always resolve to the lowest action id, i.e. scenario declaration
//! order.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{ActionId, DualQTable, FeasibilityMask, StateId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecisionError {
    #[error("no feasible action at state {0}")]
    NoFeasibleAction(usize),
}

/// How the two Q-values are combined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum AggregationMode {
    /// Keep actions within `epsilon` of the best long-term value, then take
    /// the best short-term value among them.
    Lexicographic { epsilon: f64 },
    /// Maximize `weight·Q_long + (1−weight)·Q_short`.
    Weighted { weight: f64 },
    /// Maximize `Q_short` subject to `Q_long ≥ max Q_long − epsilon`.
    NeedConstrained { epsilon: f64 },
}

impl Default for AggregationMode {
    fn default() -> Self {
        AggregationMode::Lexicographic { epsilon: DEFAULT_EPSILON }
    }
}

pub const DEFAULT_EPSILON: f64 = 1e-9;
pub const DEFAULT_WEIGHT: f64 = 0.5;

impl AggregationMode {
    /// Builds a mode from the flat `aggregation`, `aggregation_epsilon` and
    /// `aggregation_weight` configuration keys.
    pub fn from_parts(name: &str, epsilon: Option<f64>, weight: Option<f64>) -> Result<Self, String> {
        match name.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "lexicographic" => Ok(AggregationMode::Lexicographic { epsilon: epsilon.unwrap_or(DEFAULT_EPSILON) }),
            "weighted" => Ok(AggregationMode::Weighted { weight: weight.unwrap_or(DEFAULT_WEIGHT) }),
            "need_constrained" => Ok(AggregationMode::NeedConstrained { epsilon: epsilon.unwrap_or(DEFAULT_EPSILON) }),
            other => Err(format!("unknown aggregation mode `{other}` (lexicographic|weighted|need_constrained)")),
        }
    }

    pub fn to_parts(self) -> (&'static str, Option<f64>, Option<f64>) {
        match self {
            AggregationMode::Lexicographic { epsilon } => ("lexicographic", Some(epsilon), None),
            AggregationMode::Weighted { weight } => ("weighted", None, Some(weight)),
            AggregationMode::NeedConstrained { epsilon } => ("need_constrained", Some(epsilon), None),
        }
    }

    /// Parameter bounds: `epsilon ≥ 0`, `weight ∈ [0, 1]`.
    pub fn check(self) -> Result<(), String> {
        match self {
            AggregationMode::Lexicographic { epsilon } | AggregationMode::NeedConstrained { epsilon } => {
                if epsilon >= 0.0 && epsilon.is_finite() {
                    Ok(())
                } else {
                    Err(format!("epsilon {epsilon} must be finite and non-negative"))
                }
            }
            AggregationMode::Weighted { weight } => {
                if (0.0..=1.0).contains(&weight) {
                    Ok(())
                } else {
                    Err(format!("weight {weight} out of range [0, 1]"))
                }
            }
        }
    }
}

/// First action (lowest id) maximizing `score`.
fn argmax(candidates: impl IntoIterator<Item = ActionId>, score: impl Fn(ActionId) -> f64) -> Option<ActionId> {
    let mut best: Option<(ActionId, f64)> = None;
    for a in candidates {
        let x = score(a);
        if best.is_none_or(|(_, b)| x > b) {
            best = Some((a, x));
        }
    }
    best.map(|(a, _)| a)
}

fn best_short_within(q: &DualQTable, s: StateId, feasible: &[ActionId], epsilon: f64) -> ActionId {
    let max_long = feasible.iter().map(|&a| q.q_long(s, a)).fold(f64::NEG_INFINITY, f64::max);
    let allowed = feasible.iter().copied().filter(|&a| q.q_long(s, a) >= max_long - epsilon);
    argmax(allowed, |a| q.q_short(s, a)).expect("the long-term maximizer always qualifies")
}

/// Chooses one action at `s` among `feasible` (ids in any order).
pub fn aggregate_choice(
    q: &DualQTable,
    s: StateId,
    feasible: &[ActionId],
    mode: AggregationMode,
) -> Result<ActionId, DecisionError> {
    if feasible.is_empty() {
        return Err(DecisionError::NoFeasibleAction(s.0));
    }
    let mut sorted = feasible.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let choice = match mode {
        AggregationMode::Lexicographic { epsilon } | AggregationMode::NeedConstrained { epsilon } => {
            best_short_within(q, s, &sorted, epsilon)
        }
        AggregationMode::Weighted { weight } => {
            argmax(sorted.iter().copied(), |a| weight * q.q_long(s, a) + (1.0 - weight) * q.q_short(s, a))
                .expect("non-empty")
        }
    };
    Ok(choice)
}

/// Deterministic greedy policy. `None` marks a state with no possible
/// action, where the agent idles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTable {
    pub choices: Vec<Option<ActionId>>,
    pub mode: AggregationMode,
    /// Digest of the dual Q-table the policy was derived from.
    pub q_digest: String,
}

impl PolicyTable {
    pub fn choice(&self, s: StateId) -> Option<ActionId> {
        self.choices[s.0]
    }
}

pub fn derive_policy(q: &DualQTable, mask: &FeasibilityMask, mode: AggregationMode) -> PolicyTable {
    let choices = (0..mask.n_states())
        .map(StateId)
        .map(|s| aggregate_choice(q, s, &mask.feasible(s), mode).ok())
        .collect();
    PolicyTable { choices, mode, q_digest: q.digest() }
}
