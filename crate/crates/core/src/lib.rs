//! Agent-based simulation of capability deprivation under the capability
//! approach.
//!
//! Each agent's choice problem is compiled into a small MDP whose actions
//! are gated by conversion factors and norms. Two Q-tables are solved, one
//! for short-term needs and one for long-term values, and aggregated into a
//! deterministic policy. The dynamics loop steps every agent per tick and
//! the evaluation module reports capability deprivation and functionings.

pub mod bundled;
pub mod decision;
pub mod domain;
pub mod dynamics;
pub mod evaluation;
pub mod mdp;
pub mod population;
pub mod report;
pub mod rng;
pub mod scenario;

pub use decision::{aggregate_choice, derive_policy, AggregationMode, DecisionError, PolicyTable};
pub use domain::{
    AgentId, AgentProfile, AttrValue, CentralCapability, ChoiceFactors, DomainError, HealthLevel, Housing, Need, Payer,
    PersonalState, Registration, ValueDimension,
};
pub use dynamics::{run, run_with, RunOptions, RunReport, SolveCache, TrajectoryEvent, WorldState};
pub use evaluation::{compare, compute_metrics, CapabilityStatus, DeltaReport, EquityMetrics, EvaluationError, Verdict};
pub use mdp::{compile, solve_dual, ActionId, CompiledMdp, DualQTable, FiniteMdp, MdpError, StateId};
pub use population::{sample_population, PopulationSpec};
pub use scenario::{load_scenario, validate, ScenarioError, ScenarioSpec, Violation};

/// Any failure surfaced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Decision(#[from] DecisionError),
    #[error(transparent)]
    Evaluation(#[from] EvaluationError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("unknown norm `{0}`")]
    UnknownNorm(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<scenario::UnknownNorm> for Error {
    fn from(e: scenario::UnknownNorm) -> Self {
        Error::UnknownNorm(e.0)
    }
}
