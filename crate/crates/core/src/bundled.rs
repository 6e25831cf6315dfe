//! The scenario shipped with the crate.

use crate::scenario::{load_scenario, ScenarioSpec};

pub const HEALTH_INEQUITY_TOML: &str = include_str!("../scenarios/health_inequity.toml");
pub const HEALTH_INEQUITY: &str = "health_inequity";

pub const RECEIVE_MEDICAL_ATTENTION: &str = "receive_medical_attention";
pub const KEEP_FORWARD: &str = "keep_forward_without_medical_attention";
pub const REGISTRATION_GATE: &str = "registration_gate";

pub fn health_inequity() -> ScenarioSpec {
    load_scenario(HEALTH_INEQUITY_TOML.as_bytes()).expect("bundled scenario is valid")
}

/// Source text of a bundled scenario by name.
pub fn source(name: &str) -> Option<&'static str> {
    (name == HEALTH_INEQUITY).then_some(HEALTH_INEQUITY_TOML)
}
