//! Declarative world definition and the feasibility function.
//!
//! A scenario file is TOML with the top-level keys `format_version`,
//! `resources`, `norms`, `environment`, `actions`, `population` and
//! `simulation` (plus optional `name`, `description` and `needs`).
//! [`load_scenario`] parses and validates in one step; [`validate`] is total
//! and reports every violation it finds rather than stopping at the first.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::decision::AggregationMode;
use crate::domain::{
    AgentProfile, AttrValue, CentralCapability, HealthLevel, Housing, Need, Payer, PersonalState,
    Registration, ValueDimension,
};
use crate::population::{self, Marginal, PopulationSpec};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl Violation {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Violation { path: path.into(), message: message.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            f.write_str(&self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("scenario has {} violation(s): {}", .0.len(), join_violations(.0))]
    Validation(Vec<Violation>),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Capacity {
    Unlimited,
    Bounded(u64),
}

impl Capacity {
    pub fn covers(self, quantity: u64) -> bool {
        match self {
            Capacity::Unlimited => true,
            Capacity::Bounded(n) => n >= quantity,
        }
    }

    pub fn take(self, quantity: u64) -> Capacity {
        match self {
            Capacity::Unlimited => Capacity::Unlimited,
            Capacity::Bounded(n) => Capacity::Bounded(n.saturating_sub(quantity)),
        }
    }

    pub fn adjust(self, delta: i64) -> Capacity {
        match self {
            Capacity::Unlimited => Capacity::Unlimited,
            Capacity::Bounded(n) => Capacity::Bounded((n as i128 + delta as i128).max(0) as u64),
        }
    }
}

impl Serialize for Capacity {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Capacity::Unlimited => s.serialize_str("unlimited"),
            Capacity::Bounded(n) => s.serialize_u64(*n),
        }
    }
}

impl<'de> Deserialize<'de> for Capacity {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct Visitor;
        impl serde::de::Visitor<'_> for Visitor {
            type Value = Capacity;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a non-negative integer or \"unlimited\"")
            }
            fn visit_u64<E: serde::de::Error>(self, v: u64) -> Result<Capacity, E> {
                Ok(Capacity::Bounded(v))
            }
            fn visit_i64<E: serde::de::Error>(self, v: i64) -> Result<Capacity, E> {
                u64::try_from(v)
                    .map(Capacity::Bounded)
                    .map_err(|_| E::custom(format!("capacity {v} is negative")))
            }
            fn visit_str<E: serde::de::Error>(self, v: &str) -> Result<Capacity, E> {
                if v.eq_ignore_ascii_case("unlimited") {
                    Ok(Capacity::Unlimited)
                } else {
                    Err(E::custom(format!("invalid capacity `{v}`")))
                }
            }
        }
        d.deserialize_any(Visitor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Resource {
    pub name: String,
    pub capacity: Capacity,
    #[serde(default)]
    pub unit_cost: f64,
    #[serde(default = "default_payer")]
    pub payer: Payer,
}

fn default_payer() -> Payer {
    Payer::Healthcare
}

/// An environment flag value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FlagValue {
    Bool(bool),
    Number(f64),
    Text(String),
}

fn one_or_many<'de, D, T>(d: D) -> Result<Option<Vec<T>>, D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de>,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany<T> {
        One(T),
        Many(Vec<T>),
    }
    Ok(Option::<OneOrMany<T>>::deserialize(d)?.map(|v| match v {
        OneOrMany::One(x) => vec![x],
        OneOrMany::Many(xs) => xs,
    }))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttrCondition {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub equals: Option<AttrValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
}

impl AttrCondition {
    fn holds(&self, value: &AttrValue) -> bool {
        if let Some(expected) = &self.equals {
            if expected != value {
                return false;
            }
        }
        if self.min.is_some() || self.max.is_some() {
            let Some(x) = value.as_number() else { return false };
            if self.min.is_some_and(|m| x < m) || self.max.is_some_and(|m| x > m) {
                return false;
            }
        }
        true
    }
}

/// Conjunction of clauses over a personal state and the environment flags.
/// The empty condition always holds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Condition {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub health_min: Option<HealthLevel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub health_max: Option<HealthLevel>,
    #[serde(default, deserialize_with = "one_or_many", skip_serializing_if = "Option::is_none")]
    pub housing: Option<Vec<Housing>>,
    #[serde(default, deserialize_with = "one_or_many", skip_serializing_if = "Option::is_none")]
    pub registration: Option<Vec<Registration>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attributes: BTreeMap<String, AttrCondition>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub environment: BTreeMap<String, FlagValue>,
}

impl Condition {
    pub fn is_always(&self) -> bool {
        *self == Condition::default()
    }

    pub fn holds(&self, state: &PersonalState, env: &BTreeMap<String, FlagValue>) -> bool {
        if self.health_min.is_some_and(|m| state.health < m) || self.health_max.is_some_and(|m| state.health > m) {
            return false;
        }
        if self.housing.as_ref().is_some_and(|set| !set.contains(&state.housing)) {
            return false;
        }
        if self.registration.as_ref().is_some_and(|set| !set.contains(&state.registration)) {
            return false;
        }
        for (name, cond) in &self.attributes {
            match state.attributes.get(name) {
                Some(v) if cond.holds(v) => {}
                _ => return false,
            }
        }
        self.environment.iter().all(|(flag, want)| env.get(flag) == Some(want))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TermKind {
    Personal,
    Social,
    Environmental,
}

/// A probability multiplier applied to an action's feasibility whenever its
/// predicate holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConversionTerm {
    pub kind: TermKind,
    /// Action-name pattern; only meaningful for agent-level terms. `None`
    /// matches every action.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub applies_to: Option<String>,
    #[serde(default, rename = "when", skip_serializing_if = "Condition::is_always")]
    pub predicate: Condition,
    pub factor: f64,
}

impl ConversionTerm {
    pub fn matches(&self, action: &str, state: &PersonalState, env: &BTreeMap<String, FlagValue>) -> bool {
        self.applies_to.as_deref().is_none_or(|p| pattern_matches(p, action)) && self.predicate.holds(state, env)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    Legal,
    Social,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormEffect {
    Forbid,
    Allow,
    Scale(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormRule {
    pub id: String,
    pub kind: NormKind,
    /// Action-name pattern; `*` matches any run of characters.
    pub applies_to: String,
    #[serde(default, rename = "when", skip_serializing_if = "Condition::is_always")]
    pub condition: Condition,
    pub effect: NormEffect,
    #[serde(default)]
    pub promotes: BTreeSet<ValueDimension>,
    #[serde(default)]
    pub demotes: BTreeSet<ValueDimension>,
    #[serde(default = "enabled_default")]
    pub enabled: bool,
}

fn enabled_default() -> bool {
    true
}

impl NormRule {
    /// Whether this norm governs `action` for an agent in `state`.
    pub fn applies(&self, action: &str, state: &PersonalState, env: &BTreeMap<String, FlagValue>) -> bool {
        self.enabled && pattern_matches(&self.applies_to, action) && self.condition.holds(state, env)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceUse {
    pub resource: String,
    #[serde(default = "one")]
    pub quantity: u64,
}

fn one() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectTarget {
    HealthDelta(i64),
    HousingSet(Housing),
    RegistrationSet(Registration),
    AttributeDelta { name: String, amount: f64 },
    ResourceDelta { resource: String, amount: i64 },
    ExpenseDelta { payer: Payer, amount: f64 },
    UrgencyDelta { need: Need, amount: f64 },
    ValuePrefDelta { value: ValueDimension, amount: f64 },
}

/// One consequence of a realised action, optionally conditional on the
/// state the action was taken from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectRule {
    #[serde(flatten)]
    pub target: EffectTarget,
    #[serde(default, skip_serializing_if = "Condition::is_always")]
    pub when: Condition,
}

impl EffectRule {
    pub fn new(target: EffectTarget) -> Self {
        EffectRule { target, when: Condition::default() }
    }

    pub fn changes_state(&self) -> bool {
        matches!(
            self.target,
            EffectTarget::HealthDelta(_)
                | EffectTarget::HousingSet(_)
                | EffectTarget::RegistrationSet(_)
                | EffectTarget::AttributeDelta { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub requires_resource: Option<ResourceUse>,
    #[serde(default)]
    pub conversion_terms: Vec<ConversionTerm>,
    #[serde(default)]
    pub enables: BTreeSet<CentralCapability>,
    #[serde(default)]
    pub relieves: BTreeMap<Need, f64>,
    #[serde(default)]
    pub importance: BTreeMap<ValueDimension, f64>,
    #[serde(default)]
    pub effects: Vec<EffectRule>,
    #[serde(default)]
    pub base_short_reward: f64,
    #[serde(default)]
    pub base_long_reward: f64,
}

impl ActionSpec {
    /// The personal state after this action is realised from `state`.
    /// Conditional effects are evaluated against the pre-action state.
    /// Numeric attributes stay inside their declared population range.
    pub fn successor(&self, state: &PersonalState, scenario: &ScenarioSpec, env: &BTreeMap<String, FlagValue>) -> PersonalState {
        let mut next = state.clone();
        for rule in self.effects.iter().filter(|r| r.when.holds(state, env)) {
            match &rule.target {
                EffectTarget::HealthDelta(d) => next.health = next.health.shifted(*d),
                EffectTarget::HousingSet(h) => next.housing = *h,
                EffectTarget::RegistrationSet(r) => next.registration = *r,
                EffectTarget::AttributeDelta { name, amount } => {
                    let current = next.attributes.get(name).and_then(AttrValue::as_number);
                    let Some(x) = current else { continue };
                    let mut y = x + amount;
                    if let Some(Marginal::Range([lo, hi])) = scenario.population.marginals.get(name) {
                        y = y.clamp(*lo as f64, *hi as f64);
                    }
                    next.attributes.insert(name.clone(), AttrValue::Number(y));
                }
                _ => {}
            }
        }
        next
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Agents act in ascending id order every tick.
    #[default]
    Ascending,
    /// Agents act in a seeded random order, reshuffled every tick.
    Shuffled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSimulation", into = "RawSimulation")]
pub struct SimulationConfig {
    pub horizon: u32,
    pub gamma_short: f64,
    pub gamma_long: f64,
    pub tolerance: f64,
    pub max_iter: usize,
    pub max_states: usize,
    pub aggregation: AggregationMode,
    pub schedule: Schedule,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            horizon: 1,
            gamma_short: 0.5,
            gamma_long: 0.9,
            tolerance: 1e-8,
            max_iter: 10_000,
            max_states: 100_000,
            aggregation: AggregationMode::default(),
            schedule: Schedule::Ascending,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSimulation {
    horizon: u32,
    #[serde(default = "defaults::gamma_short")]
    gamma_short: f64,
    #[serde(default = "defaults::gamma_long")]
    gamma_long: f64,
    #[serde(default = "defaults::tolerance")]
    tolerance: f64,
    #[serde(default = "defaults::max_iter")]
    max_iter: usize,
    #[serde(default = "defaults::max_states")]
    max_states: usize,
    #[serde(default = "defaults::aggregation")]
    aggregation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    aggregation_epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    aggregation_weight: Option<f64>,
    #[serde(default)]
    schedule: Schedule,
}

mod defaults {
    pub fn gamma_short() -> f64 {
        0.5
    }
    pub fn gamma_long() -> f64 {
        0.9
    }
    pub fn tolerance() -> f64 {
        1e-8
    }
    pub fn max_iter() -> usize {
        10_000
    }
    pub fn max_states() -> usize {
        100_000
    }
    pub fn aggregation() -> String {
        "lexicographic".into()
    }
}

impl TryFrom<RawSimulation> for SimulationConfig {
    type Error = String;

    fn try_from(raw: RawSimulation) -> Result<Self, Self::Error> {
        let aggregation =
            AggregationMode::from_parts(&raw.aggregation, raw.aggregation_epsilon, raw.aggregation_weight)?;
        Ok(SimulationConfig {
            horizon: raw.horizon,
            gamma_short: raw.gamma_short,
            gamma_long: raw.gamma_long,
            tolerance: raw.tolerance,
            max_iter: raw.max_iter,
            max_states: raw.max_states,
            aggregation,
            schedule: raw.schedule,
        })
    }
}

impl From<SimulationConfig> for RawSimulation {
    fn from(cfg: SimulationConfig) -> Self {
        let (aggregation, aggregation_epsilon, aggregation_weight) = cfg.aggregation.to_parts();
        RawSimulation {
            horizon: cfg.horizon,
            gamma_short: cfg.gamma_short,
            gamma_long: cfg.gamma_long,
            tolerance: cfg.tolerance,
            max_iter: cfg.max_iter,
            max_states: cfg.max_states,
            aggregation: aggregation.to_string(),
            aggregation_epsilon,
            aggregation_weight,
            schedule: cfg.schedule,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub format_version: u32,
    #[serde(default)]
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    /// Needs declared in addition to the baseline set.
    #[serde(default)]
    pub needs: Vec<Need>,
    #[serde(default)]
    pub resources: Vec<Resource>,
    #[serde(default)]
    pub norms: Vec<NormRule>,
    #[serde(default)]
    pub environment: BTreeMap<String, FlagValue>,
    #[serde(default)]
    pub actions: Vec<ActionSpec>,
    pub population: PopulationSpec,
    pub simulation: SimulationConfig,
}

impl ScenarioSpec {
    pub fn action(&self, name: &str) -> Option<&ActionSpec> {
        self.actions.iter().find(|a| a.name == name)
    }

    pub fn action_index(&self, name: &str) -> Option<usize> {
        self.actions.iter().position(|a| a.name == name)
    }

    pub fn resource(&self, name: &str) -> Option<&Resource> {
        self.resources.iter().find(|r| r.name == name)
    }

    pub fn norm(&self, id: &str) -> Option<&NormRule> {
        self.norms.iter().find(|n| n.id == id)
    }

    pub fn norm_mut(&mut self, id: &str) -> Option<&mut NormRule> {
        self.norms.iter_mut().find(|n| n.id == id)
    }

    pub fn declared_needs(&self) -> BTreeSet<Need> {
        Need::baseline().into_iter().chain(self.needs.iter().cloned()).collect()
    }

    pub fn action_names(&self) -> Vec<String> {
        self.actions.iter().map(|a| a.name.clone()).collect()
    }

    /// Capabilities enabled by at least one action.
    pub fn modelled_capabilities(&self) -> BTreeSet<CentralCapability> {
        self.actions.iter().flat_map(|a| a.enables.iter().copied()).collect()
    }

    /// A copy with norms switched on or off by id.
    pub fn with_norm_overrides(&self, overrides: &BTreeMap<String, bool>) -> Result<ScenarioSpec, UnknownNorm> {
        let mut spec = self.clone();
        for (id, enabled) in overrides {
            spec.norm_mut(id).ok_or_else(|| UnknownNorm(id.clone()))?.enabled = *enabled;
        }
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown norm `{0}`")]
pub struct UnknownNorm(pub String);

/// What the feasibility function needs to know about the world besides the
/// scenario itself.
pub trait WorldView {
    fn environment(&self) -> &BTreeMap<String, FlagValue>;
    fn remaining(&self, resource: &str) -> Capacity;
}

/// The world at the start of a tick: scenario environment, full capacities.
pub struct FreshTick<'a>(pub &'a ScenarioSpec);

impl WorldView for FreshTick<'_> {
    fn environment(&self) -> &BTreeMap<String, FlagValue> {
        &self.0.environment
    }

    fn remaining(&self, resource: &str) -> Capacity {
        self.0.resource(resource).map_or(Capacity::Bounded(0), |r| r.capacity)
    }
}

/// Glob match where `*` matches any (possibly empty) run of characters.
pub fn pattern_matches(pattern: &str, name: &str) -> bool {
    let p: Vec<char> = pattern.chars().collect();
    let s: Vec<char> = name.chars().collect();
    let (mut pi, mut si) = (0, 0);
    let mut star: Option<(usize, usize)> = None;
    while si < s.len() {
        if pi < p.len() && p[pi] == '*' {
            star = Some((pi, si));
            pi += 1;
        } else if pi < p.len() && p[pi] == s[si] {
            pi += 1;
            si += 1;
        } else if let Some((sp, ss)) = star {
            pi = sp + 1;
            si = ss + 1;
            star = Some((sp, ss + 1));
        } else {
            return false;
        }
    }
    p[pi..].iter().all(|&c| c == '*')
}

/// Combined effect of every applicable norm: Forbid beats Scale beats Allow;
/// multiple Scale factors multiply.
pub fn norm_factor(scenario: &ScenarioSpec, action: &str, state: &PersonalState, env: &BTreeMap<String, FlagValue>) -> f64 {
    let mut factor = 1.0;
    for norm in scenario.norms.iter().filter(|n| n.applies(action, state, env)) {
        match norm.effect {
            NormEffect::Forbid => return 0.0,
            NormEffect::Scale(f) => factor *= f,
            NormEffect::Allow => {}
        }
    }
    factor
}

/// Probability that an agent in `state` carrying `personal_terms` can perform
/// `action`, given the world. Conversion terms compose as independent
/// probabilities.
pub fn feasibility_of(
    state: &PersonalState,
    personal_terms: &[ConversionTerm],
    action: &ActionSpec,
    scenario: &ScenarioSpec,
    world: &dyn WorldView,
) -> f64 {
    let env = world.environment();
    if let Some(need) = &action.requires_resource {
        if !world.remaining(&need.resource).covers(need.quantity) {
            return 0.0;
        }
    }
    let norms = norm_factor(scenario, &action.name, state, env);
    if norms == 0.0 {
        return 0.0;
    }
    let terms: f64 = action
        .conversion_terms
        .iter()
        .chain(personal_terms)
        .filter(|t| t.matches(&action.name, state, env))
        .map(|t| t.factor)
        .product();
    (terms * norms).clamp(0.0, 1.0)
}

/// Feasibility at the start of a tick (full resource capacity).
pub fn feasibility(agent: &AgentProfile, action: &ActionSpec, scenario: &ScenarioSpec) -> f64 {
    feasibility_of(&agent.state, &agent.personal_factors, action, scenario, &FreshTick(scenario))
}

/// Parses and fully validates a scenario document.
pub fn load_scenario(source: &[u8]) -> Result<ScenarioSpec, ScenarioError> {
    let spec = parse_scenario(source)?;
    let violations = validate(&spec);
    if violations.is_empty() {
        Ok(spec)
    } else {
        Err(ScenarioError::Validation(violations))
    }
}

/// Parses without validating.
pub fn parse_scenario(source: &[u8]) -> Result<ScenarioSpec, ScenarioError> {
    let text = std::str::from_utf8(source).map_err(|e| {
        let (line, column) = line_col(&String::from_utf8_lossy(source), e.valid_up_to());
        ScenarioError::Parse { line, column, message: "invalid UTF-8".into() }
    })?;
    toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |span| line_col(text, span.start));
        ScenarioError::Parse { line, column, message: e.message().to_string() }
    })
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

/// Serializes a scenario back to its TOML document form.
pub fn to_toml(spec: &ScenarioSpec) -> String {
    toml::to_string(spec).expect("scenario types always serialize")
}

struct Checker<'a> {
    spec: &'a ScenarioSpec,
    needs: BTreeSet<Need>,
    out: Vec<Violation>,
}

impl Checker<'_> {
    fn push(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.out.push(Violation::new(path, message));
    }

    fn unit(&mut self, path: &str, what: &str, x: f64) {
        if !(0.0..=1.0).contains(&x) {
            self.push(path, format!("{what} {x} out of range [0, 1]"));
        }
    }

    fn finite(&mut self, path: &str, what: &str, x: f64) {
        if !x.is_finite() {
            self.push(path, format!("{what} must be finite"));
        }
    }

    fn need(&mut self, path: &str, need: &Need) {
        if !self.needs.contains(need) {
            self.push(path, format!("undeclared need `{need}`"));
        }
    }

    fn condition(&mut self, path: &str, cond: &Condition) {
        if let (Some(lo), Some(hi)) = (cond.health_min, cond.health_max) {
            if lo > hi {
                self.push(path, format!("health_min {lo} exceeds health_max {hi}"));
            }
        }
        for name in cond.attributes.keys() {
            if !self.spec.population.marginals.contains_key(name) {
                self.push(path, format!("undeclared attribute `{name}`"));
            }
        }
        for flag in cond.environment.keys() {
            if !self.spec.environment.contains_key(flag) {
                self.push(path, format!("undeclared environment flag `{flag}`"));
            }
        }
    }

    fn term(&mut self, path: &str, term: &ConversionTerm) {
        self.unit(path, "conversion factor", term.factor);
        self.condition(path, &term.predicate);
        if let Some(p) = &term.applies_to {
            if !self.spec.actions.iter().any(|a| pattern_matches(p, &a.name)) {
                self.push(path, format!("pattern `{p}` matches no action"));
            }
        }
    }

    fn effect(&mut self, path: &str, rule: &EffectRule) {
        self.condition(path, &rule.when);
        match &rule.target {
            EffectTarget::HealthDelta(_) | EffectTarget::HousingSet(_) | EffectTarget::RegistrationSet(_) => {}
            EffectTarget::AttributeDelta { name, amount } => {
                self.finite(path, "amount", *amount);
                match self.spec.population.marginals.get(name) {
                    None => self.push(path, format!("undeclared attribute `{name}`")),
                    Some(Marginal::Categorical { .. }) => {
                        self.push(path, format!("attribute `{name}` is categorical; deltas need a numeric range"))
                    }
                    Some(Marginal::Range { .. }) => {}
                }
            }
            EffectTarget::ResourceDelta { resource, .. } => {
                if self.spec.resource(resource).is_none() {
                    self.push(path, format!("undeclared resource `{resource}`"));
                }
            }
            EffectTarget::ExpenseDelta { amount, .. } => {
                if !(amount.is_finite() && *amount >= 0.0) {
                    self.push(path, format!("expense amount {amount} must be finite and non-negative"));
                }
            }
            EffectTarget::UrgencyDelta { need, amount } => {
                self.need(path, need);
                self.finite(path, "amount", *amount);
            }
            EffectTarget::ValuePrefDelta { amount, .. } => self.finite(path, "amount", *amount),
        }
    }

    fn run(mut self) -> Vec<Violation> {
        let spec = self.spec;
        if spec.format_version != FORMAT_VERSION {
            self.push(
                "format_version",
                format!("unsupported format_version {} (expected {FORMAT_VERSION})", spec.format_version),
            );
        }

        let mut seen = BTreeSet::new();
        for (i, r) in spec.resources.iter().enumerate() {
            let path = format!("resources[{i}]");
            if !seen.insert(r.name.as_str()) {
                self.push(&path, format!("duplicate resource `{}`", r.name));
            }
            if !(r.unit_cost.is_finite() && r.unit_cost >= 0.0) {
                self.push(&path, format!("unit_cost {} must be finite and non-negative", r.unit_cost));
            }
        }

        if spec.actions.is_empty() {
            self.push("actions", "no actions");
        }
        let mut seen = BTreeSet::new();
        for (i, a) in spec.actions.iter().enumerate() {
            let path = format!("actions[{i}]");
            if a.name.trim().is_empty() {
                self.push(&path, "empty action name");
            }
            if !seen.insert(a.name.as_str()) {
                self.push(&path, format!("duplicate action `{}`", a.name));
            }
            if let Some(use_) = &a.requires_resource {
                if spec.resource(&use_.resource).is_none() {
                    self.push(&path, format!("undeclared resource `{}`", use_.resource));
                }
                if use_.quantity == 0 {
                    self.push(&path, "resource quantity must be at least 1");
                }
            }
            for (j, t) in a.conversion_terms.iter().enumerate() {
                self.term(&format!("{path}.conversion_terms[{j}]"), t);
            }
            for (need, relief) in &a.relieves {
                self.need(&path, need);
                self.unit(&path, &format!("relief for `{need}`"), *relief);
            }
            for (value, sat) in &a.importance {
                self.unit(&path, &format!("importance of `{value}`"), *sat);
            }
            self.finite(&path, "base_short_reward", a.base_short_reward);
            self.finite(&path, "base_long_reward", a.base_long_reward);
            for (j, e) in a.effects.iter().enumerate() {
                self.effect(&format!("{path}.effects[{j}]"), e);
            }
        }

        let mut seen = BTreeSet::new();
        for (i, n) in spec.norms.iter().enumerate() {
            let path = format!("norms[{i}]");
            if !seen.insert(n.id.as_str()) {
                self.push(&path, format!("duplicate norm `{}`", n.id));
            }
            if let NormEffect::Scale(f) = n.effect {
                if !(0.0..=1.0).contains(&f) {
                    self.push(&path, format!("scale factor {f} out of range [0, 1]"));
                }
            }
            if let Some(v) = n.promotes.intersection(&n.demotes).next() {
                self.push(&path, format!("value `{v}` is both promoted and demoted"));
            }
            if !spec.actions.iter().any(|a| pattern_matches(&n.applies_to, &a.name)) {
                self.push(&path, format!("pattern `{}` matches no action", n.applies_to));
            }
            self.condition(&path, &n.condition);
        }

        let mut needs = BTreeSet::new();
        for n in &spec.needs {
            if !needs.insert(n) {
                self.push("needs", format!("need `{n}` declared twice"));
            }
        }

        let pop = population::check_spec(&spec.population, &self.needs);
        self.out.extend(pop);
        for (j, entry) in spec.population.personal_terms.iter().enumerate() {
            self.term(&format!("population.personal_terms[{j}]"), &entry.term);
        }

        let sim = &spec.simulation;
        if sim.horizon == 0 {
            self.push("simulation.horizon", "horizon must be a positive number of ticks");
        }
        for (name, g) in [("gamma_short", sim.gamma_short), ("gamma_long", sim.gamma_long)] {
            if !(0.0..1.0).contains(&g) {
                self.push(format!("simulation.{name}"), format!("discount {g} must lie in [0, 1)"));
            }
        }
        if !(sim.tolerance > 0.0 && sim.tolerance.is_finite()) {
            self.push("simulation.tolerance", "tolerance must be positive");
        }
        if sim.max_iter == 0 {
            self.push("simulation.max_iter", "max_iter must be positive");
        }
        if sim.max_states == 0 {
            self.push("simulation.max_states", "max_states must be positive");
        }
        if let Err(msg) = sim.aggregation.check() {
            self.push("simulation.aggregation", msg);
        }
        self.out
    }
}

/// Every invariant violation in `spec`; empty iff the scenario is valid.
pub fn validate(spec: &ScenarioSpec) -> Vec<Violation> {
    Checker { spec, needs: spec.declared_needs(), out: Vec::new() }.run()
}
