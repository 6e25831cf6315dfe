//! Synthetic population sampling.
//!
//! Every attribute is drawn independently from its marginal. Choice factors
//! start from capability priority tiers: each value and need dimension is
//! linked to one central capability, takes that capability's tier weight
//! (or an explicit base override), and is jittered uniformly by `noise`.
//!
//! Draw order per agent, all from one stream: registration, health, housing,
//! each marginal in name order, one draw per personal term, one jitter draw
//! per value dimension (declaration order), one per need (name order).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::domain::{
    AgentId, AgentProfile, AttrValue, CentralCapability, ChoiceFactors, HealthLevel, Housing, Need, PersonalState,
    Registration, ValueDimension,
};
use crate::rng::{SimRng, POPULATION_STREAM};
use crate::scenario::{ConversionTerm, Violation};

const WEIGHT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Marginal {
    Categorical(BTreeMap<String, f64>),
    /// Uniform integer in `[min, max]`.
    Range([i64; 2]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorityTier {
    pub capabilities: BTreeSet<CentralCapability>,
    pub weight: f64,
}

/// A conversion term carried by each agent independently with probability `share`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PersonalTermShare {
    pub share: f64,
    pub term: ConversionTerm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationSpec {
    pub n: usize,
    #[serde(default)]
    pub marginals: BTreeMap<String, Marginal>,
    #[serde(default = "point_mass::registration")]
    pub registration_mix: BTreeMap<Registration, f64>,
    #[serde(default = "point_mass::health")]
    pub health_mix: BTreeMap<HealthLevel, f64>,
    #[serde(default = "point_mass::housing")]
    pub housing_mix: BTreeMap<Housing, f64>,
    #[serde(default)]
    pub priority_tiers: BTreeMap<String, PriorityTier>,
    #[serde(default)]
    pub noise: f64,
    /// Capability each value dimension draws its tier weight from. Missing
    /// entries fall back to [`default_value_link`].
    #[serde(default)]
    pub value_links: BTreeMap<ValueDimension, CentralCapability>,
    /// Capability each need draws its tier weight from. Baseline needs fall
    /// back to [`default_need_link`].
    #[serde(default)]
    pub need_links: BTreeMap<Need, CentralCapability>,
    /// Explicit base weights that replace the tier-derived ones.
    #[serde(default)]
    pub base_value_prefs: BTreeMap<ValueDimension, f64>,
    #[serde(default)]
    pub base_urgencies: BTreeMap<Need, f64>,
    #[serde(default)]
    pub personal_terms: Vec<PersonalTermShare>,
}

mod point_mass {
    use super::*;

    pub fn registration() -> BTreeMap<Registration, f64> {
        BTreeMap::from([(Registration::Registered, 1.0)])
    }
    pub fn health() -> BTreeMap<HealthLevel, f64> {
        BTreeMap::from([(HealthLevel::MAX, 1.0)])
    }
    pub fn housing() -> BTreeMap<Housing, f64> {
        BTreeMap::from([(Housing::Housed, 1.0)])
    }
}

pub fn default_value_link(value: ValueDimension) -> CentralCapability {
    use CentralCapability as C;
    use ValueDimension as V;
    match value {
        V::SelfDirection => C::PracticalReason,
        V::Stimulation | V::Hedonism => C::Play,
        V::Achievement | V::Power => C::ControlOverEnvironment,
        V::Security => C::BodilyIntegrity,
        V::Conformity | V::Tradition | V::Benevolence => C::Affiliation,
        V::Universalism => C::OtherSpecies,
    }
}

pub fn default_need_link(need: &Need) -> Option<CentralCapability> {
    match need.as_str() {
        Need::SHELTER | Need::SAFETY => Some(CentralCapability::BodilyIntegrity),
        Need::FOOD | Need::PAIN_RELIEF => Some(CentralCapability::BodilyHealth),
        _ => None,
    }
}

impl PopulationSpec {
    /// Highest tier weight listing `cap`, or 0 if no tier does.
    pub fn tier_weight(&self, cap: CentralCapability) -> f64 {
        self.priority_tiers
            .values()
            .filter(|t| t.capabilities.contains(&cap))
            .map(|t| t.weight)
            .fold(0.0, f64::max)
    }

    fn base_value(&self, v: ValueDimension) -> f64 {
        self.base_value_prefs
            .get(&v)
            .copied()
            .unwrap_or_else(|| self.tier_weight(self.value_links.get(&v).copied().unwrap_or_else(|| default_value_link(v))))
    }

    fn need_dimensions(&self) -> BTreeSet<Need> {
        Need::baseline()
            .into_iter()
            .chain(self.need_links.keys().cloned())
            .chain(self.base_urgencies.keys().cloned())
            .collect()
    }

    fn base_need(&self, need: &Need) -> f64 {
        if let Some(u) = self.base_urgencies.get(need) {
            return *u;
        }
        self.need_links
            .get(need)
            .copied()
            .or_else(|| default_need_link(need))
            .map_or(0.0, |c| self.tier_weight(c))
    }
}

fn check_mix<K: std::fmt::Display>(out: &mut Vec<Violation>, path: &str, weights: impl IntoIterator<Item = (K, f64)>) {
    let mut total = 0.0;
    let mut any = false;
    for (k, w) in weights {
        any = true;
        if !(w.is_finite() && w >= 0.0) {
            out.push(Violation::new(path, format!("weight for `{k}` must be non-negative, got {w}")));
        }
        total += w;
    }
    if !any {
        out.push(Violation::new(path, "empty distribution"));
    } else if (total - 1.0).abs() > WEIGHT_TOLERANCE {
        out.push(Violation::new(path, format!("weights sum to {total}, expected 1")));
    }
}

/// Population-block violations; `needs` is the scenario's declared need set.
pub fn check_spec(spec: &PopulationSpec, needs: &BTreeSet<Need>) -> Vec<Violation> {
    let mut out = Vec::new();
    if spec.n == 0 {
        out.push(Violation::new("population.n", "population must have at least one agent"));
    }
    check_mix(&mut out, "population.registration_mix", spec.registration_mix.iter().map(|(k, w)| (k, *w)));
    check_mix(&mut out, "population.health_mix", spec.health_mix.iter().map(|(k, w)| (k, *w)));
    check_mix(&mut out, "population.housing_mix", spec.housing_mix.iter().map(|(k, w)| (k, *w)));
    for (name, m) in &spec.marginals {
        let path = format!("population.marginals.{name}");
        match m {
            Marginal::Categorical(w) => check_mix(&mut out, &path, w.iter().map(|(k, w)| (k, *w))),
            Marginal::Range([lo, hi]) if lo > hi => {
                out.push(Violation::new(path, format!("range min {lo} exceeds max {hi}")))
            }
            Marginal::Range(_) => {}
        }
    }
    for (name, tier) in &spec.priority_tiers {
        if !(0.0..=1.0).contains(&tier.weight) {
            out.push(Violation::new(
                format!("population.priority_tiers.{name}"),
                format!("tier weight {} out of range [0, 1]", tier.weight),
            ));
        }
    }
    if !(0.0..=0.5).contains(&spec.noise) {
        out.push(Violation::new("population.noise", format!("noise {} out of range [0, 0.5]", spec.noise)));
    }
    for (v, w) in &spec.base_value_prefs {
        if !(0.0..=1.0).contains(w) {
            out.push(Violation::new("population.base_value_prefs", format!("`{v}` = {w} out of range [0, 1]")));
        }
    }
    for (n, u) in &spec.base_urgencies {
        if !(0.0..=1.0).contains(u) {
            out.push(Violation::new("population.base_urgencies", format!("`{n}` = {u} out of range [0, 1]")));
        }
        if !needs.contains(n) {
            out.push(Violation::new("population.base_urgencies", format!("undeclared need `{n}`")));
        }
    }
    for n in spec.need_links.keys() {
        if !needs.contains(n) {
            out.push(Violation::new("population.need_links", format!("undeclared need `{n}`")));
        }
    }
    for (i, t) in spec.personal_terms.iter().enumerate() {
        if !(0.0..=1.0).contains(&t.share) {
            out.push(Violation::new(
                format!("population.personal_terms[{i}]"),
                format!("share {} out of range [0, 1]", t.share),
            ));
        }
    }
    out
}

/// Inverse-CDF draw over `weights` in iteration order. Falls back to the last
/// positively weighted key when rounding leaves `u` past the total.
fn draw<K: Clone>(rng: &mut SimRng, weights: impl IntoIterator<Item = (K, f64)>) -> K {
    let u = rng.unit();
    let mut acc = 0.0;
    let mut last = None;
    for (k, w) in weights {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        if u < acc {
            return k;
        }
        last = Some(k);
    }
    last.expect("validated distributions have positive mass")
}

/// Samples `spec.n` agents with ids `0..n`. Fully determined by `(spec, seed)`.
pub fn sample_population(spec: &PopulationSpec, seed: u64) -> Vec<AgentProfile> {
    let mut rng = SimRng::new(seed, POPULATION_STREAM);
    let needs = spec.need_dimensions();
    let values: Vec<(ValueDimension, f64)> = ValueDimension::ALL.iter().map(|&v| (v, spec.base_value(v))).collect();
    let need_bases: Vec<(Need, f64)> = needs.iter().map(|n| (n.clone(), spec.base_need(n))).collect();
    let jitter = |rng: &mut SimRng, base: f64| (base + spec.noise * (2.0 * rng.unit() - 1.0)).clamp(0.0, 1.0);

    (0..spec.n)
        .map(|i| {
            let registration = draw(&mut rng, spec.registration_mix.iter().map(|(k, w)| (*k, *w)));
            let health = draw(&mut rng, spec.health_mix.iter().map(|(k, w)| (*k, *w)));
            let housing = draw(&mut rng, spec.housing_mix.iter().map(|(k, w)| (*k, *w)));
            let mut state = PersonalState::new(health, housing, registration);
            for (name, marginal) in &spec.marginals {
                let value = match marginal {
                    Marginal::Categorical(w) => AttrValue::Category(draw(&mut rng, w.iter().map(|(k, w)| (k.clone(), *w)))),
                    Marginal::Range([lo, hi]) => AttrValue::Number(rng.int_inclusive(*lo, *hi) as f64),
                };
                state.attributes.insert(name.clone(), value);
            }
            let personal_factors: Vec<ConversionTerm> = spec
                .personal_terms
                .iter()
                .filter(|t| rng.unit() < t.share)
                .map(|t| t.term.clone())
                .collect();
            let value_prefs = values.iter().map(|(v, b)| (*v, jitter(&mut rng, *b))).collect();
            let need_urgencies = need_bases.iter().map(|(n, b)| (n.clone(), jitter(&mut rng, *b))).collect();
            let choice = ChoiceFactors::new(value_prefs, need_urgencies).expect("jittered weights are clamped to [0, 1]");
            AgentProfile { id: AgentId(i as u64), state, choice, personal_factors }
        })
        .collect()
}
