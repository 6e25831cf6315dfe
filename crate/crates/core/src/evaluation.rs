//! Capability-based indicators over a finished run, and deltas between runs.
//!
//! Deprivation is measured on the final state of each agent at the start of
//! a fresh tick; functionings count over the whole run. The per-tick
//! deprivation series is exported alongside.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{AgentProfile, CentralCapability, HealthLevel, Housing, Payer, PersonalState, Registration, ValueDimension};
use crate::dynamics::RunReport;
use crate::scenario::{feasibility_of, FreshTick, NormKind, ScenarioSpec, WorldView};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvaluationError {
    #[error("metrics are not comparable: {0}")]
    MetricMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapabilityStatus {
    Enabled,
    Deprived,
    /// No action in the scenario enables this capability.
    NotModelled,
}

fn status_for(
    state: &PersonalState,
    agent: &AgentProfile,
    scenario: &ScenarioSpec,
    world: &dyn WorldView,
) -> BTreeMap<CentralCapability, CapabilityStatus> {
    let mut out: BTreeMap<CentralCapability, CapabilityStatus> =
        CentralCapability::ALL.iter().map(|&c| (c, CapabilityStatus::NotModelled)).collect();
    for action in &scenario.actions {
        let possible = feasibility_of(state, &agent.personal_factors, action, scenario, world) > 0.0;
        for cap in &action.enables {
            let slot = out.get_mut(cap).expect("closed set");
            if possible {
                *slot = CapabilityStatus::Enabled;
            } else if *slot == CapabilityStatus::NotModelled {
                *slot = CapabilityStatus::Deprived;
            }
        }
    }
    out
}

/// Enabled iff some possible action enables the capability.
pub fn capability_status(
    agent: &AgentProfile,
    scenario: &ScenarioSpec,
    world: &dyn WorldView,
) -> BTreeMap<CentralCapability, CapabilityStatus> {
    status_for(&agent.state, agent, scenario, world)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapabilityMetrics {
    pub modelled: bool,
    /// Share of agents with no possible enabling action at the final tick.
    pub deprivation_ratio: Option<f64>,
    /// Share of agents that realised an enabling action during the run.
    pub functioning_rate: Option<f64>,
    pub deprived_agents: usize,
    pub functioning_agents: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRatio {
    pub agents: usize,
    pub deprived: usize,
    pub ratio: f64,
}

/// Deprivation of one capability split by registration and housing group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupBreakdown {
    pub by_registration: BTreeMap<Registration, GroupRatio>,
    pub by_housing: BTreeMap<Housing, GroupRatio>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormLedgerEntry {
    pub id: String,
    pub kind: NormKind,
    pub enabled: bool,
    pub promotes: BTreeSet<ValueDimension>,
    pub demotes: BTreeSet<ValueDimension>,
    /// Number of (agent, tick, action) decisions the norm governed.
    pub activations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distributions {
    pub housing: BTreeMap<Housing, f64>,
    pub health: BTreeMap<HealthLevel, f64>,
    pub registration: BTreeMap<Registration, f64>,
}

impl Distributions {
    fn of<'a>(states: impl Iterator<Item = &'a PersonalState> + Clone) -> Self {
        let n = states.clone().count();
        let share = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
        Distributions {
            housing: Housing::ALL.iter().map(|&h| (h, share(states.clone().filter(|s| s.housing == h).count()))).collect(),
            health: HealthLevel::all().map(|h| (h, share(states.clone().filter(|s| s.health == h).count()))).collect(),
            registration: Registration::ALL
                .iter()
                .map(|&r| (r, share(states.clone().filter(|s| s.registration == r).count())))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickMetrics {
    pub tick: u32,
    /// Deprivation ratio per modelled capability.
    pub deprivation: BTreeMap<CentralCapability, f64>,
    pub distributions: Distributions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquityMetrics {
    pub scenario: String,
    pub seed: u64,
    pub agents: usize,
    pub horizon: u32,
    pub actions: Vec<String>,
    pub capabilities: BTreeMap<CentralCapability, CapabilityMetrics>,
    pub groups: BTreeMap<CentralCapability, GroupBreakdown>,
    pub final_distributions: Distributions,
    pub expenses: BTreeMap<Payer, f64>,
    pub norm_ledger: Vec<NormLedgerEntry>,
    pub series: Vec<TickMetrics>,
}

fn ratio(k: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        k as f64 / n as f64
    }
}

/// Indicators for `report`, which must come from `scenario` (with the same
/// norm switches).
pub fn compute_metrics(report: &RunReport, scenario: &ScenarioSpec) -> EquityMetrics {
    let world = FreshTick(scenario);
    let modelled = scenario.modelled_capabilities();
    let n = report.final_agents.len();
    let by_id: BTreeMap<_, _> = report.final_agents.iter().map(|a| (a.id, a)).collect();

    let final_status: Vec<_> = report.final_agents.iter().map(|a| capability_status(a, scenario, &world)).collect();

    let mut functioning: BTreeMap<CentralCapability, BTreeSet<_>> = BTreeMap::new();
    for e in report.events.iter().filter(|e| e.realised) {
        if let Some(a) = e.action {
            for cap in &scenario.actions[a.0].enables {
                functioning.entry(*cap).or_default().insert(e.agent);
            }
        }
    }

    let mut capabilities = BTreeMap::new();
    let mut groups = BTreeMap::new();
    for &cap in CentralCapability::ALL {
        if !modelled.contains(&cap) {
            capabilities.insert(
                cap,
                CapabilityMetrics {
                    modelled: false,
                    deprivation_ratio: None,
                    functioning_rate: None,
                    deprived_agents: 0,
                    functioning_agents: 0,
                },
            );
            continue;
        }
        let deprived = final_status.iter().filter(|s| s[&cap] == CapabilityStatus::Deprived).count();
        let func = functioning.get(&cap).map_or(0, BTreeSet::len);
        capabilities.insert(
            cap,
            CapabilityMetrics {
                modelled: true,
                deprivation_ratio: Some(ratio(deprived, n)),
                functioning_rate: Some(ratio(func, n)),
                deprived_agents: deprived,
                functioning_agents: func,
            },
        );

        let mut by_registration: BTreeMap<Registration, (usize, usize)> = BTreeMap::new();
        let mut by_housing: BTreeMap<Housing, (usize, usize)> = BTreeMap::new();
        for (agent, status) in report.final_agents.iter().zip(&final_status) {
            let hit = usize::from(status[&cap] == CapabilityStatus::Deprived);
            let r = by_registration.entry(agent.state.registration).or_default();
            r.0 += 1;
            r.1 += hit;
            let h = by_housing.entry(agent.state.housing).or_default();
            h.0 += 1;
            h.1 += hit;
        }
        let to_ratio = |(agents, deprived): (usize, usize)| GroupRatio { agents, deprived, ratio: ratio(deprived, agents) };
        groups.insert(
            cap,
            GroupBreakdown {
                by_registration: by_registration.into_iter().map(|(k, v)| (k, to_ratio(v))).collect(),
                by_housing: by_housing.into_iter().map(|(k, v)| (k, to_ratio(v))).collect(),
            },
        );
    }

    let env = world.environment();
    let norm_ledger = scenario
        .norms
        .iter()
        .map(|norm| {
            let activations = report
                .events
                .iter()
                .map(|e| scenario.actions.iter().filter(|a| norm.applies(&a.name, &e.before, env)).count() as u64)
                .sum();
            NormLedgerEntry {
                id: norm.id.clone(),
                kind: norm.kind,
                enabled: norm.enabled,
                promotes: norm.promotes.clone(),
                demotes: norm.demotes.clone(),
                activations,
            }
        })
        .collect();

    let mut series = Vec::with_capacity(report.horizon as usize + 1);
    for tick in 0..=report.horizon {
        let states: Vec<(&AgentProfile, &PersonalState)> = if tick < report.horizon {
            report.events_at(tick).map(|e| (by_id[&e.agent], &e.before)).collect()
        } else {
            report.final_agents.iter().map(|a| (a, &a.state)).collect()
        };
        let statuses: Vec<_> = states.iter().map(|(a, s)| status_for(s, a, scenario, &world)).collect();
        let deprivation = modelled
            .iter()
            .map(|&cap| {
                let k = statuses.iter().filter(|s| s[&cap] == CapabilityStatus::Deprived).count();
                (cap, ratio(k, statuses.len()))
            })
            .collect();
        series.push(TickMetrics {
            tick,
            deprivation,
            distributions: Distributions::of(states.iter().map(|(_, s)| *s)),
        });
    }

    EquityMetrics {
        scenario: report.scenario.clone(),
        seed: report.seed,
        agents: n,
        horizon: report.horizon,
        actions: report.actions.clone(),
        capabilities,
        groups,
        final_distributions: Distributions::of(report.final_agents.iter().map(|a| &a.state)),
        expenses: report.final_world.expenses.clone(),
        norm_ledger,
        series,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Improved,
    Regressed,
    Mixed,
    Unchanged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapabilityDelta {
    pub deprivation_ratio: f64,
    pub functioning_rate: f64,
    pub verdict: Verdict,
}

/// Signed differences `b − a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub baseline: String,
    pub variant: String,
    pub capabilities: BTreeMap<CentralCapability, CapabilityDelta>,
    pub housing: BTreeMap<Housing, f64>,
    pub health: BTreeMap<HealthLevel, f64>,
    pub registration: BTreeMap<Registration, f64>,
    pub expenses: BTreeMap<Payer, f64>,
}

fn verdict(deprivation: f64, functioning: f64) -> Verdict {
    let gain = [-deprivation.signum() * f64::from(u8::from(deprivation != 0.0)), functioning.signum() * f64::from(u8::from(functioning != 0.0))];
    let better = gain.iter().any(|&g| g > 0.0);
    let worse = gain.iter().any(|&g| g < 0.0);
    match (better, worse) {
        (true, false) => Verdict::Improved,
        (false, true) => Verdict::Regressed,
        (true, true) => Verdict::Mixed,
        (false, false) => Verdict::Unchanged,
    }
}

fn diff<K: Ord + Copy>(a: &BTreeMap<K, f64>, b: &BTreeMap<K, f64>) -> BTreeMap<K, f64> {
    a.keys()
        .chain(b.keys())
        .map(|k| (*k, b.get(k).copied().unwrap_or(0.0) - a.get(k).copied().unwrap_or(0.0)))
        .collect()
}

fn label(m: &EquityMetrics) -> String {
    format!("{}@{}", m.scenario, m.seed)
}

pub fn compare(a: &EquityMetrics, b: &EquityMetrics) -> Result<DeltaReport, EvaluationError> {
    if a.actions != b.actions {
        return Err(EvaluationError::MetricMismatch(format!(
            "action catalogs differ ({:?} vs {:?})",
            a.actions, b.actions
        )));
    }
    let modelled = |m: &EquityMetrics| -> BTreeSet<CentralCapability> {
        m.capabilities.iter().filter(|(_, c)| c.modelled).map(|(k, _)| *k).collect()
    };
    if modelled(a) != modelled(b) {
        return Err(EvaluationError::MetricMismatch("modelled capability sets differ".into()));
    }
    let capabilities = modelled(a)
        .into_iter()
        .map(|cap| {
            let (x, y) = (&a.capabilities[&cap], &b.capabilities[&cap]);
            let dd = y.deprivation_ratio.unwrap_or(0.0) - x.deprivation_ratio.unwrap_or(0.0);
            let df = y.functioning_rate.unwrap_or(0.0) - x.functioning_rate.unwrap_or(0.0);
            (cap, CapabilityDelta { deprivation_ratio: dd, functioning_rate: df, verdict: verdict(dd, df) })
        })
        .collect();
    Ok(DeltaReport {
        baseline: label(a),
        variant: label(b),
        capabilities,
        housing: diff(&a.final_distributions.housing, &b.final_distributions.housing),
        health: diff(&a.final_distributions.health, &b.final_distributions.health),
        registration: diff(&a.final_distributions.registration, &b.final_distributions.registration),
        expenses: diff(&a.expenses, &b.expenses),
    })
}
