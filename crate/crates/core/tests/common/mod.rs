//! Seeded generators and reference solvers shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use capsim::bundled;
use capsim::decision::AggregationMode;
use capsim::domain::{
    AgentId, AgentProfile, CentralCapability, ChoiceFactors, HealthLevel, Housing, Need, Payer, PersonalState, Registration,
    ValueDimension,
};
use capsim::mdp::{ActionId, FeasibilityMask, FiniteMdp, PairTable, RewardKind, StateId, Transition};
use capsim::rng::SimRng;
use capsim::scenario::{
    ActionSpec, Capacity, Condition, ConversionTerm, EffectRule, EffectTarget, NormEffect, NormKind, NormRule,
    Resource, ResourceUse, Schedule, ScenarioSpec, TermKind,
};

pub fn pick<'a, T>(rng: &mut SimRng, items: &'a [T]) -> &'a T {
    &items[rng.int_inclusive(0, items.len() as i64 - 1) as usize]
}

pub fn coin(rng: &mut SimRng, p: f64) -> bool {
    rng.unit() < p
}

fn health(rng: &mut SimRng) -> HealthLevel {
    HealthLevel::new(rng.int_inclusive(0, 4)).unwrap()
}

pub fn random_state(rng: &mut SimRng) -> PersonalState {
    PersonalState::new(health(rng), *pick(rng, Housing::ALL), *pick(rng, Registration::ALL))
}

fn random_condition(rng: &mut SimRng) -> Condition {
    let mut c = Condition::default();
    if coin(rng, 0.3) {
        c.health_min = Some(health(rng));
    }
    if coin(rng, 0.3) {
        c.health_max = Some(health(rng));
    }
    if coin(rng, 0.3) {
        c.registration = Some(vec![*pick(rng, Registration::ALL)]);
    }
    if coin(rng, 0.2) {
        c.housing = Some(vec![*pick(rng, Housing::ALL), *pick(rng, Housing::ALL)]);
    }
    c
}

fn random_factor(rng: &mut SimRng) -> f64 {
    let free = rng.unit();
    *pick(rng, &[0.0, 0.25, 0.5, 1.0, free])
}

fn random_term(rng: &mut SimRng, personal: bool) -> ConversionTerm {
    ConversionTerm {
        kind: if personal { TermKind::Personal } else { *pick(rng, &[TermKind::Social, TermKind::Environmental]) },
        applies_to: None,
        predicate: random_condition(rng),
        factor: random_factor(rng),
    }
}

fn random_action(rng: &mut SimRng, i: usize, has_resource: bool) -> ActionSpec {
    let mut effects = Vec::new();
    for _ in 0..rng.int_inclusive(0, 3) {
        let target = match rng.int_inclusive(0, 4) {
            0 | 1 => EffectTarget::HealthDelta(rng.int_inclusive(-2, 2)),
            2 => EffectTarget::HousingSet(*pick(rng, Housing::ALL)),
            3 => EffectTarget::RegistrationSet(*pick(rng, Registration::ALL)),
            _ => EffectTarget::UrgencyDelta { need: Need::new(Need::PAIN_RELIEF).unwrap(), amount: rng.unit() - 0.5 },
        };
        let when = if coin(rng, 0.4) { random_condition(rng) } else { Condition::default() };
        effects.push(EffectRule { target, when });
    }
    ActionSpec {
        name: format!("a{i}"),
        requires_resource: (has_resource && coin(rng, 0.4)).then(|| ResourceUse { resource: "r".into(), quantity: 1 }),
        conversion_terms: (0..rng.int_inclusive(0, 2)).map(|_| random_term(rng, false)).collect(),
        enables: [*pick(rng, CentralCapability::ALL)].into(),
        relieves: BTreeMap::from([(Need::new(Need::PAIN_RELIEF).unwrap(), rng.unit())]),
        importance: BTreeMap::from([(*pick(rng, ValueDimension::ALL), rng.unit())]),
        effects,
        base_short_reward: rng.unit() * 20.0 - 10.0,
        base_long_reward: rng.unit() * 20.0 - 10.0,
    }
}

/// A random scenario built from the bundled one: 1 to 4 actions with random
/// conversion terms, effects and rewards, 0 to 2 norms and an optional
/// bounded resource.
pub fn random_scenario(seed: u64) -> ScenarioSpec {
    let mut rng = SimRng::new(seed, 99);
    let mut spec = bundled::health_inequity();
    let capacity = if coin(&mut rng, 0.5) { Capacity::Unlimited } else { Capacity::Bounded(rng.int_inclusive(0, 3) as u64) };
    spec.resources = vec![Resource { name: "r".into(), capacity, unit_cost: rng.int_inclusive(0, 100) as f64, payer: Payer::Healthcare }];
    let n_actions = rng.int_inclusive(1, 4) as usize;
    spec.actions = (0..n_actions).map(|i| random_action(&mut rng, i, true)).collect();
    spec.norms = (0..rng.int_inclusive(0, 2))
        .map(|k| NormRule {
            id: format!("n{k}"),
            kind: NormKind::Legal,
            applies_to: if coin(&mut rng, 0.3) { "*".into() } else { format!("a{}", rng.int_inclusive(0, n_actions as i64 - 1)) },
            condition: random_condition(&mut rng),
            effect: match rng.int_inclusive(0, 2) {
                0 => NormEffect::Forbid,
                1 => NormEffect::Allow,
                _ => NormEffect::Scale(0.25 + rng.unit()),
            },
            promotes: Default::default(),
            demotes: Default::default(),
            enabled: coin(&mut rng, 0.8),
        })
        .collect();
    spec.simulation.horizon = rng.int_inclusive(1, 4) as u32;
    spec.simulation.schedule = if coin(&mut rng, 0.5) { Schedule::Ascending } else { Schedule::Shuffled };
    spec.simulation.aggregation = match rng.int_inclusive(0, 2) {
        0 => AggregationMode::Lexicographic { epsilon: 0.0 },
        1 => AggregationMode::Weighted { weight: rng.unit() },
        _ => AggregationMode::NeedConstrained { epsilon: rng.unit() },
    };
    spec
}

pub fn random_agent(rng: &mut SimRng, id: u64) -> AgentProfile {
    let prefs = ValueDimension::ALL.iter().map(|&v| (v, rng.unit())).collect();
    let urgencies = Need::baseline().into_iter().map(|n| (n, rng.unit())).collect();
    AgentProfile {
        id: AgentId(id),
        state: random_state(rng),
        choice: ChoiceFactors::new(prefs, urgencies).unwrap(),
        personal_factors: if coin(rng, 0.3) { vec![random_term(rng, true)] } else { vec![] },
    }
}

pub fn random_agents(seed: u64, n: usize) -> Vec<AgentProfile> {
    let mut rng = SimRng::new(seed, 98);
    (0..n as u64).map(|i| random_agent(&mut rng, i)).collect()
}

/// A random MDP with up to `max_states` states and `max_actions` actions.
/// Roughly one pair in five is impossible; rewards lie in `[-10, 10]`.
pub fn random_mdp(seed: u64, max_states: usize, max_actions: usize) -> FiniteMdp {
    let mut rng = SimRng::new(seed, 97);
    let n_s = rng.int_inclusive(1, max_states as i64) as usize;
    let n_a = rng.int_inclusive(1, max_actions as i64) as usize;
    let mut rows = Vec::new();
    let mut possible = Vec::new();
    let mut short = PairTable::zeros(n_s, n_a);
    let mut long = PairTable::zeros(n_s, n_a);
    for s in 0..n_s {
        let mut per_action = Vec::new();
        for a in 0..n_a {
            let ok = coin(&mut rng, 0.8);
            possible.push(ok);
            if !ok {
                per_action.push(vec![Transition { to: StateId(s), p: 1.0 }]);
                continue;
            }
            let k = rng.int_inclusive(1, n_s.min(3) as i64) as usize;
            let weights: Vec<f64> = (0..k).map(|_| rng.unit() + 0.01).collect();
            let total: f64 = weights.iter().sum();
            let mut row: Vec<Transition> = weights
                .iter()
                .map(|w| Transition { to: StateId(rng.int_inclusive(0, n_s as i64 - 1) as usize), p: w / total })
                .collect();
            // Put the rounding remainder on the last entry so the row sums to 1.
            let head: f64 = row[..k - 1].iter().map(|t| t.p).sum();
            row[k - 1].p = 1.0 - head;
            per_action.push(row);
            short.set(StateId(s), ActionId(a), rng.unit() * 20.0 - 10.0);
            long.set(StateId(s), ActionId(a), rng.unit() * 20.0 - 10.0);
        }
        rows.push(per_action);
    }
    FiniteMdp::new(rows, FeasibilityMask::new(n_s, n_a, possible), short, long).unwrap()
}

/// Finite-horizon optimal Q by explicit recursion over every path of
/// `horizon` further decisions. Exponential; only for small horizons.
pub fn path_enumeration(mdp: &FiniteMdp, which: RewardKind, gamma: f64, horizon: usize) -> Vec<Vec<f64>> {
    fn q(mdp: &FiniteMdp, which: RewardKind, gamma: f64, s: StateId, a: ActionId, left: usize) -> f64 {
        if !mdp.mask().is_possible(s, a) {
            return 0.0;
        }
        let r = mdp.rewards.table(which).get(s, a);
        if left == 0 {
            return r;
        }
        let mut future = 0.0;
        for t in mdp.transitions.row(s, a) {
            let best = mdp
                .mask()
                .feasible(t.to)
                .into_iter()
                .map(|b| q(mdp, which, gamma, t.to, b, left - 1))
                .fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.max(x))))
                .unwrap_or(0.0);
            future += t.p * best;
        }
        r + gamma * future
    }
    mdp.states().map(|s| mdp.actions().map(|a| q(mdp, which, gamma, s, a, horizon)).collect()).collect()
}

pub fn sick(id: u64, registration: Registration) -> AgentProfile {
    AgentProfile {
        id: AgentId(id),
        state: PersonalState::new(HealthLevel::new(1).unwrap(), Housing::Roofless, registration),
        choice: ChoiceFactors::default(),
        personal_factors: vec![],
    }
}
