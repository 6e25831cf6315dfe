//! The tick loop: every agent compiles and solves its MDP, picks an action
//! by aggregation, and the chosen action's transition is sampled. Realised
//! actions update the agent's state and the world (loop 1) and the agent's
//! choice factors (loop 2).
//!
//! Resource counters reset at the start of every tick. Agents act one at a
//! time in schedule order, so earlier agents can exhaust a bounded resource
//! for later ones within the same tick.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::decision::{derive_policy, AggregationMode, PolicyTable};
use crate::domain::{AgentId, AgentProfile, ChoiceFactors, Payer, PersonalState};
use crate::mdp::{compile_in, solve_dual, ActionId, CompiledMdp, DualQTable, MdpError};
use crate::population::sample_population;
use crate::rng::{SimRng, DYNAMICS_STREAM};
use crate::scenario::{Capacity, EffectRule, EffectTarget, FlagValue, NormRule, ScenarioSpec, Schedule, WorldView};

pub const REPORT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub tick: u32,
    pub resource_counters: BTreeMap<String, Capacity>,
    pub expenses: BTreeMap<Payer, f64>,
    pub environment: BTreeMap<String, FlagValue>,
}

impl WorldState {
    pub fn new(scenario: &ScenarioSpec) -> Self {
        let mut world = WorldState {
            tick: 0,
            resource_counters: BTreeMap::new(),
            expenses: Payer::ALL.iter().map(|&p| (p, 0.0)).collect(),
            environment: scenario.environment.clone(),
        };
        world.reset_counters(scenario);
        world
    }

    pub fn reset_counters(&mut self, scenario: &ScenarioSpec) {
        self.resource_counters = scenario.resources.iter().map(|r| (r.name.clone(), r.capacity)).collect();
    }

    fn charge(&mut self, payer: Payer, amount: f64) {
        *self.expenses.entry(payer).or_insert(0.0) += amount;
    }

    pub fn total_expenses(&self) -> f64 {
        self.expenses.values().sum()
    }
}

impl WorldView for WorldState {
    fn environment(&self) -> &BTreeMap<String, FlagValue> {
        &self.environment
    }

    fn remaining(&self, resource: &str) -> Capacity {
        self.resource_counters.get(resource).copied().unwrap_or(Capacity::Bounded(0))
    }
}

/// One agent's decision in one tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEvent {
    pub tick: u32,
    pub agent: AgentId,
    pub before: PersonalState,
    pub after: PersonalState,
    /// `None` when no action was possible and the agent idled.
    pub action: Option<ActionId>,
    pub possible: Vec<ActionId>,
    pub impossible: Vec<ActionId>,
    /// Feasibility of the chosen action at choice time.
    pub feasibility: f64,
    /// Whether the success branch of the transition was taken.
    pub realised: bool,
    pub choice_before: ChoiceFactors,
    pub choice_after: ChoiceFactors,
}

impl TrajectoryEvent {
    pub fn action_name<'a>(&self, scenario: &'a ScenarioSpec) -> &'a str {
        self.action.map_or(NOOP, |a| scenario.actions[a.0].name.as_str())
    }
}

pub const NOOP: &str = "noop";

/// A compiled and solved MDP with its derived policy.
#[derive(Debug, Clone)]
pub struct Solved {
    pub mdp: CompiledMdp,
    pub q: DualQTable,
    pub policy: PolicyTable,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct CacheKey {
    state: PersonalState,
    choice: Vec<u64>,
    personal_terms: String,
    gates: Vec<bool>,
    mode: [u64; 2],
}

/// Reuses solves across agents and ticks when nothing that feeds the MDP
/// has changed.
#[derive(Debug, Default)]
pub struct SolveCache {
    entries: HashMap<CacheKey, Arc<Solved>>,
    pub hits: u64,
    pub misses: u64,
}

impl SolveCache {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn cache_key(agent: &AgentProfile, world: &WorldState, scenario: &ScenarioSpec, mode: AggregationMode) -> CacheKey {
    let gates = scenario
        .actions
        .iter()
        .map(|a| a.requires_resource.as_ref().is_none_or(|u| world.remaining(&u.resource).covers(u.quantity)))
        .collect();
    let (name, eps, weight) = mode.to_parts();
    CacheKey {
        state: agent.state.clone(),
        choice: agent.choice.fingerprint(),
        personal_terms: serde_json::to_string(&agent.personal_factors).unwrap_or_default(),
        gates,
        mode: [name.len() as u64, eps.or(weight).unwrap_or(0.0).to_bits()],
    }
}

/// Compiles, solves, and derives the policy for `agent` in the current world.
pub fn solve_agent(
    agent: &AgentProfile,
    world: &WorldState,
    scenario: &ScenarioSpec,
    mode: AggregationMode,
) -> Result<Solved, MdpError> {
    let sim = &scenario.simulation;
    let mdp = compile_in(agent, scenario, world, sim.max_states)?;
    let q = solve_dual(&mdp.mdp, sim.gamma_short, sim.gamma_long, sim.tolerance, sim.max_iter)?;
    let policy = derive_policy(&q, mdp.mdp.mask(), mode);
    Ok(Solved { mdp, q, policy })
}

/// Applies the loop-2 rules of a realised action: urgency and value
/// preference deltas, additive and clamped to `[0, 1]`. Conditions are
/// judged against the event's pre-action state; environment clauses are
/// left to the caller, which knows the world.
pub fn update_choice_factors(choice: &ChoiceFactors, event: &TrajectoryEvent, rules: &[EffectRule]) -> ChoiceFactors {
    let mut next = choice.clone();
    if !event.realised {
        return next;
    }
    let no_env = BTreeMap::new();
    for rule in rules {
        let mut personal = rule.when.clone();
        personal.environment.clear();
        if !personal.holds(&event.before, &no_env) {
            continue;
        }
        match &rule.target {
            EffectTarget::UrgencyDelta { need, amount } => next.shift_urgency(need, *amount),
            EffectTarget::ValuePrefDelta { value, amount } => next.shift_value_pref(*value, *amount),
            _ => {}
        }
    }
    next
}

/// Advances one agent by one tick.
pub fn step_agent(
    agent: &mut AgentProfile,
    world: &mut WorldState,
    scenario: &ScenarioSpec,
    mode: AggregationMode,
    rng: &mut SimRng,
    cache: Option<&mut SolveCache>,
) -> Result<TrajectoryEvent, MdpError> {
    let solved = match cache {
        Some(cache) => {
            let key = cache_key(agent, world, scenario, mode);
            match cache.entries.get(&key) {
                Some(hit) => {
                    cache.hits += 1;
                    Arc::clone(hit)
                }
                None => {
                    cache.misses += 1;
                    let fresh = Arc::new(solve_agent(agent, world, scenario, mode)?);
                    cache.entries.insert(key, Arc::clone(&fresh));
                    fresh
                }
            }
        }
        None => Arc::new(solve_agent(agent, world, scenario, mode)?),
    };

    let s0 = solved.mdp.initial_state;
    let mask = solved.mdp.mdp.mask();
    let mut event = TrajectoryEvent {
        tick: world.tick,
        agent: agent.id,
        before: agent.state.clone(),
        after: agent.state.clone(),
        action: solved.policy.choice(s0),
        possible: mask.feasible(s0),
        impossible: mask.impossible(s0),
        feasibility: 0.0,
        realised: false,
        choice_before: agent.choice.clone(),
        choice_after: agent.choice.clone(),
    };
    let Some(action_id) = event.action else {
        return Ok(event);
    };

    let action = &scenario.actions[action_id.0];
    let f = solved.mdp.mdp.transitions.feasibility(s0, action_id);
    event.feasibility = f;
    event.realised = f >= 1.0 || (f > 0.0 && rng.unit() < f);
    if !event.realised {
        return Ok(event);
    }

    // Loop 1: personal state and world.
    let env = world.environment.clone();
    agent.state = action.successor(&event.before, scenario, &env);
    event.after = agent.state.clone();
    if let Some(use_) = &action.requires_resource {
        if let Some(counter) = world.resource_counters.get_mut(&use_.resource) {
            *counter = counter.take(use_.quantity);
        }
        if let Some(res) = scenario.resource(&use_.resource) {
            world.charge(res.payer, res.unit_cost * use_.quantity as f64);
        }
    }
    let mut loop_two = Vec::new();
    for rule in action.effects.iter().filter(|r| r.when.holds(&event.before, &env)) {
        match &rule.target {
            EffectTarget::ResourceDelta { resource, amount } => {
                if let Some(counter) = world.resource_counters.get_mut(resource) {
                    *counter = counter.adjust(*amount);
                }
            }
            EffectTarget::ExpenseDelta { payer, amount } => world.charge(*payer, *amount),
            EffectTarget::UrgencyDelta { .. } | EffectTarget::ValuePrefDelta { .. } => loop_two.push(rule.clone()),
            _ => {}
        }
    }

    // Loop 2: choice factors.
    agent.choice = update_choice_factors(&agent.choice, &event, &loop_two);
    event.choice_after = agent.choice.clone();
    Ok(event)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStatus {
    pub id: String,
    pub enabled: bool,
}

/// Everything a run produced, enough to recompute every metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format_version: u32,
    pub scenario: String,
    pub seed: u64,
    pub horizon: u32,
    pub aggregation: AggregationMode,
    pub schedule: Schedule,
    pub norms: Vec<NormStatus>,
    pub actions: Vec<String>,
    pub initial_agents: Vec<AgentProfile>,
    pub final_agents: Vec<AgentProfile>,
    pub events: Vec<TrajectoryEvent>,
    pub final_world: WorldState,
}

impl RunReport {
    pub fn events_at(&self, tick: u32) -> impl Iterator<Item = &TrajectoryEvent> {
        self.events.iter().filter(move |e| e.tick == tick)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub horizon: Option<u32>,
    pub aggregation: Option<AggregationMode>,
    pub schedule: Option<Schedule>,
    pub use_cache: bool,
    /// Replaces the sampled population when set.
    pub population: Option<Vec<AgentProfile>>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { horizon: None, aggregation: None, schedule: None, use_cache: true, population: None }
    }
}

/// Samples the population and runs the scenario's horizon.
pub fn run(scenario: &ScenarioSpec, seed: u64) -> Result<RunReport, MdpError> {
    run_with(scenario, seed, &RunOptions::default())
}

pub fn run_with(scenario: &ScenarioSpec, seed: u64, opts: &RunOptions) -> Result<RunReport, MdpError> {
    let horizon = opts.horizon.unwrap_or(scenario.simulation.horizon);
    let mode = opts.aggregation.unwrap_or(scenario.simulation.aggregation);
    let schedule = opts.schedule.unwrap_or(scenario.simulation.schedule);
    let initial = match &opts.population {
        Some(p) => p.clone(),
        None => sample_population(&scenario.population, seed),
    };
    let mut agents = initial.clone();
    agents.sort_by_key(|a| a.id);

    let mut rng = SimRng::new(seed, DYNAMICS_STREAM);
    let mut world = WorldState::new(scenario);
    let mut cache = opts.use_cache.then(SolveCache::default);
    let mut events = Vec::with_capacity(agents.len() * horizon as usize);

    for tick in 0..horizon {
        world.tick = tick;
        world.reset_counters(scenario);
        let mut order: Vec<usize> = (0..agents.len()).collect();
        if schedule == Schedule::Shuffled {
            rng.shuffle(&mut order);
        }
        for i in order {
            let event = step_agent(&mut agents[i], &mut world, scenario, mode, &mut rng, cache.as_mut())?;
            events.push(event);
        }
    }
    world.tick = horizon;
    world.reset_counters(scenario);

    Ok(RunReport {
        format_version: REPORT_FORMAT_VERSION,
        scenario: scenario.name.clone(),
        seed,
        horizon,
        aggregation: mode,
        schedule,
        norms: scenario.norms.iter().map(|n: &NormRule| NormStatus { id: n.id.clone(), enabled: n.enabled }).collect(),
        actions: scenario.action_names(),
        initial_agents: initial,
        final_agents: agents,
        events,
        final_world: world,
    })
}
