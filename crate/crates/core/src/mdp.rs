//! Per-agent finite MDPs and their tabular solvers.
//!
//! States are personal-state snapshots reachable from the agent's current
//! state under the scenario's effect rules. Each (state, action) pair is
//! either possible, splitting mass between the effect-updated successor
//! (probability = feasibility) and a self-loop, or impossible: a certain
//! self-loop that carries no reward.
//!
//! Optimal values only back up over possible actions, and an impossible
//! action's Q-value is the value of repeating it forever, i.e. exactly 0.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{AgentProfile, PersonalState};
use crate::scenario::{feasibility_of, FreshTick, ScenarioSpec, WorldView};

/// Row sums must match 1 within this.
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;

/// Upper bound on `|S|·|A|` accepted by [`enumerate_horizon`].
pub const ORACLE_MAX_PAIRS: usize = 100;
/// Upper bound on the horizon accepted by [`enumerate_horizon`].
pub const ORACLE_MAX_HORIZON: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MdpError {
    #[error("reachable state space exceeds the cap of {cap} states")]
    StateSpaceExplosion { cap: usize },
    #[error("value iteration did not converge in {max_iter} iterations (residual {residual:e})")]
    NonConvergence { max_iter: usize, residual: f64 },
    #[error("oracle too large: {pairs} state-action pairs, horizon {horizon}")]
    OracleTooLarge { pairs: usize, horizon: usize },
    #[error("discount factor {0} outside [0, 1]")]
    InvalidDiscount(f64),
    #[error("malformed MDP: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    Short,
    Long,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub to: StateId,
    pub p: f64,
}

/// Which actions are possible in which states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityMask {
    n_actions: usize,
    possible: Vec<bool>,
}

impl FeasibilityMask {
    pub fn new(n_states: usize, n_actions: usize, possible: Vec<bool>) -> Self {
        assert_eq!(possible.len(), n_states * n_actions);
        FeasibilityMask { n_actions, possible }
    }

    pub fn all_possible(n_states: usize, n_actions: usize) -> Self {
        Self::new(n_states, n_actions, vec![true; n_states * n_actions])
    }

    pub fn n_states(&self) -> usize {
        self.possible.len().checked_div(self.n_actions).unwrap_or(0)
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn is_possible(&self, s: StateId, a: ActionId) -> bool {
        self.possible[s.0 * self.n_actions + a.0]
    }

    /// Possible actions at `s` in ascending id order.
    pub fn feasible(&self, s: StateId) -> Vec<ActionId> {
        (0..self.n_actions).map(ActionId).filter(|&a| self.is_possible(s, a)).collect()
    }

    pub fn impossible(&self, s: StateId) -> Vec<ActionId> {
        (0..self.n_actions).map(ActionId).filter(|&a| !self.is_possible(s, a)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionModel {
    n_actions: usize,
    rows: Vec<Vec<Transition>>,
    /// Success probability of each pair; 0 exactly for impossible pairs.
    feasibility: Vec<f64>,
    mask: FeasibilityMask,
}

impl TransitionModel {
    pub fn row(&self, s: StateId, a: ActionId) -> &[Transition] {
        &self.rows[s.0 * self.n_actions + a.0]
    }

    pub fn feasibility(&self, s: StateId, a: ActionId) -> f64 {
        self.feasibility[s.0 * self.n_actions + a.0]
    }

    pub fn mask(&self) -> &FeasibilityMask {
        &self.mask
    }

    pub fn row_sum(&self, s: StateId, a: ActionId) -> f64 {
        self.row(s, a).iter().map(|t| t.p).sum()
    }
}

/// A dense (state, action) table of numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTable {
    n_actions: usize,
    values: Vec<f64>,
}

impl PairTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        PairTable { n_actions, values: vec![0.0; n_states * n_actions] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n_actions = rows.first().map_or(0, Vec::len);
        PairTable { n_actions, values: rows.iter().flatten().copied().collect() }
    }

    pub fn get(&self, s: StateId, a: ActionId) -> f64 {
        self.values[s.0 * self.n_actions + a.0]
    }

    pub fn set(&mut self, s: StateId, a: ActionId, v: f64) {
        self.values[s.0 * self.n_actions + a.0] = v;
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_states(&self) -> usize {
        self.values.len().checked_div(self.n_actions).unwrap_or(0)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn row(&self, s: StateId) -> &[f64] {
        &self.values[s.0 * self.n_actions..(s.0 + 1) * self.n_actions]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualRewardModel {
    pub short: PairTable,
    pub long: PairTable,
}

impl DualRewardModel {
    pub fn table(&self, which: RewardKind) -> &PairTable {
        match which {
            RewardKind::Short => &self.short,
            RewardKind::Long => &self.long,
        }
    }
}

/// The numeric part of an MDP, independent of what its states mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteMdp {
    n_states: usize,
    n_actions: usize,
    pub transitions: TransitionModel,
    pub rewards: DualRewardModel,
}

impl FiniteMdp {
    /// Builds and checks an MDP from explicit rows. Impossible pairs must be
    /// certain self-loops with zero reward on both tables.
    pub fn new(
        rows: Vec<Vec<Vec<Transition>>>,
        mask: FeasibilityMask,
        short: PairTable,
        long: PairTable,
    ) -> Result<Self, MdpError> {
        let n_states = rows.len();
        let n_actions = rows.first().map_or(0, Vec::len);
        if n_states == 0 || n_actions == 0 {
            return Err(MdpError::Malformed("empty state or action set".into()));
        }
        if mask.n_actions() != n_actions || mask.n_states() != n_states {
            return Err(MdpError::Malformed("mask shape mismatch".into()));
        }
        for t in [&short, &long] {
            if t.n_actions() != n_actions || t.n_states() != n_states {
                return Err(MdpError::Malformed("reward table shape mismatch".into()));
            }
            if t.values().iter().any(|v| !v.is_finite()) {
                return Err(MdpError::Malformed("non-finite reward".into()));
            }
        }
        let mut flat = Vec::with_capacity(n_states * n_actions);
        let mut feasibility = Vec::with_capacity(n_states * n_actions);
        for (s, per_action) in rows.into_iter().enumerate() {
            if per_action.len() != n_actions {
                return Err(MdpError::Malformed(format!("state {s} has {} actions", per_action.len())));
            }
            for (a, row) in per_action.into_iter().enumerate() {
                let (sid, aid) = (StateId(s), ActionId(a));
                if row.iter().any(|t| t.to.0 >= n_states || !(0.0..=1.0).contains(&t.p)) {
                    return Err(MdpError::Malformed(format!("bad transition at ({s}, {a})")));
                }
                let sum: f64 = row.iter().map(|t| t.p).sum();
                if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                    return Err(MdpError::Malformed(format!("row ({s}, {a}) sums to {sum}")));
                }
                if mask.is_possible(sid, aid) {
                    let stay: f64 = row.iter().filter(|t| t.to == sid).map(|t| t.p).sum();
                    feasibility.push(if stay >= 1.0 { 1.0 } else { 1.0 - stay });
                } else {
                    if row.len() != 1 || row[0].to != sid || row[0].p != 1.0 {
                        return Err(MdpError::Malformed(format!("impossible pair ({s}, {a}) is not a self-loop")));
                    }
                    if short.get(sid, aid) != 0.0 || long.get(sid, aid) != 0.0 {
                        return Err(MdpError::Malformed(format!("impossible pair ({s}, {a}) carries reward")));
                    }
                    feasibility.push(0.0);
                }
                flat.push(row);
            }
        }
        Ok(FiniteMdp {
            n_states,
            n_actions,
            transitions: TransitionModel { n_actions, rows: flat, feasibility, mask },
            rewards: DualRewardModel { short, long },
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn states(&self) -> impl Iterator<Item = StateId> {
        (0..self.n_states).map(StateId)
    }

    pub fn actions(&self) -> impl Iterator<Item = ActionId> {
        (0..self.n_actions).map(ActionId)
    }

    pub fn mask(&self) -> &FeasibilityMask {
        self.transitions.mask()
    }
}

/// An agent's MDP together with the meaning of its indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompiledMdp {
    pub states: Vec<PersonalState>,
    pub actions: Vec<String>,
    pub mdp: FiniteMdp,
    pub initial_state: StateId,
}

impl CompiledMdp {
    pub fn state_id(&self, state: &PersonalState) -> Option<StateId> {
        self.states.iter().position(|s| s == state).map(StateId)
    }

    pub fn action_id(&self, name: &str) -> Option<ActionId> {
        self.actions.iter().position(|a| a == name).map(ActionId)
    }

    /// Structured dump for diffing and oracle replay.
    pub fn dump(&self) -> MdpDump {
        let mdp = &self.mdp;
        let mut transitions = Vec::new();
        let mut mask = Vec::new();
        for s in mdp.states() {
            for a in mdp.actions() {
                mask.push(MaskEntry { state: s, action: a, possible: mdp.mask().is_possible(s, a) });
                for t in mdp.transitions.row(s, a) {
                    transitions.push((s, a, t.to, t.p));
                }
            }
        }
        MdpDump {
            states: self.states.clone(),
            actions: self.actions.clone(),
            initial_state: self.initial_state,
            mask,
            transitions,
            short_rewards: (0..mdp.n_states()).map(|s| mdp.rewards.short.row(StateId(s)).to_vec()).collect(),
            long_rewards: (0..mdp.n_states()).map(|s| mdp.rewards.long.row(StateId(s)).to_vec()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskEntry {
    pub state: StateId,
    pub action: ActionId,
    pub possible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpDump {
    pub states: Vec<PersonalState>,
    pub actions: Vec<String>,
    pub initial_state: StateId,
    pub mask: Vec<MaskEntry>,
    /// `(state, action, next_state, probability)`
    pub transitions: Vec<(StateId, ActionId, StateId, f64)>,
    pub short_rewards: Vec<Vec<f64>>,
    pub long_rewards: Vec<Vec<f64>>,
}

/// Compiles the agent's MDP as seen at the start of a tick.
pub fn compile(agent: &AgentProfile, scenario: &ScenarioSpec) -> Result<CompiledMdp, MdpError> {
    compile_in(agent, scenario, &FreshTick(scenario), scenario.simulation.max_states)
}

/// Compiles the agent's MDP against an explicit world view. Resource
/// availability is taken as fixed for the whole solve.
pub fn compile_in(
    agent: &AgentProfile,
    scenario: &ScenarioSpec,
    world: &dyn WorldView,
    max_states: usize,
) -> Result<CompiledMdp, MdpError> {
    let env = world.environment();
    let n_actions = scenario.actions.len();
    let mut states = vec![agent.state.clone()];
    let mut index: HashMap<PersonalState, usize> = HashMap::from([(agent.state.clone(), 0)]);
    let mut queue = VecDeque::from([0usize]);
    // (feasibility, successor) per pair, filled in discovery order.
    let mut outcomes: Vec<Vec<(f64, usize)>> = Vec::new();

    while let Some(s) = queue.pop_front() {
        let mut per_action = Vec::with_capacity(n_actions);
        for action in &scenario.actions {
            let state = &states[s];
            let f = feasibility_of(state, &agent.personal_factors, action, scenario, world);
            let succ = if f > 0.0 {
                let next = action.successor(state, scenario, env);
                match index.get(&next) {
                    Some(&id) => id,
                    None => {
                        if states.len() >= max_states {
                            return Err(MdpError::StateSpaceExplosion { cap: max_states });
                        }
                        let id = states.len();
                        index.insert(next.clone(), id);
                        states.push(next);
                        queue.push_back(id);
                        id
                    }
                }
            } else {
                s
            };
            per_action.push((f, succ));
        }
        if outcomes.len() <= s {
            outcomes.resize(s + 1, Vec::new());
        }
        outcomes[s] = per_action;
    }

    let n_states = states.len();
    let mut rows = Vec::with_capacity(n_states);
    let mut possible = Vec::with_capacity(n_states * n_actions);
    for (s, per_action) in outcomes.iter().enumerate() {
        let mut state_rows = Vec::with_capacity(n_actions);
        for &(f, succ) in per_action {
            possible.push(f > 0.0);
            let row = if f <= 0.0 || succ == s || f >= 1.0 {
                let to = if f <= 0.0 { s } else { succ };
                vec![Transition { to: StateId(to), p: 1.0 }]
            } else {
                vec![Transition { to: StateId(succ), p: f }, Transition { to: StateId(s), p: 1.0 - f }]
            };
            state_rows.push(row);
        }
        rows.push(state_rows);
    }

    let mut short = PairTable::zeros(n_states, n_actions);
    let mut long = PairTable::zeros(n_states, n_actions);
    for (s, per_action) in outcomes.iter().enumerate() {
        // Nothing can change from an absorbing state; staying there earns nothing.
        let absorbing = per_action.iter().all(|&(f, succ)| f <= 0.0 || succ == s);
        if absorbing {
            continue;
        }
        for (a, action) in scenario.actions.iter().enumerate() {
            if per_action[a].0 <= 0.0 {
                continue;
            }
            let need_term: f64 = action.relieves.iter().map(|(n, r)| agent.choice.urgency(n) * r).sum();
            let value_term: f64 = action.importance.iter().map(|(v, w)| agent.choice.value_pref(*v) * w).sum();
            short.set(StateId(s), ActionId(a), action.base_short_reward + need_term);
            long.set(StateId(s), ActionId(a), action.base_long_reward + value_term);
        }
    }

    let mask = FeasibilityMask::new(n_states, n_actions, possible);
    let mdp = FiniteMdp::new(rows, mask, short, long)?;
    Ok(CompiledMdp { states, actions: scenario.action_names(), mdp, initial_state: StateId(0) })
}

/// One half of a dual Q-table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    pub values: PairTable,
    pub gamma: f64,
    /// Bellman residual of `values`, checked by one extra sweep.
    pub residual: f64,
    pub iterations: usize,
}

impl QTable {
    pub fn get(&self, s: StateId, a: ActionId) -> f64 {
        self.values.get(s, a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualQTable {
    pub short: QTable,
    pub long: QTable,
}

impl DualQTable {
    pub fn q_short(&self, s: StateId, a: ActionId) -> f64 {
        self.short.get(s, a)
    }

    pub fn q_long(&self, s: StateId, a: ActionId) -> f64 {
        self.long.get(s, a)
    }

    pub fn gammas(&self) -> (f64, f64) {
        (self.short.gamma, self.long.gamma)
    }

    /// Hex SHA-256 over both tables' bit patterns and discounts.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for t in [&self.short, &self.long] {
            h.update(t.gamma.to_bits().to_le_bytes());
            h.update((t.values.n_actions() as u64).to_le_bytes());
            for v in t.values.values() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn check_gamma(gamma: f64) -> Result<(), MdpError> {
    if (0.0..=1.0).contains(&gamma) {
        Ok(())
    } else {
        Err(MdpError::InvalidDiscount(gamma))
    }
}

/// One Bellman backup of `q` into `out`.
fn backup(mdp: &FiniteMdp, r: &PairTable, gamma: f64, q: &PairTable, out: &mut PairTable) {
    let v: Vec<f64> = mdp
        .states()
        .map(|s| mdp.mask().feasible(s).into_iter().map(|a| q.get(s, a)).fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.max(x)))).unwrap_or(0.0))
        .collect();
    for s in mdp.states() {
        for a in mdp.actions() {
            let value = if mdp.mask().is_possible(s, a) {
                let expected: f64 = mdp.transitions.row(s, a).iter().map(|t| t.p * v[t.to.0]).sum();
                r.get(s, a) + gamma * expected
            } else {
                0.0
            };
            out.set(s, a, value);
        }
    }
}

fn max_diff(a: &PairTable, b: &PairTable) -> f64 {
    a.values().iter().zip(b.values()).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Largest violation of the Bellman equation by `q`.
pub fn bellman_residual(mdp: &FiniteMdp, which: RewardKind, gamma: f64, q: &PairTable) -> f64 {
    let mut next = PairTable::zeros(mdp.n_states(), mdp.n_actions());
    backup(mdp, mdp.rewards.table(which), gamma, q, &mut next);
    max_diff(q, &next)
}

/// Optimal Q-values for one reward kind by synchronous value iteration,
/// stopping once the Bellman residual is at most `tolerance`.
pub fn value_iteration(
    mdp: &FiniteMdp,
    which: RewardKind,
    gamma: f64,
    tolerance: f64,
    max_iter: usize,
) -> Result<QTable, MdpError> {
    check_gamma(gamma)?;
    let r = mdp.rewards.table(which);
    let mut q = PairTable::zeros(mdp.n_states(), mdp.n_actions());
    let mut next = q.clone();
    let mut residual = f64::INFINITY;
    for iter in 1..=max_iter {
        backup(mdp, r, gamma, &q, &mut next);
        std::mem::swap(&mut q, &mut next);
        // `next` now holds the previous iterate; check the new one directly.
        residual = bellman_residual(mdp, which, gamma, &q);
        if residual <= tolerance {
            return Ok(QTable { values: q, gamma, residual, iterations: iter });
        }
    }
    Err(MdpError::NonConvergence { max_iter, residual })
}

/// Exact finite-horizon discounted optimal Q by backward induction:
/// `horizon` further decisions follow the first one.
pub fn enumerate_horizon(mdp: &FiniteMdp, which: RewardKind, gamma: f64, horizon: usize) -> Result<QTable, MdpError> {
    check_gamma(gamma)?;
    let pairs = mdp.n_states() * mdp.n_actions();
    if pairs > ORACLE_MAX_PAIRS || horizon > ORACLE_MAX_HORIZON {
        return Err(MdpError::OracleTooLarge { pairs, horizon });
    }
    let r = mdp.rewards.table(which);
    let n_s = mdp.n_states();
    let n_a = mdp.n_actions();
    let mask = mdp.mask();

    // stage[s][a] with `k` decisions remaining after this one.
    let mut stage: Vec<Vec<f64>> = (0..n_s)
        .map(|s| (0..n_a).map(|a| if mask.is_possible(StateId(s), ActionId(a)) { r.get(StateId(s), ActionId(a)) } else { 0.0 }).collect())
        .collect();
    for _ in 0..horizon {
        let mut best = vec![0.0; n_s];
        for (s, b) in best.iter_mut().enumerate() {
            let mut found = false;
            for (a, &q) in stage[s].iter().enumerate() {
                if mask.is_possible(StateId(s), ActionId(a)) && (!found || q > *b) {
                    *b = q;
                    found = true;
                }
            }
        }
        let mut fresh = vec![vec![0.0; n_a]; n_s];
        for (s, row) in fresh.iter_mut().enumerate() {
            for (a, cell) in row.iter_mut().enumerate() {
                let (sid, aid) = (StateId(s), ActionId(a));
                if !mask.is_possible(sid, aid) {
                    continue;
                }
                let mut acc = 0.0;
                for t in mdp.transitions.row(sid, aid) {
                    acc += t.p * best[t.to.0];
                }
                *cell = r.get(sid, aid) + gamma * acc;
            }
        }
        stage = fresh;
    }
    let values = PairTable::from_rows(&stage);
    let residual = bellman_residual(mdp, which, gamma, &values);
    Ok(QTable { values, gamma, residual, iterations: horizon })
}

/// Smallest horizon whose discounted tail `γ^H·r_max/(1−γ)` is below `tol`.
pub fn tail_horizon(gamma: f64, tol: f64, r_max: f64) -> usize {
    if gamma <= 0.0 || r_max <= 0.0 {
        return 0;
    }
    let h = (tol * (1.0 - gamma) / r_max).ln() / gamma.ln();
    h.ceil().max(0.0) as usize
}

/// Both halves of the dual table with their own discounts.
pub fn solve_dual(
    mdp: &FiniteMdp,
    gamma_short: f64,
    gamma_long: f64,
    tolerance: f64,
    max_iter: usize,
) -> Result<DualQTable, MdpError> {
    Ok(DualQTable {
        short: value_iteration(mdp, RewardKind::Short, gamma_short, tolerance, max_iter)?,
        long: value_iteration(mdp, RewardKind::Long, gamma_long, tolerance, max_iter)?,
    })
}
