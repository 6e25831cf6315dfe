//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use capsim::bundled::{self, KEEP_FORWARD, RECEIVE_MEDICAL_ATTENTION, REGISTRATION_GATE};
use capsim::decision::{derive_policy, AggregationMode};
use capsim::domain::{AgentProfile, CentralCapability, ChoiceFactors, HealthLevel, Need, Registration};
use capsim::dynamics::{run_with, RunOptions};
use capsim::evaluation::{compare, compute_metrics};
use capsim::mdp::{
    compile, enumerate_horizon, solve_dual, tail_horizon, value_iteration, DualQTable, FeasibilityMask,
    PairTable, QTable, RewardKind, StateId,
};
use capsim::population::{sample_population, Marginal};
use capsim::report::write_run;
use capsim::rng::SimRng;

use common::{coin, random_agents, random_mdp, random_scenario, sick};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || format!("took {elapsed:?}, limit {limit:?}"))
}

fn solo_run(agent: AgentProfile, horizon: u32) -> Result<capsim::RunReport, String> {
    let spec = bundled::health_inequity();
    let opts = RunOptions { horizon: Some(horizon), population: Some(vec![agent]), ..Default::default() };
    run_with(&spec, 7, &opts).map_err(|e| e.to_string())
}

fn registered_agent_recovers() -> Outcome {
    let start = Instant::now();
    let spec = bundled::health_inequity();
    let agent = sick(0, Registration::Registered);
    let m = compile(&agent, &spec).map_err(|e| e.to_string())?;
    let sim = &spec.simulation;
    let q = solve_dual(&m.mdp, sim.gamma_short, sim.gamma_long, sim.tolerance, sim.max_iter).map_err(|e| e.to_string())?;
    let policy = derive_policy(&q, m.mdp.mask(), sim.aggregation);
    let care = m.action_id(RECEIVE_MEDICAL_ATTENTION).unwrap();
    ensure(policy.choice(m.initial_state) == Some(care), || format!("policy chose {:?}", policy.choice(m.initial_state)))?;
    let report = solo_run(agent, 1)?;
    let health = report.final_agents[0].state.health;
    ensure(health == HealthLevel::new(2).unwrap(), || format!("health after 1 tick is {health}"))?;
    within(start.elapsed(), Duration::from_secs(1))?;
    Ok(format!("chose {RECEIVE_MEDICAL_ATTENTION}, health 1 -> 2 in 1 tick, {:?}", start.elapsed()))
}

fn non_registered_agent_worsens() -> Outcome {
    let spec = bundled::health_inequity();
    let agent = sick(0, Registration::NonRegistered);
    let m = compile(&agent, &spec).map_err(|e| e.to_string())?;
    let care = m.action_id(RECEIVE_MEDICAL_ATTENTION).unwrap();
    let s0 = m.initial_state;
    let f = m.mdp.transitions.feasibility(s0, care);
    let row = m.mdp.transitions.row(s0, care);
    ensure(f == 0.0 && !m.mdp.mask().is_possible(s0, care), || format!("care feasibility {f}"))?;
    ensure(row.len() == 1 && row[0].to == s0 && row[0].p == 1.0, || format!("care row {row:?}"))?;

    let report = solo_run(agent, spec.simulation.horizon)?;
    let first = &report.events[0];
    ensure(first.impossible.contains(&care), || "care not reported impossible".into())?;
    for e in report.events.iter().filter(|e| e.realised) {
        let name = e.action_name(&spec);
        ensure(name == KEEP_FORWARD, || format!("realised {name} at tick {}", e.tick))?;
    }
    ensure(first.realised && first.after.health == HealthLevel::new(0).unwrap(), || {
        format!("after tick 0: health {}", first.after.health)
    })?;
    Ok(format!("care impossible (f = 0, self-loop p = 1), only {KEEP_FORWARD} realised, health 1 -> 0"))
}

fn solver_matches_oracle() -> Outcome {
    let start = Instant::now();
    let gammas = [0.5, 0.8, 0.95];
    let mut worst: f64 = 0.0;
    for seed in 0..200u64 {
        let mdp = random_mdp(seed, 6, 4);
        let gamma = gammas[seed as usize % 3];
        for which in [RewardKind::Short, RewardKind::Long] {
            let r_max = mdp.rewards.table(which).max_abs();
            let horizon = tail_horizon(gamma, 1e-9, r_max.max(1.0));
            let vi = value_iteration(&mdp, which, gamma, 1e-10, 1_000_000).map_err(|e| format!("seed {seed}: {e}"))?;
            let oracle = enumerate_horizon(&mdp, which, gamma, horizon).map_err(|e| format!("seed {seed}: {e}"))?;
            for (x, y) in vi.values.values().iter().zip(oracle.values.values()) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    ensure(worst <= 1e-6, || format!("max deviation {worst:e}"))?;
    within(start.elapsed(), Duration::from_secs(30))?;
    Ok(format!("200 MDPs, max |VI - oracle| = {worst:.1e}, {:?}", start.elapsed()))
}

fn rows_are_stochastic() -> Outcome {
    let mut rows = 0usize;
    for seed in 0..1000u64 {
        let spec = random_scenario(seed);
        let agent = random_agents(seed, 1).remove(0);
        let m = compile(&agent, &spec).map_err(|e| format!("seed {seed}: {e}"))?;
        for s in m.mdp.states() {
            for a in m.mdp.actions() {
                let row = m.mdp.transitions.row(s, a);
                let sum: f64 = row.iter().map(|t| t.p).sum();
                ensure((sum - 1.0).abs() <= 1e-12 && row.iter().all(|t| (0.0..=1.0).contains(&t.p)), || {
                    format!("seed {seed}: row ({}, {}) sums to {sum}", s.0, a.0)
                })?;
                rows += 1;
            }
        }
    }
    Ok(format!("{rows} rows over 1000 scenarios"))
}

fn random_dual(rng: &mut SimRng) -> (DualQTable, FeasibilityMask) {
    let n_s = rng.int_inclusive(1, 6) as usize;
    let n_a = rng.int_inclusive(2, 4) as usize;
    let mut possible = Vec::new();
    for _ in 0..n_s {
        let row: Vec<bool> = (0..n_a).map(|_| coin(rng, 0.7)).collect();
        possible.extend(if row.iter().any(|&p| p) { row } else { vec![true; n_a] });
    }
    let table = |rng: &mut SimRng, gamma| {
        let rows: Vec<Vec<f64>> = (0..n_s).map(|_| (0..n_a).map(|_| rng.unit() * 20.0 - 10.0).collect()).collect();
        QTable { values: PairTable::from_rows(&rows), gamma, residual: 0.0, iterations: 0 }
    };
    let q = DualQTable { short: table(rng, 0.5), long: table(rng, 0.9) };
    (q, FeasibilityMask::new(n_s, n_a, possible))
}

fn values_prevail() -> Outcome {
    let mut rng = SimRng::new(5, 0);
    let mode = AggregationMode::Lexicographic { epsilon: 0.0 };
    let mut checked = 0;
    while checked < 1000 {
        let (q, mask) = random_dual(&mut rng);
        let unique = (0..mask.n_states()).map(StateId).all(|s| {
            let vals: Vec<f64> = mask.feasible(s).iter().map(|&a| q.q_long(s, a)).collect();
            let best = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            vals.iter().filter(|&&v| v == best).count() == 1
        });
        if !unique {
            continue;
        }
        let c = 10f64.powf(rng.unit() * 8.0 - 4.0);
        let mut scaled = q.clone();
        let rows: Vec<Vec<f64>> = (0..mask.n_states())
            .map(|s| q.short.values.row(StateId(s)).iter().map(|v| v * c).collect())
            .collect();
        scaled.short.values = PairTable::from_rows(&rows);
        let before = derive_policy(&q, &mask, mode);
        let after = derive_policy(&scaled, &mask, mode);
        ensure(before.choices == after.choices, || format!("case {checked}: c = {c} changed the policy"))?;
        for s in (0..mask.n_states()).map(StateId) {
            let argmax = mask
                .feasible(s)
                .into_iter()
                .max_by(|&a, &b| q.q_long(s, a).total_cmp(&q.q_long(s, b)))
                .unwrap();
            ensure(before.choice(s) == Some(argmax), || format!("case {checked}: not the Q_long argmax"))?;
        }
        checked += 1;
    }
    Ok("1000 dual tables, policy unchanged under Q_short scaling".into())
}

fn no_impossible_functionings() -> Outcome {
    let mut events = 0usize;
    let mut realised = 0usize;
    let mut seed = 0u64;
    while events < 10_000 {
        let spec = random_scenario(seed);
        let n = 1 + (seed % 8) as usize;
        let opts = RunOptions { population: Some(random_agents(seed, n)), ..Default::default() };
        let report = run_with(&spec, seed, &opts).map_err(|e| format!("seed {seed}: {e}"))?;
        for e in &report.events {
            events += 1;
            if !e.realised {
                continue;
            }
            realised += 1;
            let a = e.action.ok_or_else(|| format!("seed {seed}: realised noop"))?;
            ensure(e.feasibility > 0.0 && e.possible.contains(&a) && !e.impossible.contains(&a), || {
                format!("seed {seed}: tick {} agent {} realised impossible action {}", e.tick, e.agent, a.0)
            })?;
        }
        seed += 1;
    }
    Ok(format!("{events} events ({realised} realised) over {seed} runs, 0 violations"))
}

fn policy_what_if_delta() -> Outcome {
    let spec = bundled::health_inequity();
    let seed = 2024;
    let base = run_with(&spec, seed, &RunOptions::default()).map_err(|e| e.to_string())?;
    let n = base.initial_agents.len();
    ensure(n == 1000, || format!("population of {n}"))?;
    let non_registered = base.initial_agents.iter().filter(|a| a.state.registration == Registration::NonRegistered).count();
    let share = non_registered as f64 / n as f64;
    let base_m = compute_metrics(&base, &spec);
    let ratio = base_m.capabilities[&CentralCapability::BodilyHealth].deprivation_ratio;
    ensure(ratio == Some(share), || format!("baseline ratio {ratio:?}, non-registered share {share}"))?;

    let reform_spec = spec
        .with_norm_overrides(&BTreeMap::from([(REGISTRATION_GATE.to_string(), false)]))
        .map_err(|e| e.to_string())?;
    let reform = run_with(&reform_spec, seed, &RunOptions::default()).map_err(|e| e.to_string())?;
    let reform_m = compute_metrics(&reform, &reform_spec);
    let ratio = reform_m.capabilities[&CentralCapability::BodilyHealth].deprivation_ratio;
    ensure(ratio == Some(0.0), || format!("reform ratio {ratio:?}"))?;

    let delta = compare(&base_m, &reform_m).map_err(|e| e.to_string())?;
    let d = delta.capabilities[&CentralCapability::BodilyHealth].deprivation_ratio;
    ensure(d == -share, || format!("delta {d}, expected {}", -share))?;
    Ok(format!("baseline {share} (= non-registered share), reform 0, delta {d}"))
}

fn runs_are_deterministic() -> Outcome {
    let spec = bundled::health_inequity();
    let dirs = [tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?];
    let mut written = Vec::new();
    for dir in &dirs {
        let report = run_with(&spec, 11, &RunOptions::default()).map_err(|e| e.to_string())?;
        let metrics = compute_metrics(&report, &spec);
        written.push(write_run(dir.path(), &report, &metrics, &spec).map_err(|e| e.to_string())?);
    }
    let mut bytes = 0;
    for (a, b) in written[0].iter().zip(&written[1]) {
        let (x, y) = (fs::read(a).map_err(|e| e.to_string())?, fs::read(b).map_err(|e| e.to_string())?);
        ensure(x == y, || format!("{} differs", a.file_name().unwrap().to_string_lossy()))?;
        bytes += x.len();
    }
    Ok(format!("{} files, {bytes} bytes identical", written[0].len()))
}

fn sampler_fidelity() -> Outcome {
    let mut pop = bundled::health_inequity().population;
    pop.n = 10_000;
    let language = BTreeMap::from([("en".to_string(), 0.5), ("es".to_string(), 0.3), ("ro".to_string(), 0.2)]);
    pop.marginals.insert("language".into(), Marginal::Categorical(language.clone()));
    let mut worst: f64 = 0.0;
    for seed in [1u64, 2, 3, 4, 5] {
        let agents = sample_population(&pop, seed);
        let n = agents.len() as f64;
        let mut check = |label: String, freq: f64, weight: f64| -> Result<(), String> {
            worst = worst.max((freq - weight).abs());
            ensure((freq - weight).abs() <= 0.02, || format!("seed {seed}: {label} {freq} vs {weight}"))
        };
        for (&r, &w) in &pop.registration_mix {
            let k = agents.iter().filter(|a| a.state.registration == r).count();
            check(format!("registration {r}"), k as f64 / n, w)?;
        }
        for (&h, &w) in &pop.housing_mix {
            let k = agents.iter().filter(|a| a.state.housing == h).count();
            check(format!("housing {h}"), k as f64 / n, w)?;
        }
        for (&h, &w) in &pop.health_mix {
            let k = agents.iter().filter(|a| a.state.health == h).count();
            check(format!("health {h}"), k as f64 / n, w)?;
        }
        for (v, &w) in &language {
            let k = agents
                .iter()
                .filter(|a| a.state.attributes.get("language").map(|x| x.to_string()).as_deref() == Some(v))
                .count();
            check(format!("language {v}"), k as f64 / n, w)?;
        }
    }
    Ok(format!("5 seeds x 10000 agents, max deviation {worst:.4}"))
}

fn loop_two_update() -> Outcome {
    let pain = Need::new(Need::PAIN_RELIEF).unwrap();
    let mut lines = Vec::new();
    for (start, expected) in [(0.25, 0.25 + 0.3), (0.9, 1.0)] {
        let mut agent = sick(0, Registration::NonRegistered);
        agent.choice = ChoiceFactors::new(BTreeMap::new(), BTreeMap::from([(pain.clone(), start)])).unwrap();
        let report = solo_run(agent, 1)?;
        let e = &report.events[0];
        ensure(e.realised && e.after.health < e.before.health, || "no realised worsening action".into())?;
        let (before, after) = (e.choice_before.urgency(&pain), e.choice_after.urgency(&pain));
        ensure(before == start && after == expected, || format!("urgency {before} -> {after}, expected {expected}"))?;
        ensure(report.final_agents[0].choice.urgency(&pain) == expected, || "final agent disagrees with trajectory".into())?;
        lines.push(format!("{before} -> {after}"));
    }
    Ok(format!("pain_relief urgency {}", lines.join(", ")))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("registered agent receives care and recovers", registered_agent_recovers),
        ("non-registered agent is gated and worsens", non_registered_agent_worsens),
        ("value iteration matches finite-horizon oracle", solver_matches_oracle),
        ("transition rows are stochastic", rows_are_stochastic),
        ("values prevail over needs", values_prevail),
        ("no impossible functionings", no_impossible_functionings),
        ("policy what-if delta", policy_what_if_delta),
        ("determinism", runs_are_deterministic),
        ("sampler fidelity", sampler_fidelity),
        ("loop-2 urgency update", loop_two_update),
    ];
    let mut failed = 0;
    for (i, (title, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS {:>2} {title}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {title}: {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
