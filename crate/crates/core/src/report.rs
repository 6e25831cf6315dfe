//! File writers for run artefacts. All outputs are deterministic functions
//! of their inputs.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::domain::AgentProfile;
use crate::dynamics::RunReport;
use crate::evaluation::EquityMetrics;
use crate::scenario::ScenarioSpec;

pub const RUN_REPORT_FILE: &str = "run_report.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const TRAJECTORIES_FILE: &str = "trajectories.csv";
pub const SERIES_FILE: &str = "series.csv";

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

fn csv_err(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

fn attrs(agent_attrs: &std::collections::BTreeMap<String, crate::domain::AttrValue>) -> String {
    serde_json::to_string(agent_attrs).expect("attributes serialize")
}

pub fn trajectories_csv(report: &RunReport, scenario: &ScenarioSpec) -> io::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "tick",
        "agent",
        "health_before",
        "housing_before",
        "registration_before",
        "attributes_before",
        "action",
        "feasibility",
        "realised",
        "possible_count",
        "impossible_count",
        "health_after",
        "housing_after",
        "registration_after",
        "attributes_after",
    ])
    .map_err(csv_err)?;
    for e in &report.events {
        w.write_record([
            e.tick.to_string(),
            e.agent.to_string(),
            e.before.health.to_string(),
            e.before.housing.to_string(),
            e.before.registration.to_string(),
            attrs(&e.before.attributes),
            e.action_name(scenario).to_string(),
            e.feasibility.to_string(),
            e.realised.to_string(),
            e.possible.len().to_string(),
            e.impossible.len().to_string(),
            e.after.health.to_string(),
            e.after.housing.to_string(),
            e.after.registration.to_string(),
            attrs(&e.after.attributes),
        ])
        .map_err(csv_err)?;
    }
    finish(w)
}

pub fn series_csv(metrics: &EquityMetrics) -> io::Result<String> {
    let caps: Vec<_> = metrics.series.first().map(|t| t.deprivation.keys().copied().collect()).unwrap_or_default();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["tick".to_string()];
    header.extend(caps.iter().map(|c| format!("deprivation_{c}")));
    w.write_record(&header).map_err(csv_err)?;
    for t in &metrics.series {
        let mut row = vec![t.tick.to_string()];
        row.extend(caps.iter().map(|c| t.deprivation[c].to_string()));
        w.write_record(&row).map_err(csv_err)?;
    }
    finish(w)
}

pub fn population_csv(agents: &[AgentProfile]) -> io::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["agent", "health", "housing", "registration", "attributes", "value_prefs", "need_urgencies", "personal_terms"])
        .map_err(csv_err)?;
    for a in agents {
        w.write_record([
            a.id.to_string(),
            a.state.health.to_string(),
            a.state.housing.to_string(),
            a.state.registration.to_string(),
            attrs(&a.state.attributes),
            serde_json::to_string(a.choice.value_prefs()).expect("serialize"),
            serde_json::to_string(a.choice.need_urgencies()).expect("serialize"),
            a.personal_factors.len().to_string(),
        ])
        .map_err(csv_err)?;
    }
    finish(w)
}

fn finish(w: csv::Writer<Vec<u8>>) -> io::Result<String> {
    let bytes = w.into_inner().map_err(|e| io::Error::other(e.to_string()))?;
    String::from_utf8(bytes).map_err(io::Error::other)
}

/// Writes the report, metrics, trajectories and series into `dir` and
/// returns the written paths.
pub fn write_run(dir: &Path, report: &RunReport, metrics: &EquityMetrics, scenario: &ScenarioSpec) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let files = [
        (RUN_REPORT_FILE, to_json(report)),
        (METRICS_FILE, to_json(metrics)),
        (TRAJECTORIES_FILE, trajectories_csv(report, scenario)?),
        (SERIES_FILE, series_csv(metrics)?),
    ];
    let mut out = Vec::new();
    for (name, body) in files {
        let path = dir.join(name);
        fs::write(&path, body)?;
        out.push(path);
    }
    Ok(out)
}
