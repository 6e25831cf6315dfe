//! Python bindings: scenarios, population sampling, runs, metrics and
//! comparisons. Structured values cross the boundary as plain Python
//! objects decoded from the same JSON the CLI writes.

use std::collections::BTreeMap;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use capsim::decision::AggregationMode;
use capsim::domain::{CentralCapability, HealthLevel, Housing, PersonalState, Registration};
use capsim::dynamics::{run_with, RunOptions, RunReport};
use capsim::evaluation::{compare as compare_metrics, compute_metrics, EquityMetrics};
use capsim::scenario::{load_scenario, parse_scenario, to_toml, validate, ScenarioError, ScenarioSpec};
use capsim::{bundled, report};

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_error(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn scenario_error(e: ScenarioError) -> PyErr {
    match e {
        ScenarioError::Validation(vs) => {
            let lines: Vec<String> = vs.iter().map(|v| format!("{}: {}", v.path, v.message)).collect();
            PyValueError::new_err(format!("invalid scenario:\n  {}", lines.join("\n  ")))
        }
        other => value_error(other),
    }
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(runtime_error)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn capability(name: &str) -> PyResult<CentralCapability> {
    name.parse().map_err(value_error)
}

#[pyclass(name = "Scenario", module = "capsim_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyScenario {
    spec: ScenarioSpec,
}

#[pymethods]
impl PyScenario {
    /// Parses and validates TOML source.
    #[staticmethod]
    fn from_toml(source: &str) -> PyResult<Self> {
        Ok(PyScenario { spec: load_scenario(source.as_bytes()).map_err(scenario_error)? })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let bytes = std::fs::read(path).map_err(runtime_error)?;
        Ok(PyScenario { spec: load_scenario(&bytes).map_err(scenario_error)? })
    }

    #[staticmethod]
    #[pyo3(signature = (name = "health_inequity"))]
    fn bundled(name: &str) -> PyResult<Self> {
        let source = bundled::source(name).ok_or_else(|| value_error(format!("no bundled scenario `{name}`")))?;
        Self::from_toml(source)
    }

    /// Violations as `(path, message)` pairs; empty when the source is valid.
    #[staticmethod]
    fn check(source: &str) -> PyResult<Vec<(String, String)>> {
        match parse_scenario(source.as_bytes()) {
            Ok(spec) => Ok(validate(&spec).into_iter().map(|v| (v.path, v.message)).collect()),
            Err(ScenarioError::Parse { line, column, message }) => Ok(vec![(format!("line {line}, column {column}"), message)]),
            Err(ScenarioError::Validation(vs)) => Ok(vs.into_iter().map(|v| (v.path, v.message)).collect()),
        }
    }

    #[getter]
    fn name(&self) -> &str {
        &self.spec.name
    }

    #[getter]
    fn actions(&self) -> Vec<String> {
        self.spec.action_names()
    }

    /// Norm ids mapped to whether they are enabled.
    #[getter]
    fn norms(&self) -> BTreeMap<String, bool> {
        self.spec.norms.iter().map(|n| (n.id.clone(), n.enabled)).collect()
    }

    /// A copy with norms switched on or off.
    fn with_norms(&self, overrides: BTreeMap<String, bool>) -> PyResult<Self> {
        Ok(PyScenario { spec: self.spec.with_norm_overrides(&overrides).map_err(value_error)? })
    }

    fn to_toml(&self) -> String {
        to_toml(&self.spec)
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.spec)
    }

    /// Draws the scenario's population, optionally resized.
    #[pyo3(signature = (seed, n = None))]
    fn sample<'py>(&self, py: Python<'py>, seed: u64, n: Option<usize>) -> PyResult<Bound<'py, PyAny>> {
        let mut pop = self.spec.population.clone();
        if let Some(n) = n {
            pop.n = n;
        }
        to_py(py, &capsim::sample_population(&pop, seed))
    }

    /// Compiled MDP of one personal state, as a dictionary.
    #[pyo3(signature = (health, housing = "roofless", registration = "registered"))]
    fn compile<'py>(&self, py: Python<'py>, health: i64, housing: &str, registration: &str) -> PyResult<Bound<'py, PyAny>> {
        let mut agent = capsim::sample_population(&self.spec.population, 0).remove(0);
        agent.state = PersonalState::new(
            HealthLevel::new(health).map_err(value_error)?,
            housing.parse::<Housing>().map_err(value_error)?,
            registration.parse::<Registration>().map_err(value_error)?,
        );
        let compiled = capsim::compile(&agent, &self.spec).map_err(runtime_error)?;
        to_py(py, &compiled.dump())
    }

    /// Runs the simulation. `aggregation` is one of `lexicographic`,
    /// `weighted`, `need_constrained`.
    #[pyo3(signature = (seed, horizon = None, aggregation = None, epsilon = None, weight = None))]
    fn run(
        &self,
        py: Python<'_>,
        seed: u64,
        horizon: Option<u32>,
        aggregation: Option<&str>,
        epsilon: Option<f64>,
        weight: Option<f64>,
    ) -> PyResult<PyRun> {
        let mode = aggregation.map(|name| AggregationMode::from_parts(name, epsilon, weight)).transpose().map_err(value_error)?;
        if let Some(m) = mode {
            m.check().map_err(value_error)?;
        }
        let opts = RunOptions { horizon, aggregation: mode, ..Default::default() };
        let spec = self.spec.clone();
        let (report, metrics) = py
            .detach(move || {
                let report = run_with(&spec, seed, &opts)?;
                let metrics = compute_metrics(&report, &spec);
                Ok::<_, capsim::MdpError>((report, metrics))
            })
            .map_err(runtime_error)?;
        Ok(PyRun { report, metrics: PyMetrics { inner: metrics } })
    }

    fn __repr__(&self) -> String {
        format!("Scenario(name={:?}, actions={}, norms={})", self.spec.name, self.spec.actions.len(), self.spec.norms.len())
    }
}

#[pyclass(name = "Run", module = "capsim_py", frozen, skip_from_py_object)]
struct PyRun {
    report: RunReport,
    metrics: PyMetrics,
}

#[pymethods]
impl PyRun {
    #[getter]
    fn seed(&self) -> u64 {
        self.report.seed
    }

    #[getter]
    fn n_events(&self) -> usize {
        self.report.events.len()
    }

    #[getter]
    fn metrics(&self) -> PyMetrics {
        self.metrics.clone()
    }

    /// Trajectory events as dictionaries.
    fn events<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.report.events)
    }

    fn final_agents<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.report.final_agents)
    }

    fn initial_agents<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.report.initial_agents)
    }

    /// The run report document, byte-identical to the CLI's `run_report.json`.
    fn report_json(&self) -> String {
        report::to_json(&self.report)
    }

    fn __repr__(&self) -> String {
        format!("Run(scenario={:?}, seed={}, events={})", self.report.scenario, self.report.seed, self.report.events.len())
    }
}

#[pyclass(name = "Metrics", module = "capsim_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyMetrics {
    inner: EquityMetrics,
}

#[pymethods]
impl PyMetrics {
    /// Loads a metrics document written by the CLI.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyMetrics { inner: serde_json::from_str(text).map_err(value_error)? })
    }

    /// `None` when no action enables the capability.
    fn deprivation_ratio(&self, capability_name: &str) -> PyResult<Option<f64>> {
        Ok(self.inner.capabilities[&capability(capability_name)?].deprivation_ratio)
    }

    fn functioning_rate(&self, capability_name: &str) -> PyResult<Option<f64>> {
        Ok(self.inner.capabilities[&capability(capability_name)?].functioning_rate)
    }

    #[getter]
    fn expenses(&self) -> BTreeMap<String, f64> {
        self.inner.expenses.iter().map(|(p, x)| (p.to_string(), *x)).collect()
    }

    /// Signed differences `other − self`.
    fn compare<'py>(&self, py: Python<'py>, other: &PyMetrics) -> PyResult<Bound<'py, PyAny>> {
        let delta = compare_metrics(&self.inner, &other.inner).map_err(value_error)?;
        to_py(py, &delta)
    }

    fn to_json(&self) -> String {
        report::to_json(&self.inner)
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner)
    }
}

/// Capability, value and need vocabularies.
#[pyfunction]
fn vocabulary(py: Python<'_>) -> PyResult<Bound<'_, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("capabilities", CentralCapability::ALL.iter().map(|c| c.to_string()).collect::<Vec<_>>())?;
    d.set_item("values", capsim::ValueDimension::ALL.iter().map(|v| v.to_string()).collect::<Vec<_>>())?;
    d.set_item("needs", capsim::Need::baseline().iter().map(|n| n.to_string()).collect::<Vec<_>>())?;
    d.set_item("housing", Housing::ALL.iter().map(|h| h.to_string()).collect::<Vec<_>>())?;
    d.set_item("registration", Registration::ALL.iter().map(|r| r.to_string()).collect::<Vec<_>>())?;
    Ok(d)
}

#[pymodule]
fn capsim_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenario>()?;
    m.add_class::<PyRun>()?;
    m.add_class::<PyMetrics>()?;
    m.add_function(wrap_pyfunction!(vocabulary, m)?)?;
    m.add("BUNDLED", vec![bundled::HEALTH_INEQUITY])?;
    Ok(())
}
