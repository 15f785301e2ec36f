//! Python access to the tidesim simulator, attribution study and explanation reports.
//!
//! Configurations cross the boundary as `key = value` text. Results come
//! back as plain dicts and lists, so no Rust types leak into Python.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use tidesim::attribution::{classify_trend, recover_injected_drift, run_study, ConvergenceStudy};
use tidesim::explain::{derive, render_report, satellite_pattern, satellite_pattern_source, ReportFormat};
use tidesim::model::validate_config;
use tidesim::{run_with, FaultInjection, RunOptions, SimulationConfig, Trajectory};

fn parse_config(text: &str) -> PyResult<SimulationConfig> {
    let config = SimulationConfig::parse(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
    if let Err(violations) = validate_config(&config) {
        let lines: Vec<String> = violations.iter().map(ToString::to_string).collect();
        return Err(PyValueError::new_err(lines.join("; ")));
    }
    Ok(config)
}

fn fault_of(magnitude: Option<f64>) -> Option<FaultInjection> {
    magnitude.map(|magnitude| FaultInjection { magnitude })
}

fn simulate_config(config: &SimulationConfig, fault: Option<f64>) -> PyResult<Trajectory> {
    let options = RunOptions { fault: fault_of(fault) };
    run_with(config, &options).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

fn study_config(config: &SimulationConfig, divisors: &[f64], fault: Option<f64>) -> PyResult<ConvergenceStudy> {
    run_study(config, divisors, fault_of(fault)).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Hands a serde value to Python's `json` module, turning it into dicts and lists.
fn to_python<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Lists every rule the configuration breaks; empty when it is valid.
#[pyfunction]
fn validate(text: &str) -> PyResult<Vec<String>> {
    let config = SimulationConfig::parse(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(match validate_config(&config) {
        Ok(()) => Vec::new(),
        Err(violations) => violations.iter().map(ToString::to_string).collect(),
    })
}

/// The configuration with every default filled in, as config text.
#[pyfunction]
fn default_config() -> String {
    SimulationConfig::reference().to_config_text()
}

/// Runs one simulation and returns the sampled orbital diagnostics.
#[pyfunction]
#[pyo3(signature = (config, fault=None))]
fn simulate<'py>(py: Python<'py>, config: &str, fault: Option<f64>) -> PyResult<Bound<'py, PyDict>> {
    let config = parse_config(config)?;
    let trajectory = simulate_config(&config, fault)?;
    let d = &trajectory.diagnostics;
    let out = PyDict::new(py);
    out.set_item("time", d.iter().map(|x| x.time).collect::<Vec<_>>())?;
    out.set_item("distance", d.iter().map(|x| x.elements.distance).collect::<Vec<_>>())?;
    out.set_item("eccentricity", d.iter().map(|x| x.eccentricity()).collect::<Vec<_>>())?;
    out.set_item(
        "semi_major_axis",
        d.iter()
            .map(|x| x.elements.semi_major_axis.unwrap_or(f64::NAN))
            .collect::<Vec<_>>(),
    )?;
    out.set_item("energy", d.iter().map(|x| x.total_mechanical_energy).collect::<Vec<_>>())?;
    out.set_item("accepted_steps", trajectory.accepted_steps())?;
    out.set_item("rejected_steps", trajectory.rejected_steps())?;
    out.set_item("injected_eccentricity_change", trajectory.injected_eccentricity_change)?;
    Ok(out)
}

/// Runs the tolerance study and classifies the eccentricity drift.
///
/// With a fault magnitude the study is repeated without the fault, and the
/// result carries the recovered injected drift per level.
#[pyfunction]
#[pyo3(signature = (config, divisors=vec![1.0, 10.0, 100.0], fault=None))]
fn study<'py>(py: Python<'py>, config: &str, divisors: Vec<f64>, fault: Option<f64>) -> PyResult<Bound<'py, PyDict>> {
    let config = parse_config(config)?;
    let study = study_config(&config, &divisors, fault)?;
    let out = PyDict::new(py);
    out.set_item("classification", to_python(py, &classify_trend(&study))?)?;
    let levels = PyDict::new(py);
    for (level, run) in study.successful() {
        let entry = PyDict::new(py);
        entry.set_item("drift_per_orbit", run.drift.per_orbit)?;
        entry.set_item("std_error", run.drift.std_error)?;
        entry.set_item("accepted_steps", run.accepted_steps)?;
        entry.set_item("rejected_steps", run.rejected_steps)?;
        levels.set_item(level.tolerance, entry)?;
    }
    out.set_item("levels", levels)?;
    if fault.is_some() {
        let clean = study_config(&config, &divisors, None)?;
        out.set_item("injection_recovery", to_python(py, &recover_injected_drift(&study, &clean))?)?;
    }
    Ok(out)
}

/// Builds the explanation report for a configuration and renders it.
#[pyfunction]
#[pyo3(signature = (config, divisors=vec![1.0, 10.0, 100.0], fault=None, structured=false))]
fn explain(config: &str, divisors: Vec<f64>, fault: Option<f64>, structured: bool) -> PyResult<String> {
    let config = parse_config(config)?;
    let trajectory = simulate_config(&config, fault)?;
    let study = study_config(&config, &divisors, fault)?;
    let report = derive(&satellite_pattern(fault.is_some()), &trajectory, &study)
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let format = if structured { ReportFormat::Structured } else { ReportFormat::PlainText };
    Ok(render_report(&report, format))
}

/// TOML source of the shipped satellite argument pattern.
#[pyfunction]
fn pattern_source() -> &'static str {
    satellite_pattern_source()
}

#[pymodule]
fn tidesim_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(study, m)?)?;
    m.add_function(wrap_pyfunction!(explain, m)?)?;
    m.add_function(wrap_pyfunction!(pattern_source, m)?)?;
    Ok(())
}
