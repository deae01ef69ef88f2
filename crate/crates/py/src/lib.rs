//! Python bindings. Structured results come back as plain dicts and lists.

use std::fs::File;
use std::io::{BufReader, BufWriter};

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use serde::Serialize;

use dynacal_core::groups::Context;
use dynacal_core::harness::{self, SweepSpec};
use dynacal_core::metrics;
use dynacal_core::solver::ForecastEntry;
use dynacal_core::{anh, env, groups, BinCoefficients, Forecast, NodeId, RoundCoefficients, RunConfig};

fn err(e: dynacal_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn parse<T: serde::de::DeserializeOwned>(json: &str) -> PyResult<T> {
    serde_json::from_str(json).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Dyadic partition of `[0, 1]` that splits leaves once they have been played enough.
#[pyclass(name = "BinTree", module = "dynacal")]
struct PyBinTree {
    inner: dynacal_core::DynamicBinTree,
}

#[pymethods]
impl PyBinTree {
    #[new]
    #[pyo3(signature = (horizon, group_count = 1))]
    fn new(horizon: u64, group_count: usize) -> PyResult<Self> {
        Ok(PyBinTree { inner: dynacal_core::DynamicBinTree::new(horizon, group_count).map_err(err)? })
    }

    #[getter]
    fn log_term(&self) -> f64 {
        self.inner.log_term()
    }

    #[getter]
    fn max_depth(&self) -> u32 {
        self.inner.max_depth()
    }

    fn threshold(&self, depth: u32) -> PyResult<f64> {
        if depth > self.inner.max_depth() {
            return Err(PyValueError::new_err(format!("depth {depth} exceeds {}", self.inner.max_depth())));
        }
        Ok(self.inner.threshold(depth))
    }

    /// Active leaves as `(left, right, play)` in left-to-right order.
    fn partition(&self) -> Vec<(f64, f64, f64)> {
        self.inner
            .active_leaves()
            .iter()
            .map(|&id| {
                let n = self.inner.node(id);
                (n.interval.left, n.interval.right, n.total_play)
            })
            .collect()
    }

    /// Adds one round of play, one probability per active leaf.
    fn accumulate(&mut self, probs: Vec<f64>) -> PyResult<()> {
        let leaves = self.inner.active_leaves();
        if probs.len() != leaves.len() {
            return Err(PyValueError::new_err(format!("expected {} probabilities, got {}", leaves.len(), probs.len())));
        }
        let support = leaves
            .iter()
            .zip(&probs)
            .filter(|(_, &p)| p > 0.0)
            .map(|(&node, &prob)| {
                let iv = self.inner.node(node).interval;
                ForecastEntry { node, midpoint: iv.midpoint, width: iv.width, prob }
            })
            .collect();
        self.inner.accumulate_play(&Forecast { support, sampled: None }).map_err(err)
    }

    /// Runs the end-of-round split pass; returns how many leaves split.
    fn split(&mut self, t: u64) -> usize {
        self.inner.split_pass(t).len()
    }

    fn is_partition(&self) -> bool {
        self.inner.is_partition()
    }
}

/// A recorded run.
#[pyclass(name = "Transcript", module = "dynacal")]
struct PyTranscript {
    inner: dynacal_core::Transcript,
}

#[pymethods]
impl PyTranscript {
    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        let file = File::open(path).map_err(|e| err(e.into()))?;
        Ok(PyTranscript { inner: dynacal_core::Transcript::read_jsonl(BufReader::new(file)).map_err(err)? })
    }

    fn write(&self, path: &str) -> PyResult<()> {
        let file = File::create(path).map_err(|e| err(e.into()))?;
        self.inner.write_jsonl(BufWriter::new(file)).map_err(err)
    }

    #[getter]
    fn horizon(&self) -> u64 {
        self.inner.header.horizon
    }

    #[getter]
    fn ever_active(&self) -> usize {
        self.inner.ever_active()
    }

    #[getter]
    fn max_depth_reached(&self) -> u32 {
        self.inner.max_depth_reached()
    }

    /// Realized prediction values `p_t`; empty for summary transcripts.
    fn predictions(&self) -> Vec<f64> {
        self.inner.rounds.iter().map(|r| r.prediction_value()).collect()
    }

    fn outcomes(&self) -> Vec<f64> {
        self.inner.rounds.iter().map(|r| r.outcome).collect()
    }

    fn calibration<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &metrics::calibration(&self.inner))
    }

    fn summary<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &metrics::summarize(&self.inner))
    }

    #[pyo3(signature = (tol = 1e-9))]
    fn invariants<'py>(&self, py: Python<'py>, tol: f64) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &metrics::check_invariants(&self.inner, tol))
    }

    fn bias_audit<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &metrics::bias_audit(&self.inner).map_err(err)?)
    }

    fn xi(&self, start: u64, end: u64, depth: u32) -> PyResult<f64> {
        let block = metrics::Block::new(start, end).map_err(err)?;
        metrics::xi(&self.inner, block, depth).map_err(err)
    }
}

/// Runs the learner from a JSON run config.
#[pyfunction]
fn run(config: &str) -> PyResult<PyTranscript> {
    let config: RunConfig = parse(config)?;
    Ok(PyTranscript { inner: dynacal_core::run(&config).map_err(err)? })
}

/// Runs a sweep from a JSON sweep spec and returns the report.
#[pyfunction]
fn sweep<'py>(py: Python<'py>, spec: &str) -> PyResult<Bound<'py, PyAny>> {
    let spec: SweepSpec = parse(spec)?;
    let report = py.detach(|| harness::run_sweep(&spec, None)).map_err(err)?;
    to_py(py, &report)
}

#[pyfunction]
fn potential(regret: f64, abs_regret: f64) -> f64 {
    anh::potential(regret, abs_regret)
}

#[pyfunction]
fn raw_weight(regret: f64, abs_regret: f64) -> f64 {
    anh::raw_weight(regret, abs_regret)
}

/// Minimax forecast over bins given as `(midpoint, width, a, b)`; returns one probability per bin.
#[pyfunction]
#[pyo3(signature = (bins, tol = 1e-9))]
fn solve_forecast(bins: Vec<(f64, f64, f64, f64)>, tol: f64) -> PyResult<Vec<f64>> {
    let coeffs = RoundCoefficients {
        bins: bins
            .iter()
            .enumerate()
            .map(|(i, &(midpoint, width, a, b))| BinCoefficients { node: NodeId(i), midpoint, width, a, b })
            .collect(),
    };
    let forecast = dynacal_core::solve_forecast(&coeffs, tol).map_err(err)?;
    Ok((0..bins.len()).map(|i| forecast.prob(NodeId(i))).collect())
}

/// Indicator values of every group of the augmented family at one context.
#[pyfunction]
#[pyo3(signature = (family, context_id = 0, grid_value = None, level = None))]
fn group_indicators(family: &str, context_id: u64, grid_value: Option<f64>, level: Option<u32>) -> PyResult<Vec<f64>> {
    let family = groups::GroupFamily::parse(family).map_err(err)?;
    Ok(family.indicators(&Context { id: context_id, grid_value, level }))
}

#[pyfunction]
fn group_names(family: &str) -> PyResult<Vec<String>> {
    let family = groups::GroupFamily::parse(family).map_err(err)?;
    Ok(family.augmented().iter().map(|g| g.name.clone()).collect())
}

#[pyfunction]
fn walsh(ell: u64, i: u64) -> i8 {
    groups::walsh(ell, i)
}

#[pyfunction]
fn c_stat(means: Vec<f64>) -> f64 {
    env::c_stat(&means)
}

/// Log-log least squares over `(x, y)` pairs.
#[pyfunction]
fn fit_scaling<'py>(py: Python<'py>, points: Vec<(f64, f64)>) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &harness::fit_scaling(&points).map_err(err)?)
}

#[pymodule]
fn dynacal(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBinTree>()?;
    m.add_class::<PyTranscript>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(potential, m)?)?;
    m.add_function(wrap_pyfunction!(raw_weight, m)?)?;
    m.add_function(wrap_pyfunction!(solve_forecast, m)?)?;
    m.add_function(wrap_pyfunction!(group_indicators, m)?)?;
    m.add_function(wrap_pyfunction!(group_names, m)?)?;
    m.add_function(wrap_pyfunction!(walsh, m)?)?;
    m.add_function(wrap_pyfunction!(c_stat, m)?)?;
    m.add_function(wrap_pyfunction!(fit_scaling, m)?)?;
    Ok(())
}
