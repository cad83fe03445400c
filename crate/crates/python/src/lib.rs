//! Python bindings. Matrices cross the boundary as lists of rows (any
//! sequence of float sequences is accepted, including 2-D numpy arrays).

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use mclab::datagen::{generate as generate_truth, DataGenSpec, Family};
use mclab::eval::{AggregateRecord, TrialRecord};
use mclab::runner::{merged_solver_config, ExperimentConfig, TrialOptions};
use mclab::sampling::{build_mask, SamplingSpec, Scheme};
use mclab::solvers::SolverKind;
use mclab::{DenseMatrix, Error, ObservationSet};

fn py_err(e: Error) -> PyErr {
    if e.is_input_error() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn to_matrix(rows: Vec<Vec<f64>>) -> PyResult<DenseMatrix> {
    let m = rows.len();
    let n = rows.first().map_or(0, Vec::len);
    if m == 0 || n == 0 {
        return Err(PyValueError::new_err("matrix must be non-empty"));
    }
    if rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("matrix rows differ in length"));
    }
    Ok(DenseMatrix::from_fn(m, n, |i, j| rows[i][j]))
}

fn from_matrix(x: &DenseMatrix) -> Vec<Vec<f64>> {
    x.row_iter()
        .map(|row| row.iter().copied().collect())
        .collect()
}

fn parse_family(name: &str) -> PyResult<Family> {
    serde_json::from_value(serde_json::Value::String(name.to_string())).map_err(|_| {
        PyValueError::new_err(format!(
            "unknown family '{name}' (expected gaussian-factors or uniform-rescaled)"
        ))
    })
}

/// Solver parameters as a JSON string or a dict; `None` keeps the defaults.
fn parse_params(params: Option<&Bound<'_, PyAny>>) -> PyResult<Option<serde_json::Value>> {
    let Some(params) = params else {
        return Ok(None);
    };
    let text: String = match params.extract::<String>() {
        Ok(s) => s,
        Err(_) => params
            .py()
            .import("json")?
            .call_method1("dumps", (params,))?
            .extract()?,
    };
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| PyValueError::new_err(format!("solver parameters: {e}")))
}

/// Observed entries of a matrix: sorted `(i, j)` indices and their values.
#[pyclass(name = "Observations", module = "mclab", frozen)]
struct PyObservations {
    inner: ObservationSet,
}

#[pymethods]
impl PyObservations {
    #[new]
    fn new(shape: (usize, usize), entries: Vec<(usize, usize, f64)>) -> PyResult<Self> {
        let inner = ObservationSet::from_entries(shape, entries).map_err(py_err)?;
        Ok(Self { inner })
    }

    /// Every entry of `matrix`.
    #[staticmethod]
    fn full(matrix: Vec<Vec<f64>>) -> PyResult<Self> {
        let x = to_matrix(matrix)?;
        let inner = ObservationSet::full(&x).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        self.inner.shape()
    }

    #[getter]
    fn indices(&self) -> Vec<(usize, usize)> {
        self.inner.indices().to_vec()
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.inner.values().to_vec()
    }

    #[getter]
    fn fraction(&self) -> f64 {
        self.inner.fraction()
    }

    fn contains(&self, i: usize, j: usize) -> bool {
        self.inner.contains(i, j)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        let (m, n) = self.inner.shape();
        format!(
            "Observations(shape=({m}, {n}), observed={})",
            self.inner.len()
        )
    }
}

/// Result of a single `solve` call.
#[pyclass(name = "SolveResult", module = "mclab", frozen, get_all)]
struct PySolveResult {
    estimate: Vec<Vec<f64>>,
    outer_iterations: usize,
    final_relative_residual: f64,
    converged: bool,
    runtime_ms: f64,
}

#[pymethods]
impl PySolveResult {
    fn __repr__(&self) -> String {
        format!(
            "SolveResult(outer_iterations={}, converged={}, final_relative_residual={:e})",
            self.outer_iterations,
            if self.converged { "True" } else { "False" },
            self.final_relative_residual
        )
    }
}

/// Draws a ground-truth matrix.
#[pyfunction]
#[pyo3(signature = (m, n, r, family = "gaussian-factors", seed = 0))]
fn generate(m: usize, n: usize, r: usize, family: &str, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    let family = parse_family(family)?;
    let truth = generate_truth(&DataGenSpec {
        m,
        n,
        r,
        family,
        seed,
    })
    .map_err(py_err)?;
    Ok(from_matrix(&truth.matrix))
}

/// Builds an observation set of `matrix` under one of the sampling schemes.
#[pyfunction]
#[pyo3(signature = (matrix, scheme, seed = 0, target_fraction = 0.5))]
fn sample(
    matrix: Vec<Vec<f64>>,
    scheme: &str,
    seed: u64,
    target_fraction: f64,
) -> PyResult<PyObservations> {
    let x = to_matrix(matrix)?;
    let scheme: Scheme = scheme.parse().map_err(py_err)?;
    let spec = SamplingSpec {
        target_fraction,
        ..SamplingSpec::new(scheme, seed)
    };
    let inner = build_mask(&x, &spec).map_err(py_err)?;
    Ok(PyObservations { inner })
}

/// Completes `observations` with the named solver at the given rank.
#[pyfunction]
#[pyo3(signature = (observations, solver, rank, params = None))]
fn solve(
    py: Python<'_>,
    observations: &PyObservations,
    solver: &str,
    rank: usize,
    params: Option<&Bound<'_, PyAny>>,
) -> PyResult<PySolveResult> {
    let kind: SolverKind = solver.parse().map_err(py_err)?;
    let cfg = merged_solver_config(kind, parse_params(params)?.as_ref()).map_err(py_err)?;
    let omega = &observations.inner;
    let report = py
        .detach(|| mclab::solvers::solve(&cfg, omega, rank))
        .map_err(py_err)?;
    Ok(PySolveResult {
        estimate: from_matrix(&report.estimate),
        outer_iterations: report.outer_iterations,
        final_relative_residual: report.final_relative_residual,
        converged: report.converged,
        runtime_ms: report.runtime_ms,
    })
}

/// `||estimate - truth||_F / ||truth||_F`.
#[pyfunction]
fn nrmse(estimate: Vec<Vec<f64>>, truth: Vec<Vec<f64>>) -> PyResult<f64> {
    mclab::eval::nrmse(&to_matrix(estimate)?, &to_matrix(truth)?).map_err(py_err)
}

/// Singular value soft-thresholding.
#[pyfunction]
fn svt(matrix: Vec<Vec<f64>>, theta: f64) -> PyResult<Vec<Vec<f64>>> {
    Ok(from_matrix(&mclab::solvers::svt(
        &to_matrix(matrix)?,
        theta,
    )))
}

fn record_dict<'py>(py: Python<'py>, r: &TrialRecord) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("scheme", r.scheme.name())?;
    d.set_item("solver", r.solver.name())?;
    d.set_item("m", r.m)?;
    d.set_item("n", r.n)?;
    d.set_item("r", r.r)?;
    d.set_item("trial", r.trial)?;
    d.set_item("seed", r.seed)?;
    d.set_item("observed_fraction", r.observed_fraction)?;
    d.set_item("nrmse", r.nrmse)?;
    d.set_item("log_nrmse", r.log_nrmse)?;
    d.set_item("success", r.success)?;
    d.set_item("outer_iterations", r.outer_iterations)?;
    d.set_item("runtime_ms", r.runtime_ms)?;
    d.set_item("error", r.error.as_deref())?;
    Ok(d)
}

fn aggregate_dict<'py>(py: Python<'py>, a: &AggregateRecord) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("scheme", a.key.scheme.name())?;
    d.set_item("solver", a.key.solver.name())?;
    d.set_item("m", a.key.m)?;
    d.set_item("n", a.key.n)?;
    d.set_item("r", a.key.r)?;
    d.set_item("trial_count", a.trial_count)?;
    d.set_item("median_log_nrmse", a.median_log_nrmse)?;
    d.set_item("mean_log_nrmse", a.mean_log_nrmse)?;
    d.set_item("success_rate", a.success_rate)?;
    Ok(d)
}

/// Runs one seeded trial and returns its record as a dict.
#[pyfunction]
#[pyo3(signature = (scheme, solver, m, n, r, seed, trial = 0, params = None))]
#[allow(clippy::too_many_arguments)]
fn run_trial<'py>(
    py: Python<'py>,
    scheme: &str,
    solver: &str,
    m: usize,
    n: usize,
    r: usize,
    seed: u64,
    trial: usize,
    params: Option<&Bound<'py, PyAny>>,
) -> PyResult<Bound<'py, PyDict>> {
    let scheme: Scheme = scheme.parse().map_err(py_err)?;
    let kind: SolverKind = solver.parse().map_err(py_err)?;
    let cfg = merged_solver_config(kind, parse_params(params)?.as_ref()).map_err(py_err)?;
    let opts = TrialOptions::default();
    let rec = py.detach(|| mclab::runner::run_trial(scheme, &cfg, m, n, r, trial, seed, &opts));
    record_dict(py, &rec)
}

type Rows<'py> = Vec<Bound<'py, PyDict>>;

/// Runs a sweep from a JSON config. With `out`, also writes `trials.csv`
/// and `aggregates.csv` there. Returns `(trials, aggregates)` as lists of
/// dicts.
#[pyfunction]
#[pyo3(signature = (config, out = None, workers = 0))]
fn run_sweep<'py>(
    py: Python<'py>,
    config: &str,
    out: Option<PathBuf>,
    workers: usize,
) -> PyResult<(Rows<'py>, Rows<'py>)> {
    let cfg = ExperimentConfig::from_json(config).map_err(py_err)?;
    let result = py
        .detach(|| match &out {
            Some(dir) => mclab::runner::run_sweep_to_dir(&cfg, dir, workers),
            None => mclab::runner::run_sweep(&cfg, workers),
        })
        .map_err(py_err)?;
    let trials = result
        .records
        .iter()
        .map(|r| record_dict(py, r))
        .collect::<PyResult<_>>()?;
    let aggregates = result
        .aggregates
        .iter()
        .map(|a| aggregate_dict(py, a))
        .collect::<PyResult<_>>()?;
    Ok((trials, aggregates))
}

/// Default parameters of a solver, as a JSON string.
#[pyfunction]
fn default_params(solver: &str) -> PyResult<String> {
    let kind: SolverKind = solver.parse().map_err(py_err)?;
    let doc = serde_json::to_value(kind.default_config())
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(doc["params"].to_string())
}

#[pymodule(name = "mclab")]
fn mclab_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyObservations>()?;
    m.add_class::<PySolveResult>()?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(sample, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(nrmse, m)?)?;
    m.add_function(wrap_pyfunction!(svt, m)?)?;
    m.add_function(wrap_pyfunction!(run_trial, m)?)?;
    m.add_function(wrap_pyfunction!(run_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(default_params, m)?)?;
    m.add("SCHEMES", Scheme::ALL.map(Scheme::name).to_vec())?;
    m.add("SOLVERS", SolverKind::ALL.map(SolverKind::name).to_vec())?;
    Ok(())
}
