use std::path::Path;

use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde_json::Value;

use spdelab::cli::{self, Command, RunConfig};
use spdelab::covariance::{self, CovarianceKernel, KernelConfig};
use spdelab::gaussian::{self, QSpec};
use spdelab::malliavin::{self, ProcessConfig};
use spdelab::solver::{self, Estimator, ProblemConfig, SPDEProblem, SolutionEnsemble};
use spdelab::spectral::{self, Field, GridSpec};
use spdelab::symbols::{self, CheckOptions, SymbolConfig, SymbolSpec};
use spdelab::verify;

fn err(e: spdelab::Error) -> PyErr {
    use spdelab::Error::*;
    match e {
        NumericalPrecision(_) | Io(_) => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn cli_err(e: cli::CliError) -> PyErr {
    match e {
        cli::CliError::Schema(m) => PyValueError::new_err(m),
        cli::CliError::Numerical(m) => PyRuntimeError::new_err(m),
    }
}

fn parse<T: serde::de::DeserializeOwned>(text: &str) -> PyResult<T> {
    serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Hand a serialisable value to Python through `json.loads`.
fn to_py<T: serde::Serialize>(py: Python<'_>, v: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

/// Periodic grid `[0, L)^d` with `n` points per axis.
#[pyclass(name = "Grid", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyGrid {
    inner: GridSpec,
}

#[pymethods]
impl PyGrid {
    #[new]
    #[pyo3(signature = (d, n, length))]
    fn new(d: usize, n: usize, length: f64) -> PyResult<Self> {
        Ok(PyGrid { inner: GridSpec::new(d, n, length).map_err(err)? })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn frequency(&self, idx: usize) -> Vec<f64> {
        self.inner.frequency(idx)
    }

    fn point(&self, idx: usize) -> Vec<f64> {
        self.inner.point(idx)
    }

    fn mode_index(&self, k: Vec<i64>) -> usize {
        self.inner.mode_index(&k)
    }

    fn __repr__(&self) -> String {
        format!("Grid(d={}, n={}, length={})", self.inner.d, self.inner.n, self.inner.l)
    }
}

/// Temporal covariance kernel, e.g. `Kernel("fbm", H=0.75)`.
#[pyclass(name = "Kernel", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyKernel {
    inner: CovarianceKernel,
}

#[pymethods]
impl PyKernel {
    #[new]
    #[pyo3(signature = (kernel, H=None, delta=None, T=None, r_exp=None))]
    #[allow(non_snake_case)]
    fn new(kernel: &str, H: Option<f64>, delta: Option<f64>, T: Option<f64>, r_exp: Option<f64>) -> PyResult<Self> {
        let cfg = KernelConfig { kernel: kernel.into(), h: H, delta, t_max: T, r_exp };
        Ok(PyKernel { inner: cfg.build().map_err(err)? })
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.to_string()
    }

    #[getter]
    fn r_exp(&self) -> f64 {
        self.inner.r_exp
    }

    #[getter]
    fn s_exp(&self) -> f64 {
        self.inner.s_exp
    }

    #[getter]
    fn t_max(&self) -> f64 {
        self.inner.t_max
    }

    fn r(&self, t: f64, s: f64) -> f64 {
        self.inner.r(t, s)
    }

    fn rectangle_increment(&self, a: f64, b: f64, c: f64, d: f64) -> PyResult<f64> {
        self.inner.rectangle_increment((a, b), (c, d)).map_err(err)
    }

    /// Row-major Gram matrix `[R(t_i, t_k)]`.
    fn gram(&self, times: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.gram_matrix(&times).map_err(err)
    }

    /// Draws of `β_j(t_i)`, indexed `[sample][j][i]`.
    fn sample_paths(&self, times: Vec<f64>, lambdas: Vec<f64>, n_samples: usize, seed: u64) -> PyResult<Vec<Vec<Vec<f64>>>> {
        let q = QSpec::new(lambdas).map_err(err)?;
        let p = gaussian::sample_paths(&self.inner, &times, &q, n_samples, seed).map_err(err)?;
        Ok((0..p.n_samples).map(|s| (0..p.j).map(|j| p.path(s, j).to_vec()).collect()).collect())
    }

    fn __repr__(&self) -> String {
        format!("Kernel({}, r={}, s={})", self.inner.name, self.inner.r_exp, self.inner.s_exp)
    }
}

/// Symbol or Fourier multiplier built from a JSON description such as
/// `{"name": "neg_power", "gamma": 2}`.
#[pyclass(name = "Symbol", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySymbol {
    inner: SymbolSpec,
}

#[pymethods]
impl PySymbol {
    #[new]
    fn new(config: &str, dim: usize) -> PyResult<Self> {
        let c: SymbolConfig = parse(config)?;
        Ok(PySymbol { inner: c.to_spec(dim).map_err(err)? })
    }

    #[staticmethod]
    fn power(gamma: f64, dim: usize) -> Self {
        PySymbol { inner: SymbolSpec::power(gamma, dim) }
    }

    #[staticmethod]
    #[pyo3(signature = (gamma, dim, c=1.0))]
    fn neg_power(gamma: f64, dim: usize, c: f64) -> Self {
        PySymbol { inner: SymbolSpec::neg_power(gamma, c, dim) }
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim
    }

    #[getter]
    fn time_dependent(&self) -> bool {
        self.inner.time_dependent
    }

    fn eval(&self, t: f64, xi: Vec<f64>) -> PyResult<Complex64> {
        if xi.len() != self.inner.dim {
            return Err(PyValueError::new_err(format!("xi must have {} entries", self.inner.dim)));
        }
        Ok(self.inner.eval(t, &xi))
    }

    /// Run one multiplier condition: `mihlin`, `marcinkiewicz`, `hormander`,
    /// `class_m` or `class_s`. Returns the report as a dict.
    #[pyo3(signature = (condition, budget=10_000, points=24, max_order=2, t_samples=None))]
    fn check(&self, py: Python<'_>, condition: &str, budget: usize, points: usize, max_order: usize, t_samples: Option<Vec<f64>>) -> PyResult<Py<PyAny>> {
        let opts = CheckOptions::default();
        let m = &self.inner;
        let r = match condition {
            "mihlin" => symbols::check_mihlin(m, None, &opts),
            "marcinkiewicz" => symbols::check_marcinkiewicz(m, budget, &opts),
            "hormander" => symbols::check_hormander(m, points, &opts),
            "class_m" => symbols::check_class_m(m, None, max_order, &opts),
            "class_s" => symbols::check_class_s(m, &t_samples.unwrap_or_else(|| vec![0.0, 0.5, 1.0, 1.5, 2.0]), None, &opts),
            other => return Err(PyValueError::new_err(format!("unknown condition '{other}'"))),
        }
        .map_err(err)?;
        to_py(py, &r)
    }

    /// `T_ψ(t, s) f` for a field given by its values on `grid`.
    fn evolve(&self, grid: &PyGrid, t: f64, s: f64, values: Vec<Complex64>) -> PyResult<Vec<Complex64>> {
        let f = Field::new(&grid.inner, 1, values).map_err(err)?;
        Ok(spectral::evolution_apply(&self.inner, t, s, &f).map_err(err)?.values)
    }

    fn __repr__(&self) -> String {
        format!("Symbol({:?}, gamma={}, dim={})", self.inner.kind, self.inner.gamma, self.inner.dim)
    }
}

/// Linear SPDE problem built from its JSON configuration.
#[pyclass(name = "Problem", frozen)]
struct PyProblem {
    inner: SPDEProblem,
}

#[pymethods]
impl PyProblem {
    #[new]
    fn new(config: &str) -> PyResult<Self> {
        let c: ProblemConfig = parse(config)?;
        Ok(PyProblem { inner: c.build().map_err(err)? })
    }

    fn times(&self) -> Vec<f64> {
        self.inner.times()
    }

    #[getter]
    fn grid(&self) -> PyGrid {
        PyGrid { inner: self.inner.grid.clone() }
    }

    /// Noise-free solution at every node.
    fn homogeneous(&self) -> PyResult<Vec<Vec<Complex64>>> {
        let h = solver::deterministic_homogeneous(&self.inner).map_err(err)?;
        let f = solver::deterministic_forced(&self.inner).map_err(err)?;
        h.iter().zip(&f).map(|(a, b)| Ok(a.add(b).map_err(err)?.values)).collect()
    }

    #[pyo3(signature = (n_samples, seed=0, estimator="modewise", refine=1))]
    fn solve(&self, n_samples: usize, seed: u64, estimator: &str, refine: usize) -> PyResult<PyEnsemble> {
        let est = match estimator {
            "modewise" => Estimator::Modewise,
            "pathwise" => Estimator::Pathwise,
            other => return Err(PyValueError::new_err(format!("unknown estimator '{other}'"))),
        };
        let ens = solver::solve(&self.inner, n_samples, seed, est, refine).map_err(err)?;
        Ok(PyEnsemble { problem: self.inner.clone(), inner: ens })
    }
}

/// Samples of the mild solution.
#[pyclass(name = "Ensemble", frozen)]
struct PyEnsemble {
    problem: SPDEProblem,
    inner: SolutionEnsemble,
}

#[pymethods]
impl PyEnsemble {
    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.times.clone()
    }

    #[getter]
    fn n_samples(&self) -> usize {
        self.inner.n_samples
    }

    /// Physical values of sample `s` at node `i`.
    fn field(&self, s: usize, i: usize) -> PyResult<Vec<Complex64>> {
        if s >= self.inner.n_samples || i >= self.inner.times.len() {
            return Err(PyValueError::new_err("sample or node out of range"));
        }
        Ok(self.inner.field(s, i).map_err(err)?.values)
    }

    /// Ensemble mean in physical space at node `i`.
    fn mean_field(&self, i: usize) -> PyResult<Vec<Complex64>> {
        if i >= self.inner.times.len() {
            return Err(PyValueError::new_err("node out of range"));
        }
        Ok(spectral::inverse_transform(&self.inner.mean_spectrum(i)).map_err(err)?.values)
    }

    /// Solution-space and data norms of the a-priori estimate.
    fn norms(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &verify::solution_norms(&self.problem, &self.inner).map_err(err)?)
    }
}

/// Summaries of the built-in covariance kernels.
#[pyfunction]
fn builtin_kernels(py: Python<'_>) -> PyResult<Py<PyAny>> {
    to_py(py, &covariance::builtin_summaries())
}

/// Skorohod isometry check for an elementary process given as JSON.
#[pyfunction]
#[pyo3(signature = (process, kernel, lambdas, n_samples=20_000, seed=0, name="process"))]
fn skorohod_check(py: Python<'_>, process: &str, kernel: &PyKernel, lambdas: Vec<f64>, n_samples: usize, seed: u64, name: &str) -> PyResult<Py<PyAny>> {
    let u = parse::<ProcessConfig>(process)?.build().map_err(err)?;
    let q = QSpec::new(lambdas).map_err(err)?;
    to_py(py, &malliavin::skorohod_moment_check(name, &u, &kernel.inner, &q, n_samples, seed).map_err(err)?)
}

/// Run a batch command exactly as the command-line tool would.
#[pyfunction]
#[pyo3(signature = (command, config="{}", seed=None, out="out"))]
fn run_command(py: Python<'_>, command: &str, config: &str, seed: Option<u64>, out: &str) -> PyResult<Py<PyAny>> {
    use clap::ValueEnum;
    let cmd = Command::from_str(command, false).map_err(PyValueError::new_err)?;
    let cfg: RunConfig = cli::parse_config(config).map_err(cli_err)?;
    let seed = seed.or(cfg.seed).unwrap_or(0);
    let s = py.detach(|| cli::run(cmd, &cfg, seed, Path::new(out))).map_err(cli_err)?;
    let artifacts: Vec<String> = s.artifacts.iter().map(|p| p.display().to_string()).collect();
    let v: Value = serde_json::json!({ "passed": s.passed, "config_hash": s.config_hash, "artifacts": artifacts });
    to_py(py, &v)
}

#[pymodule]
fn pyspdelab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGrid>()?;
    m.add_class::<PyKernel>()?;
    m.add_class::<PySymbol>()?;
    m.add_class::<PyProblem>()?;
    m.add_class::<PyEnsemble>()?;
    m.add_function(wrap_pyfunction!(builtin_kernels, m)?)?;
    m.add_function(wrap_pyfunction!(skorohod_check, m)?)?;
    m.add_function(wrap_pyfunction!(run_command, m)?)?;
    Ok(())
}
