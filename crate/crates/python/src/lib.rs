//! Python bindings for `entangle_ot`.
//!
//! Configs cross the boundary as JSON strings or plain dicts; structured results
//! come back as dicts and lists.

use entangle_ot::bounds::{check_all, BoundReport, DEFAULT_KL_BINS};
use entangle_ot::entangle::entanglement_report_out;
use entangle_ot::gaussian::{gaussian_w2_squared, verify_scaled_decomposition, GaussianPair, DEFAULT_MC_SAMPLES};
use entangle_ot::measures::{DiscreteMeasure, EmpiricalJoint, LossSpec, Predictor};
use entangle_ot::ot::{transport, wasserstein_ground, CostMatrix, OtMethod};
use entangle_ot::scenarios::{generate, ShiftConfig};
use entangle_ot::train::{self, ModelKind, TrainConfig};
use entangle_ot::Error;
use nalgebra::{DMatrix, DVector};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyString;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

create_exception!(entangle_ot_py, SolverError, PyException, "An optimal transport or numerical routine failed.");
create_exception!(entangle_ot_py, BoundViolation, PyException, "A certified inequality did not hold.");

fn to_py(err: Error) -> PyErr {
    match err {
        Error::Solver(_) | Error::NotSpd | Error::QuadratureNotConverged => SolverError::new_err(err.to_string()),
        Error::BoundViolated(_) | Error::SandwichViolated(_) | Error::ChainViolation { .. } => {
            BoundViolation::new_err(err.to_string())
        }
        _ => PyValueError::new_err(err.to_string()),
    }
}

/// JSON text from either a string or any object `json.dumps` accepts.
fn json_text(obj: &Bound<'_, PyAny>) -> PyResult<String> {
    if let Ok(s) = obj.cast::<PyString>() {
        return Ok(s.to_str()?.to_owned());
    }
    obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()
}

fn to_python<T: serde::Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| to_py(e.into()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn loss_from_name(name: &str) -> PyResult<LossSpec> {
    match name {
        "euclidean" => Ok(LossSpec::euclidean()),
        "squared_euclidean" => Ok(LossSpec::squared_euclidean()),
        "kronecker" => Ok(LossSpec::kronecker()),
        _ => Err(PyValueError::new_err(format!("unknown loss {name:?}"))),
    }
}

fn method_from(name: &str, epsilon: f64) -> PyResult<OtMethod> {
    match name {
        "exact" => Ok(OtMethod::Exact),
        "sinkhorn" => Ok(OtMethod::Sinkhorn { epsilon }),
        _ => Err(PyValueError::new_err(format!("unknown method {name:?}"))),
    }
}

/// Weighted labeled sample.
#[pyclass(name = "Joint", module = "entangle_ot_py", frozen)]
struct PyJoint {
    inner: EmpiricalJoint,
}

#[pymethods]
impl PyJoint {
    #[new]
    #[pyo3(signature = (inputs, labels, num_classes, weights=None))]
    fn new(inputs: Vec<Vec<f64>>, labels: Vec<usize>, num_classes: usize, weights: Option<Vec<f64>>) -> PyResult<Self> {
        let inner = match weights {
            Some(w) => EmpiricalJoint::new(inputs, labels, w, num_classes),
            None => EmpiricalJoint::uniform(inputs, labels, num_classes),
        }
        .map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn inputs(&self) -> Vec<Vec<f64>> {
        self.inner.inputs().to_vec()
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.inner.labels().to_vec()
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.inner.weights().to_vec()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    fn class_masses(&self) -> Vec<f64> {
        self.inner.class_masses()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Joint(n={}, dim={}, classes={})", self.inner.len(), self.inner.dim(), self.inner.num_classes())
    }
}

/// Source and target samples, plus the chain stages for gradual shifts.
#[pyclass(name = "Scenario", module = "entangle_ot_py", frozen)]
struct PyScenario {
    #[pyo3(get)]
    source: Py<PyJoint>,
    #[pyo3(get)]
    target: Py<PyJoint>,
    #[pyo3(get)]
    stages: Option<Vec<Py<PyJoint>>>,
}

/// Softmax classifier: linear or one hidden layer.
#[pyclass(name = "Model", module = "entangle_ot_py", frozen)]
struct PyModel {
    inner: train::Model,
}

#[pymethods]
impl PyModel {
    /// Randomly initialized model; `kind` is a dict or JSON such as
    /// `{"type": "mlp", "hidden": 16, "activation": "tanh"}`.
    #[staticmethod]
    #[pyo3(signature = (kind, input_dim, num_classes, seed=0))]
    fn init(kind: &Bound<'_, PyAny>, input_dim: usize, num_classes: usize, seed: u64) -> PyResult<Self> {
        let kind: ModelKind = serde_json::from_str(&json_text(kind)?).map_err(|e| to_py(e.into()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inner = train::Model::init(kind, input_dim, num_classes, &mut rng).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: train::Model::from_json(text).map_err(to_py)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| to_py(e.into()))
    }

    #[getter]
    fn params(&self) -> Vec<f64> {
        self.inner.params.clone()
    }

    /// Class probabilities for each row of `x`.
    fn predict(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        if x.iter().any(|r| r.len() != self.inner.input_dim) {
            return Err(PyValueError::new_err(format!("inputs must have {} columns", self.inner.input_dim)));
        }
        Ok(x.iter().map(|r| self.inner.predict(r)).collect())
    }

    fn predict_class(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<usize>> {
        if x.iter().any(|r| r.len() != self.inner.input_dim) {
            return Err(PyValueError::new_err(format!("inputs must have {} columns", self.inner.input_dim)));
        }
        Ok(x.iter().map(|r| self.inner.predict_class(r)).collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(kind={:?}, input_dim={}, num_classes={})",
            self.inner.kind, self.inner.input_dim, self.inner.num_classes
        )
    }
}

/// `W_alpha` between two weighted point clouds under a Euclidean ground cost.
#[pyfunction]
#[pyo3(signature = (x, a, y, b, alpha=1.0, ground="euclidean", method="exact", epsilon=0.05))]
#[allow(clippy::too_many_arguments)]
fn wasserstein(
    x: Vec<Vec<f64>>,
    a: Vec<f64>,
    y: Vec<Vec<f64>>,
    b: Vec<f64>,
    alpha: f64,
    ground: &str,
    method: &str,
    epsilon: f64,
) -> PyResult<f64> {
    let mu = DiscreteMeasure::new(x, a).map_err(to_py)?;
    let nu = DiscreteMeasure::new(y, b).map_err(to_py)?;
    let method = method_from(method, epsilon)?;
    let sq = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(p, q)| (p - q).powi(2)).sum::<f64>();
    match ground {
        "euclidean" => wasserstein_ground(&mu, &nu, |u: &[f64], v: &[f64]| sq(u, v).sqrt(), alpha, method),
        "squared_euclidean" => wasserstein_ground(&mu, &nu, sq, alpha, method),
        _ => return Err(PyValueError::new_err(format!("unknown ground cost {ground:?}"))),
    }
    .map_err(to_py)
}

/// Optimal plan for an explicit cost matrix; returns `(plan, objective)`.
#[pyfunction]
#[pyo3(signature = (a, b, cost, method="exact", epsilon=0.05))]
fn transport_plan(a: Vec<f64>, b: Vec<f64>, cost: Vec<Vec<f64>>, method: &str, epsilon: f64) -> PyResult<(Vec<Vec<f64>>, f64)> {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    if cost.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("cost rows must share one length"));
    }
    let c = CostMatrix::new(rows, cols, cost.concat()).map_err(to_py)?;
    let plan = transport(&a, &b, &c, method_from(method, epsilon)?).map_err(to_py)?;
    let dense = (0..rows).map(|i| (0..cols).map(|j| plan.get(i, j)).collect()).collect();
    Ok((dense, plan.objective))
}

/// Scenario from a shift config (dict or JSON).
#[pyfunction]
fn generate_scenario(py: Python<'_>, config: &Bound<'_, PyAny>) -> PyResult<PyScenario> {
    let cfg = ShiftConfig::from_json(&json_text(config)?).map_err(to_py)?;
    let s = py.detach(|| generate(&cfg)).map_err(to_py)?;
    let wrap = |j: EmpiricalJoint| Py::new(py, PyJoint { inner: j });
    Ok(PyScenario {
        source: wrap(s.source)?,
        target: wrap(s.target)?,
        stages: s
            .chain
            .map(|c| c.stages.into_iter().map(wrap).collect::<PyResult<Vec<_>>>())
            .transpose()?,
    })
}

/// Trains on `source` with unlabeled access to `target`.
///
/// Returns `(model, history, diverged_epoch)`, with `history` a list of dicts
/// holding the per-epoch diagnostics.
#[pyfunction]
#[pyo3(signature = (source, target, config=None))]
fn fit(
    py: Python<'_>,
    source: &PyJoint,
    target: &PyJoint,
    config: Option<&Bound<'_, PyAny>>,
) -> PyResult<(PyModel, Py<PyAny>, Option<usize>)> {
    let cfg = match config {
        Some(c) => TrainConfig::from_json(&json_text(c)?).map_err(to_py)?,
        None => TrainConfig::default(),
    };
    let r = py.detach(|| train::fit(&source.inner, &target.inner, &cfg)).map_err(to_py)?;
    let history = to_python(py, &r.history)?;
    Ok((PyModel { inner: r.model }, history, r.diverged))
}

/// Risks, transport terms and both entanglement estimates of `model`.
#[pyfunction]
#[pyo3(signature = (source, target, model, loss="euclidean", method="exact", epsilon=0.05))]
fn entanglement_report(
    py: Python<'_>,
    source: &PyJoint,
    target: &PyJoint,
    model: &PyModel,
    loss: &str,
    method: &str,
    epsilon: f64,
) -> PyResult<Py<PyAny>> {
    let loss = loss_from_name(loss)?;
    let method = method_from(method, epsilon)?;
    let f = &model.inner;
    let r = py
        .detach(|| entanglement_report_out(&source.inner.pushforward(f), &target.inner.pushforward(f), &loss, method))
        .map_err(to_py)?;
    to_python(py, &r)
}

/// Every applicable model-level bound check, as a list of report dicts.
#[pyfunction]
#[pyo3(signature = (source, target, model, loss="euclidean", kl_bins=DEFAULT_KL_BINS))]
fn verify(py: Python<'_>, source: &PyJoint, target: &PyJoint, model: &PyModel, loss: &str, kl_bins: usize) -> PyResult<Py<PyAny>> {
    let loss = loss_from_name(loss)?;
    let reports: Vec<BoundReport> = py
        .detach(|| check_all(&source.inner, &target.inner, &model.inner, &loss, kl_bins))
        .map_err(to_py)?;
    to_python(py, &reports)
}

/// Closed-form squared 2-Wasserstein distance between two Gaussians.
#[pyfunction]
fn gaussian_w2(mu: Vec<f64>, sigma: Vec<Vec<f64>>, mu_prime: Vec<f64>, sigma_prime: Vec<Vec<f64>>) -> PyResult<f64> {
    let mat = |s: &[Vec<f64>]| -> PyResult<DMatrix<f64>> {
        let n = s.len();
        if s.iter().any(|r| r.len() != n) {
            return Err(PyValueError::new_err("covariance must be square"));
        }
        Ok(DMatrix::from_fn(n, n, |i, j| s[i][j]))
    };
    gaussian_w2_squared(&DVector::from_vec(mu), &mat(&sigma)?, &DVector::from_vec(mu_prime), &mat(&sigma_prime)?)
        .map_err(to_py)
}

/// Checks the scaled-covariance decomposition for a Gaussian pair config.
#[pyfunction]
#[pyo3(signature = (pair, samples=DEFAULT_MC_SAMPLES, seed=0))]
fn gaussian_decomposition(py: Python<'_>, pair: &Bound<'_, PyAny>, samples: usize, seed: u64) -> PyResult<Py<PyAny>> {
    let pair = GaussianPair::from_json(&json_text(pair)?).map_err(to_py)?;
    let r = py.detach(|| verify_scaled_decomposition(&pair, samples, seed)).map_err(to_py)?;
    to_python(py, &r)
}

#[pymodule]
fn entangle_ot_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("SolverError", py.get_type::<SolverError>())?;
    m.add("BoundViolation", py.get_type::<BoundViolation>())?;
    m.add_class::<PyJoint>()?;
    m.add_class::<PyScenario>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(wasserstein, m)?)?;
    m.add_function(wrap_pyfunction!(transport_plan, m)?)?;
    m.add_function(wrap_pyfunction!(generate_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(entanglement_report, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_w2, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_decomposition, m)?)?;
    Ok(())
}
