//! Python bindings. Vectors cross the boundary as lists of floats and
//! matrices as lists of rows.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use relgrad_core::data::{self, Dataset, ToyKind};
use relgrad_core::grad::{self, GradientFlavor};
use relgrad_core::linalg::{Matrix, Rng, Vector};
use relgrad_core::model::{self, BaseDistribution, Network, Nonlinearity};
use relgrad_core::train::{self as core_train, Optimizer, TrainConfig};
use relgrad_core::{invert, Error};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::IoPlain(_) => PyIOError::new_err(e.to_string()),
        Error::TrainingAborted { .. } | Error::NoConvergence { .. } => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(py_err)
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

type LayerLists = Vec<(Vec<Vec<f64>>, Vec<f64>)>;

fn vectors(xs: Vec<Vec<f64>>) -> PyResult<Vec<Vector>> {
    xs.into_iter()
        .map(|x| Vector::new(x).map_err(py_err))
        .collect()
}

#[pyclass(name = "Network", module = "relgrad", from_py_object)]
#[derive(Clone)]
pub struct PyNetwork {
    inner: Network,
}

#[pymethods]
impl PyNetwork {
    /// Random network with `N(0, 1/D)` weights and zero biases.
    #[new]
    #[pyo3(signature = (dim, layers, nonlinearity = "sl:0.3", bias = true, final_nonlinearity = false, seed = 0))]
    fn new(
        dim: usize,
        layers: usize,
        nonlinearity: &str,
        bias: bool,
        final_nonlinearity: bool,
        seed: u64,
    ) -> PyResult<Self> {
        let nl: Nonlinearity = parse(nonlinearity)?;
        let inner = model::init_network(
            &mut Rng::new(seed),
            dim,
            layers,
            nl,
            bias,
            final_nonlinearity,
            None,
        )
        .map_err(py_err)?;
        Ok(PyNetwork { inner })
    }

    #[staticmethod]
    fn identity(dim: usize, depth: usize) -> Self {
        PyNetwork {
            inner: Network::identity(dim, depth),
        }
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyNetwork {
            inner: model::io::load(path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        model::io::save(&self.inner, path).map_err(py_err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn depth(&self) -> usize {
        self.inner.depth()
    }

    #[getter]
    fn use_bias(&self) -> bool {
        self.inner.use_bias()
    }

    #[getter]
    fn nonlinearity(&self) -> String {
        self.inner.nonlinearity().to_string()
    }

    fn weights(&self) -> Vec<Vec<Vec<f64>>> {
        self.inner
            .layers()
            .iter()
            .map(|l| rows(&l.weight))
            .collect()
    }

    fn biases(&self) -> Vec<Vec<f64>> {
        self.inner
            .layers()
            .iter()
            .map(|l| l.bias.to_vec())
            .collect()
    }

    fn forward(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.inner.forward(&x).map_err(py_err)?.output().to_vec())
    }

    /// `{"l_p", "l_j1", "l_j2", "total"}` for one sample.
    #[pyo3(signature = (x, base = "normal"))]
    fn log_likelihood<'py>(
        &self,
        py: Python<'py>,
        x: Vec<f64>,
        base: &str,
    ) -> PyResult<Bound<'py, PyDict>> {
        let bd: BaseDistribution = parse(base)?;
        let ll = model::log_likelihood(&self.inner, bd, &x).map_err(py_err)?;
        let d = PyDict::new(py);
        d.set_item("l_p", ll.l_p)?;
        d.set_item("l_j1", ll.l_j1)?;
        d.set_item("l_j2", ll.l_j2)?;
        d.set_item("total", ll.total)?;
        Ok(d)
    }

    fn inverse(&self, z: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(invert::inverse(&self.inner, &z).map_err(py_err)?.to_vec())
    }

    #[pyo3(signature = (n, seed = 0, base = "normal"))]
    fn sample(&self, n: usize, seed: u64, base: &str) -> PyResult<Vec<Vec<f64>>> {
        let bd: BaseDistribution = parse(base)?;
        let xs = invert::sample(&self.inner, bd, &mut Rng::new(seed), n).map_err(py_err)?;
        Ok(xs.into_iter().map(Vec::from).collect())
    }

    /// Mean log-likelihood gradient over `batch` as `[(d_weight, d_bias), ...]`.
    #[pyo3(signature = (batch, flavor = "relative", base = "normal"))]
    fn gradient(&self, batch: Vec<Vec<f64>>, flavor: &str, base: &str) -> PyResult<LayerLists> {
        let flavor: GradientFlavor = parse(flavor)?;
        let bd: BaseDistribution = parse(base)?;
        let g = grad::batch_gradient(&self.inner, bd, &vectors(batch)?, flavor).map_err(py_err)?;
        Ok(g.layers
            .iter()
            .map(|l| (rows(&l.d_weight), l.d_bias.to_vec()))
            .collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Network(dim={}, depth={}, nonlinearity='{}', bias={})",
            self.inner.dim(),
            self.inner.depth(),
            self.inner.nonlinearity(),
            self.inner.use_bias()
        )
    }
}

/// `n` samples from a built-in 2-D density (`mog`, `half-moons`, `sine`).
#[pyfunction]
#[pyo3(signature = (kind, n, seed = 0))]
fn toy_data(kind: &str, n: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    let kind: ToyKind = parse(kind)?;
    Ok(data::toy_samples(kind, &mut Rng::new(seed), n)
        .into_iter()
        .map(Vec::from)
        .collect())
}

/// Mean negative log-likelihood of `xs`.
#[pyfunction]
#[pyo3(signature = (net, xs, base = "normal"))]
fn evaluate(net: &PyNetwork, xs: Vec<Vec<f64>>, base: &str) -> PyResult<f64> {
    let bd: BaseDistribution = parse(base)?;
    core_train::evaluate(&net.inner, bd, &vectors(xs)?).map_err(py_err)
}

/// Train a copy of `net`; returns `(best_network, report)`.
#[pyfunction]
#[pyo3(signature = (
    net, train_data, validation_data, optimizer = "adam", lr = 1e-3, batch_size = 100,
    epochs = 2000, eval_every = 25, patience = 5, flavor = "relative", base = "normal", seed = 0
))]
#[allow(clippy::too_many_arguments)]
fn train<'py>(
    py: Python<'py>,
    net: &PyNetwork,
    train_data: Vec<Vec<f64>>,
    validation_data: Vec<Vec<f64>>,
    optimizer: &str,
    lr: f64,
    batch_size: usize,
    epochs: usize,
    eval_every: usize,
    patience: usize,
    flavor: &str,
    base: &str,
    seed: u64,
) -> PyResult<(PyNetwork, Bound<'py, PyDict>)> {
    let optimizer = match optimizer {
        "adam" => Optimizer::adam(lr),
        "sgd" => Optimizer::sgd(lr),
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown optimizer '{other}'"
            )))
        }
    };
    let cfg = TrainConfig {
        optimizer,
        batch_size,
        max_epochs: epochs,
        eval_every,
        patience,
        gradient_flavor: parse(flavor)?,
        seed,
        base_distribution: parse(base)?,
        shuffle: true,
    };
    let ds = Dataset::from_splits(vectors(train_data)?, vectors(validation_data)?, Vec::new())
        .map_err(py_err)?;
    let net = net.inner.clone();
    let report = py
        .detach(|| core_train::train(net, &ds, &cfg))
        .map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("train_nll", report.train_nll.clone())?;
    d.set_item(
        "validation",
        report
            .validation
            .iter()
            .map(|e| (e.epoch, e.nll))
            .collect::<Vec<_>>(),
    )?;
    d.set_item("best_epoch", report.best_epoch)?;
    d.set_item("best_validation_nll", report.best_validation_nll)?;
    d.set_item("epochs_run", report.epochs_run)?;
    Ok((PyNetwork { inner: report.best }, d))
}

#[pymodule]
pub fn relgrad(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNetwork>()?;
    m.add_function(wrap_pyfunction!(toy_data, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    Ok(())
}
