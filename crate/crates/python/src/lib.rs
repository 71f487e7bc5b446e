//! Python bindings: forests, density models, penalty paths and the synthetic generators.

use pyo3::exceptions::{PyArithmeticError, PyMemoryError, PyValueError};
use pyo3::prelude::*;

use mondrian::density::{fit_density, DensityModel as CoreDensity};
use mondrian::experiment::partition_stats as core_partition_stats;
use mondrian::selection::tree_penalty_path;
use mondrian::synth::{generate as core_generate, TargetFunction, Task};
use mondrian::{fit_forest, Dataset, FitConfig, Forest as CoreForest, LossSpec, MondrianError, ValueBox};

fn py_err(e: MondrianError) -> PyErr {
    match e {
        MondrianError::Resource(m) => PyMemoryError::new_err(m),
        MondrianError::Numeric(m) => PyArithmeticError::new_err(m),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn dataset(xs: Vec<Vec<f64>>, ys: Option<Vec<f64>>) -> PyResult<Dataset> {
    Dataset::from_rows(&xs, ys).map_err(py_err)
}

fn value_box(bx: Option<(f64, f64)>) -> PyResult<Option<ValueBox>> {
    bx.map(|(lo, hi)| ValueBox::new(lo, hi)).transpose().map_err(py_err)
}

fn config(
    lambda: Option<f64>,
    alpha: Option<f64>,
    lambda_max: Option<f64>,
    trees: usize,
    seed: u64,
    bx: Option<(f64, f64)>,
) -> PyResult<FitConfig> {
    let mut c = match (lambda, alpha) {
        (Some(l), None) => FitConfig::fixed(l, trees, seed),
        (None, Some(a)) => FitConfig::auto(a, lambda_max, trees, seed),
        _ => return Err(PyValueError::new_err("give exactly one of lambda_ and alpha")),
    };
    c.value_box = value_box(bx)?;
    Ok(c)
}

#[pyclass(frozen)]
struct Forest {
    inner: CoreForest,
}

#[pymethods]
impl Forest {
    /// Fit a forest on rows `xs` in [0,1]^d with responses `ys`.
    #[staticmethod]
    #[pyo3(signature = (xs, ys, loss="l2", lambda_=None, alpha=None, trees=100, seed=0, value_box=None, lambda_max=None))]
    #[allow(clippy::too_many_arguments)]
    fn fit(
        py: Python<'_>,
        xs: Vec<Vec<f64>>,
        ys: Vec<f64>,
        loss: &str,
        lambda_: Option<f64>,
        alpha: Option<f64>,
        trees: usize,
        seed: u64,
        value_box: Option<(f64, f64)>,
        lambda_max: Option<f64>,
    ) -> PyResult<Self> {
        let spec: LossSpec = loss.parse().map_err(py_err)?;
        let data = dataset(xs, Some(ys))?;
        let cfg = config(lambda_, alpha, lambda_max, trees, seed, value_box)?;
        let inner = py.detach(|| fit_forest(&data, &spec, &cfg)).map_err(py_err)?;
        Ok(Forest { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Forest {
            inner: CoreForest::from_json(text).map_err(py_err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(py_err)
    }

    fn predict(&self, x: Vec<f64>) -> PyResult<f64> {
        self.inner.predict(&x).map_err(py_err)
    }

    fn predict_batch(&self, py: Python<'_>, xs: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let data = dataset(xs, None)?;
        py.detach(|| self.inner.predict_batch(&data)).map_err(py_err)
    }

    fn classify(&self, x: Vec<f64>) -> PyResult<i8> {
        self.inner.classify(&x).map_err(py_err)
    }

    /// Stopping time of each tree.
    fn lambdas(&self) -> Vec<f64> {
        self.inner.lambdas()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn tree_count(&self) -> usize {
        self.inner.trees().len()
    }

    #[getter]
    fn loss(&self) -> String {
        self.inner.spec().to_string()
    }

    #[getter]
    fn value_box(&self) -> (f64, f64) {
        let b = self.inner.value_box();
        (b.lo, b.hi)
    }

    fn __repr__(&self) -> String {
        format!(
            "Forest(dim={}, trees={}, loss={})",
            self.inner.dim(),
            self.inner.trees().len(),
            self.inner.spec()
        )
    }
}

#[pyclass(frozen)]
struct DensityModel {
    inner: CoreDensity,
}

#[pymethods]
impl DensityModel {
    #[staticmethod]
    #[pyo3(signature = (xs, lambda_, trees=100, seed=0, value_box=None, mc_points=None))]
    fn fit(
        py: Python<'_>,
        xs: Vec<Vec<f64>>,
        lambda_: f64,
        trees: usize,
        seed: u64,
        value_box: Option<(f64, f64)>,
        mc_points: Option<usize>,
    ) -> PyResult<Self> {
        let data = dataset(xs, None)?;
        let cfg = config(Some(lambda_), None, None, trees, seed, value_box)?;
        let inner = py.detach(|| fit_density(&data, &cfg, mc_points)).map_err(py_err)?;
        Ok(DensityModel { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(DensityModel {
            inner: CoreDensity::from_json(text).map_err(py_err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(py_err)
    }

    fn density(&self, x: Vec<f64>) -> PyResult<f64> {
        self.inner.density(&x).map_err(py_err)
    }

    fn log_height(&self, x: Vec<f64>) -> PyResult<f64> {
        self.inner.log_height(&x).map_err(py_err)
    }

    #[getter]
    fn log_normalizer(&self) -> f64 {
        self.inner.log_normalizer()
    }

    /// Integral of the density; exact for one tree or in dimension 1.
    fn exact_integral(&self) -> PyResult<f64> {
        self.inner.exact_integral().map_err(py_err)
    }
}

#[pyclass(frozen, get_all)]
struct PenaltyPath {
    breakpoints: Vec<f64>,
    risks: Vec<f64>,
    alpha: f64,
    chosen_lambda: f64,
}

/// Penalized stopping-time path of tree `tree` of the forest with the same seed.
#[pyfunction]
#[pyo3(signature = (xs, ys, alpha, loss="l2", seed=0, tree=0, lambda_max=None, value_box=None))]
#[allow(clippy::too_many_arguments)]
fn penalty_path(
    xs: Vec<Vec<f64>>,
    ys: Vec<f64>,
    alpha: f64,
    loss: &str,
    seed: u64,
    tree: usize,
    lambda_max: Option<f64>,
    value_box: Option<(f64, f64)>,
) -> PyResult<PenaltyPath> {
    let spec: LossSpec = loss.parse().map_err(py_err)?;
    let data = dataset(xs, Some(ys))?;
    let cfg = config(None, Some(alpha), lambda_max, tree + 1, seed, value_box)?;
    let p = tree_penalty_path(&data, &spec, &cfg, tree).map_err(py_err)?;
    Ok(PenaltyPath {
        breakpoints: p.breakpoints,
        risks: p.risks,
        alpha: p.alpha,
        chosen_lambda: p.chosen_lambda,
    })
}

/// Synthetic sample `(xs, ys)`; `ys` is `None` for the density task.
#[pyfunction]
#[pyo3(signature = (task, n, d=1, seed=0, target=None, sigma=0.3, tau=0.5))]
fn generate(
    task: &str,
    n: usize,
    d: usize,
    seed: u64,
    target: Option<&str>,
    sigma: f64,
    tau: f64,
) -> PyResult<(Vec<Vec<f64>>, Option<Vec<f64>>)> {
    let task = Task::parse(task, sigma, tau).map_err(py_err)?;
    let target = match target {
        Some(t) => t.parse::<TargetFunction>().map_err(py_err)?,
        None => task.default_target(),
    };
    let data = core_generate(task, &target, n, d, seed).map_err(py_err)?;
    let xs = data.points().map(<[f64]>::to_vec).collect();
    Ok((xs, data.responses().map(<[f64]>::to_vec)))
}

/// `(mean leaves, se, mean centre-cell diameter, se)` over `trees` partitions.
#[pyfunction]
#[pyo3(signature = (d, lambda_, trees=2000, seed=0))]
fn partition_stats(d: usize, lambda_: f64, trees: usize, seed: u64) -> PyResult<(f64, f64, f64, f64)> {
    let s = core_partition_stats(d, lambda_, trees, seed).map_err(py_err)?;
    Ok((s.mean_leaves, s.se_leaves, s.mean_diameter, s.se_diameter))
}

/// Box-constrained minimizer of `sum_i loss(v, ys[i])`, returned with the achieved total loss.
#[pyfunction]
fn fit_leaf(loss: &str, ys: Vec<f64>, lo: f64, hi: f64) -> PyResult<(f64, f64)> {
    let spec: LossSpec = loss.parse().map_err(py_err)?;
    let bx = ValueBox::new(lo, hi).map_err(py_err)?;
    let f = mondrian::fit_leaf(&spec, &ys, bx).map_err(py_err)?;
    Ok((f.value, f.achieved_loss))
}

#[pymodule]
fn mondrian_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Forest>()?;
    m.add_class::<DensityModel>()?;
    m.add_class::<PenaltyPath>()?;
    m.add_function(wrap_pyfunction!(penalty_path, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(partition_stats, m)?)?;
    m.add_function(wrap_pyfunction!(fit_leaf, m)?)?;
    Ok(())
}
