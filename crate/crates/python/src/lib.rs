//! Python bindings: datasets, models, density estimators, the perturbation
//! generators, metrics and the full pipeline. Vectors cross the boundary as
//! Python lists of floats.

use std::path::PathBuf;

use pyo3::exceptions::{PyFileNotFoundError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use perturb_learn::config::ExperimentConfig;
use perturb_learn::data::{gen_spurious, gen_synthetic, Distribution, SpuriousSpec, SyntheticSpec};
use perturb_learn::density::{fit_gmm, fit_kde, silverman_bandwidth, EmConfig};
use perturb_learn::numerics::{rng_new, Matrix, Norm, OptimConfig};
use perturb_learn::perturb::{self as pt, BoxBounds, CfeSpec, DensityMode, NoiseSpec, PcfeSpec, PgdSpec};
use perturb_learn::protocol::{fit_model, learn_from_perturbations, ModelSpec};
use perturb_learn::{container, metrics, Error, LabelSpace, LossKind};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::MissingArtifact(p) => PyFileNotFoundError::new_err(p.display().to_string()),
        Error::Io(e) => PyOSError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn parse_norm(s: &str) -> PyResult<Norm> {
    match s {
        "l0" => Ok(Norm::L0),
        "l2" => Ok(Norm::L2),
        "linf" => Ok(Norm::Linf),
        _ => Err(PyValueError::new_err(format!("unknown norm {s:?}; expected l0, l2 or linf"))),
    }
}

fn parse_loss(s: &str) -> PyResult<LossKind> {
    match s {
        "exponential" => Ok(LossKind::Exponential),
        "logistic" => Ok(LossKind::Logistic),
        "cross_entropy" => Ok(LossKind::CrossEntropy),
        _ => Err(PyValueError::new_err(format!("unknown loss {s:?}"))),
    }
}

#[pyclass(name = "Dataset", module = "perturb_learn_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: perturb_learn::Dataset,
}

#[pymethods]
impl PyDataset {
    /// Binary labels in {-1, 1} when `num_classes` is None, else `0..num_classes`.
    #[new]
    #[pyo3(signature = (features, labels, num_classes=None))]
    fn new(features: Vec<Vec<f64>>, labels: Vec<i32>, num_classes: Option<usize>) -> PyResult<Self> {
        let space = match num_classes {
            None => LabelSpace::Binary,
            Some(c) => LabelSpace::Multiclass(c),
        };
        let m = Matrix::from_rows(&features).map_err(to_py)?;
        Ok(Self { inner: perturb_learn::Dataset::new(m, labels, space).map_err(to_py)? })
    }

    #[staticmethod]
    #[pyo3(signature = (d, n, eta=1.0, sigma=1.0, distribution="gaussian", seed=0))]
    fn synthetic(d: usize, n: usize, eta: f64, sigma: f64, distribution: &str, seed: u64) -> PyResult<Self> {
        let distribution = match distribution {
            "gaussian" => Distribution::Gaussian,
            "uniform" => Distribution::Uniform,
            other => return Err(PyValueError::new_err(format!("unknown distribution {other:?}"))),
        };
        let spec = SyntheticSpec { distribution, d, n, eta, sigma, seed };
        Ok(Self { inner: gen_synthetic(&spec).map_err(to_py)? })
    }

    /// Returns `(train, test)`.
    #[staticmethod]
    #[pyo3(signature = (n=5000, n_test=4000, rho=0.95, seed=0))]
    fn spurious(n: usize, n_test: usize, rho: f64, seed: u64) -> PyResult<(Self, Self)> {
        let spec = SpuriousSpec { n, n_test, rho, seed, ..Default::default() };
        let (a, b) = gen_spurious(&spec).map_err(to_py)?;
        Ok((Self { inner: a }, Self { inner: b }))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: container::load_dataset(&path).map_err(to_py)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        container::save_dataset(&path, &self.inner).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn x(&self, i: usize) -> PyResult<Vec<f64>> {
        if i >= self.inner.len() {
            return Err(PyValueError::new_err(format!("index {i} out of range")));
        }
        Ok(self.inner.x(i).to_vec())
    }

    #[getter]
    fn labels(&self) -> Vec<i32> {
        self.inner.labels().to_vec()
    }

    #[getter]
    fn groups(&self) -> Option<Vec<usize>> {
        self.inner.groups().map(|g| g.to_vec())
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }
}

#[pyclass(name = "Model", module = "perturb_learn_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: perturb_learn::Model,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    #[pyo3(signature = (weights, bias, loss="logistic"))]
    fn linear(weights: Vec<f64>, bias: f64, loss: &str) -> PyResult<Self> {
        Ok(Self { inner: perturb_learn::Model::linear(weights, bias, parse_loss(loss)?).map_err(to_py)? })
    }

    /// Initialise and train on `data` with SGD.
    #[staticmethod]
    #[pyo3(signature = (data, hidden=vec![], loss="logistic", lr=0.1, epochs=20, batch_size=64, seed=0))]
    fn fit(data: &PyDataset, hidden: Vec<usize>, loss: &str, lr: f64, epochs: usize, batch_size: usize, seed: u64) -> PyResult<Self> {
        let spec = ModelSpec { hidden, loss: parse_loss(loss)? };
        let opt = OptimConfig { epochs, batch_size, ..OptimConfig::sgd(lr) };
        Ok(Self { inner: fit_model(&data.inner, &spec, &opt, seed).map_err(to_py)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: container::load_model(&path).map_err(to_py)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        container::save_model(&path, &self.inner).map_err(to_py)
    }

    #[getter]
    fn params(&self) -> Vec<f64> {
        self.inner.params().to_vec()
    }

    fn forward(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.forward(&x).map_err(to_py)
    }

    fn predict(&self, x: Vec<f64>) -> PyResult<i32> {
        self.inner.predict(&x).map_err(to_py)
    }

    fn loss(&self, x: Vec<f64>, y: i32) -> PyResult<f64> {
        self.inner.loss(&x, y).map_err(to_py)
    }

    fn grad_input(&self, x: Vec<f64>, y: i32) -> PyResult<Vec<f64>> {
        self.inner.grad_input(&x, y).map_err(to_py)
    }

    fn accuracy(&self, data: &PyDataset) -> PyResult<f64> {
        metrics::accuracy(&self.inner, &data.inner).map_err(to_py)
    }
}

#[pyclass(name = "DensityEstimator", module = "perturb_learn_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyDensity {
    inner: perturb_learn::DensityEstimator,
}

#[pymethods]
impl PyDensity {
    #[staticmethod]
    #[pyo3(signature = (data, bandwidth=None))]
    fn kde(data: &PyDataset, bandwidth: Option<f64>) -> PyResult<Self> {
        let h = match bandwidth {
            Some(h) => h,
            None => silverman_bandwidth(&data.inner).map_err(to_py)?,
        };
        Ok(Self { inner: fit_kde(&data.inner, h).map_err(to_py)? })
    }

    #[staticmethod]
    #[pyo3(signature = (data, k=2, max_iters=100, seed=0))]
    fn gmm(data: &PyDataset, k: usize, max_iters: usize, seed: u64) -> PyResult<Self> {
        let em = EmConfig { max_iters, seed, ..Default::default() };
        Ok(Self { inner: fit_gmm(&data.inner, k, &em).map_err(to_py)?.estimator })
    }

    fn density(&self, x: Vec<f64>, y: i32) -> PyResult<f64> {
        self.inner.density(&x, y).map_err(to_py)
    }

    fn log_density(&self, x: Vec<f64>, y: i32) -> PyResult<f64> {
        self.inner.log_density(&x, y).map_err(to_py)
    }

    fn grad_log_density(&self, x: Vec<f64>, y: i32) -> PyResult<(f64, Vec<f64>)> {
        self.inner.grad_log_density(&x, y).map_err(to_py)
    }
}

fn perturbation_dict<'py>(py: Python<'py>, p: pt::Perturbation) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("x", p.x)?;
    d.set_item("valid", p.valid)?;
    d.set_item("l0", p.l0)?;
    d.set_item("l2", p.l2)?;
    d.set_item("linf", p.linf)?;
    d.set_item("trace", p.trace)?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (delta, eps, norm="l2"))]
fn project(delta: Vec<f64>, eps: f64, norm: &str) -> PyResult<Vec<f64>> {
    Ok(pt::project(&delta, eps, parse_norm(norm)?))
}

#[pyfunction]
#[pyo3(signature = (model, x, target, norm="l2", epsilon=0.78, steps=100))]
fn pgd_targeted<'py>(py: Python<'py>, model: &PyModel, x: Vec<f64>, target: i32, norm: &str, epsilon: f64, steps: usize) -> PyResult<Bound<'py, PyDict>> {
    let spec = PgdSpec { norm: parse_norm(norm)?, epsilon, steps, ..Default::default() };
    perturbation_dict(py, pt::pgd_targeted(&model.inner, &x, target, &spec, None).map_err(to_py)?)
}

#[pyfunction]
#[pyo3(signature = (model, x, target, lam=0.001, learning_rate=0.01, iterations=50))]
fn cfe_l2<'py>(py: Python<'py>, model: &PyModel, x: Vec<f64>, target: i32, lam: f64, learning_rate: f64, iterations: usize) -> PyResult<Bound<'py, PyDict>> {
    let spec = CfeSpec { lambda: lam, learning_rate, iterations };
    perturbation_dict(py, pt::cfe_l2(&model.inner, &x, target, &spec).map_err(to_py)?)
}

#[pyfunction]
fn prox_l0_box(v: Vec<f64>, x: Vec<f64>, t_beta: f64, lower: Vec<f64>, upper: Vec<f64>) -> PyResult<Vec<f64>> {
    let b = BoxBounds::new(lower, upper).map_err(to_py)?;
    pt::prox_l0_box(&v, &x, t_beta, &b).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (model, x, target, lower, upper, density=None, gamma=1.0, tau=0.1, beta=0.01, iterations=50, log_density=false))]
#[allow(clippy::too_many_arguments)]
fn pcfe_l0<'py>(
    py: Python<'py>,
    model: &PyModel,
    x: Vec<f64>,
    target: i32,
    lower: Vec<f64>,
    upper: Vec<f64>,
    density: Option<&PyDensity>,
    gamma: f64,
    tau: f64,
    beta: f64,
    iterations: usize,
    log_density: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let b = BoxBounds::new(lower, upper).map_err(to_py)?;
    let mode = if log_density { DensityMode::Log } else { DensityMode::Raw };
    let spec = PcfeSpec { gamma, tau, beta, iterations, density_mode: mode, ..Default::default() };
    let p = pt::pcfe_l0(&model.inner, density.map(|d| &d.inner), &x, target, &spec, &b).map_err(to_py)?;
    perturbation_dict(py, p)
}

#[pyfunction]
#[pyo3(signature = (x, norm, magnitude, seed=0, lower=None, upper=None))]
fn noise_baseline(x: Vec<f64>, norm: &str, magnitude: f64, seed: u64, lower: Option<Vec<f64>>, upper: Option<Vec<f64>>) -> PyResult<Vec<f64>> {
    let bounds = match (lower, upper) {
        (Some(l), Some(u)) => Some(BoxBounds::new(l, u).map_err(to_py)?),
        _ => None,
    };
    let spec = NoiseSpec { norm: parse_norm(norm)?, magnitude, ..Default::default() };
    pt::noise_baseline(&x, &spec, bounds.as_ref(), &mut rng_new(seed)).map_err(to_py)
}

#[pyfunction]
fn group_report<'py>(py: Python<'py>, model: &PyModel, data: &PyDataset) -> PyResult<Bound<'py, PyDict>> {
    let r = metrics::group_report(&model.inner, &data.inner).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("overall", r.overall)?;
    d.set_item("worst_group_accuracy", r.worst_group_accuracy)?;
    d.set_item("worst_group", r.worst_group)?;
    d.set_item("group_accuracy", r.groups.iter().map(|g| g.accuracy).collect::<Vec<_>>())?;
    d.set_item("group_count", r.groups.iter().map(|g| g.count).collect::<Vec<_>>())?;
    Ok(d)
}

/// Full pipeline; `config` is TOML in the CLI's config format.
#[pyfunction]
#[pyo3(signature = (train, test, config="", seed=0))]
fn run_pipeline<'py>(py: Python<'py>, train: &PyDataset, test: &PyDataset, config: &str, seed: u64) -> PyResult<Bound<'py, PyDict>> {
    let cfg = ExperimentConfig::from_toml_str(config, &[]).map_err(to_py)?;
    let r = learn_from_perturbations(&train.inner, &test.inner, None, &cfg.pipeline(seed), 1, None).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("source_train_acc", r.source_train_acc)?;
    d.set_item("source_test_acc", r.source_test_acc)?;
    d.set_item("adv_train_acc", r.adversarial.train_acc)?;
    d.set_item("adv_test_acc", r.adversarial.test_acc)?;
    d.set_item("adv_fit_acc", r.adversarial.fit_acc)?;
    d.set_item("validity_rate", r.adversarial.stats.validity_rate)?;
    d.set_item("mean_l0", r.adversarial.stats.mean_l0)?;
    d.set_item("mean_l2", r.adversarial.stats.mean_l2)?;
    d.set_item("noise_test_acc", r.noise.map(|n| n.test_acc))?;
    d.set_item("relearned", PyModel { inner: r.relearned })?;
    Ok(d)
}

#[pymodule]
fn perturb_learn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyDensity>()?;
    m.add_function(wrap_pyfunction!(project, m)?)?;
    m.add_function(wrap_pyfunction!(pgd_targeted, m)?)?;
    m.add_function(wrap_pyfunction!(cfe_l2, m)?)?;
    m.add_function(wrap_pyfunction!(prox_l0_box, m)?)?;
    m.add_function(wrap_pyfunction!(pcfe_l0, m)?)?;
    m.add_function(wrap_pyfunction!(noise_baseline, m)?)?;
    m.add_function(wrap_pyfunction!(group_report, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
