//! Python bindings: models, prototypes, cluster-count determination, drift
//! detection, EM updates and whole simulations.

use std::path::PathBuf;

use feddaa::config::{parse_config_str, ConfigFormat};
use feddaa::engine::{alpha_update as core_alpha_update, gamma_update as core_gamma_update};
use feddaa::model::{self, GradientBundle, WeightedExample};
use feddaa::ncd::{self, KMeansOptions};
use feddaa::{prototype, rdld, runner, Architecture, Method, ModelParams, Preset, SimulationConfig};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn preset_from(name: &str) -> PyResult<Preset> {
    match name {
        "desk" => Ok(Preset::Desk),
        "paper_scale" => Ok(Preset::PaperScale),
        other => Err(PyValueError::new_err(format!(
            "unknown preset {other:?}; expected \"desk\" or \"paper_scale\""
        ))),
    }
}

/// Softmax classifier; `hidden_dim = 0` gives a linear model.
#[pyclass(name = "Model", module = "feddaa_py", from_py_object)]
#[derive(Clone)]
struct PyModel {
    params: ModelParams,
    velocity: GradientBundle,
}

impl PyModel {
    fn wrap(params: ModelParams) -> Self {
        let velocity = GradientBundle::zeros(params.arch());
        Self { params, velocity }
    }
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (input_dim, num_classes, hidden_dim = 0, seed = 0))]
    fn new(input_dim: usize, num_classes: usize, hidden_dim: usize, seed: u64) -> PyResult<Self> {
        let arch = if hidden_dim == 0 {
            Architecture::linear(input_dim, num_classes)
        } else {
            Architecture::mlp(input_dim, hidden_dim, num_classes)
        };
        model::init_params(arch, seed).map(Self::wrap).map_err(py_err)
    }

    /// Rebuilds a model from a flat parameter vector.
    #[staticmethod]
    #[pyo3(signature = (input_dim, num_classes, values, hidden_dim = 0))]
    fn from_values(input_dim: usize, num_classes: usize, values: Vec<f64>, hidden_dim: usize) -> PyResult<Self> {
        let arch = if hidden_dim == 0 {
            Architecture::linear(input_dim, num_classes)
        } else {
            Architecture::mlp(input_dim, hidden_dim, num_classes)
        };
        ModelParams::from_values(arch, values).map(Self::wrap).map_err(py_err)
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.params.values().to_vec()
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.params.values().len()
    }

    /// Class probabilities for one feature vector.
    fn forward(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        model::forward(&self.params, &x).map_err(py_err)
    }

    /// Cross-entropy of one labelled example.
    fn loss(&self, x: Vec<f64>, y: usize) -> PyResult<f64> {
        model::loss(&self.params, &x, y).map_err(py_err)
    }

    /// Gradient of the weighted loss sum; weights default to 1/len.
    #[pyo3(signature = (xs, ys, weights = None))]
    fn grad(&self, xs: Vec<Vec<f64>>, ys: Vec<usize>, weights: Option<Vec<f64>>) -> PyResult<Vec<f64>> {
        if xs.len() != ys.len() {
            return Err(PyValueError::new_err("xs and ys differ in length"));
        }
        let weights = weights.unwrap_or_else(|| vec![1.0 / xs.len().max(1) as f64; xs.len()]);
        if weights.len() != xs.len() {
            return Err(PyValueError::new_err("weights and xs differ in length"));
        }
        let batch: Vec<WeightedExample<'_>> = xs
            .iter()
            .zip(&ys)
            .zip(&weights)
            .map(|((x, &label), &weight)| WeightedExample {
                features: x,
                label,
                weight,
            })
            .collect();
        model::weighted_grad(&self.params, &batch)
            .map(|g| g.values().to_vec())
            .map_err(py_err)
    }

    /// One momentum SGD step in place; the velocity lives on the model.
    #[pyo3(signature = (grad, lr, momentum = 0.0))]
    fn sgd_step(&mut self, grad: Vec<f64>, lr: f64, momentum: f64) -> PyResult<()> {
        let g = GradientBundle::from_values(self.params.arch(), grad).map_err(py_err)?;
        let (params, velocity) =
            model::sgd_step(&self.params, &g, lr, momentum, &self.velocity).map_err(py_err)?;
        self.params = params;
        self.velocity = velocity;
        Ok(())
    }

    fn __repr__(&self) -> String {
        let a = self.params.arch();
        format!(
            "Model(input_dim={}, hidden_dim={}, num_classes={})",
            a.input_dim, a.hidden_dim, a.output_dim
        )
    }
}

/// Row-major R x R matrix of mean probe outputs per class.
#[pyclass(name = "Prototype", module = "feddaa_py", from_py_object)]
#[derive(Clone)]
struct PyPrototype {
    inner: prototype::Prototype,
}

#[pymethods]
impl PyPrototype {
    #[new]
    fn new(num_classes: usize, values: Vec<f64>, counts: Vec<usize>) -> PyResult<Self> {
        prototype::Prototype::from_values(num_classes, values, counts)
            .map(|inner| Self { inner })
            .map_err(py_err)
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.inner.values().to_vec()
    }

    #[getter]
    fn counts(&self) -> Vec<usize> {
        self.inner.counts().to_vec()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    fn distance(&self, other: &PyPrototype) -> PyResult<f64> {
        prototype::prototype_distance(&self.inner, &other.inner).map_err(py_err)
    }
}

fn unwrap_protos(protos: &[PyRef<'_, PyPrototype>]) -> Vec<prototype::Prototype> {
    protos.iter().map(|p| p.inner.clone()).collect()
}

fn wrap_protos(protos: &[prototype::Prototype]) -> Vec<PyPrototype> {
    protos.iter().cloned().map(|inner| PyPrototype { inner }).collect()
}

/// k-means with k-means++ seeding; returns assignments, centers and WCSS.
#[pyfunction]
#[pyo3(signature = (prototypes, num_clusters, seed = 0, restarts = 5))]
fn kmeans<'py>(
    py: Python<'py>,
    prototypes: Vec<PyRef<'py, PyPrototype>>,
    num_clusters: usize,
    seed: u64,
    restarts: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let options = KMeansOptions {
        restarts,
        ..KMeansOptions::default()
    };
    let res = ncd::kmeans(&unwrap_protos(&prototypes), num_clusters, seed, &options).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("assignments", res.assignments)?;
    out.set_item("centers", wrap_protos(&res.centers))?;
    out.set_item("wcss", res.wcss)?;
    Ok(out)
}

/// Mean silhouette of plain points under the given labels.
#[pyfunction]
fn silhouette(points: Vec<Vec<f64>>, assignments: Vec<usize>) -> PyResult<f64> {
    let refs: Vec<&[f64]> = points.iter().map(Vec::as_slice).collect();
    ncd::silhouette_of_points(&refs, &assignments).map_err(py_err)
}

/// Chooses the cluster count in 2..=max_clusters by silhouette.
#[pyfunction]
#[pyo3(signature = (prototypes, max_clusters, seed = 0))]
fn determine_cluster_count<'py>(
    py: Python<'py>,
    prototypes: Vec<PyRef<'py, PyPrototype>>,
    max_clusters: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let res = ncd::determine_cluster_count(
        &unwrap_protos(&prototypes),
        max_clusters,
        seed,
        &KMeansOptions::default(),
    )
    .map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("num_clusters", res.num_clusters)?;
    out.set_item("assignments", res.clustering.assignments.clone())?;
    out.set_item("centers", wrap_protos(res.centers()))?;
    out.set_item("silhouettes", res.silhouette_table)?;
    Ok(out)
}

/// Per-client real-drift flags given both steps' prototypes and the new centers.
#[pyfunction]
fn detect_real_drift(
    previous: Vec<PyRef<'_, PyPrototype>>,
    current: Vec<PyRef<'_, PyPrototype>>,
    centers: Vec<PyRef<'_, PyPrototype>>,
) -> PyResult<Vec<bool>> {
    let previous = unwrap_protos(&previous);
    rdld::detect_real_drift(Some(&previous), &unwrap_protos(&current), &unwrap_protos(&centers))
        .map(|r| r.flags())
        .map_err(py_err)
}

/// Posterior cluster responsibilities of one sample.
#[pyfunction]
fn gamma_update(alpha: Vec<f64>, tilde: Vec<f64>) -> PyResult<Vec<f64>> {
    core_gamma_update(&alpha, &tilde).map_err(py_err)
}

/// Mixture weights as the mean of per-sample responsibilities.
#[pyfunction]
fn alpha_update(responsibilities: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    core_alpha_update(&responsibilities).map_err(py_err)
}

fn resolve_config(config: Option<&str>, preset: &str) -> PyResult<SimulationConfig> {
    let preset = preset_from(preset)?;
    let text = config.unwrap_or("");
    let format = if text.trim_start().starts_with('{') {
        ConfigFormat::Json
    } else {
        ConfigFormat::Toml
    };
    parse_config_str(text, format, preset).map_err(py_err)
}

/// Full config as JSON: preset values overlaid with the given TOML or JSON text.
#[pyfunction]
#[pyo3(signature = (config = None, preset = "desk"))]
fn load_config(config: Option<&str>, preset: &str) -> PyResult<String> {
    let c = resolve_config(config, preset)?;
    serde_json::to_string(&c).map_err(py_err)
}

/// Runs every configured method and seed. Returns the per-run reports as
/// JSON; with `output_dir` set, also writes the CSV files and summary there.
#[pyfunction]
#[pyo3(signature = (config = None, preset = "desk", methods = None, seeds = None, output_dir = None))]
fn run_simulation(
    py: Python<'_>,
    config: Option<&str>,
    preset: &str,
    methods: Option<Vec<String>>,
    seeds: Option<Vec<u64>>,
    output_dir: Option<PathBuf>,
) -> PyResult<String> {
    let mut c = resolve_config(config, preset)?;
    if let Some(methods) = methods {
        c.methods = methods
            .iter()
            .map(|m| m.parse::<Method>())
            .collect::<feddaa::Result<_>>()
            .map_err(py_err)?;
    }
    if let Some(seeds) = seeds {
        c.seeds = seeds;
    }
    let write = output_dir.is_some();
    c.validate().map_err(py_err)?;
    if let Some(dir) = output_dir {
        c.output_dir = dir;
    }
    let reports = py
        .detach(|| {
            let reports = runner::run_all(&c)?;
            if write {
                runner::write_outputs(&c, &reports)?;
            }
            Ok::<_, feddaa::Error>(reports)
        })
        .map_err(py_err)?;
    serde_json::to_string(&reports).map_err(py_err)
}

/// Reads an IDX image/label file pair; features are scaled to [0, 1].
#[pyfunction]
fn load_idx(images_path: PathBuf, labels_path: PathBuf) -> PyResult<(Vec<Vec<f64>>, Vec<usize>)> {
    let pool = feddaa::datagen::load_idx(&images_path, &labels_path).map_err(py_err)?;
    Ok(pool.examples.into_iter().map(|e| (e.features, e.label)).unzip())
}

#[pymodule]
fn feddaa_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_class::<PyPrototype>()?;
    m.add_function(wrap_pyfunction!(kmeans, m)?)?;
    m.add_function(wrap_pyfunction!(silhouette, m)?)?;
    m.add_function(wrap_pyfunction!(determine_cluster_count, m)?)?;
    m.add_function(wrap_pyfunction!(detect_real_drift, m)?)?;
    m.add_function(wrap_pyfunction!(gamma_update, m)?)?;
    m.add_function(wrap_pyfunction!(alpha_update, m)?)?;
    m.add_function(wrap_pyfunction!(load_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_simulation, m)?)?;
    m.add_function(wrap_pyfunction!(load_idx, m)?)?;
    Ok(())
}
