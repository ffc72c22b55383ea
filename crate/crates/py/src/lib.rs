//! Python bindings for scene generation, explanation and scoring.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use sabench::attribution::{self, AttributionFunction, FunctionKind};
use sabench::datagen::{self, GenConfig};
use sabench::explainer::{self, RenderMode, SampleSize};
use sabench::harness::{self, ExperimentConfig};
use sabench::metrics::{self, DEFAULT_BIN_GRID, DEFAULT_EPS};
use sabench::predictor::{OraclePredictor, PredictError, Predictor, PredictorMeta};
use sabench::scene::{self, DatasetKind, Image};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn parse<T: std::str::FromStr>(s: &str) -> PyResult<T>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(value_err)
}

/// A generated scene: objects, patterns and the seed that produced it.
#[pyclass(name = "Scene", module = "sabench_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyScene {
    inner: scene::Scene,
}

#[pymethods]
impl PyScene {
    /// Samples one scene of the given dataset kind ("shape" or "color").
    #[staticmethod]
    #[pyo3(signature = (dataset, seed=0))]
    fn sample(dataset: &str, seed: u64) -> PyResult<Self> {
        let kind: DatasetKind = parse(dataset)?;
        let inner = datagen::sample_scene(&GenConfig::new(kind), seed).map_err(runtime_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: scene::Scene = serde_json::from_str(text).map_err(value_err)?;
        inner.validate().map_err(PyValueError::new_err)?;
        Ok(Self { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(runtime_err)
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height
    }

    #[getter]
    fn dataset(&self) -> &'static str {
        self.inner.dataset_kind.name()
    }

    #[getter]
    fn n_objects(&self) -> usize {
        self.inner.objects.len()
    }

    fn pattern_counts(&self) -> Vec<usize> {
        attribution::pattern_counts(&self.inner)
    }

    /// Grayscale pixels, row-major, one byte each.
    fn render<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &scene::render_scene(&self.inner).pixels)
    }

    fn ground_truth(&self, function: &str) -> PyResult<PySaliencyMap> {
        let f = AttributionFunction::new(parse(function)?);
        Ok(PySaliencyMap { inner: attribution::ground_truth_map(&self.inner, &f) })
    }

    /// Ground-truth value of `function` on this scene.
    fn evaluate(&self, function: &str) -> PyResult<f64> {
        let f = AttributionFunction::new(parse(function)?);
        f.eval(&attribution::pattern_counts(&self.inner)).map_err(value_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Scene(dataset={}, objects={}, seed={})",
            self.inner.dataset_kind, self.inner.objects.len(), self.inner.rng_seed
        )
    }
}

#[pyclass(name = "SaliencyMap", module = "sabench_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySaliencyMap {
    inner: metrics::SaliencyMap,
}

#[pymethods]
impl PySaliencyMap {
    #[new]
    fn new(width: usize, height: usize, values: Vec<f64>) -> PyResult<Self> {
        Ok(Self { inner: metrics::SaliencyMap::from_values(width, height, values).map_err(value_err)? })
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.inner.values().to_vec()
    }

    fn sum(&self) -> f64 {
        self.inner.sum()
    }

    fn is_all_zero(&self) -> bool {
        self.inner.is_all_zero()
    }

    /// Scales to unit mass; an all-zero map becomes uniform.
    fn normalize(&self) -> PyResult<Self> {
        Ok(Self { inner: self.inner.normalize().map_err(value_err)? })
    }

    fn __repr__(&self) -> String {
        format!("SaliencyMap({}x{}, sum={})", self.inner.width(), self.inner.height(), self.inner.sum())
    }
}

#[pyclass(name = "Explanation", module = "sabench_py", frozen, get_all)]
struct PyExplanation {
    coefficients: Vec<f64>,
    intercept: f64,
    residual_norm: f64,
    ridge_applied: bool,
    outputs: Vec<f64>,
    map: PySaliencyMap,
}

/// Wraps a Python callable `f(pixels: bytes, width: int, height: int) -> float`.
struct CallablePredictor {
    callable: Py<PyAny>,
    meta: PredictorMeta,
}

impl Predictor for CallablePredictor {
    fn meta(&self) -> &PredictorMeta {
        &self.meta
    }

    fn predict(&self, image: &Image) -> Result<f64, PredictError> {
        Python::attach(|py| {
            let pixels = PyBytes::new(py, &image.pixels);
            self.callable
                .call1(py, (pixels, image.width, image.height))
                .and_then(|v| v.extract::<f64>(py))
                .map_err(|e| PredictError::Other(format!("python predictor: {e}")))
        })
    }
}

/// Explains `scene` with full or partial occlusion enumeration. The oracle
/// for `function` is used unless `predictor` is given.
#[pyfunction]
#[pyo3(signature = (scene, function, sample_size="full", seed=0, render=None, predictor=None, is_classifier=None))]
fn explain(
    py: Python<'_>,
    scene: &PyScene,
    function: &str,
    sample_size: &str,
    seed: u64,
    render: Option<&str>,
    predictor: Option<Py<PyAny>>,
    is_classifier: Option<bool>,
) -> PyResult<PyExplanation> {
    let kind: FunctionKind = parse(function)?;
    let size: SampleSize = parse(sample_size)?;
    let mode = match render {
        Some(r) => parse(r)?,
        None => RenderMode::for_function(kind),
    };
    let image = scene::render_scene(&scene.inner);
    let ex = match predictor {
        Some(callable) => {
            let p = CallablePredictor {
                callable,
                meta: PredictorMeta {
                    name: "python".into(),
                    output_range: (0.0, 1.0),
                    is_classifier: is_classifier.unwrap_or(kind.is_classifier()),
                    raw_logit: false,
                },
            };
            explainer::explain(&image, &scene.inner, &p, size, seed, mode)
        }
        None => {
            let oracle = OraclePredictor::new(scene.inner.clone(), AttributionFunction::new(kind));
            py.detach(|| explainer::explain(&image, &scene.inner, &oracle, size, seed, mode))
        }
    }
    .map_err(runtime_err)?;
    Ok(PyExplanation {
        coefficients: ex.fit.coefficients,
        intercept: ex.fit.intercept,
        residual_norm: ex.fit.residual_norm,
        ridge_applied: ex.fit.ridge_applied,
        outputs: ex.outputs,
        map: PySaliencyMap { inner: ex.map },
    })
}

/// (emd, kl) between a ground-truth map and an explanation map.
#[pyfunction]
#[pyo3(signature = (gt, explanation, bins=DEFAULT_BIN_GRID, eps=DEFAULT_EPS))]
fn score(gt: &PySaliencyMap, explanation: &PySaliencyMap, bins: usize, eps: f64) -> PyResult<(f64, f64)> {
    harness::score(&gt.inner, &explanation.inner, bins, eps).map_err(value_err)
}

/// Exact EMD between two point sets `[(row, col, mass), ...]` on a
/// `width` x `height` grid, normalized by the grid diagonal.
#[pyfunction]
fn emd(width: usize, height: usize, p: Vec<(f64, f64, f64)>, q: Vec<(f64, f64, f64)>) -> PyResult<f64> {
    let sig = |pts: Vec<(f64, f64, f64)>| {
        metrics::Signature::new(width, height, pts.into_iter().map(|(r, c, m)| ((r, c), m)).collect())
    };
    metrics::emd(&sig(p), &sig(q)).map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (p, q, eps=DEFAULT_EPS))]
fn kl_div(p: &PySaliencyMap, q: &PySaliencyMap, eps: f64) -> PyResult<f64> {
    metrics::kl_div(&p.inner.normalize().map_err(value_err)?, &q.inner.normalize().map_err(value_err)?, eps)
        .map_err(value_err)
}

/// Attribution function value for per-pattern counts.
#[pyfunction]
fn eval_function(function: &str, counts: Vec<usize>) -> PyResult<f64> {
    AttributionFunction::new(parse(function)?).eval(&counts).map_err(value_err)
}

#[pyfunction]
fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    datagen::derive_seed(master, stream, index)
}

/// Writes a dataset directory and returns its manifest as JSON.
#[pyfunction]
#[pyo3(signature = (dataset, out, n=1000, n_val=200, seed=0))]
fn generate_dataset(py: Python<'_>, dataset: &str, out: PathBuf, n: usize, n_val: usize, seed: u64) -> PyResult<String> {
    let config = GenConfig::new(parse(dataset)?).with_counts(n, n_val).with_seed(seed);
    let manifest = py.detach(|| datagen::generate_dataset(&config, &out)).map_err(runtime_err)?;
    serde_json::to_string(&manifest).map_err(runtime_err)
}

/// Runs an experiment from a JSON config and returns the summary as JSON.
#[pyfunction]
fn run_experiment(py: Python<'_>, config: &str) -> PyResult<String> {
    let mut config: ExperimentConfig = serde_json::from_str(config).map_err(value_err)?;
    if config.experiment == 1 && config.sample_sizes.is_empty() {
        config.sample_sizes = ExperimentConfig::default_sweep();
    }
    let report = py.detach(|| harness::run_experiment(&config)).map_err(runtime_err)?;
    serde_json::to_string(&report).map_err(runtime_err)
}

#[pymodule]
pub fn sabench_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScene>()?;
    m.add_class::<PySaliencyMap>()?;
    m.add_class::<PyExplanation>()?;
    m.add_function(wrap_pyfunction!(explain, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    m.add_function(wrap_pyfunction!(emd, m)?)?;
    m.add_function(wrap_pyfunction!(kl_div, m)?)?;
    m.add_function(wrap_pyfunction!(eval_function, m)?)?;
    m.add_function(wrap_pyfunction!(derive_seed, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add("BIN_GRID", DEFAULT_BIN_GRID)?;
    m.add("EPS", DEFAULT_EPS)?;
    Ok(())
}
