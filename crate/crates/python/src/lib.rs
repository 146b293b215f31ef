//! Python bindings. Structured results (histories, metrics, reports) cross
//! the boundary as plain dicts and lists.

use std::path::PathBuf;

use dn as core;
use core::data::{self as data, SynthConfig};
use core::train::{self as train, TrainConfig};
use core::{ModalitySet, ModelConfig, ModelKind, Regime};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn err(e: core::Error) -> PyErr {
    match e {
        core::Error::Io(_) => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = core::Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(err)
}

/// Model architecture and dimensions.
#[pyclass(name = "ModelConfig", from_py_object)]
#[derive(Clone)]
struct PyModelConfig {
    inner: ModelConfig,
}

#[pymethods]
impl PyModelConfig {
    /// `preset` is one of paper, compact, miniature.
    #[new]
    #[pyo3(signature = (preset="compact", kind="drivernet", aggregation="gap", fusion="cf", modalities=None, seed=0))]
    fn new(preset: &str, kind: &str, aggregation: &str, fusion: &str, modalities: Option<&str>, seed: u64) -> PyResult<Self> {
        let base = match preset {
            "paper" => ModelConfig::paper(),
            "compact" => ModelConfig::compact(),
            "miniature" => ModelConfig::miniature(),
            other => return Err(PyValueError::new_err(format!("unknown preset '{other}'"))),
        };
        let mut inner = base
            .with_kind(parse::<ModelKind>(kind)?)
            .with_aggregation(parse(aggregation)?)
            .with_fusion(parse(fusion)?)
            .with_seed(seed);
        if let Some(m) = modalities {
            inner = inner.with_modalities(parse::<ModalitySet>(m)?);
        }
        inner.validate().map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn kind(&self) -> String {
        self.inner.kind.to_string()
    }

    #[getter]
    fn aggregation(&self) -> String {
        self.inner.aggregation.to_string()
    }

    #[getter]
    fn fusion(&self) -> String {
        self.inner.fusion.to_string()
    }

    fn to_dict(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner)
    }

    /// Parameter audit rows as `(item, ours, paper or None)`.
    fn audit(&self) -> PyResult<Vec<(String, i64, Option<i64>)>> {
        Ok(core::audit::audit(&self.inner)
            .map_err(err)?
            .into_iter()
            .map(|r| (r.item, r.ours, r.paper))
            .collect())
    }

    fn __repr__(&self) -> String {
        format!("ModelConfig(kind={}, aggregation={}, fusion={})", self.inner.kind, self.inner.aggregation, self.inner.fusion)
    }
}

/// A set of labelled synthetic or loaded clips.
#[pyclass(name = "Dataset")]
struct PyDataset {
    inner: data::Dataset,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    #[pyo3(signature = (clips=600, seed=42, frames=16, frame_size=32, window=16, noise=0.02, test_fraction=0.25, jobs=1))]
    #[allow(clippy::too_many_arguments)]
    fn generate(
        py: Python<'_>,
        clips: usize,
        seed: u64,
        frames: usize,
        frame_size: usize,
        window: usize,
        noise: f64,
        test_fraction: f64,
        jobs: usize,
    ) -> PyResult<Self> {
        let mut cfg = SynthConfig { clips, seed, frames, frame_size, noise, test_fraction, ..SynthConfig::default() };
        cfg.rule.window = window;
        let inner = py.detach(|| data::generate_dataset(&cfg, jobs)).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: data::read_dataset(&path).map_err(err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        data::write_dataset(&path, &self.inner).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn labels(&self) -> Vec<usize> {
        self.inner.labels()
    }

    /// Indices of the `"train"` or `"test"` split.
    fn split_indices(&self, split: &str) -> PyResult<Vec<usize>> {
        let split = match split {
            "train" => data::Split::Train,
            "test" => data::Split::Test,
            other => return Err(PyValueError::new_err(format!("unknown split '{other}'"))),
        };
        Ok(self.inner.split_indices(split))
    }

    fn ready_fraction(&self) -> f64 {
        self.inner.ready_fraction()
    }

    /// Per-frame features of one clip in the JSON-lines record layout.
    fn features(&self, py: Python<'_>, index: usize) -> PyResult<Py<PyAny>> {
        let clip = self.inner.clips.get(index).ok_or_else(|| PyValueError::new_err("clip index out of range"))?;
        let mut buf = Vec::new();
        data::write_features(&mut buf, &clip.features).map_err(err)?;
        let json = py.import("json")?;
        let lines = String::from_utf8(buf).expect("features are UTF-8");
        lines.lines().map(|l| Ok(json.call_method1("loads", (l,))?.unbind())).collect::<PyResult<Vec<_>>>().map(|v| {
            v.into_pyobject(py).expect("list conversion").into_any().unbind()
        })
    }
}

fn training(epochs: usize, lr: f64, batch: usize, seed: u64, regime: &str) -> PyResult<TrainConfig> {
    let mut cfg = TrainConfig { epochs, batch, seed, regime: parse::<Regime>(regime)?, ..TrainConfig::default() };
    cfg.optimizer.lr = lr;
    cfg.validate().map_err(err)?;
    Ok(cfg)
}

fn indices_or_split(ds: &data::Dataset, indices: Option<Vec<usize>>, split: data::Split) -> Vec<usize> {
    indices.unwrap_or_else(|| ds.split_indices(split))
}

/// A context, feature or fused network with its parameters.
#[pyclass(name = "Network")]
struct PyNetwork {
    inner: core::Network,
}

#[pymethods]
impl PyNetwork {
    #[new]
    fn new(config: &PyModelConfig) -> PyResult<Self> {
        Ok(Self { inner: core::Network::new(config.inner.clone()).map_err(err)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: train::load_checkpoint(&path).map_err(err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        train::save_checkpoint(&path, &self.inner).map_err(err)
    }

    #[getter]
    fn config(&self) -> PyModelConfig {
        PyModelConfig { inner: self.inner.config.clone() }
    }

    /// Trainable, encoder and per-block counts plus per-layer totals.
    fn count_parameters(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.count_parameters())
    }

    /// Trains on `indices` (default: the train split) and returns the
    /// per-epoch loss and accuracy.
    #[pyo3(signature = (dataset, indices=None, epochs=30, lr=1e-3, batch=8, seed=0, regime="all"))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        &mut self,
        py: Python<'_>,
        dataset: &PyDataset,
        indices: Option<Vec<usize>>,
        epochs: usize,
        lr: f64,
        batch: usize,
        seed: u64,
        regime: &str,
    ) -> PyResult<Py<PyAny>> {
        let cfg = training(epochs, lr, batch, seed, regime)?;
        let idx = indices_or_split(&dataset.inner, indices, data::Split::Train);
        let net = &mut self.inner;
        let history = py.detach(|| train::train(net, &dataset.inner, &idx, &cfg)).map_err(err)?;
        to_py(py, &history)
    }

    /// Metrics and predictions on `indices` (default: the test split).
    #[pyo3(signature = (dataset, indices=None))]
    fn evaluate(&self, py: Python<'_>, dataset: &PyDataset, indices: Option<Vec<usize>>) -> PyResult<Py<PyAny>> {
        let idx = indices_or_split(&dataset.inner, indices, data::Split::Test);
        let eval = py.detach(|| train::evaluate(&self.inner, &dataset.inner, &idx)).map_err(err)?;
        to_py(py, &eval)
    }

    /// Class logits `[ready, not-ready]` per clip.
    #[pyo3(signature = (dataset, indices=None))]
    fn logits(&self, dataset: &PyDataset, indices: Option<Vec<usize>>) -> PyResult<Vec<Vec<f64>>> {
        let idx = indices_or_split(&dataset.inner, indices, data::Split::Test);
        let t = train::trainer::logits(&self.inner, &dataset.inner, &idx).map_err(err)?;
        Ok(t.data().chunks(t.shape()[1]).map(<[f64]>::to_vec).collect())
    }
}

/// k-fold cross-validation over the whole dataset.
#[pyfunction]
#[pyo3(signature = (config, dataset, k=5, epochs=30, lr=1e-3, batch=8, seed=0, regime="all", jobs=1))]
#[allow(clippy::too_many_arguments)]
fn cross_validate(
    py: Python<'_>,
    config: &PyModelConfig,
    dataset: &PyDataset,
    k: usize,
    epochs: usize,
    lr: f64,
    batch: usize,
    seed: u64,
    regime: &str,
    jobs: usize,
) -> PyResult<Py<PyAny>> {
    let cfg = training(epochs, lr, batch, seed, regime)?;
    let report = py.detach(|| train::cross_validate(&config.inner, &cfg, &dataset.inner, k, jobs)).map_err(err)?;
    to_py(py, &report)
}

/// Finite-difference gradient checks; returns one dict per check.
#[pyfunction]
#[pyo3(signature = (seed=0, layers_only=false))]
fn gradcheck(py: Python<'_>, seed: u64, layers_only: bool) -> PyResult<Py<PyAny>> {
    let rows = py
        .detach(|| {
            let mut rows = train::gradsuite::layer_suite(seed)?;
            if !layers_only {
                rows.extend(train::gradsuite::model_suite(seed)?);
            }
            Ok::<_, core::Error>(rows)
        })
        .map_err(err)?;
    to_py(py, &rows)
}

#[pymodule]
#[pyo3(name = "drivernet")]
fn drivernet_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModelConfig>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyNetwork>()?;
    m.add_function(wrap_pyfunction!(cross_validate, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
