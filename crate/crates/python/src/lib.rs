//! Python bindings: `import fishreid`.
//!
//! Images cross the boundary as flat row-major HWC lists of floats in [0, 1]
//! plus their height and width. Reports come back as plain dicts.

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use reid_core::evaluator;
use reid_core::mining::{self, MiningStrategy, PkConfig, Triplet};
use reid_core::model::{Condition, EmbeddingRecord, Split};
use reid_core::preprocess::{self, RgbImage, TransformConfig};
use reid_core::synthetic::{self, SyntheticConfig};
use reid_core::trainer::{self, LinearHead as CoreHead, TrainConfig};
use reid_core::{ReidError, RngStream};

fn err(e: ReidError) -> PyErr {
    match e {
        ReidError::Io { .. } => PyOSError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

#[pyclass(name = "Rng", module = "fishreid")]
struct Rng(RngStream);

#[pymethods]
impl Rng {
    #[new]
    fn new(seed: u64) -> Self {
        Self(RngStream::new(seed))
    }

    fn next(&mut self) -> u64 {
        self.0.next()
    }

    fn below(&mut self, k: u64) -> PyResult<u64> {
        if k == 0 {
            return Err(err(ReidError::EmptyDomain));
        }
        Ok(self.0.below(k))
    }

    fn uniform(&mut self) -> f64 {
        self.0.uniform()
    }

    fn normal(&mut self) -> f64 {
        self.0.normal()
    }

    fn shuffle(&mut self, n: usize) -> PyResult<Vec<usize>> {
        self.0.shuffle(n).map_err(err)
    }

    fn child(&mut self) -> Self {
        Self(self.0.child())
    }
}

#[pyclass(name = "EmbeddingSet", module = "fishreid", skip_from_py_object)]
#[derive(Clone)]
struct EmbeddingSet(reid_core::EmbeddingSet);

#[pymethods]
impl EmbeddingSet {
    /// Columns of equal length; `conditions` are names like
    /// "Separated-Initial", `splits` are "train", "val" or "test".
    #[new]
    #[pyo3(signature = (dim, record_ids, fish_ids, species, conditions, splits, vectors))]
    fn new(
        dim: usize,
        record_ids: Vec<u64>,
        fish_ids: Vec<String>,
        species: Vec<String>,
        conditions: Vec<String>,
        splits: Vec<String>,
        vectors: Vec<Vec<f32>>,
    ) -> PyResult<Self> {
        let n = record_ids.len();
        if [fish_ids.len(), species.len(), conditions.len(), splits.len(), vectors.len()]
            .iter()
            .any(|&l| l != n)
        {
            return Err(PyValueError::new_err("all columns must have the same length"));
        }
        let mut records = Vec::with_capacity(n);
        for i in 0..n {
            let condition: Condition = conditions[i].parse().map_err(err)?;
            let split = match splits[i].to_ascii_lowercase().as_str() {
                "train" => Split::Train,
                "val" => Split::Val,
                "test" => Split::Test,
                other => return Err(PyValueError::new_err(format!("unknown split {other:?}"))),
            };
            records.push(EmbeddingRecord {
                record_id: record_ids[i],
                fish_id: fish_ids[i].clone(),
                species: species[i].clone(),
                condition,
                split,
                vector: vectors[i].clone(),
            });
        }
        reid_core::EmbeddingSet::new(dim, records).map(Self).map_err(err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    #[getter]
    fn record_ids(&self) -> Vec<u64> {
        self.0.records().iter().map(|r| r.record_id).collect()
    }

    #[getter]
    fn fish_ids(&self) -> Vec<String> {
        self.0.records().iter().map(|r| r.fish_id.clone()).collect()
    }

    #[getter]
    fn species(&self) -> Vec<String> {
        self.0.records().iter().map(|r| r.species.clone()).collect()
    }

    #[getter]
    fn conditions(&self) -> Vec<String> {
        self.0.records().iter().map(|r| r.condition.to_string()).collect()
    }

    #[getter]
    fn vectors(&self) -> Vec<Vec<f32>> {
        self.0.records().iter().map(|r| r.vector.clone()).collect()
    }

    fn __repr__(&self) -> String {
        format!("EmbeddingSet(len={}, dim={})", self.0.len(), self.0.dim())
    }
}

#[pyclass(name = "LinearHead", module = "fishreid", skip_from_py_object)]
#[derive(Clone)]
struct LinearHead(CoreHead);

#[pymethods]
impl LinearHead {
    /// Fresh head initialized from `RngStream(seed)`.
    #[new]
    fn new(d_in: usize, d_out: usize, seed: u64) -> PyResult<Self> {
        if d_in == 0 || d_out == 0 {
            return Err(err(ReidError::ZeroDim));
        }
        Ok(Self(CoreHead::init(d_in, d_out, &mut RngStream::new(seed))))
    }

    #[staticmethod]
    fn identity(d: usize) -> Self {
        Self(CoreHead::identity(d))
    }

    #[staticmethod]
    fn load(name: &str) -> PyResult<Self> {
        trainer::load_head(name.as_ref()).map(Self).map_err(err)
    }

    fn save(&self, name: &str) -> PyResult<()> {
        trainer::save_head(&self.0, name.as_ref()).map_err(err)
    }

    #[getter]
    fn d_in(&self) -> usize {
        self.0.d_in()
    }

    #[getter]
    fn d_out(&self) -> usize {
        self.0.d_out()
    }

    /// Row-major `d_in x d_out`.
    #[getter]
    fn weight(&self) -> Vec<f64> {
        self.0.weight.clone()
    }

    #[getter]
    fn bias(&self) -> Vec<f64> {
        self.0.bias.clone()
    }

    fn forward(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        self.0.forward(&x).map_err(err)
    }

    fn embed(&self, set: &EmbeddingSet) -> PyResult<EmbeddingSet> {
        self.0.embed_set(&set.0).map(EmbeddingSet).map_err(err)
    }
}

#[pyfunction]
fn load_store(name: &str) -> PyResult<EmbeddingSet> {
    reid_core::store::load(name).map(EmbeddingSet).map_err(err)
}

#[pyfunction]
fn save_store(set: &EmbeddingSet, name: &str) -> PyResult<()> {
    reid_core::store::save(&set.0, name).map_err(err)
}

/// `(train, val, test)` for preset "separable", "overlapping" or "conditions".
#[pyfunction]
#[pyo3(signature = (preset, seed, train_ids = 50, val_ids = 20, test_ids = 50, instances = 20))]
fn synthetic_splits(
    preset: &str,
    seed: u64,
    train_ids: usize,
    val_ids: usize,
    test_ids: usize,
    instances: usize,
) -> PyResult<(EmbeddingSet, EmbeddingSet, EmbeddingSet)> {
    let cfg = match preset {
        "separable" => SyntheticConfig::separable(),
        "overlapping" => SyntheticConfig::overlapping(),
        "conditions" => SyntheticConfig::with_conditions(),
        other => return Err(PyValueError::new_err(format!("unknown preset {other:?}"))),
    };
    let s = synthetic::make_splits(cfg, seed, train_ids, val_ids, test_ids, instances).map_err(err)?;
    Ok((EmbeddingSet(s.train), EmbeddingSet(s.val), EmbeddingSet(s.test)))
}

/// `(top, left, height, width)` of the content on the canvas.
#[pyfunction]
fn letterbox_geometry(height: usize, width: usize, target: usize) -> PyResult<(usize, usize, usize, usize)> {
    if height == 0 || width == 0 || target == 0 {
        return Err(err(ReidError::ZeroDim));
    }
    let b = preprocess::letterbox_geometry(height, width, target);
    Ok((b.top, b.left, b.height, b.width))
}

#[pyfunction]
#[pyo3(signature = (pixels, height, width, target = 224, pad_value = 0.0))]
fn resize_pad_square(pixels: Vec<f64>, height: usize, width: usize, target: usize, pad_value: f64) -> PyResult<Vec<f64>> {
    let img = RgbImage::new(height, width, pixels).map_err(err)?;
    let cfg = TransformConfig {
        target,
        pad_value,
        ..Default::default()
    };
    Ok(preprocess::resize_pad_square(&img, &cfg).map_err(err)?.data().to_vec())
}

/// CHW tensor from a square HWC canvas; reference statistics by default.
#[pyfunction]
#[pyo3(signature = (pixels, side, mean = None, std = None))]
fn normalize(pixels: Vec<f64>, side: usize, mean: Option<[f64; 3]>, std: Option<[f64; 3]>) -> PyResult<Vec<f64>> {
    let img = RgbImage::new(side, side, pixels).map_err(err)?;
    let mut cfg = TransformConfig {
        target: side,
        ..Default::default()
    };
    if let Some(m) = mean {
        cfg.mean = m;
    }
    if let Some(s) = std {
        cfg.std = s;
    }
    preprocess::normalize(&img, &cfg).map_err(err)
}

/// `(mean, std)` over `(pixels, height, width)` canvases.
#[pyfunction]
fn compute_stats(images: Vec<(Vec<f64>, usize, usize)>) -> PyResult<([f64; 3], [f64; 3])> {
    let imgs = images
        .into_iter()
        .map(|(p, h, w)| RgbImage::new(h, w, p))
        .collect::<Result<Vec<_>, _>>()
        .map_err(err)?;
    let s = preprocess::compute_stats(&imgs).map_err(err)?;
    Ok((s.mean, s.std))
}

#[pyfunction]
fn pairwise_euclidean(rows: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let d = mining::pairwise_euclidean(&rows);
    (0..d.len()).map(|i| d.row(i).to_vec()).collect()
}

#[pyfunction]
fn pk_sample(labels: Vec<String>, p: usize, k: usize, seed: u64) -> PyResult<Vec<usize>> {
    let cfg = PkConfig::new(p, k).map_err(err)?;
    mining::pk_sample(&labels, cfg, &mut RngStream::new(seed)).map_err(err)
}

/// `(anchor, positive, negative)` triplets; strategy "hard" or "semihard".
#[pyfunction]
fn mine(strategy: &str, distances: Vec<Vec<f64>>, labels: Vec<String>, margin: f64) -> PyResult<Vec<(usize, usize, usize)>> {
    let strategy: MiningStrategy = strategy.parse().map_err(err)?;
    if labels.len() != distances.len() {
        return Err(PyValueError::new_err("labels must match the distance matrix"));
    }
    let d = mining::DistanceMatrix::from_rows(distances).map_err(err)?;
    Ok(mining::mine(strategy, &d, &labels, margin)
        .into_iter()
        .map(|t| (t.anchor, t.positive, t.negative))
        .collect())
}

fn to_triplets(triplets: &[(usize, usize, usize)], n: usize) -> PyResult<Vec<Triplet>> {
    triplets
        .iter()
        .map(|&(a, p, q)| {
            if a.max(p).max(q) >= n {
                Err(PyValueError::new_err("triplet index out of range"))
            } else {
                Ok(Triplet::new(a, p, q))
            }
        })
        .collect()
}

#[pyfunction]
fn triplet_loss(x: Vec<Vec<f64>>, triplets: Vec<(usize, usize, usize)>, margin: f64) -> PyResult<f64> {
    let t = to_triplets(&triplets, x.len())?;
    Ok(mining::triplet_loss(&x, &t, margin))
}

/// `(loss, grad_weight, grad_bias, active)` of the head on `x`.
#[pyfunction]
fn loss_backward(
    head: &LinearHead,
    x: Vec<Vec<f64>>,
    triplets: Vec<(usize, usize, usize)>,
    margin: f64,
) -> PyResult<(f64, Vec<f64>, Vec<f64>, usize)> {
    let t = to_triplets(&triplets, x.len())?;
    let out = trainer::loss_backward(&head.0, &x, &t, margin).map_err(err)?;
    Ok((out.loss, out.grads.weight, out.grads.bias, out.active))
}

#[pyfunction]
fn average_precision(relevance: Vec<bool>, num_relevant: usize) -> PyResult<f64> {
    evaluator::average_precision(&relevance, num_relevant).map_err(err)
}

/// Trains a head; keyword options use the config file keys (`epochs=5`,
/// `mining="semihard"`, ...). Returns `(head, history)` with one dict per
/// epoch.
#[pyfunction]
#[pyo3(signature = (train_set, val_set, **options))]
fn train<'py>(
    py: Python<'py>,
    train_set: &EmbeddingSet,
    val_set: &EmbeddingSet,
    options: Option<&Bound<'py, PyDict>>,
) -> PyResult<(LinearHead, Vec<Bound<'py, PyDict>>)> {
    let mut cfg = TrainConfig::default();
    if let Some(opts) = options {
        for (key, value) in opts.iter() {
            let key: String = key.extract()?;
            let value = value.str()?.to_string();
            cfg.set(&key, &value)
                .map_err(|m| PyValueError::new_err(format!("{key}: {m}")))?;
        }
    }
    let (head, hist) = py
        .detach(|| trainer::train(&train_set.0, &val_set.0, &cfg))
        .map_err(err)?;
    let history = hist
        .epochs
        .iter()
        .map(|e| {
            let d = PyDict::new(py);
            d.set_item("epoch", e.epoch)?;
            d.set_item("train_loss", e.train_loss)?;
            d.set_item("val_loss", e.val_loss)?;
            d.set_item("lr", e.lr)?;
            d.set_item("active_triplets", e.active_triplets)?;
            Ok(d)
        })
        .collect::<PyResult<_>>()?;
    Ok((LinearHead(head), history))
}

#[pyfunction]
#[pyo3(signature = (set, seed = 0, k = evaluator::DEFAULT_K))]
fn evaluate<'py>(py: Python<'py>, set: &EmbeddingSet, seed: u64, k: usize) -> PyResult<Bound<'py, PyAny>> {
    let report = py.detach(|| evaluator::evaluate(&set.0, seed, k)).map_err(err)?;
    json_to_py(py, &report.to_json())
}

/// All 16 query x gallery condition cells.
#[pyfunction]
#[pyo3(signature = (set, seed = 0, k = evaluator::DEFAULT_K))]
fn crosseval<'py>(py: Python<'py>, set: &EmbeddingSet, seed: u64, k: usize) -> PyResult<Bound<'py, PyAny>> {
    let m = py
        .detach(|| evaluator::cross_condition_eval(&set.0, &evaluator::full_grid(), seed, k))
        .map_err(err)?;
    json_to_py(py, &serde_json::to_string(&m).expect("matrix serializes"))
}

#[pymodule]
fn fishreid(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Rng>()?;
    m.add_class::<EmbeddingSet>()?;
    m.add_class::<LinearHead>()?;
    m.add("REFERENCE_MEAN", preprocess::REFERENCE_MEAN)?;
    m.add("REFERENCE_STD", preprocess::REFERENCE_STD)?;
    m.add("DEFAULT_K", evaluator::DEFAULT_K)?;
    m.add_function(wrap_pyfunction!(load_store, m)?)?;
    m.add_function(wrap_pyfunction!(save_store, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_splits, m)?)?;
    m.add_function(wrap_pyfunction!(letterbox_geometry, m)?)?;
    m.add_function(wrap_pyfunction!(resize_pad_square, m)?)?;
    m.add_function(wrap_pyfunction!(normalize, m)?)?;
    m.add_function(wrap_pyfunction!(compute_stats, m)?)?;
    m.add_function(wrap_pyfunction!(pairwise_euclidean, m)?)?;
    m.add_function(wrap_pyfunction!(pk_sample, m)?)?;
    m.add_function(wrap_pyfunction!(mine, m)?)?;
    m.add_function(wrap_pyfunction!(triplet_loss, m)?)?;
    m.add_function(wrap_pyfunction!(loss_backward, m)?)?;
    m.add_function(wrap_pyfunction!(average_precision, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(crosseval, m)?)?;
    Ok(())
}
