//! Python bindings: configuration, dataset generation, training,
//! evaluation, single-model inference and the loss / fusion primitives.
//!
//! Tensors cross the boundary as flat lists of floats in HWC order.

use std::path::PathBuf;

use gated_reid::checkpoint::load_checkpoint;
use gated_reid::data::{generate_dataset, load_dataset, save_dataset, train_test_split};
use gated_reid::gradcheck::{network_suite, operator_suite};
use gated_reid::losses::{gate_regularizer, identification_loss, verification_loss};
use gated_reid::network::fuse_gates;
use gated_reid::training::ChannelStats;
use gated_reid::{
    compute_cmc, CMCCurve, DistanceMatrix, Error, FusionMode, GradCheckOptions, Network, NetworkConfig, NetworkParams,
    RunConfig, Tape, Tensor, VideoClip,
};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::InvalidConfig(_) | Error::Shape { .. } => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn tensor(shape: Vec<usize>, values: Vec<f64>) -> PyResult<Tensor<f64>> {
    Tensor::new(shape, values).map_err(py_err)
}

/// Flat `key = value` run configuration.
#[pyclass(name = "Config", skip_from_py_object)]
#[derive(Clone)]
pub struct PyConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    fn new() -> Self {
        PyConfig { inner: RunConfig::default() }
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyConfig { inner: RunConfig::load(&path).map_err(py_err)? })
    }

    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        self.inner.set(key, value).map_err(py_err)
    }

    fn get(&self, key: &str) -> PyResult<String> {
        self.inner
            .to_text()
            .lines()
            .filter_map(|l| l.split_once(" = "))
            .find(|(k, _)| *k == key)
            .map(|(_, v)| v.to_string())
            .ok_or_else(|| PyValueError::new_err(format!("unknown configuration key '{key}'")))
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(py_err)
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn __repr__(&self) -> String {
        format!("Config(output_dir={:?})", self.inner.output_dir.display().to_string())
    }
}

/// A network with the channel statistics of its training set.
#[pyclass(name = "Model")]
pub struct PyModel {
    network: Network<f32>,
    stats: ChannelStats,
}

#[pymethods]
impl PyModel {
    /// Freshly initialized weights for the configuration's network, with
    /// identity normalization.
    #[staticmethod]
    #[pyo3(signature = (config, seed=0))]
    fn init(config: &PyConfig, seed: u64) -> PyResult<Self> {
        let cfg = config.inner.network.clone();
        let params = NetworkParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(seed)).map_err(py_err)?;
        Ok(PyModel { network: Network::new(cfg, params).map_err(py_err)?, stats: ChannelStats::identity() })
    }

    #[staticmethod]
    fn load(checkpoint_dir: PathBuf) -> PyResult<Self> {
        let ck = load_checkpoint::<f32>(&checkpoint_dir).map_err(py_err)?;
        Ok(PyModel { network: ck.state.network, stats: ck.state.stats })
    }

    /// Network input extents `(height, width)`.
    #[getter]
    fn input_shape(&self) -> (usize, usize) {
        (self.network.config.height, self.network.config.width)
    }

    #[getter]
    fn feature_dim(&self) -> usize {
        self.network.config.feature_dim
    }

    /// Runs a clip of `T` frames (`T*H*W*3` colors and `T*H*W*2` flow
    /// values at the network's input extents). Returns the pooled feature
    /// and the spatial mean of the fused gate per frame (empty when ungated).
    fn infer(&self, frames: Vec<f32>, flow: Vec<f32>) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let (height, width) = self.input_shape();
        let clip = VideoClip { person_id: 0, camera_id: 0, height, width, frames, flow, labels: Vec::new() };
        clip.validate().map_err(py_err)?;
        let inf = self.network.infer(&self.stats.normalize::<f32>(&clip).map_err(py_err)?).map_err(py_err)?;
        let feature = inf.feature.data().iter().map(|&v| v as f64).collect();
        let gates = inf.gates.iter().filter_map(|g| g.fused.as_ref().map(|m| m.mean())).collect();
        Ok((feature, gates))
    }
}

/// Generates the synthetic dataset described by `config` into `dir` and
/// returns the number of clips.
#[pyfunction]
fn generate(config: &PyConfig, dir: PathBuf) -> PyResult<usize> {
    let ds = generate_dataset(&config.inner.generator).map_err(py_err)?;
    save_dataset(&ds, &dir).map_err(py_err)?;
    Ok(ds.clips.len())
}

/// Trains on the training split of `dataset_dir`, writes the checkpoint and
/// returns the training log as tab-separated text.
#[pyfunction]
fn train(py: Python<'_>, config: &PyConfig, dataset_dir: PathBuf, checkpoint_dir: PathBuf) -> PyResult<String> {
    let cfg = config.inner.clone();
    cfg.validate().map_err(py_err)?;
    py.detach(|| {
        let ds = load_dataset(&dataset_dir)?;
        let (train, _) = train_test_split(&ds, cfg.split_fraction, cfg.split_seed)?;
        let (state, log) = gated_reid::train::<f32>(&train, &cfg.network, &cfg.train)?;
        gated_reid::save_checkpoint(&state, &cfg.train, &checkpoint_dir)?;
        Ok(log.to_tsv())
    })
    .map_err(py_err)
}

/// CMC percentages of a checkpoint on the test split chosen by
/// `(split_fraction, split_seed)`.
#[pyfunction]
#[pyo3(signature = (checkpoint_dir, dataset_dir, split_fraction=0.5, split_seed=0))]
fn evaluate(
    py: Python<'_>,
    checkpoint_dir: PathBuf,
    dataset_dir: PathBuf,
    split_fraction: f64,
    split_seed: u64,
) -> PyResult<Vec<f64>> {
    py.detach(|| {
        let ck = load_checkpoint::<f32>(&checkpoint_dir)?;
        let ds = load_dataset(&dataset_dir)?;
        let (_, test) = train_test_split(&ds, split_fraction, split_seed)?;
        Ok(compute_cmc(&test, &ck.state.network, &ck.state.stats)?.cmc.ranks)
    })
    .map_err(py_err)
}

/// CMC percentages from a probe-by-gallery distance matrix.
#[pyfunction]
fn cmc(distances: Vec<Vec<f64>>, probe_ids: Vec<usize>, gallery_ids: Vec<usize>) -> PyResult<Vec<f64>> {
    if distances.len() != probe_ids.len() {
        return Err(PyValueError::new_err("one distance row per probe is required"));
    }
    let d = DistanceMatrix::new(probe_ids, gallery_ids, distances.concat()).map_err(py_err)?;
    Ok(CMCCurve::from_distances(&d).map_err(py_err)?.ranks)
}

/// Fused gate of two gate maps given as flat lists.
#[pyfunction]
fn fuse(color: Vec<f64>, flow: Vec<f64>, mode: &str) -> PyResult<Vec<f64>> {
    let mode: FusionMode = mode.parse().map_err(py_err)?;
    let n = color.len();
    let mut tape = Tape::new();
    let a = tape.constant(tensor(vec![n, 1, 1], color)?);
    let b = tape.constant(tensor(vec![flow.len(), 1, 1], flow)?);
    let f = fuse_gates(&mut tape, a, b, mode).map_err(py_err)?;
    Ok(tape.value(f).data().to_vec())
}

#[pyfunction]
#[pyo3(signature = (a, b, same_person, margin=2.0))]
fn verification(a: Vec<f64>, b: Vec<f64>, same_person: bool, margin: f64) -> PyResult<f64> {
    let mut tape = Tape::new();
    let va = tape.constant(tensor(vec![a.len()], a)?);
    let vb = tape.constant(tensor(vec![b.len()], b)?);
    let l = verification_loss(&mut tape, va, vb, same_person, margin).map_err(py_err)?;
    Ok(tape.value(l).item())
}

/// Regularizer of one gate map given as a flat list.
#[pyfunction]
fn regularizer(gate: Vec<f64>) -> PyResult<f64> {
    let mut tape = Tape::new();
    let g = tape.constant(tensor(vec![gate.len(), 1, 1], gate)?);
    let l = gate_regularizer(&mut tape, g).map_err(py_err)?;
    Ok(tape.value(l).item())
}

/// Softmax cross-entropy of `weight @ feature` (weight given as rows).
#[pyfunction]
fn identification(feature: Vec<f64>, weight: Vec<Vec<f64>>, target: usize) -> PyResult<f64> {
    let rows = weight.len();
    let mut tape = Tape::new();
    let v = tape.constant(tensor(vec![feature.len()], feature)?);
    let cols = weight.first().map_or(0, Vec::len);
    let w = tape.constant(tensor(vec![rows, cols], weight.concat())?);
    let l = identification_loss(&mut tape, v, target, w).map_err(py_err)?;
    Ok(tape.value(l).item())
}

/// Worst relative error per operator plus `end_to_end` for the small
/// network.
#[pyfunction]
#[pyo3(signature = (seed=0, max_coords=None, frames=2))]
fn gradcheck<'py>(
    py: Python<'py>,
    seed: u64,
    max_coords: Option<usize>,
    frames: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let opts = GradCheckOptions { max_coords_per_input: max_coords, seed, ..Default::default() };
    let (ops, net) = py
        .detach(|| -> gated_reid::Result<_> {
            let ops = operator_suite(seed, &opts)?;
            let (_, net) = network_suite(&NetworkConfig::tiny(), frames, seed, &opts)?;
            Ok((ops, net))
        })
        .map_err(py_err)?;
    let out = PyDict::new(py);
    for c in ops {
        out.set_item(c.op.name(), c.report.max_rel_error)?;
    }
    out.set_item("end_to_end", net.max_rel_error)?;
    Ok(out)
}

#[pymodule]
fn gated_reid_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(cmc, m)?)?;
    m.add_function(wrap_pyfunction!(fuse, m)?)?;
    m.add_function(wrap_pyfunction!(verification, m)?)?;
    m.add_function(wrap_pyfunction!(regularizer, m)?)?;
    m.add_function(wrap_pyfunction!(identification, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
