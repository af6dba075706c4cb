//! Python bindings: grid geometry, fusion, metrics and the pipeline commands.
//!
//! Grids cross the boundary as flat `[horizon][class][row][col]` lists of
//! floats. Pipeline calls release the interpreter while they run.

use std::path::{Path, PathBuf};

use gridcast::fusion::{self, PriorityMap};
use gridcast::grid::{self, GridSequence, GridSpec, OrientedBox, SemClass};
use gridcast::metrics::{self, Counts};
use gridcast::model::Modality;
use gridcast_cli::{CliError, Predictor, RunConfig};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn cli_err(e: CliError) -> PyErr {
    match e {
        CliError::Config(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn class_of(i: usize) -> PyResult<SemClass> {
    SemClass::from_index(i).ok_or_else(|| PyValueError::new_err(format!("class index {i} out of range (0..3)")))
}

fn load_config(config: Option<PathBuf>, overrides: Vec<String>) -> PyResult<RunConfig> {
    RunConfig::load(config.as_deref(), &overrides).map_err(cli_err)
}

fn checked_spec(rows: usize, cols: usize, resolution: f64) -> PyResult<GridSpec> {
    let spec = GridSpec::centered(rows, cols, resolution);
    spec.validate().map_err(value_err)?;
    Ok(spec)
}

/// Area in square meters covered by a `rows` × `cols` grid.
#[pyfunction]
fn coverage_m2(rows: usize, cols: usize, resolution: f64) -> PyResult<f64> {
    Ok(checked_spec(rows, cols, resolution)?.coverage_m2())
}

/// Label grid (row-major class indices) of ego-centered boxes given as
/// `(x, y, length, width, yaw, class)`.
#[pyfunction]
fn rasterize(rows: usize, cols: usize, resolution: f64, boxes: Vec<(f64, f64, f64, f64, f64, usize)>) -> PyResult<Vec<Vec<usize>>> {
    let spec = checked_spec(rows, cols, resolution)?;
    let boxes = boxes
        .into_iter()
        .map(|(x, y, length, width, yaw, c)| {
            Ok(OrientedBox {
                center: (x, y),
                length,
                width,
                yaw,
                class: class_of(c)?,
            })
        })
        .collect::<PyResult<Vec<_>>>()?;
    let labels = grid::rasterize_labels(&boxes, &spec);
    Ok((0..rows).map(|r| (0..cols).map(|c| labels.get(r, c).index()).collect()).collect())
}

fn sequences(rows: usize, cols: usize, inputs: &[Vec<f32>]) -> PyResult<Vec<GridSequence>> {
    let spec = checked_spec(rows, cols, 1.0)?;
    inputs.iter().map(|d| GridSequence::from_planar(spec, d).map_err(value_err)).collect()
}

/// Averages per-modality probability sequences.
#[pyfunction]
fn fuse_average(rows: usize, cols: usize, inputs: Vec<Vec<f32>>) -> PyResult<Vec<f32>> {
    let seqs = sequences(rows, cols, &inputs)?;
    Ok(fusion::fuse_average(&seqs).map_err(value_err)?.to_planar())
}

/// Priority pooling with class priorities `(vru, vehicle, background)`.
#[pyfunction]
#[pyo3(signature = (rows, cols, inputs, priority=(3, 2, 1)))]
fn fuse_priority(rows: usize, cols: usize, inputs: Vec<Vec<f32>>, priority: (u32, u32, u32)) -> PyResult<Vec<f32>> {
    let seqs = sequences(rows, cols, &inputs)?;
    let pm = PriorityMap::new(priority.0, priority.1, priority.2).map_err(value_err)?;
    Ok(fusion::fuse_priority(&seqs, &pm).map_err(value_err)?.to_planar())
}

/// Precision, recall, IoU and accuracy of one confusion count; undefined
/// ratios are `None`.
#[pyfunction]
#[pyo3(name = "metrics")]
fn metrics_of<'py>(py: Python<'py>, tp: u64, fp: u64, fn_: u64, tn: u64) -> PyResult<Bound<'py, PyDict>> {
    let c = Counts { tp, fp, fn_, tn };
    let d = PyDict::new(py);
    d.set_item("precision", metrics::precision(&c))?;
    d.set_item("recall", metrics::recall(&c))?;
    d.set_item("iou", metrics::iou(&c))?;
    d.set_item("accuracy", metrics::accuracy(&c))?;
    Ok(d)
}

/// Simulates `n` samples into `out` and returns the class shares.
#[pyfunction]
#[pyo3(signature = (out, n, seed=1, config=None, overrides=Vec::new()))]
fn simulate<'py>(
    py: Python<'py>,
    out: PathBuf,
    n: usize,
    seed: u64,
    config: Option<PathBuf>,
    overrides: Vec<String>,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = load_config(config, overrides)?;
    let stats = py.detach(|| gridcast_cli::cmd_simulate(&cfg, n, seed, &out)).map_err(cli_err)?;
    let d = PyDict::new(py);
    d.set_item("samples", stats.samples)?;
    d.set_item("cells", stats.cells)?;
    d.set_item("vru", stats.vru)?;
    d.set_item("vehicle", stats.vehicle)?;
    d.set_item("background", stats.background)?;
    Ok(d)
}

/// Trains one modality's net; returns the per-step mean losses.
#[pyfunction]
#[pyo3(signature = (modality, dataset, out, config=None, overrides=Vec::new()))]
fn train(
    py: Python<'_>,
    modality: &str,
    dataset: PathBuf,
    out: PathBuf,
    config: Option<PathBuf>,
    overrides: Vec<String>,
) -> PyResult<Vec<f64>> {
    let modality: Modality = modality.parse().map_err(PyValueError::new_err)?;
    let cfg = load_config(config, overrides)?;
    let log = py.detach(|| gridcast_cli::cmd_train(&cfg, modality, &dataset, &out)).map_err(cli_err)?;
    Ok(log.iter().map(|r| r.loss).collect())
}

/// Evaluates checkpoints in `checkpoints` (or the labels themselves when
/// it is `None`) and returns the t0 table as CSV text.
#[pyfunction]
#[pyo3(signature = (dataset, out, checkpoints=None, config=None, overrides=Vec::new()))]
fn evaluate(
    py: Python<'_>,
    dataset: PathBuf,
    out: PathBuf,
    checkpoints: Option<PathBuf>,
    config: Option<PathBuf>,
    overrides: Vec<String>,
) -> PyResult<String> {
    let cfg = load_config(config, overrides)?;
    let predictor = match checkpoints {
        Some(dir) => Predictor::Checkpoints(dir),
        None => Predictor::Labels,
    };
    let report = py
        .detach(|| gridcast_cli::cmd_eval(&cfg, &predictor, Path::new(&dataset), &out))
        .map_err(cli_err)?;
    Ok(report.table)
}

#[pymodule]
#[pyo3(name = "gridcast")]
pub fn gridcast_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("NUM_HORIZONS", grid::NUM_HORIZONS)?;
    m.add("NUM_CLASSES", grid::NUM_CLASSES)?;
    m.add_function(wrap_pyfunction!(coverage_m2, m)?)?;
    m.add_function(wrap_pyfunction!(rasterize, m)?)?;
    m.add_function(wrap_pyfunction!(fuse_average, m)?)?;
    m.add_function(wrap_pyfunction!(fuse_priority, m)?)?;
    m.add_function(wrap_pyfunction!(metrics_of, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
