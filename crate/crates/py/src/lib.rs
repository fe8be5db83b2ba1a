//! Python bindings: synthesize archives, train from a run config, predict
//! curves from a checkpoint and score them.

use std::path::Path;

use anticipation::archive::{load_archive, save_archive, Archive};
use anticipation::checkpoint::{Checkpoint, RngState};
use anticipation::config::RunConfig;
use anticipation::metrics::{evaluate as evaluate_curves, EvalConfig};
use anticipation::model::{Model, Variant};
use anticipation::scene::{PredictionCurve, VideoSample};
use anticipation::synth::{generate_dataset, synthetic_dims, DatasetSpec};
use anticipation::training::{self, WeightUnit};
use anticipation::Error;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Argument(_) | Error::Config(_) | Error::Scenario(_) | Error::Protocol(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Write `count` synthetic clips to the archive directory `out`.
#[pyfunction]
#[pyo3(signature = (out, count, seed=0, confusable_fraction=0.5))]
fn synth(out: &str, count: usize, seed: u64, confusable_fraction: f64) -> PyResult<()> {
    let spec = DatasetSpec {
        confusable_fraction,
        ..DatasetSpec::default()
    };
    let videos = generate_dataset(&spec, count, seed).map_err(py_err)?;
    save_archive(&Archive::new(synthetic_dims(), videos), Path::new(out)).map_err(py_err)
}

#[pyfunction]
fn video_ids(archive: &str) -> PyResult<Vec<String>> {
    let archive = load_archive(Path::new(archive)).map_err(py_err)?;
    Ok(archive.videos.into_iter().map(|v| v.id).collect())
}

/// Train on the training split named by the run config at `config` and save
/// the checkpoint to `out`. Returns the epoch log.
#[pyfunction]
#[pyo3(signature = (config, out, variant="full"))]
fn train<'py>(py: Python<'py>, config: &str, out: &str, variant: &str) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let config = RunConfig::load(Path::new(config)).map_err(py_err)?;
    let variant: Variant = variant.parse().map_err(py_err)?;
    let archive = load_archive(&config.data.archive).map_err(py_err)?;
    let videos: Vec<VideoSample> = config.split(&archive.videos).0.into_iter().cloned().collect();
    let model = Model::new(
        config.model.clone(),
        archive.dims,
        variant.ablation(),
        config.train.seed,
    )
    .map_err(py_err)?;
    let outcome = training::train(model, &videos, &config.train, &config.eval, |_| {}).map_err(py_err)?;
    let checkpoint = Checkpoint {
        model: outcome.model,
        train: Some(config.train.clone()),
        epoch: outcome.best_epoch,
        rng: Some(RngState::capture(&outcome.rng)),
    };
    checkpoint.save(Path::new(out)).map_err(py_err)?;
    outcome
        .log
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("epoch", r.epoch)?;
            d.set_item("loss", r.loss)?;
            d.set_item("ap", r.ap)?;
            d.set_item("mtta", r.mtta)?;
            d.set_item("lr", r.lr)?;
            Ok(d)
        })
        .collect()
}

fn curve_dict<'py>(py: Python<'py>, c: &PredictionCurve) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("video_id", &c.video_id)?;
    d.set_item("probs", c.probs.clone())?;
    d.set_item("positive", c.positive)?;
    d.set_item("accident_frame", c.accident_frame)?;
    d.set_item("fps", c.fps)?;
    Ok(d)
}

fn required<'py, T: for<'a> FromPyObject<'a, 'py>>(d: &Bound<'py, PyDict>, key: &str) -> PyResult<T> {
    match d.get_item(key)? {
        Some(v) => v.extract().map_err(Into::into),
        None => Err(PyValueError::new_err(format!("curve is missing '{key}'"))),
    }
}

/// Per-frame probability curves for every clip of `archive`.
#[pyfunction]
fn predict<'py>(py: Python<'py>, checkpoint: &str, archive: &str) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let checkpoint = Checkpoint::load(Path::new(checkpoint)).map_err(py_err)?;
    let archive = load_archive(Path::new(archive)).map_err(py_err)?;
    archive
        .videos
        .iter()
        .map(|v| {
            let curve = checkpoint.model.predict(v).map_err(py_err)?;
            curve_dict(py, &curve)
        })
        .collect()
}

/// Score curves (dicts as returned by `predict`).
#[pyfunction]
#[pyo3(signature = (curves, q=0.5, r0=0.8))]
fn evaluate<'py>(py: Python<'py>, curves: Vec<Bound<'py, PyDict>>, q: f64, r0: f64) -> PyResult<Bound<'py, PyDict>> {
    let curves: Vec<PredictionCurve> = curves
        .iter()
        .map(|d| {
            PredictionCurve::new(
                required::<String>(d, "video_id")?,
                required(d, "probs")?,
                required(d, "positive")?,
                required(d, "accident_frame")?,
                required(d, "fps")?,
            )
            .map_err(py_err)
        })
        .collect::<PyResult<_>>()?;
    let cfg = EvalConfig {
        q,
        r0,
        ..EvalConfig::default()
    };
    let report = evaluate_curves(&curves, &cfg).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("ap", report.ap)?;
    d.set_item("p_at_80r", report.p_at_80r)?;
    d.set_item("mtta_s", report.mtta_s)?;
    d.set_item("tta_at_80r_s", report.tta_at_80r_s)?;
    d.set_item("auc", report.auc)?;
    d.set_item("n_positive", report.n_positive)?;
    d.set_item("n_negative", report.n_negative)?;
    Ok(d)
}

fn unit(name: &str) -> PyResult<WeightUnit> {
    match name {
        "frames" => Ok(WeightUnit::Frames),
        "seconds" => Ok(WeightUnit::Seconds),
        other => Err(PyValueError::new_err(format!(
            "unit must be 'frames' or 'seconds', not '{other}'"
        ))),
    }
}

#[pyfunction]
#[pyo3(signature = (probs, y, fps, unit_name="seconds"))]
fn positive_loss(probs: Vec<f64>, y: usize, fps: f64, unit_name: &str) -> PyResult<f64> {
    training::positive_loss(&probs, Some(y), fps, unit(unit_name)?).map_err(py_err)
}

#[pyfunction]
fn negative_loss(probs: Vec<f64>) -> f64 {
    training::negative_loss(&probs)
}

#[pymodule]
#[pyo3(name = "anticipation")]
fn anticipation_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(video_ids, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(predict, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(positive_loss, m)?)?;
    m.add_function(wrap_pyfunction!(negative_loss, m)?)?;
    Ok(())
}
