//! Python bindings for the pedestrian crossing-intention pipeline.
//!
//! Exposes scene generation and I/O, feature extraction, orientation math,
//! classifier training/inference, metrics and the streaming warning pipeline.

use p2cws::classifiers::{
    train, Architecture, ClassifierConfig, TrainConfig, TrainDataset, TrainedClassifier,
};
use p2cws::evaluation::{
    accuracy_at as eval_accuracy_at, classification_metrics as eval_classification_metrics,
    evaluate_orientation as eval_orientation, mean_absolute_error as eval_mae,
};
use p2cws::features::{
    extract_scene_windows, read_dataset, slot_count, write_dataset, FeatureConfig, FeatureWindow,
};
use p2cws::geometry;
use p2cws::measurement::{self, KnowledgeBase};
use p2cws::scene_model::{
    BoundingBox, CrossingState, Detection, JointName, ObjectClass, Pose3D, SceneBundle,
};
use p2cws::stream::{stream_predict, StreamConfig};
use p2cws::synthetic::{
    generate_collection as synth_collection, generate_scene as synth_scene, CollectionSpec,
    ScenarioSpec, Script,
};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use std::collections::BTreeMap;
use std::path::PathBuf;

fn value_err(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn io_err(e: impl ToString) -> PyErr {
    PyIOError::new_err(e.to_string())
}

fn parse_script(name: &str) -> PyResult<Script> {
    Script::parse(name).ok_or_else(|| {
        value_err(format!(
            "unknown script `{name}` (walk_through | approach_wait_cross | approach_no_cross | cross_immediately)"
        ))
    })
}

fn pose_from_dict(joints: &Bound<'_, PyDict>) -> PyResult<Pose3D> {
    let mut pose = Pose3D::new(0.0);
    for (key, value) in joints.iter() {
        let name: String = key.extract()?;
        let joint = JointName::parse(&name)
            .ok_or_else(|| value_err(format!("unknown joint `{name}`")))?;
        let coords: (f64, f64, f64) = value.extract()?;
        pose.joints.insert(
            joint,
            nalgebra::Vector3::new(coords.0, coords.1, coords.2),
        );
    }
    Ok(pose)
}

/// Returns the version of this extension.
#[pyfunction]
fn version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}

/// Generates one synthetic scene and writes it as a track file.
/// Returns a summary dict with the protagonist id and crossing interval.
#[pyfunction]
#[pyo3(signature = (script, path, n_pedestrians=2, n_vehicles=3, duration=8.0, noise=0.0, seed=0))]
#[allow(clippy::too_many_arguments)]
fn generate_scene(
    py: Python<'_>,
    script: &str,
    path: PathBuf,
    n_pedestrians: usize,
    n_vehicles: usize,
    duration: f64,
    noise: f64,
    seed: u64,
) -> PyResult<PyObject> {
    let spec = ScenarioSpec {
        script: parse_script(script)?,
        n_pedestrians,
        n_vehicles,
        duration,
        noise,
        seed,
    };
    let (scene, truth) = synth_scene(&spec).map_err(value_err)?;
    p2cws::scene_model::save_scene(&scene, &path).map_err(io_err)?;
    let out = PyDict::new(py);
    out.set_item("protagonist", truth.protagonist)?;
    out.set_item("n_tracks", scene.tracks.len())?;
    out.set_item(
        "crossing_interval",
        truth.tracks[&truth.protagonist].crossing,
    )?;
    Ok(out.into())
}

/// Generates a scene collection (train/val/test splits cycling through the
/// scripts) plus a manifest.json in `out_dir`.
#[pyfunction]
#[pyo3(signature = (out_dir, train, val, test, scripts, n_pedestrians=2, n_vehicles=3, duration=8.0, noise=0.5, base_seed=0))]
#[allow(clippy::too_many_arguments)]
fn generate_collection(
    out_dir: PathBuf,
    train: usize,
    val: usize,
    test: usize,
    scripts: Vec<String>,
    n_pedestrians: usize,
    n_vehicles: usize,
    duration: f64,
    noise: f64,
    base_seed: u64,
) -> PyResult<usize> {
    let scripts = scripts
        .iter()
        .map(|s| parse_script(s))
        .collect::<PyResult<Vec<_>>>()?;
    let spec = CollectionSpec {
        train,
        val,
        test,
        scripts,
        n_pedestrians,
        n_vehicles,
        duration,
        noise,
        base_seed,
    };
    let manifest = synth_collection(&spec, &out_dir).map_err(value_err)?;
    manifest
        .save(out_dir.join("manifest.json"))
        .map_err(io_err)?;
    Ok(manifest.scenes.len())
}

/// A loaded scene bundle.
#[pyclass]
struct Scene {
    inner: SceneBundle,
}

#[pymethods]
impl Scene {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Scene> {
        Ok(Scene {
            inner: p2cws::scene_model::load_scene(path).map_err(value_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        p2cws::scene_model::save_scene(&self.inner, path).map_err(io_err)
    }

    #[getter]
    fn frame_rate(&self) -> f64 {
        self.inner.frame_rate
    }

    #[getter]
    fn n_tracks(&self) -> usize {
        self.inner.tracks.len()
    }

    fn pedestrian_ids(&self) -> Vec<u64> {
        self.inner.pedestrians().map(|t| t.id).collect()
    }

    fn vehicle_ids(&self) -> Vec<u64> {
        self.inner.vehicles().map(|t| t.id).collect()
    }

    fn time_span(&self) -> Option<(f64, f64)> {
        self.inner.time_span()
    }

    fn track_class(&self, id: u64) -> PyResult<String> {
        self.inner
            .track(id)
            .map(|t| t.class.as_str().to_string())
            .ok_or_else(|| value_err(format!("no track {id}")))
    }
}

fn window_to_dict<'py>(
    py: Python<'py>,
    ped_id: u64,
    w: &FeatureWindow,
    y: Option<u8>,
) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("ped_id", ped_id)?;
    d.set_item("t_end", w.t_end)?;
    d.set_item("x", w.vectors.clone())?;
    d.set_item("mask", w.presence_mask.clone())?;
    if let Some(y) = y {
        d.set_item("y", y)?;
    }
    Ok(d)
}

/// Extracts labeled feature windows from a scene file.
#[pyfunction]
#[pyo3(signature = (scene_path, context=0.5, horizon=1.5, with_state=false, subject=None))]
fn extract_windows(
    py: Python<'_>,
    scene_path: PathBuf,
    context: f64,
    horizon: f64,
    with_state: bool,
    subject: Option<u64>,
) -> PyResult<PyObject> {
    let scene = p2cws::scene_model::load_scene(scene_path).map_err(value_err)?;
    let config = FeatureConfig::default().with_state(with_state);
    let records =
        extract_scene_windows(&scene, subject, context, horizon, &config).map_err(value_err)?;
    let list = PyList::empty(py);
    for rec in &records {
        let w = FeatureWindow {
            t_end: rec.t_end,
            context_length: rec.context,
            vectors: rec.x.clone(),
            presence_mask: rec.mask.clone(),
        };
        list.append(window_to_dict(py, rec.ped_id, &w, Some(rec.y))?)?;
    }
    Ok(list.into())
}

/// Extracts windows from several scene files into a JSON-lines dataset file.
/// Returns (total, crossing) window counts.
#[pyfunction]
#[pyo3(signature = (scene_paths, out_path, context=0.5, horizon=1.5, with_state=false))]
fn extract_dataset(
    scene_paths: Vec<PathBuf>,
    out_path: PathBuf,
    context: f64,
    horizon: f64,
    with_state: bool,
) -> PyResult<(usize, usize)> {
    let config = FeatureConfig::default().with_state(with_state);
    let mut records = Vec::new();
    for path in &scene_paths {
        let scene = p2cws::scene_model::load_scene(path).map_err(value_err)?;
        records.extend(
            extract_scene_windows(&scene, None, context, horizon, &config).map_err(value_err)?,
        );
    }
    let crossing = records.iter().filter(|r| r.y == 1).count();
    write_dataset(&records, &out_path).map_err(io_err)?;
    Ok((records.len(), crossing))
}

/// Body-orientation angle (degrees in [0, 360)) from a joint dict
/// {"shoulder_l": (x, y, z), ...}.
#[pyfunction]
#[pyo3(signature = (joints, axis_offset=0.0))]
fn body_orientation_angle(joints: &Bound<'_, PyDict>, axis_offset: f64) -> PyResult<f64> {
    let pose = pose_from_dict(joints)?;
    let line = geometry::body_orientation(&pose).map_err(value_err)?;
    geometry::orientation_to_angle_with_offset(&line, axis_offset).map_err(value_err)
}

/// Head-orientation angle (degrees in [0, 360)) from a joint dict.
#[pyfunction]
#[pyo3(signature = (joints, axis_offset=0.0))]
fn head_orientation_angle(joints: &Bound<'_, PyDict>, axis_offset: f64) -> PyResult<f64> {
    let pose = pose_from_dict(joints)?;
    let line = geometry::head_orientation(&pose).map_err(value_err)?;
    geometry::orientation_to_angle_with_offset(&line, axis_offset).map_err(value_err)
}

/// Wrap-around angular distance in degrees, in [0, 180].
#[pyfunction]
fn angular_error(theta_a: f64, theta_b: f64) -> f64 {
    geometry::angular_error(theta_a, theta_b)
}

/// Knowledge-base distance estimate (meters) between two detected objects
/// given their pixel heights and anchor points.
#[pyfunction]
fn estimate_distance(
    class_a: &str,
    height_a_px: f64,
    anchor_a: (f64, f64),
    class_b: &str,
    height_b_px: f64,
    anchor_b: (f64, f64),
) -> PyResult<f64> {
    let parse = |s: &str| {
        ObjectClass::parse(s).ok_or_else(|| value_err(format!("unknown class `{s}`")))
    };
    let det = |h: f64, anchor: (f64, f64)| Detection {
        timestamp: 0.0,
        bbox: BoundingBox {
            u_min: anchor.0 - 1.0,
            v_min: anchor.1 - h,
            u_max: anchor.0 + 1.0,
            v_max: anchor.1,
        },
        anchor: nalgebra::Vector2::new(anchor.0, anchor.1),
        pose: None,
        toes: None,
        state: None,
    };
    measurement::estimate_distance(
        (&det(height_a_px, anchor_a), parse(class_a)?),
        (&det(height_b_px, anchor_b), parse(class_b)?),
        &KnowledgeBase::default(),
    )
    .map_err(value_err)
}

/// Exponential distance normalization exp(-d / n) into (0, 1].
#[pyfunction]
fn normalize_distance(d: f64, n: f64) -> PyResult<f64> {
    measurement::normalize_distance(d, n).map_err(value_err)
}

/// Percent of orientation errors at or below a threshold (degrees).
#[pyfunction]
fn accuracy_at(errors: Vec<f64>, threshold: f64) -> PyResult<f64> {
    eval_accuracy_at(&errors, threshold).map_err(value_err)
}

/// Arithmetic mean of absolute errors.
#[pyfunction]
fn mean_absolute_error(errors: Vec<f64>) -> PyResult<f64> {
    eval_mae(&errors).map_err(value_err)
}

/// Confusion counts, accuracy and F1 (crossing = positive class = 1).
#[pyfunction]
fn classification_metrics(py: Python<'_>, preds: Vec<u8>, gts: Vec<u8>) -> PyResult<PyObject> {
    let rep = eval_classification_metrics(&preds, &gts).map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("tp", rep.tp)?;
    d.set_item("fp", rep.fp)?;
    d.set_item("fn", rep.fn_)?;
    d.set_item("tn", rep.tn)?;
    d.set_item("accuracy", rep.accuracy)?;
    d.set_item("f1", rep.f1)?;
    Ok(d.into())
}

/// Orientation-recognition metrics over a synthetic orientation set.
#[pyfunction]
#[pyo3(signature = (samples=360, jitter=0.0, seed=0, axis_offset=0.0))]
fn evaluate_orientation(
    py: Python<'_>,
    samples: usize,
    jitter: f64,
    seed: u64,
    axis_offset: f64,
) -> PyResult<PyObject> {
    let rep = eval_orientation(samples, jitter, seed, axis_offset).map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("samples", rep.samples)?;
    d.set_item("accuracy_22_5", rep.acc_22_5)?;
    d.set_item("accuracy_45", rep.acc_45)?;
    d.set_item("mae", rep.mae)?;
    d.set_item("fps", rep.fps)?;
    Ok(d.into())
}

/// Trains an intention classifier on JSON-lines window datasets and writes
/// a checkpoint. Returns a summary dict.
#[pyfunction]
#[pyo3(signature = (train_path, val_path, out_path, arch="gru", layers=2, hidden=32, seed=0, lr=1e-3, batch=32, epochs=50, patience=10))]
#[allow(clippy::too_many_arguments)]
fn train_classifier(
    py: Python<'_>,
    train_path: PathBuf,
    val_path: PathBuf,
    out_path: PathBuf,
    arch: &str,
    layers: usize,
    hidden: usize,
    seed: u64,
    lr: f64,
    batch: usize,
    epochs: usize,
    patience: usize,
) -> PyResult<PyObject> {
    let architecture =
        Architecture::parse(arch).ok_or_else(|| value_err(format!("unknown arch `{arch}`")))?;
    let train_records = read_dataset(&train_path).map_err(io_err)?;
    let val_records = read_dataset(&val_path).map_err(io_err)?;
    if train_records.is_empty() {
        return Err(value_err("empty train dataset"));
    }
    let first = &train_records[0];
    let mut cfg = ClassifierConfig::new(architecture, layers, hidden);
    cfg.input_dim = first.x.first().map(|v| v.len()).unwrap_or(0);
    cfg.context_slots = slot_count(first.context);
    cfg.heads = vec![first.horizon];
    cfg.seed = seed;
    let tcfg = TrainConfig {
        learning_rate: lr,
        batch_size: batch,
        max_epochs: epochs,
        patience,
        ..TrainConfig::default()
    };
    let model = train(
        &cfg,
        &tcfg,
        &TrainDataset::from_records(&train_records),
        &TrainDataset::from_records(&val_records),
    )
    .map_err(value_err)?;
    model.save(&out_path).map_err(io_err)?;

    let best_val = model
        .training_log
        .iter()
        .map(|e| e.val_accuracy)
        .fold(0.0, f64::max);
    let d = PyDict::new(py);
    d.set_item("param_count", model.param_count())?;
    d.set_item("epochs", model.training_log.len())?;
    d.set_item("best_val_accuracy", best_val)?;
    Ok(d.into())
}

/// A trained classifier checkpoint.
#[pyclass]
struct Classifier {
    inner: TrainedClassifier,
}

#[pymethods]
impl Classifier {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Classifier> {
        Ok(Classifier {
            inner: TrainedClassifier::load(path).map_err(value_err)?,
        })
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.config.input_dim
    }

    #[getter]
    fn context_slots(&self) -> usize {
        self.inner.config.context_slots
    }

    #[getter]
    fn architecture(&self) -> String {
        self.inner.config.architecture.as_str().to_string()
    }

    /// Per-head predictions for one window: a list of dicts with horizon,
    /// decision ("crossing" | "not_crossing") and probabilities.
    fn predict(
        &self,
        py: Python<'_>,
        x: Vec<Vec<f64>>,
        mask: Option<Vec<bool>>,
    ) -> PyResult<PyObject> {
        let slots = x.len();
        let window = FeatureWindow {
            t_end: 0.0,
            context_length: self.inner.config.context_slots as f64 / 15.0,
            vectors: x,
            presence_mask: mask.unwrap_or_else(|| vec![true; slots]),
        };
        let preds = self.inner.predict_intention(&window).map_err(value_err)?;
        let list = PyList::empty(py);
        for p in preds {
            let d = PyDict::new(py);
            d.set_item("horizon", p.horizon)?;
            d.set_item(
                "decision",
                match p.decision {
                    CrossingState::Crossing => "crossing",
                    CrossingState::NotCrossing => "not_crossing",
                },
            )?;
            d.set_item("p_crossing", p.p_crossing)?;
            d.set_item("p_not_crossing", p.p_not_crossing)?;
            list.append(d)?;
        }
        Ok(list.into())
    }
}

/// Streams a scene file through a checkpoint and returns
/// (warnings, n_predictions). Each warning is a dict.
#[pyfunction]
#[pyo3(signature = (scene_path, checkpoint_path, threshold=0.5))]
fn stream_scene(
    py: Python<'_>,
    scene_path: PathBuf,
    checkpoint_path: PathBuf,
    threshold: f64,
) -> PyResult<(PyObject, usize)> {
    let scene = p2cws::scene_model::load_scene(scene_path).map_err(value_err)?;
    let model = TrainedClassifier::load(checkpoint_path).map_err(value_err)?;
    let with_state = model.config.input_dim == p2cws::features::FEATURE_DIM + 1;
    let config = StreamConfig {
        threshold,
        feature: FeatureConfig::default().with_state(with_state),
        ..StreamConfig::default()
    };
    let lines: Vec<String> = p2cws::scene_model::scene_to_string(&scene)
        .map_err(value_err)?
        .lines()
        .map(|l| l.to_string())
        .collect();
    let (out, _) = stream_predict(lines, model, config).map_err(value_err)?;
    let warnings = PyList::empty(py);
    for w in &out.warnings {
        let d = PyDict::new(py);
        d.set_item("pedestrian_id", w.pedestrian_id)?;
        d.set_item("t_emit", w.t_emit)?;
        d.set_item("horizon", w.horizon)?;
        d.set_item("p_cross", w.p_cross)?;
        d.set_item("current_state", w.current_state.as_str())?;
        d.set_item("nearest_vehicle_id", w.nearest_vehicle_id)?;
        warnings.append(d)?;
    }
    Ok((warnings.into(), out.predictions.len()))
}

/// Canonical joint names accepted by the pose functions.
#[pyfunction]
fn joint_names() -> Vec<&'static str> {
    JointName::ALL.iter().map(|j| j.as_str()).collect()
}

/// Knowledge-base mean heights (meters) by class name.
#[pyfunction]
fn knowledge_base(py: Python<'_>) -> PyResult<PyObject> {
    let kb = KnowledgeBase::default();
    let mut map = BTreeMap::new();
    for class in ObjectClass::ALL {
        map.insert(
            class.as_str().to_string(),
            kb.mean_height(class).map_err(value_err)?,
        );
    }
    let d = PyDict::new(py);
    for (k, v) in map {
        d.set_item(k, v)?;
    }
    Ok(d.into())
}

#[pymodule]
fn p2cws_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Scene>()?;
    m.add_class::<Classifier>()?;
    m.add_function(wrap_pyfunction!(version, m)?)?;
    m.add_function(wrap_pyfunction!(generate_scene, m)?)?;
    m.add_function(wrap_pyfunction!(generate_collection, m)?)?;
    m.add_function(wrap_pyfunction!(extract_windows, m)?)?;
    m.add_function(wrap_pyfunction!(extract_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(body_orientation_angle, m)?)?;
    m.add_function(wrap_pyfunction!(head_orientation_angle, m)?)?;
    m.add_function(wrap_pyfunction!(angular_error, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_distance, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_distance, m)?)?;
    m.add_function(wrap_pyfunction!(accuracy_at, m)?)?;
    m.add_function(wrap_pyfunction!(mean_absolute_error, m)?)?;
    m.add_function(wrap_pyfunction!(classification_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_orientation, m)?)?;
    m.add_function(wrap_pyfunction!(train_classifier, m)?)?;
    m.add_function(wrap_pyfunction!(stream_scene, m)?)?;
    m.add_function(wrap_pyfunction!(joint_names, m)?)?;
    m.add_function(wrap_pyfunction!(knowledge_base, m)?)?;
    Ok(())
}
