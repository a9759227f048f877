//! Orientation and intention metrics, throughput benchmarking, and the
//! ablation grid runner.

use crate::classifiers::{
    count_parameters, train, Architecture, ClassifierConfig, TrainConfig, TrainDataset,
    TrainExample, TrainedClassifier,
};
use crate::features::{
    build_multitask_windows, build_prediction_windows, slot_count, FeatureConfig, FEATURE_DIM,
};
use crate::geometry::{angular_error, body_orientation, orientation_to_angle_with_offset};
use crate::scene_model::SceneBundle;
use crate::synthetic::{
    generate_orientation_set_jittered, ManifestEntry, SceneManifest, Split,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty input")]
    EmptyInput,
    #[error("length mismatch: {0} predictions vs {1} ground truths")]
    LengthMismatch(usize, usize),
    #[error("negative error sample")]
    NegativeError,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Other(String),
}

// ---------------------------------------------------------------------------
// Orientation metrics
// ---------------------------------------------------------------------------

/// Percent of errors at or below the threshold D (degrees).
pub fn accuracy_at(errors: &[f64], threshold_deg: f64) -> Result<f64, EvalError> {
    if errors.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    if errors.iter().any(|e| *e < 0.0) {
        return Err(EvalError::NegativeError);
    }
    let within = errors.iter().filter(|e| **e <= threshold_deg).count();
    Ok(100.0 * within as f64 / errors.len() as f64)
}

/// Arithmetic mean of absolute errors (degrees).
pub fn mean_absolute_error(errors: &[f64]) -> Result<f64, EvalError> {
    if errors.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    Ok(errors.iter().sum::<f64>() / errors.len() as f64)
}

/// Histogram of absolute errors with fixed-width bins; bin counts sum to the
/// sample count.
pub fn error_histogram(errors: &[f64], bin_width: f64) -> Vec<(f64, usize)> {
    if errors.is_empty() {
        return Vec::new();
    }
    let max = errors.iter().cloned().fold(0.0, f64::max);
    let bins = (max / bin_width).floor() as usize + 1;
    let mut hist = vec![0usize; bins];
    for e in errors {
        let idx = ((e / bin_width).floor() as usize).min(bins - 1);
        hist[idx] += 1;
    }
    hist.into_iter()
        .enumerate()
        .map(|(i, c)| ((i as f64 + 0.5) * bin_width, c))
        .collect()
}

/// Orientation-recognition evaluation summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrientationReport {
    pub samples: usize,
    pub acc_22_5: f64,
    pub acc_45: f64,
    pub mae: f64,
    pub fps: f64,
    pub error_samples: Vec<f64>,
    /// Cumulated absolute error per 10-degree ground-truth angle bin.
    pub per_angle_error: Vec<(f64, f64)>,
}

/// Runs the training-free orientation pipeline over a synthetic set and
/// reports the standard metrics. `axis_offset_deg` applies the configurable
/// axis calibration.
pub fn evaluate_orientation(
    n: usize,
    joint_jitter: f64,
    seed: u64,
    axis_offset_deg: f64,
) -> Result<OrientationReport, EvalError> {
    let set = generate_orientation_set_jittered(n, joint_jitter, seed);
    if set.is_empty() {
        return Err(EvalError::EmptyInput);
    }

    let started = Instant::now();
    let mut errors = Vec::with_capacity(set.len());
    let mut per_angle: BTreeMap<i64, f64> = BTreeMap::new();
    for (pose, truth) in &set {
        let line = body_orientation(pose).map_err(|e| EvalError::Other(e.to_string()))?;
        let angle = orientation_to_angle_with_offset(&line, axis_offset_deg)
            .map_err(|e| EvalError::Other(e.to_string()))?;
        let err = angular_error(angle, *truth);
        errors.push(err);
        *per_angle.entry((truth / 10.0).floor() as i64).or_insert(0.0) += err;
    }
    let elapsed = started.elapsed().as_secs_f64();

    Ok(OrientationReport {
        samples: set.len(),
        acc_22_5: accuracy_at(&errors, 22.5)?,
        acc_45: accuracy_at(&errors, 45.0)?,
        mae: mean_absolute_error(&errors)?,
        fps: set.len() as f64 / elapsed.max(1e-9),
        error_samples: errors,
        per_angle_error: per_angle
            .into_iter()
            .map(|(bin, sum)| (bin as f64 * 10.0 + 5.0, sum))
            .collect(),
    })
}

// ---------------------------------------------------------------------------
// Intention metrics
// ---------------------------------------------------------------------------

/// Confusion counts and derived metrics with crossing as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntentionReport {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub accuracy: f64,
    pub f1: f64,
}

/// Exact confusion counts over binary labels (1 = crossing).
pub fn classification_metrics(preds: &[u8], gts: &[u8]) -> Result<IntentionReport, EvalError> {
    if preds.len() != gts.len() {
        return Err(EvalError::LengthMismatch(preds.len(), gts.len()));
    }
    if preds.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (p, g) in preds.iter().zip(gts) {
        match (*p == 1, *g == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let total = (tp + fp + fn_ + tn) as f64;
    let f1_den = (2 * tp + fp + fn_) as f64;
    Ok(IntentionReport {
        tp,
        fp,
        fn_,
        tn,
        accuracy: (tp + tn) as f64 / total,
        f1: if f1_den == 0.0 {
            0.0
        } else {
            2.0 * tp as f64 / f1_den
        },
    })
}

// ---------------------------------------------------------------------------
// Throughput benchmarking
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchStage {
    Orientation,
    Intention,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub stage: BenchStage,
    /// Units processed per repetition (poses or windows).
    pub units: usize,
    pub fps_median: f64,
    pub fps_p5: f64,
    pub fps_p95: f64,
    pub repetitions: usize,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((sorted.len() as f64 - 1.0) * q).round() as usize;
    sorted[idx]
}

/// Wall-clock throughput of one pipeline stage over a scene workload; the
/// median of `repetitions` runs with one warm-up run excluded. File I/O and
/// upstream pose-model inference are outside the measured region.
pub fn benchmark_throughput(
    stage: BenchStage,
    scene: &SceneBundle,
    model: Option<&TrainedClassifier>,
    repetitions: usize,
) -> Result<ThroughputReport, EvalError> {
    let frames: usize = scene.tracks.iter().map(|t| t.detections.len()).sum();
    if frames < 100 {
        return Err(EvalError::Other(format!(
            "workload too small: {frames} detections (need >= 100)"
        )));
    }
    let reps = repetitions.max(1);

    let run_once: Box<dyn Fn() -> Result<(usize, f64), EvalError>> = match stage {
        BenchStage::Orientation => Box::new(|| {
            let started = Instant::now();
            let mut done = 0usize;
            for track in scene.pedestrians() {
                for det in &track.detections {
                    if let Some(pose) = &det.pose {
                        let line =
                            body_orientation(pose).map_err(|e| EvalError::Other(e.to_string()))?;
                        let angle = orientation_to_angle_with_offset(&line, 0.0)
                            .map_err(|e| EvalError::Other(e.to_string()))?;
                        std::hint::black_box(angle);
                        done += 1;
                    }
                }
            }
            Ok((done, started.elapsed().as_secs_f64()))
        }),
        BenchStage::Intention => {
            let default_model;
            let model = match model {
                Some(m) => m,
                None => {
                    let mut cfg = ClassifierConfig::new(Architecture::Gru, 3, 128);
                    cfg.input_dim = FEATURE_DIM;
                    cfg.context_slots = slot_count(0.5);
                    default_model = TrainedClassifier::init(cfg)
                        .map_err(|e| EvalError::Other(e.to_string()))?;
                    &default_model
                }
            };
            let feature_cfg = FeatureConfig::default()
                .with_state(model.config.input_dim == FEATURE_DIM + 1);
            let context = model.config.context_slots as f64 / 15.0;
            let model = model.clone();
            Box::new(move || {
                let started = Instant::now();
                let mut done = 0usize;
                for track in scene.pedestrians() {
                    let windows = build_prediction_windows(track, scene, context, &feature_cfg)
                        .map_err(|e| EvalError::Other(e.to_string()))?;
                    for w in &windows {
                        let p = model
                            .forward(w)
                            .map_err(|e| EvalError::Other(e.to_string()))?;
                        std::hint::black_box(p);
                        done += 1;
                    }
                }
                Ok((done, started.elapsed().as_secs_f64()))
            })
        }
    };

    // Warm-up excluded from statistics.
    let (units, _) = run_once()?;
    if units == 0 {
        return Err(EvalError::Other("stage processed zero units".into()));
    }
    let mut fps: Vec<f64> = Vec::with_capacity(reps);
    for _ in 0..reps {
        let (n, secs) = run_once()?;
        fps.push(n as f64 / secs.max(1e-9));
    }
    fps.sort_by(|a, b| a.total_cmp(b));
    Ok(ThroughputReport {
        stage,
        units,
        fps_median: percentile(&fps, 0.5),
        fps_p5: percentile(&fps, 0.05),
        fps_p95: percentile(&fps, 0.95),
        repetitions: reps,
    })
}

// ---------------------------------------------------------------------------
// Ablation grid
// ---------------------------------------------------------------------------

/// Cartesian ablation grid; every cell gets a seed derived from the base
/// seed and its coordinates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationGrid {
    pub architectures: Vec<Architecture>,
    pub n_layers: Vec<usize>,
    pub n_hidden: Vec<usize>,
    pub contexts: Vec<f64>,
    pub horizons: Vec<f64>,
    pub multi_task: Vec<bool>,
    pub with_state: Vec<bool>,
    pub base_seed: u64,
}

impl AblationGrid {
    /// The 27-cell model-size grid: 3 architectures x layers {2,3,4} x
    /// hidden {32,64,128} at context 0.5 s, horizon 1.5 s, single task.
    pub fn model_size(with_state: bool, base_seed: u64) -> Self {
        AblationGrid {
            architectures: Architecture::ALL.to_vec(),
            n_layers: vec![2, 3, 4],
            n_hidden: vec![32, 64, 128],
            contexts: vec![0.5],
            horizons: vec![1.5],
            multi_task: vec![false],
            with_state: vec![with_state],
            base_seed,
        }
    }

    pub fn cells(&self) -> Vec<AblationCell> {
        let mut cells = Vec::new();
        for &arch in &self.architectures {
            for &layers in &self.n_layers {
                for &hidden in &self.n_hidden {
                    for &context in &self.contexts {
                        for &multi in &self.multi_task {
                            let horizon_sets: Vec<Vec<f64>> = if multi {
                                vec![self.horizons.clone()]
                            } else {
                                self.horizons.iter().map(|h| vec![*h]).collect()
                            };
                            for horizons in horizon_sets {
                                for &state in &self.with_state {
                                    let cell = AblationCell {
                                        architecture: arch,
                                        n_layers: layers,
                                        n_hidden: hidden,
                                        context,
                                        horizons: horizons.clone(),
                                        multi_task: multi,
                                        with_state: state,
                                        seed: 0,
                                    };
                                    cells.push(AblationCell {
                                        seed: cell_seed(self.base_seed, &cell),
                                        ..cell
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
        cells
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub architecture: Architecture,
    pub n_layers: usize,
    pub n_hidden: usize,
    pub context: f64,
    pub horizons: Vec<f64>,
    pub multi_task: bool,
    pub with_state: bool,
    pub seed: u64,
}

/// FNV-1a over the cell coordinates, mixed with the base seed; stable across
/// runs and platforms so cell results never depend on scheduling.
fn cell_seed(base_seed: u64, cell: &AblationCell) -> u64 {
    let key = format!(
        "{}|{}|{}|{}|{:?}|{}|{}",
        cell.architecture.as_str(),
        cell.n_layers,
        cell.n_hidden,
        cell.context,
        cell.horizons,
        cell.multi_task,
        cell.with_state
    );
    let mut hash: u64 = 0xcbf29ce484222325 ^ base_seed;
    for b in key.as_bytes() {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeadResult {
    pub horizon: f64,
    pub report: IntentionReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub cell: AblationCell,
    pub param_count: usize,
    pub epochs: usize,
    /// Head-averaged metrics on the test split.
    pub accuracy: f64,
    pub f1: f64,
    pub per_head: Vec<HeadResult>,
    /// Training failure, recorded without aborting the grid.
    pub error: Option<String>,
}

/// A scene collection loaded in memory with its split assignment.
pub struct LoadedScene {
    pub name: String,
    pub scene: SceneBundle,
    pub split: Split,
    pub subject: Option<u64>,
}

/// Loads every scene listed in a manifest.
pub fn load_scene_dataset(
    dir: impl AsRef<Path>,
    manifest: &SceneManifest,
) -> Result<Vec<LoadedScene>, EvalError> {
    let dir = dir.as_ref();
    manifest
        .scenes
        .iter()
        .map(|entry: &ManifestEntry| {
            let scene = crate::scene_model::load_scene(dir.join(&entry.file))
                .map_err(|e| EvalError::Other(format!("{}: {e}", entry.file)))?;
            Ok(LoadedScene {
                name: entry.file.clone(),
                scene,
                split: entry.split,
                subject: Some(entry.subject),
            })
        })
        .collect()
}

/// Extracts train/val/test window datasets from loaded scenes for one
/// feature configuration.
pub fn extract_split_datasets(
    scenes: &[LoadedScene],
    context: f64,
    horizons: &[f64],
    with_state: bool,
    base: &FeatureConfig,
) -> Result<(TrainDataset, TrainDataset, TrainDataset), EvalError> {
    extract_split_datasets_strided(scenes, context, horizons, with_state, base, 1)
}

/// Like [`extract_split_datasets`] but keeping every `stride`-th window
/// (dataset thinning for large grids).
pub fn extract_split_datasets_strided(
    scenes: &[LoadedScene],
    context: f64,
    horizons: &[f64],
    with_state: bool,
    base: &FeatureConfig,
    stride: usize,
) -> Result<(TrainDataset, TrainDataset, TrainDataset), EvalError> {
    let mut cfg = base.clone();
    cfg.with_state = with_state;
    let stride = stride.max(1);

    let mut train = TrainDataset::default();
    let mut val = TrainDataset::default();
    let mut test = TrainDataset::default();
    for loaded in scenes {
        let dataset = match loaded.split {
            Split::Train => &mut train,
            Split::Val => &mut val,
            Split::Test => &mut test,
        };
        for track in loaded.scene.pedestrians() {
            if let Some(subject) = loaded.subject {
                if track.id != subject {
                    continue;
                }
            }
            let windows = build_multitask_windows(track, &loaded.scene, context, horizons, &cfg)
                .map_err(|e| EvalError::Other(format!("{}: {e}", loaded.name)))?;
            for (i, (w, labels)) in windows.into_iter().enumerate() {
                if i % stride != 0 {
                    continue;
                }
                dataset.examples.push(TrainExample {
                    x: w.vectors,
                    mask: w.presence_mask,
                    labels,
                    scene: Some(loaded.name.clone()),
                });
            }
        }
    }
    Ok((train, val, test))
}

/// Runs every grid cell (concurrently; results keyed by cell coordinates)
/// and returns one row per cell. Training failures are recorded per cell and
/// the run continues.
pub fn run_ablation(
    grid: &AblationGrid,
    scenes: &[LoadedScene],
    feature_base: &FeatureConfig,
    tcfg: &TrainConfig,
    stride: usize,
) -> Result<Vec<AblationRow>, EvalError> {
    let cells = grid.cells();

    // Extraction is shared across cells with the same feature configuration.
    let mut extraction_keys: Vec<(String, f64, Vec<f64>, bool)> = Vec::new();
    for cell in &cells {
        let key = (
            format!("{}|{:?}|{}", cell.context, cell.horizons, cell.with_state),
            cell.context,
            cell.horizons.clone(),
            cell.with_state,
        );
        if !extraction_keys.iter().any(|k| k.0 == key.0) {
            extraction_keys.push(key);
        }
    }
    let mut datasets = BTreeMap::new();
    for (key, context, horizons, with_state) in extraction_keys {
        let split = extract_split_datasets_strided(
            scenes,
            context,
            &horizons,
            with_state,
            feature_base,
            stride,
        )?;
        datasets.insert(key, split);
    }

    let rows: Vec<AblationRow> = cells
        .par_iter()
        .map(|cell| run_cell(cell, &datasets, tcfg))
        .collect();
    Ok(rows)
}

fn run_cell(
    cell: &AblationCell,
    datasets: &BTreeMap<String, (TrainDataset, TrainDataset, TrainDataset)>,
    tcfg: &TrainConfig,
) -> AblationRow {
    let key = format!("{}|{:?}|{}", cell.context, cell.horizons, cell.with_state);
    let (train_data, val_data, test_data) = &datasets[&key];

    let mut cfg = ClassifierConfig::new(cell.architecture, cell.n_layers, cell.n_hidden);
    cfg.input_dim = if cell.with_state {
        FEATURE_DIM + 1
    } else {
        FEATURE_DIM
    };
    cfg.context_slots = slot_count(cell.context);
    cfg.heads = cell.horizons.clone();
    cfg.seed = cell.seed;
    let param_count = count_parameters(&cfg);

    let mut row = AblationRow {
        cell: cell.clone(),
        param_count,
        epochs: 0,
        accuracy: f64::NAN,
        f1: f64::NAN,
        per_head: Vec::new(),
        error: None,
    };

    let model = match train(&cfg, tcfg, train_data, val_data) {
        Ok(m) => m,
        Err(e) => {
            row.error = Some(e.to_string());
            return row;
        }
    };
    row.epochs = model.training_log.len();

    match evaluate_on_dataset(&model, test_data) {
        Ok(per_head) => {
            row.accuracy =
                per_head.iter().map(|h| h.report.accuracy).sum::<f64>() / per_head.len() as f64;
            row.f1 = per_head.iter().map(|h| h.report.f1).sum::<f64>() / per_head.len() as f64;
            row.per_head = per_head;
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

/// Per-head intention metrics of a trained model over a window dataset.
pub fn evaluate_on_dataset(
    model: &TrainedClassifier,
    data: &TrainDataset,
) -> Result<Vec<HeadResult>, EvalError> {
    if data.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let heads = model.config.head_count();
    let mut preds: Vec<Vec<u8>> = vec![Vec::with_capacity(data.len()); heads];
    let mut gts: Vec<Vec<u8>> = vec![Vec::with_capacity(data.len()); heads];
    for e in &data.examples {
        let window = crate::features::FeatureWindow {
            t_end: 0.0,
            context_length: model.config.context_slots as f64 / 15.0,
            vectors: e.x.clone(),
            presence_mask: e.mask.clone(),
        };
        let ps = model
            .predict_intention(&window)
            .map_err(|err| EvalError::Other(err.to_string()))?;
        for (h, p) in ps.iter().enumerate() {
            preds[h].push(u8::from(p.decision == crate::scene_model::CrossingState::Crossing));
            gts[h].push(e.labels[h]);
        }
    }
    (0..heads)
        .map(|h| {
            Ok(HeadResult {
                horizon: model.config.heads[h],
                report: classification_metrics(&preds[h], &gts[h])?,
            })
        })
        .collect()
}

/// Writes the tab-separated ablation table (one row per cell).
pub fn write_ablation_table(rows: &[AblationRow], path: impl AsRef<Path>) -> Result<(), EvalError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        out,
        "architecture\tn_layers\tn_hidden\tn_param\tcontext\thorizons\tmulti_task\twith_state\tepochs\taccuracy\tf1\terror"
    )?;
    let mut sorted: Vec<&AblationRow> = rows.iter().collect();
    sorted.sort_by_key(|r| {
        (
            r.cell.architecture.as_str(),
            r.cell.n_layers,
            r.cell.n_hidden,
            (r.cell.context * 2.0) as i64,
            format!("{:?}", r.cell.horizons),
            r.cell.multi_task,
            r.cell.with_state,
        )
    });
    for row in sorted {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{:.4}\t{:.4}\t{}",
            row.cell.architecture.as_str(),
            row.cell.n_layers,
            row.cell.n_hidden,
            row.param_count,
            row.cell.context,
            row.cell
                .horizons
                .iter()
                .map(|h| h.to_string())
                .collect::<Vec<_>>()
                .join(","),
            row.cell.multi_task,
            row.cell.with_state,
            row.epochs,
            row.accuracy,
            row.f1,
            row.error.as_deref().unwrap_or("-"),
        )?;
    }
    Ok(())
}

/// Writes plot-ready context-length curves: accuracy per (architecture,
/// context, horizon).
pub fn write_context_curves(rows: &[AblationRow], path: impl AsRef<Path>) -> Result<(), EvalError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "architecture\tcontext\thorizon\twith_state\tmulti_task\taccuracy\tf1")?;
    let mut flat: Vec<(String, f64, f64, bool, bool, f64, f64)> = Vec::new();
    for row in rows {
        for head in &row.per_head {
            flat.push((
                row.cell.architecture.as_str().to_string(),
                row.cell.context,
                head.horizon,
                row.cell.with_state,
                row.cell.multi_task,
                head.report.accuracy,
                head.report.f1,
            ));
        }
    }
    flat.sort_by(|a, b| {
        a.0.cmp(&b.0)
            .then(a.1.total_cmp(&b.1))
            .then(a.2.total_cmp(&b.2))
            .then(a.3.cmp(&b.3))
            .then(a.4.cmp(&b.4))
    });
    for (arch, context, horizon, state, multi, acc, f1) in flat {
        writeln!(
            out,
            "{arch}\t{context}\t{horizon}\t{state}\t{multi}\t{acc:.4}\t{f1:.4}"
        )?;
    }
    Ok(())
}

/// Writes the machine-readable results file.
pub fn write_ablation_json(rows: &[AblationRow], path: impl AsRef<Path>) -> Result<(), EvalError> {
    let text = serde_json::to_string_pretty(rows).map_err(|e| EvalError::Other(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_at_cases() {
        assert_eq!(accuracy_at(&[0.0, 0.0, 0.0], 22.5).unwrap(), 100.0);
        let errs = [10.0, 30.0, 50.0];
        assert!((accuracy_at(&errs, 22.5).unwrap() - 100.0 / 3.0).abs() < 1e-9);
        assert!((accuracy_at(&errs, 45.0).unwrap() - 200.0 / 3.0).abs() < 1e-9);
        assert!(accuracy_at(&[], 22.5).is_err());
    }

    #[test]
    fn accuracy_at_monotone_and_saturates() {
        let errs: Vec<f64> = (0..100).map(|i| (i as f64 * 1.8) % 180.0).collect();
        let mut prev = 0.0;
        for d in [5.0, 22.5, 45.0, 90.0, 180.0] {
            let acc = accuracy_at(&errs, d).unwrap();
            assert!(acc >= prev);
            prev = acc;
        }
        assert_eq!(accuracy_at(&errs, 180.0).unwrap(), 100.0);
    }

    #[test]
    fn mae_cases() {
        assert_eq!(mean_absolute_error(&[0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(mean_absolute_error(&[10.0, 30.0, 50.0]).unwrap(), 30.0);
        assert_eq!(mean_absolute_error(&[23.4]).unwrap(), 23.4);
        assert!(mean_absolute_error(&[]).is_err());
    }

    #[test]
    fn classification_metrics_hand_case() {
        // TP=2, FP=1, FN=1, TN=6.
        let preds = [1, 1, 1, 0, 0, 0, 0, 0, 0, 0];
        let gts = [1, 1, 0, 1, 0, 0, 0, 0, 0, 0];
        let rep = classification_metrics(&preds, &gts).unwrap();
        assert_eq!((rep.tp, rep.fp, rep.fn_, rep.tn), (2, 1, 1, 6));
        assert!((rep.accuracy - 0.8).abs() < 1e-12);
        assert!((rep.f1 - 4.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn classification_metrics_degenerate() {
        let rep = classification_metrics(&[1, 1, 1], &[0, 0, 0]).unwrap();
        assert_eq!(rep.accuracy, 0.0);
        assert_eq!(rep.f1, 0.0);
        let rep = classification_metrics(&[1, 0], &[1, 0]).unwrap();
        assert_eq!(rep.accuracy, 1.0);
        assert_eq!(rep.f1, 1.0);
        assert!(classification_metrics(&[1], &[1, 0]).is_err());
    }

    #[test]
    fn histogram_sums_to_sample_count() {
        let errs: Vec<f64> = (0..57).map(|i| i as f64 * 1.7).collect();
        let hist = error_histogram(&errs, 10.0);
        let total: usize = hist.iter().map(|(_, c)| c).sum();
        assert_eq!(total, 57);
    }

    #[test]
    fn orientation_report_noise_free() {
        let report = evaluate_orientation(36, 0.0, 0, 0.0).unwrap();
        assert!(report.mae <= 1e-6, "mae {}", report.mae);
        assert_eq!(report.acc_45, 100.0);
        assert_eq!(report.acc_22_5, 100.0);
        assert!(report.fps > 0.0);
        assert_eq!(report.error_samples.len(), 36);
    }

    #[test]
    fn cell_seeds_differ_and_are_stable() {
        let grid = AblationGrid::model_size(true, 42);
        let cells = grid.cells();
        assert_eq!(cells.len(), 27);
        let seeds: std::collections::BTreeSet<u64> = cells.iter().map(|c| c.seed).collect();
        assert_eq!(seeds.len(), 27, "cell seeds must be distinct");
        let again = grid.cells();
        assert_eq!(
            cells.iter().map(|c| c.seed).collect::<Vec<_>>(),
            again.iter().map(|c| c.seed).collect::<Vec<_>>()
        );
    }

    #[test]
    fn metrics_match_brute_force_recount() {
        // Independent oracle: recount the confusion matrix naively over
        // pseudo-random label vectors.
        let mut state = 99u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        };
        for _ in 0..50 {
            let n = 1 + (next() % 40) as usize;
            let preds: Vec<u8> = (0..n).map(|_| (next() & 1) as u8).collect();
            let gts: Vec<u8> = (0..n).map(|_| (next() & 1) as u8).collect();
            let rep = classification_metrics(&preds, &gts).unwrap();
            let mut counts = [0usize; 4];
            for i in 0..n {
                let idx = match (preds[i], gts[i]) {
                    (1, 1) => 0,
                    (1, 0) => 1,
                    (0, 1) => 2,
                    _ => 3,
                };
                counts[idx] += 1;
            }
            assert_eq!(
                (rep.tp, rep.fp, rep.fn_, rep.tn),
                (counts[0], counts[1], counts[2], counts[3])
            );
            let acc = (counts[0] + counts[3]) as f64 / n as f64;
            assert!((rep.accuracy - acc).abs() < 1e-12);
        }
    }
}
