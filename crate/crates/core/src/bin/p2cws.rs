//! Command-line entry points for the pedestrian crossing-intention pipeline.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime failure.

use clap::{Args, Parser, Subcommand};
use p2cws::classifiers::{
    count_parameters, train, Architecture, ClassifierConfig, TrainConfig, TrainDataset,
    TrainedClassifier,
};
use p2cws::evaluation::{
    benchmark_throughput, evaluate_on_dataset, evaluate_orientation, load_scene_dataset,
    run_ablation, write_ablation_json, write_ablation_table, write_context_curves, AblationGrid,
    BenchStage,
};
use p2cws::features::{
    extract_scene_windows, read_dataset, slot_count, write_dataset, FeatureConfig, WindowRecord,
};
use p2cws::measurement::MeasurementConfig;
use p2cws::scene_model::load_scene;
use p2cws::stream::{StreamConfig, StreamProcessor};
use p2cws::synthetic::{generate_collection, CollectionSpec, SceneManifest, Split};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "p2cws", version, about = "Pedestrian crossing-intention analysis pipeline")]
struct Cli {
    /// Base random seed (overrides seeds from spec files where applicable).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Measurement config file (knowledge base, normalization factors,
    /// distance normalization).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene collection from a spec file.
    Synth(SynthArgs),
    /// Extract feature-window datasets from scene files.
    Extract(ExtractArgs),
    /// Train an intention classifier on extracted datasets.
    Train(TrainArgs),
    /// Evaluate: intention datasets, orientation sets, or the ablation grid.
    Eval(EvalArgs),
    /// Benchmark pipeline-stage throughput and streaming latency.
    Bench(BenchArgs),
    /// Stream track records and emit warning messages.
    Stream(StreamArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Collection spec (JSON).
    #[arg(long)]
    spec: PathBuf,
    /// Output directory for scene files and manifest.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExtractArgs {
    /// Directory holding scene files (with --manifest) or explicit files.
    #[arg(long)]
    scenes: PathBuf,
    /// Scene manifest; enables by-scene split outputs and subject filtering.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Temporal context length in seconds.
    #[arg(long, default_value_t = 0.5)]
    context: f64,
    /// Prediction horizon in seconds.
    #[arg(long, default_value_t = 1.5)]
    horizon: f64,
    /// Append the current crossing state as a 51st feature dimension.
    #[arg(long)]
    with_state: bool,
    /// Keep every N-th window (dataset thinning).
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Output directory (with --manifest) or dataset file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: PathBuf,
    #[arg(long, default_value = "gru")]
    arch: String,
    #[arg(long, default_value_t = 3)]
    layers: usize,
    #[arg(long, default_value_t = 128)]
    hidden: usize,
    /// Prediction horizons (one head each); must match the dataset horizon
    /// for single-task training.
    #[arg(long, value_delimiter = ',', default_value = "1.5")]
    heads: Vec<f64>,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 10)]
    patience: usize,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(subcommand)]
    mode: EvalMode,
}

#[derive(Subcommand)]
enum EvalMode {
    /// Intention metrics of a checkpoint over a dataset file.
    Intention {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Report file (JSON).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Orientation recognition metrics over a synthetic orientation set.
    Orientation {
        #[arg(long, default_value_t = 360)]
        samples: usize,
        /// Joint jitter std in normalized pose units.
        #[arg(long, default_value_t = 0.0)]
        jitter: f64,
        /// Axis-calibration offset in degrees.
        #[arg(long, default_value_t = 0.0)]
        axis_offset: f64,
        /// Output directory for report.json and histogram.tsv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// The 27-cell model-size ablation grid over a scene collection.
    Ablation {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        with_state: bool,
        /// Keep every N-th window when extracting.
        #[arg(long, default_value_t = 1)]
        stride: usize,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        #[arg(long, default_value_t = 5)]
        patience: usize,
        /// Output directory for table.tsv, context_curves.tsv, results.json.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct BenchArgs {
    /// orientation | intention | stream
    #[arg(long)]
    stage: String,
    /// Scene file; a standard 5-pedestrian 3-vehicle synthetic scene is
    /// generated when omitted.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Checkpoint for the intention/stream stages; a default GRU 3x128 is
    /// initialized when omitted.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    reps: usize,
}

#[derive(Args)]
struct StreamArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Input track-record stream; standard input when omitted or "-".
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Also write every per-slot prediction to this file (JSON lines).
    #[arg(long)]
    predictions: Option<PathBuf>,
}

enum AppError {
    Data(String),
    Runtime(String),
}

impl AppError {
    fn code(&self) -> u8 {
        match self {
            AppError::Data(_) => 2,
            AppError::Runtime(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            AppError::Data(m) | AppError::Runtime(m) => m,
        }
    }
}

fn data_err(e: impl ToString) -> AppError {
    AppError::Data(e.to_string())
}

fn runtime_err(e: impl ToString) -> AppError {
    AppError::Runtime(e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successful exits.
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };

    let measurement = match &cli.config {
        Some(path) => match MeasurementConfig::from_file(path) {
            Ok(cfg) => cfg,
            Err(e) => {
                eprintln!("error: config file: {e}");
                return ExitCode::from(2);
            }
        },
        None => MeasurementConfig::default(),
    };

    let result = match cli.command {
        Command::Synth(args) => cmd_synth(args, cli.seed),
        Command::Extract(args) => cmd_extract(args, &measurement),
        Command::Train(args) => cmd_train(args, cli.seed),
        Command::Eval(args) => cmd_eval(args, cli.seed, &measurement),
        Command::Bench(args) => cmd_bench(args, cli.seed, &measurement),
        Command::Stream(args) => cmd_stream(args, &measurement),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn cmd_synth(args: SynthArgs, seed: Option<u64>) -> Result<(), AppError> {
    let text = std::fs::read_to_string(&args.spec).map_err(data_err)?;
    let mut spec: CollectionSpec = serde_json::from_str(&text)
        .map_err(|e| data_err(format!("spec file: {e}")))?;
    if let Some(seed) = seed {
        spec.base_seed = seed;
    }
    let manifest = generate_collection(&spec, &args.out).map_err(data_err)?;
    manifest
        .save(args.out.join("manifest.json"))
        .map_err(runtime_err)?;
    println!(
        "generated {} scenes into {} (train {}, val {}, test {})",
        manifest.scenes.len(),
        args.out.display(),
        spec.train,
        spec.val,
        spec.test
    );
    Ok(())
}

fn dataset_summary(name: &str, records: &[WindowRecord]) -> String {
    let crossing = records.iter().filter(|r| r.y == 1).count();
    format!(
        "{name}: {} windows ({} crossing, {} not_crossing)",
        records.len(),
        crossing,
        records.len() - crossing
    )
}

fn cmd_extract(args: ExtractArgs, measurement: &MeasurementConfig) -> Result<(), AppError> {
    let mut config = FeatureConfig::from_measurement(measurement);
    config.with_state = args.with_state;
    let stride = args.stride.max(1);

    let thin = |records: Vec<WindowRecord>| -> Vec<WindowRecord> {
        records
            .into_iter()
            .enumerate()
            .filter(|(i, _)| i % stride == 0)
            .map(|(_, r)| r)
            .collect()
    };

    match &args.manifest {
        Some(manifest_path) => {
            let manifest = SceneManifest::load(manifest_path).map_err(data_err)?;
            std::fs::create_dir_all(&args.out).map_err(runtime_err)?;
            let mut per_split: std::collections::BTreeMap<Split, Vec<WindowRecord>> =
                std::collections::BTreeMap::new();
            for entry in &manifest.scenes {
                let scene = load_scene(args.scenes.join(&entry.file)).map_err(data_err)?;
                let records = extract_scene_windows(
                    &scene,
                    Some(entry.subject),
                    args.context,
                    args.horizon,
                    &config,
                )
                .map_err(|e| data_err(format!("{}: {e}", entry.file)))?;
                per_split.entry(entry.split).or_default().extend(records);
            }
            for (split, records) in per_split {
                let records = thin(records);
                let path = args.out.join(format!("{}.jsonl", split.as_str()));
                write_dataset(&records, &path).map_err(runtime_err)?;
                println!("{}", dataset_summary(split.as_str(), &records));
            }
        }
        None => {
            let scene_files: Vec<PathBuf> = if args.scenes.is_dir() {
                let mut files: Vec<PathBuf> = std::fs::read_dir(&args.scenes)
                    .map_err(data_err)?
                    .filter_map(|e| e.ok())
                    .map(|e| e.path())
                    .filter(|p| p.extension().map(|e| e == "trk").unwrap_or(false))
                    .collect();
                files.sort();
                files
            } else {
                vec![args.scenes.clone()]
            };
            if scene_files.is_empty() {
                return Err(AppError::Data("no scene files found".into()));
            }
            let mut records = Vec::new();
            for file in &scene_files {
                let scene = load_scene(file).map_err(data_err)?;
                records.extend(
                    extract_scene_windows(&scene, None, args.context, args.horizon, &config)
                        .map_err(|e| data_err(format!("{}: {e}", file.display())))?,
                );
            }
            let records = thin(records);
            write_dataset(&records, &args.out).map_err(runtime_err)?;
            println!("{}", dataset_summary("dataset", &records));
        }
    }
    Ok(())
}

fn load_train_dataset(path: &Path) -> Result<(TrainDataset, Vec<WindowRecord>), AppError> {
    let records = read_dataset(path).map_err(data_err)?;
    if records.is_empty() {
        return Err(AppError::Data(format!(
            "{}: empty dataset",
            path.display()
        )));
    }
    Ok((TrainDataset::from_records(&records), records))
}

fn cmd_train(args: TrainArgs, seed: Option<u64>) -> Result<(), AppError> {
    let arch = Architecture::parse(&args.arch)
        .ok_or_else(|| AppError::Data(format!("unknown architecture `{}`", args.arch)))?;
    let (train_data, train_records) = load_train_dataset(&args.train)?;
    let (val_data, _) = load_train_dataset(&args.val)?;

    let first = &train_records[0];
    let mut cfg = ClassifierConfig::new(arch, args.layers, args.hidden);
    cfg.input_dim = first.x.first().map(|v| v.len()).unwrap_or(0);
    cfg.context_slots = slot_count(first.context);
    cfg.heads = args.heads.clone();
    cfg.seed = seed.unwrap_or(0);
    if cfg.heads.len() == 1 && (cfg.heads[0] - first.horizon).abs() > 1e-9 {
        eprintln!(
            "warning: head horizon {} differs from dataset horizon {}",
            cfg.heads[0], first.horizon
        );
    }

    let tcfg = TrainConfig {
        learning_rate: args.lr,
        batch_size: args.batch,
        max_epochs: args.epochs,
        patience: args.patience,
        ..TrainConfig::default()
    };

    let model = train(&cfg, &tcfg, &train_data, &val_data).map_err(runtime_err)?;
    let last = model
        .training_log
        .last()
        .ok_or_else(|| runtime_err("training produced no epochs"))?;
    let best_val = model
        .training_log
        .iter()
        .map(|e| e.val_accuracy)
        .fold(0.0, f64::max);
    model.save(&args.out).map_err(runtime_err)?;
    println!(
        "trained {} ({} params) for {} epochs; best val accuracy {:.4}, final val loss {:.4}",
        arch.as_str(),
        count_parameters(&cfg),
        model.training_log.len(),
        best_val,
        last.val_loss
    );
    println!("checkpoint written to {}", args.out.display());
    Ok(())
}

fn cmd_eval(
    args: EvalArgs,
    seed: Option<u64>,
    measurement: &MeasurementConfig,
) -> Result<(), AppError> {
    match args.mode {
        EvalMode::Intention {
            checkpoint,
            dataset,
            out,
        } => {
            let model = TrainedClassifier::load(&checkpoint).map_err(data_err)?;
            let (data, _) = load_train_dataset(&dataset)?;
            let results = evaluate_on_dataset(&model, &data).map_err(runtime_err)?;
            for head in &results {
                println!(
                    "horizon {:.1}s: accuracy {:.4} f1 {:.4} (tp {} fp {} fn {} tn {})",
                    head.horizon,
                    head.report.accuracy,
                    head.report.f1,
                    head.report.tp,
                    head.report.fp,
                    head.report.fn_,
                    head.report.tn
                );
            }
            if let Some(out) = out {
                let text = serde_json::to_string_pretty(&results).map_err(runtime_err)?;
                std::fs::write(&out, text).map_err(runtime_err)?;
                println!("report written to {}", out.display());
            }
        }
        EvalMode::Orientation {
            samples,
            jitter,
            axis_offset,
            out,
        } => {
            let report =
                evaluate_orientation(samples, jitter, seed.unwrap_or(0), axis_offset)
                    .map_err(runtime_err)?;
            println!(
                "orientation over {} samples: accuracy22.5 {:.2}% accuracy45 {:.2}% mae {:.4} deg fps {:.0}",
                report.samples, report.acc_22_5, report.acc_45, report.mae, report.fps
            );
            if let Some(out) = out {
                std::fs::create_dir_all(&out).map_err(runtime_err)?;
                let text = serde_json::to_string_pretty(&report).map_err(runtime_err)?;
                std::fs::write(out.join("report.json"), text).map_err(runtime_err)?;
                let hist = p2cws::evaluation::error_histogram(&report.error_samples, 5.0);
                let mut file =
                    std::fs::File::create(out.join("histogram.tsv")).map_err(runtime_err)?;
                writeln!(file, "bin_center_deg\tcount").map_err(runtime_err)?;
                for (center, count) in hist {
                    writeln!(file, "{center}\t{count}").map_err(runtime_err)?;
                }
                println!("reports written to {}", out.display());
            }
        }
        EvalMode::Ablation {
            scenes,
            manifest,
            with_state,
            stride,
            epochs,
            patience,
            out,
        } => {
            let manifest = SceneManifest::load(&manifest).map_err(data_err)?;
            let loaded = load_scene_dataset(&scenes, &manifest).map_err(data_err)?;
            let grid = AblationGrid::model_size(with_state, seed.unwrap_or(0));
            let feature_base = FeatureConfig::from_measurement(measurement);
            let tcfg = TrainConfig {
                max_epochs: epochs,
                patience,
                ..TrainConfig::default()
            };
            let rows =
                run_ablation(&grid, &loaded, &feature_base, &tcfg, stride).map_err(runtime_err)?;
            std::fs::create_dir_all(&out).map_err(runtime_err)?;
            write_ablation_table(&rows, out.join("table.tsv")).map_err(runtime_err)?;
            write_context_curves(&rows, out.join("context_curves.tsv")).map_err(runtime_err)?;
            write_ablation_json(&rows, out.join("results.json")).map_err(runtime_err)?;
            let failures = rows.iter().filter(|r| r.error.is_some()).count();
            println!(
                "ablation complete: {} cells, {} failures; outputs in {}",
                rows.len(),
                failures,
                out.display()
            );
        }
    }
    Ok(())
}

fn bench_scene(seed: u64) -> Result<p2cws::scene_model::SceneBundle, AppError> {
    let (scene, _) = p2cws::synthetic::generate_scene(&p2cws::synthetic::ScenarioSpec {
        script: p2cws::synthetic::Script::ApproachWaitCross,
        n_pedestrians: 5,
        n_vehicles: 3,
        duration: 10.0,
        noise: 0.5,
        seed,
    })
    .map_err(runtime_err)?;
    Ok(scene)
}

fn cmd_bench(
    args: BenchArgs,
    seed: Option<u64>,
    measurement: &MeasurementConfig,
) -> Result<(), AppError> {
    let scene = match &args.scene {
        Some(path) => load_scene(path).map_err(data_err)?,
        None => bench_scene(seed.unwrap_or(0))?,
    };
    let model = match &args.checkpoint {
        Some(path) => Some(TrainedClassifier::load(path).map_err(data_err)?),
        None => None,
    };

    match args.stage.as_str() {
        "orientation" | "intention" => {
            let stage = if args.stage == "orientation" {
                BenchStage::Orientation
            } else {
                BenchStage::Intention
            };
            let report = benchmark_throughput(stage, &scene, model.as_ref(), args.reps)
                .map_err(runtime_err)?;
            println!(
                "{} throughput: median {:.1}/s (p5 {:.1}, p95 {:.1}) over {} reps x {} units",
                args.stage,
                report.fps_median,
                report.fps_p5,
                report.fps_p95,
                report.repetitions,
                report.units
            );
        }
        "stream" => {
            let model = match model {
                Some(m) => m,
                None => {
                    let mut cfg = ClassifierConfig::new(Architecture::Gru, 3, 128);
                    cfg.input_dim = p2cws::features::FEATURE_DIM;
                    cfg.context_slots = slot_count(0.5);
                    TrainedClassifier::init(cfg).map_err(runtime_err)?
                }
            };
            let config = StreamConfig {
                feature: FeatureConfig::from_measurement(measurement)
                    .with_state(model.config.input_dim == p2cws::features::FEATURE_DIM + 1),
                ..StreamConfig::default()
            };
            let lines: Vec<String> = p2cws::scene_model::scene_to_string(&scene)
                .map_err(runtime_err)?
                .lines()
                .map(|l| l.to_string())
                .collect();
            let (out, latency) =
                p2cws::stream::stream_predict(lines, model, config).map_err(runtime_err)?;
            let latency = latency.ok_or_else(|| runtime_err("no frames processed"))?;
            println!(
                "stream: {} frames, {} predictions, {} warnings; latency p50 {:.3} ms p95 {:.3} ms max {:.3} ms",
                latency.frames,
                out.predictions.len(),
                out.warnings.len(),
                latency.p50_ms,
                latency.p95_ms,
                latency.max_ms
            );
        }
        other => {
            return Err(AppError::Data(format!(
                "unknown bench stage `{other}` (orientation|intention|stream)"
            )))
        }
    }
    Ok(())
}

fn cmd_stream(args: StreamArgs, measurement: &MeasurementConfig) -> Result<(), AppError> {
    let model = TrainedClassifier::load(&args.checkpoint).map_err(data_err)?;
    let config = StreamConfig {
        threshold: args.threshold,
        feature: FeatureConfig::from_measurement(measurement)
            .with_state(model.config.input_dim == p2cws::features::FEATURE_DIM + 1),
        ..StreamConfig::default()
    };
    let mut processor = StreamProcessor::new(model, config).map_err(data_err)?;

    let stdin = std::io::stdin();
    let reader: Box<dyn BufRead> = match &args.input {
        Some(path) if path.as_os_str() != "-" => Box::new(std::io::BufReader::new(
            std::fs::File::open(path).map_err(data_err)?,
        )),
        _ => Box::new(stdin.lock()),
    };

    let mut predictions_file = match &args.predictions {
        Some(path) => Some(std::io::BufWriter::new(
            std::fs::File::create(path).map_err(runtime_err)?,
        )),
        None => None,
    };
    let stdout = std::io::stdout();
    let mut out_handle = stdout.lock();

    let mut emit = |output: p2cws::stream::StreamOutput| -> Result<usize, AppError> {
        for warning in &output.warnings {
            let line = serde_json::to_string(warning).map_err(runtime_err)?;
            writeln!(out_handle, "{line}").map_err(runtime_err)?;
        }
        if let Some(file) = predictions_file.as_mut() {
            for p in &output.predictions {
                let line = serde_json::to_string(p).map_err(runtime_err)?;
                writeln!(file, "{line}").map_err(runtime_err)?;
            }
        }
        Ok(output.dropped_records)
    };

    let mut dropped = 0usize;
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(data_err)?;
        let output = processor.push_line(&line, idx + 1).map_err(data_err)?;
        dropped += emit(output)?;
    }
    let output = processor.finish().map_err(runtime_err)?;
    dropped += emit(output)?;

    if let Some(latency) = processor.latency_report() {
        eprintln!(
            "processed {} frames (dropped {dropped}); latency p50 {:.3} ms p95 {:.3} ms",
            latency.frames, latency.p50_ms, latency.p95_ms
        );
    }
    Ok(())
}
