//! `gridcast` command line front end.
//!
//! Each subcommand runs one stage on the previous stage's artifacts;
//! `pipeline` chains all of them. Options resolve in three layers:
//! built-in defaults, then the TOML config named by `--config`, then
//! explicit flags. The effective configuration is echoed into the output
//! directory so a run can be reproduced from its artifacts alone.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

use std::fs;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use gridcast::checkpoint::save_ensemble;
use gridcast::dataset::{ingest_csv, split_chronological, write_csv, TimeSeriesDataset};
use gridcast::diffusion::DiffusionTrainConfig;
use gridcast::dispatch::{
    dispatch_svg, read_problem_csv, solution_summary, solve_dispatch, validate_dispatch,
    write_solution_csv, DispatchError,
};
use gridcast::fidelity::fidelity_report;
use gridcast::forecast::{
    benchmark_models, design_matrix, error_metrics, predict_ensemble, EvalReport, ForecasterSpec,
    TrainVariant,
};
use gridcast::numerics::derive_seed;
use gridcast::pipeline::{
    augment_stage, run_pipeline, AugmenterKind, ErrorCategory, OutputLock, PipelineConfig,
    PipelineError, StageError,
};
use gridcast::timegan::TimeGanTrainConfig;

#[derive(Parser)]
#[command(
    name = "gridcast",
    version,
    about = "Augment a week of hourly load data, benchmark forecasters, and dispatch grid vs PV"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate an input CSV and report its shape
    Ingest {
        /// Hourly load + weather CSV
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
        /// If set, re-emit the validated rows as <OUT>/ingested.csv
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Train the configured generator and write augmented rows
    Augment {
        #[command(flatten)]
        overrides: ConfigOverrides,
    },
    /// Fit one forecaster on a training CSV and checkpoint it
    TrainForecaster {
        /// Training CSV (any provenance)
        #[arg(long, value_name = "PATH")]
        train: PathBuf,
        /// Label from the forecaster suite
        #[arg(long, default_value = "extratrees")]
        model: String,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// TOML config supplying a custom forecaster suite
        #[arg(long, value_name = "PATH")]
        config: Option<PathBuf>,
    },
    /// Benchmark forecasters across training variants on one test set
    Evaluate {
        /// Training CSV, repeatable; the variant label comes from its source column
        #[arg(long, required = true, value_name = "PATH")]
        train: Vec<PathBuf>,
        /// Held-out test CSV
        #[arg(long, value_name = "PATH")]
        test: PathBuf,
        /// If set, eval_report.{csv,json} are written here
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// TOML config supplying a custom forecaster suite
        #[arg(long, value_name = "PATH")]
        config: Option<PathBuf>,
    },
    /// Compare generated datasets against a reference (stats, PCA, KDE)
    Diagnose {
        /// Reference CSV the generators were trained on
        #[arg(long, value_name = "PATH")]
        original: PathBuf,
        /// Generated CSV, repeatable
        #[arg(long, required = true, value_name = "PATH")]
        generated: Vec<PathBuf>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Solve the 24-hour grid-vs-PV dispatch for a load/PV profile
    Dispatch {
        /// hour,load_kw,pv_max_kw CSV
        #[arg(long, value_name = "PATH")]
        profile: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Grid energy price per kWh
        #[arg(long, default_value_t = 1.0)]
        cost_grid: f64,
        /// PV energy price per kWh
        #[arg(long, default_value_t = 0.4)]
        cost_pv: f64,
    },
    /// Run ingest, augment, benchmark, diagnose, forecast, and dispatch end to end
    Pipeline {
        #[command(flatten)]
        overrides: ConfigOverrides,
    },
}

/// Flags shared by `augment` and `pipeline`. Every field shadows a config
/// key; `None` means "keep whatever the config or the defaults say".
#[derive(Args, Debug, Default)]
struct ConfigOverrides {
    /// TOML config; flags below override its values
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Hourly load + weather CSV
    #[arg(long, value_name = "PATH")]
    input: Option<PathBuf>,
    /// 24-row next-day weather CSV driving the dispatch forecast
    #[arg(long, value_name = "PATH")]
    weather: Option<PathBuf>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Master seed; every stage derives its own stream from it
    #[arg(long)]
    seed: Option<u64>,
    /// Generator for synthetic rows
    #[arg(long, value_parser = parse_augmenter)]
    augmenter: Option<AugmenterKind>,
    /// Generated window count; sets target rows = windows x window length
    #[arg(long)]
    windows: Option<usize>,
    /// Fraction of rows in the chronological train split
    #[arg(long)]
    train_fraction: Option<f64>,
    /// Rows per training window
    #[arg(long)]
    window_length: Option<usize>,
    /// Offset between consecutive training windows
    #[arg(long)]
    window_stride: Option<usize>,
    /// Total synthetic rows to generate
    #[arg(long)]
    target_rows: Option<usize>,
    /// Grid energy price per kWh
    #[arg(long)]
    cost_grid: Option<f64>,
    /// PV energy price per kWh
    #[arg(long)]
    cost_pv: Option<f64>,
    /// Nameplate PV capacity in kW
    #[arg(long)]
    pv_capacity: Option<f64>,
    /// Diffusion training epochs
    #[arg(long)]
    epochs: Option<usize>,
    /// Diffusion chain length
    #[arg(long)]
    diffusion_steps: Option<usize>,
    /// Learning rate for the selected augmenter's trainer
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Hidden width for the selected augmenter's networks
    #[arg(long)]
    hidden: Option<usize>,
    /// Batch size for the selected augmenter's trainer
    #[arg(long)]
    batch_size: Option<usize>,
    /// Sequence-GAN embedding phase steps
    #[arg(long)]
    embedding_steps: Option<usize>,
    /// Sequence-GAN supervised phase steps
    #[arg(long)]
    supervised_steps: Option<usize>,
    /// Sequence-GAN joint phase steps
    #[arg(long)]
    joint_steps: Option<usize>,
}

fn parse_augmenter(s: &str) -> Result<AugmenterKind, String> {
    AugmenterKind::from_label(s)
        .ok_or_else(|| format!("unknown augmenter {s:?} (expected diffusion, timegan, or replicate)"))
}

/// The TOML schema. Keys mirror the effective-config echo; all optional so
/// a config may pin only what it cares about.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    input_csv: Option<PathBuf>,
    weather_csv: Option<PathBuf>,
    out_dir: Option<PathBuf>,
    seed: Option<u64>,
    train_fraction: Option<f64>,
    window_length: Option<usize>,
    window_stride: Option<usize>,
    augmenter: Option<String>,
    target_rows: Option<usize>,
    diffusion: Option<DiffusionTrainConfig>,
    timegan: Option<TimeGanTrainConfig>,
    forecasters: Option<Vec<ForecasterSpec>>,
    cost_grid: Option<f64>,
    cost_pv: Option<f64>,
    pv_capacity_kw: Option<f64>,
}

struct Failure {
    code: i32,
    message: String,
}

type CliResult<T = ()> = Result<T, Failure>;

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: ErrorCategory::Usage.exit_code(),
        message: message.into(),
    }
}

fn data_error(message: impl Into<String>) -> Failure {
    Failure {
        code: ErrorCategory::Data.exit_code(),
        message: message.into(),
    }
}

/// Exit-code triage for stage errors reuses the pipeline's mapping so a
/// standalone run and a full run fail the same way.
fn stage_failure(err: impl Into<StageError>) -> Failure {
    let err: StageError = err.into();
    Failure {
        code: err.category().exit_code(),
        message: err.to_string(),
    }
}

fn pipeline_failure(err: PipelineError) -> Failure {
    Failure {
        code: err.category().exit_code(),
        message: err.to_string(),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => ErrorCategory::Usage.exit_code(),
            };
            let _ = err.print();
            std::process::exit(code);
        }
    };
    if let Err(failure) = run(cli.command) {
        eprintln!("error: {}", failure.message);
        std::process::exit(failure.code);
    }
}

fn run(command: Command) -> CliResult {
    match command {
        Command::Ingest { input, out } => cmd_ingest(&input, out.as_deref()),
        Command::Augment { overrides } => cmd_augment(&overrides),
        Command::TrainForecaster {
            train,
            model,
            out,
            seed,
            config,
        } => cmd_train_forecaster(&train, &model, &out, seed, config.as_deref()),
        Command::Evaluate {
            train,
            test,
            out,
            seed,
            config,
        } => cmd_evaluate(&train, &test, out.as_deref(), seed, config.as_deref()),
        Command::Diagnose {
            original,
            generated,
            out,
        } => cmd_diagnose(&original, &generated, &out),
        Command::Dispatch {
            profile,
            out,
            cost_grid,
            cost_pv,
        } => cmd_dispatch(&profile, &out, cost_grid, cost_pv),
        Command::Pipeline { overrides } => cmd_pipeline(&overrides),
    }
}

fn load_config_file(path: &Path) -> CliResult<ConfigFile> {
    let text = fs::read_to_string(path)
        .map_err(|err| usage(format!("reading config {}: {err}", path.display())))?;
    toml::from_str(&text).map_err(|err| usage(format!("config {}: {err}", path.display())))
}

/// Merge defaults <- config file <- flags into one runnable configuration.
/// `needs_weather` is false for stages that never touch the next-day CSV.
fn resolve_config(args: &ConfigOverrides, needs_weather: bool) -> CliResult<PipelineConfig> {
    let file = match &args.config {
        Some(path) => load_config_file(path)?,
        None => ConfigFile::default(),
    };
    let input = args
        .input
        .clone()
        .or(file.input_csv)
        .ok_or_else(|| usage("--input (or input_csv in the config) is required"))?;
    let out = args
        .out
        .clone()
        .or(file.out_dir)
        .ok_or_else(|| usage("--out (or out_dir in the config) is required"))?;
    let weather = match args.weather.clone().or(file.weather_csv) {
        Some(path) => path,
        None if needs_weather => {
            return Err(usage("--weather (or weather_csv in the config) is required"));
        }
        None => PathBuf::new(),
    };
    let mut cfg = PipelineConfig::new(&input, &weather, &out);

    if let Some(v) = file.seed {
        cfg.seed = v;
    }
    if let Some(v) = file.train_fraction {
        cfg.train_fraction = v;
    }
    if let Some(v) = file.window_length {
        cfg.window_length = v;
    }
    if let Some(v) = file.window_stride {
        cfg.window_stride = v;
    }
    if let Some(v) = &file.augmenter {
        cfg.augmenter = AugmenterKind::from_label(v)
            .ok_or_else(|| usage(format!("config: unknown augmenter {v:?}")))?;
    }
    if let Some(v) = file.target_rows {
        cfg.target_rows = v;
    }
    if let Some(v) = file.diffusion {
        cfg.diffusion = v;
    }
    if let Some(v) = file.timegan {
        cfg.timegan = v;
    }
    if let Some(v) = file.forecasters {
        cfg.forecasters = v;
    }
    if let Some(v) = file.cost_grid {
        cfg.cost_grid = v;
    }
    if let Some(v) = file.cost_pv {
        cfg.cost_pv = v;
    }
    if let Some(v) = file.pv_capacity_kw {
        cfg.pv_capacity_kw = v;
    }

    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.train_fraction {
        cfg.train_fraction = v;
    }
    if let Some(v) = args.window_length {
        cfg.window_length = v;
    }
    if let Some(v) = args.window_stride {
        cfg.window_stride = v;
    }
    if let Some(v) = args.augmenter {
        cfg.augmenter = v;
    }
    if let Some(v) = args.target_rows {
        cfg.target_rows = v;
    }
    if let Some(v) = args.windows {
        cfg.target_rows = v * cfg.window_length;
    }
    if let Some(v) = args.cost_grid {
        cfg.cost_grid = v;
    }
    if let Some(v) = args.cost_pv {
        cfg.cost_pv = v;
    }
    if let Some(v) = args.pv_capacity {
        cfg.pv_capacity_kw = v;
    }
    if let Some(v) = args.epochs {
        cfg.diffusion.epochs = v;
    }
    if let Some(v) = args.diffusion_steps {
        cfg.diffusion.diffusion_steps = v;
    }
    if let Some(v) = args.embedding_steps {
        cfg.timegan.embedding_steps = v;
    }
    if let Some(v) = args.supervised_steps {
        cfg.timegan.supervised_steps = v;
    }
    if let Some(v) = args.joint_steps {
        cfg.timegan.joint_steps = v;
    }
    // Trainer-shape flags apply to whichever generator is selected.
    match cfg.augmenter {
        AugmenterKind::Diffusion => {
            if let Some(v) = args.learning_rate {
                cfg.diffusion.learning_rate = v;
            }
            if let Some(v) = args.hidden {
                cfg.diffusion.hidden = v;
            }
            if let Some(v) = args.batch_size {
                cfg.diffusion.batch_size = v;
            }
        }
        AugmenterKind::Timegan => {
            if let Some(v) = args.learning_rate {
                cfg.timegan.learning_rate = v;
            }
            if let Some(v) = args.hidden {
                cfg.timegan.hidden = v;
            }
            if let Some(v) = args.batch_size {
                cfg.timegan.batch_size = v;
            }
        }
        AugmenterKind::Replicate => {}
    }
    cfg.validate().map_err(pipeline_failure)?;
    Ok(cfg)
}

fn prepare_out_dir(dir: &Path) -> CliResult<OutputLock> {
    fs::create_dir_all(dir)
        .map_err(|err| data_error(format!("creating {}: {err}", dir.display())))?;
    OutputLock::acquire(dir).map_err(pipeline_failure)
}

fn echo_config(cfg: &PipelineConfig) -> CliResult {
    let json = serde_json::to_string_pretty(cfg).expect("config is plain data");
    let path = cfg.out_dir.join("effective_config.json");
    fs::write(&path, json).map_err(|err| data_error(format!("writing {}: {err}", path.display())))
}

fn load_dataset(path: &Path) -> CliResult<TimeSeriesDataset> {
    ingest_csv(path).map_err(stage_failure)
}

fn cmd_ingest(input: &Path, out: Option<&Path>) -> CliResult {
    let ds = load_dataset(input)?;
    let stamps: Vec<_> = ds.timestamps().collect();
    println!(
        "{}: {} rows ({}), {} .. {}",
        input.display(),
        ds.len(),
        ds.provenance(),
        stamps[0],
        stamps[stamps.len() - 1]
    );
    if let Some(dir) = out {
        let _lock = prepare_out_dir(dir)?;
        let path = dir.join("ingested.csv");
        write_csv(&ds, &path).map_err(stage_failure)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_augment(overrides: &ConfigOverrides) -> CliResult {
    let cfg = resolve_config(overrides, false)?;
    let _lock = prepare_out_dir(&cfg.out_dir)?;
    echo_config(&cfg)?;
    let full = load_dataset(&cfg.input_csv)?;
    let (train, _test) = split_chronological(&full, cfg.train_fraction).map_err(stage_failure)?;
    let art = augment_stage(&cfg, &train, &cfg.out_dir).map_err(stage_failure)?;
    let path = cfg.out_dir.join("augmented.csv");
    write_csv(&art.augmented, &path).map_err(stage_failure)?;
    println!(
        "augmented: {} rows via {} from {} training windows",
        art.augmented.len(),
        cfg.augmenter.label(),
        art.training_windows
    );
    println!("wrote {}", path.display());
    if let Some(cp) = &art.checkpoint {
        println!("wrote {}", cp.display());
    }
    Ok(())
}

/// Suite the label flags match against: the config's forecasters when one
/// is given, the built-in four otherwise.
fn forecaster_suite(config: Option<&Path>) -> CliResult<Vec<ForecasterSpec>> {
    match config {
        Some(path) => {
            let file = load_config_file(path)?;
            Ok(file.forecasters.unwrap_or_else(ForecasterSpec::default_suite))
        }
        None => Ok(ForecasterSpec::default_suite()),
    }
}

fn cmd_train_forecaster(
    train: &Path,
    model: &str,
    out: &Path,
    seed: u64,
    config: Option<&Path>,
) -> CliResult {
    let suite = forecaster_suite(config)?;
    let spec = suite.iter().find(|s| s.label == model).ok_or_else(|| {
        let labels: Vec<_> = suite.iter().map(|s| s.label.as_str()).collect();
        usage(format!(
            "unknown model {model:?}; available: {}",
            labels.join(", ")
        ))
    })?;
    let ds = load_dataset(train)?;
    let (x, y) = design_matrix(&ds).map_err(stage_failure)?;
    let fitted = spec
        .fit(&x, &y, derive_seed(seed, &spec.label))
        .map_err(stage_failure)?;
    let predictions = predict_ensemble(&fitted, &x).map_err(stage_failure)?;
    let (rmse, mae) = error_metrics(&predictions, &y).map_err(stage_failure)?;
    let _lock = prepare_out_dir(out)?;
    let path = out.join("forecaster.gckp");
    save_ensemble(&path, &fitted, seed).map_err(stage_failure)?;
    println!(
        "{}: trained on {} rows, in-sample rmse {rmse:.5}, mae {mae:.5}",
        spec.label,
        ds.len()
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn print_report(report: &EvalReport) {
    println!("model        source       rmse / mae");
    for row in &report.rows {
        println!("{:<12} {:<12} {}", row.model, row.source, row.format_metrics());
    }
}

fn cmd_evaluate(
    train: &[PathBuf],
    test: &Path,
    out: Option<&Path>,
    seed: u64,
    config: Option<&Path>,
) -> CliResult {
    let suite = forecaster_suite(config)?;
    let test_ds = load_dataset(test)?;
    let mut variants = Vec::with_capacity(train.len());
    for path in train {
        let ds = load_dataset(path)?;
        let mut label = ds.provenance().label().to_string();
        // Two files of the same provenance still need distinct report rows.
        let clashes = variants
            .iter()
            .filter(|v: &&TrainVariant| v.label == label || v.label.starts_with(&format!("{label}-")))
            .count();
        if clashes > 0 {
            label = format!("{label}-{}", clashes + 1);
        }
        variants.push(TrainVariant::new(&label, ds));
    }
    let report = benchmark_models(&variants, &test_ds, &suite, seed).map_err(stage_failure)?;
    print_report(&report);
    if let Some(dir) = out {
        let _lock = prepare_out_dir(dir)?;
        for (name, body) in [
            ("eval_report.csv", report.to_csv()),
            ("eval_report.json", report.to_json()),
        ] {
            let path = dir.join(name);
            fs::write(&path, body)
                .map_err(|err| data_error(format!("writing {}: {err}", path.display())))?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn cmd_diagnose(original: &Path, generated: &[PathBuf], out: &Path) -> CliResult {
    let reference = load_dataset(original)?;
    let datasets: Vec<TimeSeriesDataset> = generated
        .iter()
        .map(|p| load_dataset(p))
        .collect::<CliResult<_>>()?;
    let refs: Vec<&TimeSeriesDataset> = datasets.iter().collect();
    let _lock = prepare_out_dir(out)?;
    let report = fidelity_report(&reference, &refs, out).map_err(stage_failure)?;
    for stats in &report.stats {
        let load = stats.columns.last().expect("load column present");
        println!(
            "{:<12} {:>5} rows, load mean {:.5}, std {:.5}",
            stats.source, stats.rows, load.mean, load.std
        );
    }
    for warning in &report.pca.warnings {
        println!("warning: {warning}");
    }
    println!("wrote {} files under {}", report.files.len(), out.display());
    Ok(())
}

fn dispatch_failure(err: DispatchError) -> Failure {
    let code = match &err {
        DispatchError::Plot(_) => ErrorCategory::Numeric.exit_code(),
        _ => ErrorCategory::Data.exit_code(),
    };
    Failure {
        code,
        message: err.to_string(),
    }
}

fn cmd_dispatch(profile: &Path, out: &Path, cost_grid: f64, cost_pv: f64) -> CliResult {
    let problem = read_problem_csv(profile, cost_grid, cost_pv).map_err(dispatch_failure)?;
    let solution = solve_dispatch(&problem).map_err(dispatch_failure)?;
    let verdict = validate_dispatch(&problem, &solution).map_err(dispatch_failure)?;
    if !(verdict.feasible && verdict.optimal) {
        return Err(Failure {
            code: ErrorCategory::Numeric.exit_code(),
            message: format!(
                "schedule failed validation: feasible={}, optimal={}, max residual {:.3e}",
                verdict.feasible, verdict.optimal, verdict.max_residual
            ),
        });
    }
    let _lock = prepare_out_dir(out)?;
    let schedule = out.join("dispatch_schedule.csv");
    write_solution_csv(&problem, &solution, &schedule).map_err(dispatch_failure)?;
    let summary = solution_summary(&problem, &solution);
    let json = serde_json::to_string_pretty(&summary).expect("summary is plain data");
    let summary_path = out.join("dispatch_summary.json");
    fs::write(&summary_path, json)
        .map_err(|err| data_error(format!("writing {}: {err}", summary_path.display())))?;
    let svg = dispatch_svg(&problem, &solution).map_err(dispatch_failure)?;
    let svg_path = out.join("dispatch.svg");
    fs::write(&svg_path, svg)
        .map_err(|err| data_error(format!("writing {}: {err}", svg_path.display())))?;
    println!(
        "dispatch over {} hours: total cost {:.4} (grid {:.4} kWh, pv {:.4} kWh)",
        summary.horizon, summary.total_cost, summary.grid_energy_kwh, summary.pv_energy_kwh
    );
    for path in [&schedule, &summary_path, &svg_path] {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_pipeline(overrides: &ConfigOverrides) -> CliResult {
    let cfg = resolve_config(overrides, true)?;
    let outcome = run_pipeline(&cfg).map_err(pipeline_failure)?;
    for event in &outcome.events {
        println!("{event}");
    }
    for warning in &outcome.warnings {
        println!("warning: {warning}");
    }
    print_report(&outcome.report);
    println!(
        "done: {} artifacts under {}",
        outcome.manifest.entries.len(),
        outcome.out_dir.display()
    );
    Ok(())
}
