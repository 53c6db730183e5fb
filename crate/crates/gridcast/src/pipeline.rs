//! End-to-end orchestration: split → augment → benchmark → fidelity →
//! next-day forecast → dispatch, with every artifact checksummed into a
//! manifest. The library stays silent; callers print `events` and
//! `warnings` from the returned outcome.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::checkpoint::{self, CheckpointError};
use crate::dataset::{
    fit_apply_normalizer, ingest_csv, ingest_weather_csv, make_windows, replicate_rows,
    split_chronological, DatasetError, TimeSeriesDataset, WindowSet, WEATHER_FEATURES,
};
use crate::diffusion::{generate_rows, train_diffusion, DiffusionError, DiffusionTrainConfig, TrainedDiffusion};
use crate::dispatch::{
    dispatch_svg, sanitize_load, solution_summary, solve_dispatch, validate_dispatch,
    write_solution_csv, DispatchError, DispatchProblem, DispatchSummary,
};
use crate::fidelity::{fidelity_report, FidelityError};
use crate::forecast::{
    benchmark_models, design_matrix, predict_ensemble, EvalReport, ForecastError, ForecasterSpec,
    TrainVariant,
};
use crate::numerics::{derive_seed, NumericsError, Tensor};
use crate::plot::PlotError;
use crate::timegan::{generate_rows_gan, train_timegan, TimeGanError, TimeGanTrainConfig, TrainedTimeGan};

/// Index of global horizontal irradiance in the weather feature order.
const GHI_COLUMN: usize = 4;
/// Plane-of-array irradiance at which PV output reaches nameplate capacity.
const REFERENCE_IRRADIANCE: f64 = 1000.0;
const LOCK_NAME: &str = ".gridcast.lock";
const DISPATCH_HOURS: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmenterKind {
    Diffusion,
    Timegan,
    Replicate,
}

impl AugmenterKind {
    pub fn label(self) -> &'static str {
        match self {
            AugmenterKind::Diffusion => "diffusion",
            AugmenterKind::Timegan => "timegan",
            AugmenterKind::Replicate => "replicate",
        }
    }

    pub fn from_label(label: &str) -> Option<AugmenterKind> {
        match label {
            "diffusion" => Some(AugmenterKind::Diffusion),
            "timegan" => Some(AugmenterKind::Timegan),
            "replicate" => Some(AugmenterKind::Replicate),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub input_csv: PathBuf,
    /// 24 rows of next-day weather covariates (ingest schema minus `load`).
    pub weather_csv: PathBuf,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub train_fraction: f64,
    pub window_length: usize,
    pub window_stride: usize,
    pub augmenter: AugmenterKind,
    pub target_rows: usize,
    /// Trainer settings; their embedded `seed` fields are ignored in favor
    /// of stage seeds derived from the master seed.
    pub diffusion: DiffusionTrainConfig,
    pub timegan: TimeGanTrainConfig,
    /// Benchmark suite; the first entry also drives the next-day forecast.
    pub forecasters: Vec<ForecasterSpec>,
    pub cost_grid: f64,
    pub cost_pv: f64,
    /// Nameplate PV power; hourly caps scale with GHI / 1000 W/m².
    pub pv_capacity_kw: f64,
}

impl PipelineConfig {
    pub fn new(input_csv: &Path, weather_csv: &Path, out_dir: &Path) -> PipelineConfig {
        PipelineConfig {
            input_csv: input_csv.to_path_buf(),
            weather_csv: weather_csv.to_path_buf(),
            out_dir: out_dir.to_path_buf(),
            seed: 0,
            train_fraction: 0.8,
            window_length: 24,
            window_stride: 1,
            augmenter: AugmenterKind::Diffusion,
            target_rows: 3456,
            diffusion: DiffusionTrainConfig::default(),
            timegan: TimeGanTrainConfig::default(),
            forecasters: ForecasterSpec::default_suite(),
            cost_grid: 1.0,
            cost_pv: 0.4,
            pv_capacity_kw: 0.2,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |reason: String| Err(PipelineError::BadConfig { reason });
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!("train_fraction {} not in (0, 1)", self.train_fraction));
        }
        if self.window_length == 0 || self.window_stride == 0 {
            return bad("window_length and window_stride must be positive".into());
        }
        if self.target_rows == 0 {
            return bad("target_rows must be positive".into());
        }
        if self.forecasters.is_empty() {
            return bad("at least one forecaster is required".into());
        }
        for (name, v) in [
            ("cost_grid", self.cost_grid),
            ("cost_pv", self.cost_pv),
            ("pv_capacity_kw", self.pv_capacity_kw),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} = {v} must be non-negative and finite"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    TimeGan(#[from] TimeGanError),
    #[error(transparent)]
    Forecast(#[from] ForecastError),
    #[error(transparent)]
    Fidelity(#[from] FidelityError),
    #[error(transparent)]
    Dispatch(#[from] DispatchError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Plot(#[from] PlotError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
    #[error("weather file must have exactly {expected} rows, got {got}")]
    WeatherRows { expected: usize, got: usize },
    #[error("dispatch schedule failed validation: {reason}")]
    BadSchedule { reason: String },
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid config: {reason}")]
    BadConfig { reason: String },
    #[error("output directory {} is owned by another run (remove {} if stale)", dir.display(), lock.display())]
    OutDirLocked { dir: PathBuf, lock: PathBuf },
    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: StageError,
    },
}

/// Coarse triage for exit codes: mistakes in how the tool is invoked,
/// broken input data, or arithmetic that went degenerate mid-run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Usage,
    Data,
    Numeric,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Usage => 1,
            ErrorCategory::Data => 2,
            ErrorCategory::Numeric => 3,
        }
    }
}

impl StageError {
    pub fn category(&self) -> ErrorCategory {
        match self {
            StageError::Dataset(_) | StageError::Checkpoint(_) | StageError::Io { .. } => {
                ErrorCategory::Data
            }
            StageError::WeatherRows { .. } => ErrorCategory::Data,
            StageError::Diffusion(e) => match e {
                DiffusionError::InvalidConfig { .. } | DiffusionError::InvalidSchedule(_) => {
                    ErrorCategory::Usage
                }
                DiffusionError::Numerics(_) | DiffusionError::Diverged { .. } => {
                    ErrorCategory::Numeric
                }
                _ => ErrorCategory::Data,
            },
            StageError::TimeGan(e) => match e {
                TimeGanError::InvalidConfig { .. } => ErrorCategory::Usage,
                TimeGanError::Numerics(_) | TimeGanError::Diverged { .. } => {
                    ErrorCategory::Numeric
                }
                _ => ErrorCategory::Data,
            },
            StageError::Forecast(e) => match e {
                ForecastError::BadHyper { .. } => ErrorCategory::Usage,
                ForecastError::NonFinite { .. } | ForecastError::Numerics(_) => {
                    ErrorCategory::Numeric
                }
                _ => ErrorCategory::Data,
            },
            StageError::Fidelity(e) => match e {
                FidelityError::NonFinite { .. } | FidelityError::BadBandwidth { .. } => {
                    ErrorCategory::Numeric
                }
                _ => ErrorCategory::Data,
            },
            // Dispatch inputs come from trained models here, so a violated
            // bound means the arithmetic upstream broke.
            StageError::Dispatch(_) | StageError::BadSchedule { .. } | StageError::Plot(_) => {
                ErrorCategory::Numeric
            }
            StageError::Numerics(_) => ErrorCategory::Numeric,
        }
    }
}

impl PipelineError {
    pub fn category(&self) -> ErrorCategory {
        match self {
            PipelineError::BadConfig { .. } | PipelineError::OutDirLocked { .. } => {
                ErrorCategory::Usage
            }
            PipelineError::Stage { source, .. } => source.category(),
        }
    }
}

fn stage<T, E: Into<StageError>>(name: &'static str, r: Result<T, E>) -> Result<T, PipelineError> {
    r.map_err(|e| PipelineError::Stage {
        stage: name,
        source: e.into(),
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Path relative to the output directory.
    pub path: String,
    /// data | report | plot | checkpoint | schedule | config.
    pub kind: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub augmenter: String,
    pub benchmark_rows: usize,
    pub entries: Vec<ManifestEntry>,
}

/// Exclusive ownership of an output directory, released on drop. Every
/// writing subcommand takes this before touching the directory.
pub struct OutputLock {
    lock: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> Result<OutputLock, PipelineError> {
        let lock = dir.join(LOCK_NAME);
        match fs::OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(_) => Ok(OutputLock { lock }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(PipelineError::OutDirLocked {
                    dir: dir.to_path_buf(),
                    lock,
                })
            }
            Err(source) => Err(PipelineError::Stage {
                stage: "setup",
                source: StageError::Io {
                    context: format!("creating {}", lock.display()),
                    source,
                },
            }),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}

/// Registry of written artifacts; every file lands here so the manifest
/// cannot drift from the directory contents.
struct Artifacts {
    root: PathBuf,
    entries: Vec<ManifestEntry>,
}

impl Artifacts {
    fn new(root: &Path) -> Artifacts {
        Artifacts {
            root: root.to_path_buf(),
            entries: Vec::new(),
        }
    }

    fn record(&mut self, rel: String, kind: &str, bytes: &[u8]) {
        self.entries.push(ManifestEntry {
            path: rel,
            kind: kind.to_string(),
            bytes: bytes.len() as u64,
            sha256: sha256_hex(bytes),
        });
    }

    fn write(&mut self, rel: &str, kind: &str, contents: &[u8]) -> Result<PathBuf, StageError> {
        let path = self.root.join(rel);
        fs::write(&path, contents).map_err(|source| StageError::Io {
            context: format!("writing {}", path.display()),
            source,
        })?;
        self.record(rel.to_string(), kind, contents);
        Ok(path)
    }

    /// Checksum a file some module already wrote into the output tree.
    fn adopt(&mut self, path: &Path, kind: &str) -> Result<(), StageError> {
        let bytes = fs::read(path).map_err(|source| StageError::Io {
            context: format!("reading back {}", path.display()),
            source,
        })?;
        let rel = path
            .strip_prefix(&self.root)
            .unwrap_or(path)
            .to_string_lossy()
            .replace('\\', "/");
        self.record(rel, kind, &bytes);
        Ok(())
    }
}

#[derive(Debug)]
pub enum TrainedAugmenter {
    Diffusion(TrainedDiffusion),
    Timegan(TrainedTimeGan),
    Replicate,
}

/// Fit the configured generator on training windows. Refuses test-partition
/// windows outright (the underlying trainers enforce the same guard).
pub fn train_augmenter(
    kind: AugmenterKind,
    windows: &WindowSet,
    config: &PipelineConfig,
    seed: u64,
) -> Result<TrainedAugmenter, StageError> {
    match kind {
        AugmenterKind::Diffusion => {
            let cfg = DiffusionTrainConfig {
                seed,
                ..config.diffusion
            };
            Ok(TrainedAugmenter::Diffusion(train_diffusion(windows, &cfg)?))
        }
        AugmenterKind::Timegan => {
            let cfg = TimeGanTrainConfig {
                seed,
                ..config.timegan.clone()
            };
            Ok(TrainedAugmenter::Timegan(train_timegan(windows, &cfg)?))
        }
        AugmenterKind::Replicate => Ok(TrainedAugmenter::Replicate),
    }
}

fn truncate_rows(ds: TimeSeriesDataset, target: usize) -> TimeSeriesDataset {
    if ds.len() <= target {
        ds
    } else {
        TimeSeriesDataset::from_rows(ds.rows()[..target].to_vec(), ds.provenance())
    }
}

#[derive(Debug)]
pub struct AugmentArtifacts {
    /// Exactly `target_rows` rows in original units.
    pub augmented: TimeSeriesDataset,
    /// Written checkpoint; `None` for the replicate baseline.
    pub checkpoint: Option<PathBuf>,
    pub training_windows: usize,
}

/// Normalize the train partition, fit the configured augmenter on its
/// windows, checkpoint the model, and generate `target_rows` rows.
pub fn augment_stage(
    config: &PipelineConfig,
    train: &TimeSeriesDataset,
    out_dir: &Path,
) -> Result<AugmentArtifacts, StageError> {
    let (norm_train, params) = fit_apply_normalizer(train)?;
    let windows = make_windows(&norm_train, config.window_length, config.window_stride)?;
    let aug_seed = derive_seed(config.seed, "augment");
    let gen_seed = derive_seed(config.seed, "generate");
    let trained = train_augmenter(config.augmenter, &windows, config, aug_seed)?;
    let (augmented, checkpoint) = match &trained {
        TrainedAugmenter::Diffusion(td) => {
            let path = out_dir.join("augmenter.gckp");
            checkpoint::save_diffusion(&path, &td.model, &td.schedule, aug_seed)?;
            let n = config.target_rows.div_ceil(config.window_length);
            let rows = generate_rows(&td.model, &td.schedule, n, &params, gen_seed)?;
            (truncate_rows(rows, config.target_rows), Some(path))
        }
        TrainedAugmenter::Timegan(tg) => {
            let path = out_dir.join("augmenter.gckp");
            checkpoint::save_timegan(&path, &tg.model, aug_seed)?;
            // The sequence generator emits fixed 24-step windows.
            let n = config.target_rows.div_ceil(DISPATCH_HOURS);
            let rows = generate_rows_gan(&tg.model, n, &params, gen_seed)?;
            (truncate_rows(rows, config.target_rows), Some(path))
        }
        TrainedAugmenter::Replicate => (replicate_rows(train, config.target_rows)?, None),
    };
    Ok(AugmentArtifacts {
        augmented,
        checkpoint,
        training_windows: windows.len(),
    })
}

#[derive(Debug)]
pub struct PipelineOutcome {
    pub out_dir: PathBuf,
    pub manifest: Manifest,
    pub report: EvalReport,
    pub dispatch: DispatchSummary,
    pub warnings: Vec<String>,
    /// One line per stage, for verbose CLI output.
    pub events: Vec<String>,
}

pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineOutcome, PipelineError> {
    config.validate()?;
    fs::create_dir_all(&config.out_dir).map_err(|source| PipelineError::Stage {
        stage: "setup",
        source: StageError::Io {
            context: format!("creating {}", config.out_dir.display()),
            source,
        },
    })?;
    let _lock = OutputLock::acquire(&config.out_dir)?;
    let mut artifacts = Artifacts::new(&config.out_dir);
    let mut events = Vec::new();
    let mut warnings = Vec::new();

    let full = stage("ingest", ingest_csv(&config.input_csv))?;
    events.push(format!(
        "ingest: {} rows from {}",
        full.len(),
        config.input_csv.display()
    ));

    let (train, test) = stage("split", split_chronological(&full, config.train_fraction))?;
    events.push(format!(
        "split: {} train rows, {} test rows",
        train.len(),
        test.len()
    ));

    // Augmenters see only the train partition; generated rows are
    // denormalized back to original units before any downstream use.
    let aug = stage("augment", augment_stage(config, &train, &config.out_dir))?;
    if let Some(path) = &aug.checkpoint {
        stage("augment", artifacts.adopt(path, "checkpoint"))?;
    }
    let augmented = aug.augmented;
    events.push(format!(
        "augment: {} via {} from {} windows",
        augmented.len(),
        config.augmenter.label(),
        aug.training_windows
    ));
    {
        let path = config.out_dir.join("augmented.csv");
        stage("augment", crate::dataset::write_csv(&augmented, &path))?;
        stage("augment", artifacts.adopt(&path, "data"))?;
    }

    let replicated = stage("benchmark", replicate_rows(&train, config.target_rows))?;
    let mut variants = vec![
        TrainVariant::new("original", train.clone()),
        TrainVariant::new("replicated", replicated),
    ];
    if config.augmenter != AugmenterKind::Replicate {
        variants.push(TrainVariant::new(config.augmenter.label(), augmented.clone()));
    }
    let report = stage(
        "benchmark",
        benchmark_models(
            &variants,
            &test,
            &config.forecasters,
            derive_seed(config.seed, "benchmark"),
        ),
    )?;
    stage(
        "benchmark",
        artifacts
            .write("eval_report.csv", "report", report.to_csv().as_bytes())
            .map(|_| ()),
    )?;
    stage(
        "benchmark",
        artifacts
            .write("eval_report.json", "report", report.to_json().as_bytes())
            .map(|_| ()),
    )?;
    events.push(format!("benchmark: {} rows", report.rows.len()));

    let fid_dir = config.out_dir.join("fidelity");
    let fid = stage("fidelity", fidelity_report(&train, &[&augmented], &fid_dir))?;
    for warning in &fid.pca.warnings {
        warnings.push(format!("fidelity: {warning}"));
    }
    for file in &fid.files {
        let kind = if file.extension().is_some_and(|e| e == "svg") {
            "plot"
        } else {
            "report"
        };
        stage("fidelity", artifacts.adopt(file, kind))?;
    }
    events.push(format!("fidelity: {} files", fid.files.len()));

    let weather = stage("forecast", ingest_weather_csv(&config.weather_csv))?;
    if weather.len() != DISPATCH_HOURS {
        return Err(PipelineError::Stage {
            stage: "forecast",
            source: StageError::WeatherRows {
                expected: DISPATCH_HOURS,
                got: weather.len(),
            },
        });
    }
    let mut flat = Vec::with_capacity(DISPATCH_HOURS * WEATHER_FEATURES);
    for row in &weather {
        flat.extend_from_slice(&row.values);
    }
    let features = stage(
        "forecast",
        Tensor::from_vec(&[DISPATCH_HOURS, WEATHER_FEATURES], flat),
    )?;
    let spec = &config.forecasters[0];
    let (ax, ay) = stage("forecast", design_matrix(&augmented))?;
    let forecaster = stage(
        "forecast",
        spec.fit(&ax, &ay, derive_seed(config.seed, "forecast")),
    )?;
    {
        let path = config.out_dir.join("forecaster.gckp");
        stage(
            "forecast",
            checkpoint::save_ensemble(&path, &forecaster, derive_seed(config.seed, "forecast")),
        )?;
        stage("forecast", artifacts.adopt(&path, "checkpoint"))?;
    }
    let mut load = stage("forecast", predict_ensemble(&forecaster, &features))?;
    let clamped = sanitize_load(&mut load);
    if !clamped.is_empty() {
        warnings.push(format!(
            "forecast: negative predicted load clamped to 0 at hours {clamped:?}"
        ));
    }
    events.push(format!(
        "forecast: next-day load via {} from {} training rows",
        spec.label,
        augmented.len()
    ));

    // Sensor noise can leave irradiance a hair below zero; treat it as dark.
    let pv_max: Vec<f64> = weather
        .iter()
        .map(|row| {
            let ghi = row.values[GHI_COLUMN].max(0.0);
            config.pv_capacity_kw * (ghi / REFERENCE_IRRADIANCE).min(1.0)
        })
        .collect();
    let problem = DispatchProblem {
        load,
        pv_max,
        cost_grid: config.cost_grid,
        cost_pv: config.cost_pv,
    };
    let solution = stage("dispatch", solve_dispatch(&problem))?;
    let verdict = stage("dispatch", validate_dispatch(&problem, &solution))?;
    if !(verdict.feasible && verdict.optimal) {
        return Err(PipelineError::Stage {
            stage: "dispatch",
            source: StageError::BadSchedule {
                reason: format!(
                    "feasible={}, optimal={}, max residual {:.3e}, cost gap {:.3e}",
                    verdict.feasible, verdict.optimal, verdict.max_residual, verdict.cost_gap
                ),
            },
        });
    }
    {
        let mut problem_csv = String::from("hour,load_kw,pv_max_kw\n");
        for t in 0..problem.horizon() {
            problem_csv.push_str(&format!("{},{},{}\n", t, problem.load[t], problem.pv_max[t]));
        }
        stage(
            "dispatch",
            artifacts
                .write("dispatch_problem.csv", "data", problem_csv.as_bytes())
                .map(|_| ()),
        )?;
        let schedule_path = config.out_dir.join("dispatch_schedule.csv");
        stage(
            "dispatch",
            write_solution_csv(&problem, &solution, &schedule_path),
        )?;
        stage("dispatch", artifacts.adopt(&schedule_path, "schedule"))?;
        let summary = solution_summary(&problem, &solution);
        let json = serde_json::to_string_pretty(&summary).expect("summary is plain data");
        stage(
            "dispatch",
            artifacts
                .write("dispatch_summary.json", "report", json.as_bytes())
                .map(|_| ()),
        )?;
        let svg = stage("dispatch", dispatch_svg(&problem, &solution))?;
        stage(
            "dispatch",
            artifacts
                .write("dispatch.svg", "plot", svg.as_bytes())
                .map(|_| ()),
        )?;
        events.push(format!("dispatch: total cost {:.4}", solution.total_cost));
    }
    let dispatch = solution_summary(&problem, &solution);

    let config_json = serde_json::to_string_pretty(config).expect("config is plain data");
    stage(
        "finalize",
        artifacts
            .write("effective_config.json", "config", config_json.as_bytes())
            .map(|_| ()),
    )?;
    let mut entries = artifacts.entries.clone();
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = Manifest {
        seed: config.seed,
        augmenter: config.augmenter.label().to_string(),
        benchmark_rows: report.rows.len(),
        entries,
    };
    let manifest_json = serde_json::to_string_pretty(&manifest).expect("manifest is plain data");
    let manifest_path = config.out_dir.join("manifest.json");
    fs::write(&manifest_path, manifest_json).map_err(|source| PipelineError::Stage {
        stage: "finalize",
        source: StageError::Io {
            context: format!("writing {}", manifest_path.display()),
            source,
        },
    })?;
    events.push(format!("manifest: {} files", manifest.entries.len()));

    Ok(PipelineOutcome {
        out_dir: config.out_dir.clone(),
        manifest,
        report,
        dispatch,
        warnings,
        events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Partition;
    use crate::forecast::{ForecasterConfig, ForestHyper, ForestKind};

    fn tiny_forest_spec() -> ForecasterSpec {
        ForecasterSpec {
            label: "extratrees".into(),
            config: ForecasterConfig::Forest {
                kind: ForestKind::ExtraTrees,
                hyper: ForestHyper {
                    trees: 15,
                    ..ForestHyper::default()
                },
            },
        }
    }

    fn write_input_csv(path: &Path, hours: usize) {
        let mut text = String::from(
            "timestamp,temperature,pressure,wind_speed,wind_direction,ghi,dni,dhi,load\n",
        );
        for h in 0..hours {
            let day_angle = (h % 24) as f64 / 24.0 * std::f64::consts::TAU;
            let temperature = 12.0 + 6.0 * day_angle.sin() + 0.01 * h as f64;
            let pressure = 1010.0 + 3.0 * (h as f64 / 7.0).sin();
            let wind_speed = 3.0 + 1.5 * (h as f64 / 5.0).cos().abs();
            let wind_direction = (h * 17 % 360) as f64;
            let ghi = (800.0 * (day_angle - std::f64::consts::FRAC_PI_2).cos()).max(0.0);
            let dni = ghi * 0.7;
            let dhi = ghi * 0.25;
            let load = 0.05 + 0.002 * temperature + 0.00004 * ghi + 0.004 * wind_speed;
            text.push_str(&format!(
                "2024-04-{:02}T{:02}:00:00,{temperature},{pressure},{wind_speed},{wind_direction},{ghi},{dni},{dhi},{load}\n",
                16 + h / 24,
                h % 24,
            ));
        }
        fs::write(path, text).unwrap();
    }

    fn write_weather_csv(path: &Path) {
        let mut text =
            String::from("timestamp,temperature,pressure,wind_speed,wind_direction,ghi,dni,dhi\n");
        for h in 0..24 {
            let day_angle = h as f64 / 24.0 * std::f64::consts::TAU;
            let ghi = (780.0 * (day_angle - std::f64::consts::FRAC_PI_2).cos()).max(0.0);
            text.push_str(&format!(
                "2024-04-23T{h:02}:00:00,{},{},{},{},{ghi},{},{}\n",
                13.0 + 5.0 * day_angle.sin(),
                1011.0,
                3.4,
                (h * 31 % 360) as f64,
                ghi * 0.7,
                ghi * 0.25,
            ));
        }
        fs::write(path, text).unwrap();
    }

    fn base_config(dir: &Path, out_name: &str) -> PipelineConfig {
        let input = dir.join("input.csv");
        let weather = dir.join("weather.csv");
        if !input.exists() {
            write_input_csv(&input, 60);
            write_weather_csv(&weather);
        }
        PipelineConfig {
            seed: 9,
            augmenter: AugmenterKind::Replicate,
            target_rows: 96,
            forecasters: vec![tiny_forest_spec()],
            ..PipelineConfig::new(&input, &weather, &dir.join(out_name))
        }
    }

    fn assert_manifest_matches_disk(outcome: &PipelineOutcome) {
        for entry in &outcome.manifest.entries {
            let bytes = fs::read(outcome.out_dir.join(&entry.path)).unwrap();
            assert_eq!(sha256_hex(&bytes), entry.sha256, "{}", entry.path);
            assert_eq!(bytes.len() as u64, entry.bytes, "{}", entry.path);
        }
    }

    #[test]
    fn replicate_pipeline_runs_end_to_end() {
        let dir = tempfile::tempdir().unwrap();
        let config = base_config(dir.path(), "out");
        let outcome = run_pipeline(&config).unwrap();

        // replicate augmenter collapses augmented into the replicated variant
        assert_eq!(outcome.manifest.benchmark_rows, 2);
        assert_eq!(outcome.report.rows.len(), 2);
        assert_eq!(outcome.dispatch.horizon, 24);
        assert_manifest_matches_disk(&outcome);
        let kinds = |k: &str| {
            outcome
                .manifest
                .entries
                .iter()
                .filter(|e| e.kind == k)
                .count()
        };
        assert_eq!(kinds("schedule"), 1);
        assert_eq!(kinds("plot"), 10, "9 fidelity plots + 1 dispatch plot");
        assert!(!dir.path().join("out").join(LOCK_NAME).exists());
    }

    #[test]
    fn identical_runs_are_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let a = run_pipeline(&base_config(dir.path(), "out_a")).unwrap();
        let b = run_pipeline(&base_config(dir.path(), "out_b")).unwrap();
        assert_eq!(a.manifest.entries.len(), b.manifest.entries.len());
        for (ea, eb) in a.manifest.entries.iter().zip(&b.manifest.entries) {
            assert_eq!(ea.path, eb.path);
            // the config echo embeds out_dir, which differs here on purpose
            if ea.kind == "config" {
                continue;
            }
            assert_eq!(ea.sha256, eb.sha256, "{} differs between runs", ea.path);
        }
    }

    #[test]
    fn missing_input_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = base_config(dir.path(), "out");
        config.input_csv = dir.path().join("nope.csv");
        let err = run_pipeline(&config).unwrap_err();
        assert!(err.to_string().contains("nope.csv"), "{err}");
        assert_eq!(err.category(), ErrorCategory::Data);
    }

    #[test]
    fn locked_out_dir_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let config = base_config(dir.path(), "out");
        fs::create_dir_all(&config.out_dir).unwrap();
        fs::write(config.out_dir.join(LOCK_NAME), b"").unwrap();
        let err = run_pipeline(&config).unwrap_err();
        assert!(matches!(err, PipelineError::OutDirLocked { .. }));
        assert_eq!(err.category(), ErrorCategory::Usage);
    }

    #[test]
    fn test_rows_never_reach_augmenter_training() {
        let dir = tempfile::tempdir().unwrap();
        let config = base_config(dir.path(), "out");
        let full = ingest_csv(&config.input_csv).unwrap();
        let (_, test) = split_chronological(&full, 0.5).unwrap();
        let (norm_test, _) = fit_apply_normalizer(&test).unwrap();
        assert_eq!(norm_test.partition(), Partition::Test);
        let windows = make_windows(&norm_test, 24, 1).unwrap();
        for kind in [AugmenterKind::Diffusion, AugmenterKind::Timegan] {
            let err = train_augmenter(kind, &windows, &config, 1).unwrap_err();
            assert_eq!(err.category(), ErrorCategory::Data, "{err}");
        }
    }

    #[test]
    fn diffusion_pipeline_smoke() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = base_config(dir.path(), "out");
        config.augmenter = AugmenterKind::Diffusion;
        config.diffusion = DiffusionTrainConfig {
            diffusion_steps: 10,
            epochs: 2,
            batch_size: 8,
            hidden: 8,
            ..DiffusionTrainConfig::default()
        };
        let outcome = run_pipeline(&config).unwrap();
        assert_eq!(outcome.manifest.benchmark_rows, 3);
        assert_manifest_matches_disk(&outcome);
        let (model, schedule, seed) =
            checkpoint::load_diffusion(&config.out_dir.join("augmenter.gckp")).unwrap();
        assert_eq!(seed, derive_seed(config.seed, "augment"));
        assert_eq!(schedule.steps(), 10);
        assert_eq!(model.arch().hidden, 8);
    }

    #[test]
    fn timegan_pipeline_smoke() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = base_config(dir.path(), "out");
        config.augmenter = AugmenterKind::Timegan;
        config.timegan = TimeGanTrainConfig {
            embedding_steps: 3,
            supervised_steps: 3,
            joint_steps: 2,
            batch_size: 4,
            hidden: 4,
            ..TimeGanTrainConfig::default()
        };
        let outcome = run_pipeline(&config).unwrap();
        assert_eq!(outcome.manifest.benchmark_rows, 3);
        let (model, _) = checkpoint::load_timegan(&config.out_dir.join("augmenter.gckp")).unwrap();
        assert_eq!(model.hidden(), 4);
    }
}
