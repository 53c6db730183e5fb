//! Hourly load/weather dataset: CSV ingest, normalization, chronological
//! splitting, window extraction, and the replication baseline.
//!
//! Provenance and partition tags ride along with every dataset and window
//! set so later stages can prove they never trained on test rows.

use std::fmt;
use std::path::Path;

use chrono::{Duration, NaiveDate, NaiveDateTime};
use thiserror::Error;

use crate::numerics::Tensor;

/// Value columns in file order; the `timestamp` column precedes them.
pub const COLUMN_NAMES: [&str; 8] = [
    "temperature",
    "pressure",
    "wind_speed",
    "wind_direction",
    "ghi",
    "dni",
    "dhi",
    "load",
];

pub const NUM_FEATURES: usize = COLUMN_NAMES.len();
/// Leading columns that describe weather; everything except `load`.
pub const WEATHER_FEATURES: usize = NUM_FEATURES - 1;
pub const LOAD_COLUMN: usize = NUM_FEATURES - 1;

const TIMESTAMP_FORMATS: [&str; 3] = ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M"];

/// First synthetic hour assigned to generated rows, far from any plausible
/// recording period so synthetic timestamps never collide with real ones.
pub fn synthetic_epoch() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2030, 1, 1)
        .expect("valid date")
        .and_hms_opt(0, 0, 0)
        .expect("valid time")
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing required column `{0}`")]
    MissingColumn(&'static str),
    #[error("row {row}: cannot parse {column} value `{value}`")]
    BadValue {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}: duplicate hour {timestamp}")]
    DuplicateHour { row: usize, timestamp: String },
    #[error("row {row}: expected hour {expected}, found {found}")]
    NonConsecutiveHour {
        row: usize,
        expected: String,
        found: String,
    },
    #[error("dataset has no rows")]
    Empty,
    #[error("normalization requires at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("split fraction {fraction} leaves an empty partition for {rows} rows")]
    EmptySplit { fraction: f64, rows: usize },
    #[error("window length {window} exceeds row count {rows}")]
    WindowTooLong { window: usize, rows: usize },
    #[error("stride must be at least 1")]
    ZeroStride,
    #[error("window length must be at least 1")]
    ZeroWindow,
    #[error("replication target {target} is smaller than the source size {available}")]
    ReplicationTargetTooSmall { target: usize, available: usize },
    #[error("normalizer covers {params} columns, data has {data}")]
    ColumnCountMismatch { params: usize, data: usize },
    #[error("window set is not in normalized units")]
    NotNormalized,
    #[error("normalized value {value} outside [0,1] at window {window}")]
    ValueOutOfRange { window: usize, value: f64 },
    #[error("windows have mixed shapes: {a:?} vs {b:?}")]
    MixedWindowShapes { a: Vec<usize>, b: Vec<usize> },
    #[error("empty window set")]
    EmptyWindowSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    Original,
    Replicated,
    Diffusion,
    Timegan,
}

impl Provenance {
    pub fn label(self) -> &'static str {
        match self {
            Provenance::Original => "original",
            Provenance::Replicated => "replicated",
            Provenance::Diffusion => "diffusion",
            Provenance::Timegan => "timegan",
        }
    }

    pub fn from_label(label: &str) -> Option<Provenance> {
        match label {
            "original" => Some(Provenance::Original),
            "replicated" => Some(Provenance::Replicated),
            "diffusion" => Some(Provenance::Diffusion),
            "timegan" => Some(Provenance::Timegan),
            _ => None,
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Which side of the chronological split a dataset's rows belong to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Partition {
    Unsplit,
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataRow {
    pub timestamp: NaiveDateTime,
    pub values: [f64; NUM_FEATURES],
}

impl DataRow {
    pub fn load(&self) -> f64 {
        self.values[LOAD_COLUMN]
    }

    pub fn weather(&self) -> [f64; WEATHER_FEATURES] {
        let mut out = [0.0; WEATHER_FEATURES];
        out.copy_from_slice(&self.values[..WEATHER_FEATURES]);
        out
    }
}

#[derive(Debug, Clone)]
pub struct TimeSeriesDataset {
    rows: Vec<DataRow>,
    provenance: Provenance,
    partition: Partition,
    normalized: bool,
}

impl TimeSeriesDataset {
    pub fn from_rows(rows: Vec<DataRow>, provenance: Provenance) -> TimeSeriesDataset {
        TimeSeriesDataset {
            rows,
            provenance,
            partition: Partition::Unsplit,
            normalized: false,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[DataRow] {
        &self.rows
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn partition(&self) -> Partition {
        self.partition
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn column(&self, index: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.values[index]).collect()
    }

    pub fn timestamps(&self) -> impl Iterator<Item = NaiveDateTime> + '_ {
        self.rows.iter().map(|r| r.timestamp)
    }
}

/// Read the 9-column hourly CSV. Columns are located by header name, so
/// extra columns (like a `source` tag from a previous export) are tolerated;
/// a uniform known `source` column sets the dataset's provenance. Rows are
/// sorted by timestamp, then duplicates and gaps are rejected with the
/// offending file row number.
pub fn ingest_csv(path: &Path) -> Result<TimeSeriesDataset, DatasetError> {
    let file = std::fs::File::open(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);

    let headers = reader.headers()?.clone();
    let find = |name: &'static str| -> Result<usize, DatasetError> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or(DatasetError::MissingColumn(name))
    };
    let ts_idx = find("timestamp")?;
    let mut value_idx = [0usize; NUM_FEATURES];
    for (slot, name) in value_idx.iter_mut().zip(COLUMN_NAMES) {
        *slot = find(name)?;
    }
    let source_idx = headers.iter().position(|h| h.trim() == "source");

    // (file row, parsed row); file rows are 1-based counting the header.
    let mut rows: Vec<(usize, DataRow)> = Vec::new();
    let mut provenance: Option<Provenance> = None;
    for (record_no, record) in reader.records().enumerate() {
        let record = record?;
        let file_row = record_no + 2;
        let raw_ts = record.get(ts_idx).unwrap_or("").trim();
        let timestamp = parse_timestamp(raw_ts).ok_or_else(|| DatasetError::BadValue {
            row: file_row,
            column: "timestamp".into(),
            value: raw_ts.into(),
        })?;
        let mut values = [0.0; NUM_FEATURES];
        for (v, (&idx, name)) in values
            .iter_mut()
            .zip(value_idx.iter().zip(COLUMN_NAMES))
        {
            let raw = record.get(idx).unwrap_or("").trim();
            *v = raw
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| DatasetError::BadValue {
                    row: file_row,
                    column: name.into(),
                    value: raw.into(),
                })?;
        }
        if let Some(idx) = source_idx {
            let raw = record.get(idx).unwrap_or("").trim();
            let tag = Provenance::from_label(raw).ok_or_else(|| DatasetError::BadValue {
                row: file_row,
                column: "source".into(),
                value: raw.into(),
            })?;
            match provenance {
                None => provenance = Some(tag),
                Some(existing) if existing != tag => {
                    return Err(DatasetError::BadValue {
                        row: file_row,
                        column: "source".into(),
                        value: format!("{raw} (mixed with {existing})"),
                    })
                }
                Some(_) => {}
            }
        }
        rows.push((file_row, DataRow { timestamp, values }));
    }
    if rows.is_empty() {
        return Err(DatasetError::Empty);
    }

    rows.sort_by_key(|(_, r)| r.timestamp);
    for pair in rows.windows(2) {
        let (_, prev) = &pair[0];
        let (row, next) = &pair[1];
        if next.timestamp == prev.timestamp {
            return Err(DatasetError::DuplicateHour {
                row: *row,
                timestamp: next.timestamp.to_string(),
            });
        }
        let expected = prev.timestamp + Duration::hours(1);
        if next.timestamp != expected {
            return Err(DatasetError::NonConsecutiveHour {
                row: *row,
                expected: expected.to_string(),
                found: next.timestamp.to_string(),
            });
        }
    }

    Ok(TimeSeriesDataset {
        rows: rows.into_iter().map(|(_, r)| r).collect(),
        provenance: provenance.unwrap_or(Provenance::Original),
        partition: Partition::Unsplit,
        normalized: false,
    })
}

fn parse_timestamp(raw: &str) -> Option<NaiveDateTime> {
    TIMESTAMP_FORMATS
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(raw, fmt).ok())
}

/// Write the dataset back out in the ingest schema plus a `source` column.
pub fn write_csv(ds: &TimeSeriesDataset, path: &Path) -> Result<(), DatasetError> {
    let file = std::fs::File::create(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut writer = csv::Writer::from_writer(file);
    let mut header = vec!["timestamp"];
    header.extend(COLUMN_NAMES);
    header.push("source");
    writer.write_record(&header)?;
    for row in &ds.rows {
        let mut record = vec![row.timestamp.format("%Y-%m-%dT%H:%M:%S").to_string()];
        record.extend(row.values.iter().map(|v| v.to_string()));
        record.push(ds.provenance.label().to_string());
        writer.write_record(&record)?;
    }
    writer.flush().map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(())
}

/// Per-column affine map to [0,1] fitted on one dataset.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NormalizationParams {
    mins: Vec<f64>,
    maxs: Vec<f64>,
}

impl NormalizationParams {
    pub fn new(mins: Vec<f64>, maxs: Vec<f64>) -> Result<NormalizationParams, DatasetError> {
        if mins.len() != maxs.len() || mins.is_empty() {
            return Err(DatasetError::ColumnCountMismatch {
                params: mins.len(),
                data: maxs.len(),
            });
        }
        for (c, (lo, hi)) in mins.iter().zip(&maxs).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(DatasetError::BadValue {
                    row: 0,
                    column: COLUMN_NAMES.get(c).copied().unwrap_or("range").to_string(),
                    value: format!("[{lo}, {hi}]"),
                });
            }
        }
        Ok(NormalizationParams { mins, maxs })
    }

    pub fn column_count(&self) -> usize {
        self.mins.len()
    }

    pub fn min(&self, column: usize) -> f64 {
        self.mins[column]
    }

    pub fn max(&self, column: usize) -> f64 {
        self.maxs[column]
    }

    /// Map into [0,1]; a constant column maps to 0.
    pub fn normalize_value(&self, column: usize, x: f64) -> f64 {
        let span = self.maxs[column] - self.mins[column];
        if span == 0.0 {
            0.0
        } else {
            (x - self.mins[column]) / span
        }
    }

    pub fn denormalize_value(&self, column: usize, x: f64) -> f64 {
        x * (self.maxs[column] - self.mins[column]) + self.mins[column]
    }
}

/// Fit column ranges and return the [0,1]-scaled dataset with its params.
pub fn fit_apply_normalizer(
    ds: &TimeSeriesDataset,
) -> Result<(TimeSeriesDataset, NormalizationParams), DatasetError> {
    if ds.len() < 2 {
        return Err(DatasetError::TooFewRows(ds.len()));
    }
    let mut mins = vec![f64::INFINITY; NUM_FEATURES];
    let mut maxs = vec![f64::NEG_INFINITY; NUM_FEATURES];
    for row in &ds.rows {
        for (c, &v) in row.values.iter().enumerate() {
            mins[c] = mins[c].min(v);
            maxs[c] = maxs[c].max(v);
        }
    }
    let params = NormalizationParams { mins, maxs };
    let rows = ds
        .rows
        .iter()
        .map(|row| {
            let mut values = [0.0; NUM_FEATURES];
            for (c, (out, &v)) in values.iter_mut().zip(row.values.iter()).enumerate() {
                *out = params.normalize_value(c, v);
            }
            DataRow {
                timestamp: row.timestamp,
                values,
            }
        })
        .collect();
    Ok((
        TimeSeriesDataset {
            rows,
            provenance: ds.provenance,
            partition: ds.partition,
            normalized: true,
        },
        params,
    ))
}

/// Undo [`fit_apply_normalizer`], returning original-units rows.
pub fn invert_normalizer(
    ds: &TimeSeriesDataset,
    params: &NormalizationParams,
) -> Result<TimeSeriesDataset, DatasetError> {
    if params.column_count() != NUM_FEATURES {
        return Err(DatasetError::ColumnCountMismatch {
            params: params.column_count(),
            data: NUM_FEATURES,
        });
    }
    let rows = ds
        .rows
        .iter()
        .map(|row| {
            let mut values = [0.0; NUM_FEATURES];
            for (c, (out, &v)) in values.iter_mut().zip(row.values.iter()).enumerate() {
                *out = params.denormalize_value(c, v);
            }
            DataRow {
                timestamp: row.timestamp,
                values,
            }
        })
        .collect();
    Ok(TimeSeriesDataset {
        rows,
        provenance: ds.provenance,
        partition: ds.partition,
        normalized: false,
    })
}

/// First ⌊fraction·n⌋ rows become the train set, the rest the test set;
/// time order is preserved on both sides.
pub fn split_chronological(
    ds: &TimeSeriesDataset,
    train_fraction: f64,
) -> Result<(TimeSeriesDataset, TimeSeriesDataset), DatasetError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DatasetError::EmptySplit {
            fraction: train_fraction,
            rows: ds.len(),
        });
    }
    let cut = (train_fraction * ds.len() as f64).floor() as usize;
    if cut == 0 || cut == ds.len() {
        return Err(DatasetError::EmptySplit {
            fraction: train_fraction,
            rows: ds.len(),
        });
    }
    let make = |rows: &[DataRow], partition| TimeSeriesDataset {
        rows: rows.to_vec(),
        provenance: ds.provenance,
        partition,
        normalized: ds.normalized,
    };
    Ok((
        make(&ds.rows[..cut], Partition::Train),
        make(&ds.rows[cut..], Partition::Test),
    ))
}

/// Fixed-shape windows cut from consecutive dataset rows.
#[derive(Debug, Clone)]
pub struct WindowSet {
    windows: Vec<Tensor>,
    window_length: usize,
    source: Provenance,
    partition: Partition,
    normalized: bool,
}

impl WindowSet {
    /// Build from pre-cut windows, enforcing uniform shape and, when the
    /// normalized flag is set, the [0,1] value range.
    pub fn new(
        windows: Vec<Tensor>,
        source: Provenance,
        partition: Partition,
        normalized: bool,
    ) -> Result<WindowSet, DatasetError> {
        let first_shape = windows
            .first()
            .ok_or(DatasetError::EmptyWindowSet)?
            .shape()
            .to_vec();
        for (i, w) in windows.iter().enumerate() {
            if w.shape() != first_shape {
                return Err(DatasetError::MixedWindowShapes {
                    a: first_shape,
                    b: w.shape().to_vec(),
                });
            }
            if normalized {
                if let Some(&bad) = w.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
                    return Err(DatasetError::ValueOutOfRange {
                        window: i,
                        value: bad,
                    });
                }
            }
        }
        Ok(WindowSet {
            window_length: first_shape[0],
            windows,
            source,
            partition,
            normalized,
        })
    }

    pub fn windows(&self) -> &[Tensor] {
        &self.windows
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn window_length(&self) -> usize {
        self.window_length
    }

    pub fn feature_count(&self) -> usize {
        self.windows[0].cols()
    }

    pub fn source(&self) -> Provenance {
        self.source
    }

    pub fn partition(&self) -> Partition {
        self.partition
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }
}

/// Cut `[window_length x NUM_FEATURES]` windows at offsets 0, stride, 2·stride, …
pub fn make_windows(
    ds: &TimeSeriesDataset,
    window_length: usize,
    stride: usize,
) -> Result<WindowSet, DatasetError> {
    if window_length == 0 {
        return Err(DatasetError::ZeroWindow);
    }
    if stride == 0 {
        return Err(DatasetError::ZeroStride);
    }
    if window_length > ds.len() {
        return Err(DatasetError::WindowTooLong {
            window: window_length,
            rows: ds.len(),
        });
    }
    let count = (ds.len() - window_length) / stride + 1;
    let windows = (0..count)
        .map(|w| {
            let start = w * stride;
            Tensor::from_fn(&[window_length, NUM_FEATURES], |i| {
                ds.rows[start + i / NUM_FEATURES].values[i % NUM_FEATURES]
            })
        })
        .collect();
    WindowSet::new(windows, ds.provenance, ds.partition, ds.normalized)
}

/// Cyclic repetition of the training rows up to `target_rows`, re-stamped
/// on the synthetic hourly clock. Copies keep their values but not their
/// timestamps: a cycle would repeat hours, and the written artifact must
/// stay re-ingestable.
pub fn replicate_rows(
    train: &TimeSeriesDataset,
    target_rows: usize,
) -> Result<TimeSeriesDataset, DatasetError> {
    if train.is_empty() {
        return Err(DatasetError::Empty);
    }
    if target_rows < train.len() {
        return Err(DatasetError::ReplicationTargetTooSmall {
            target: target_rows,
            available: train.len(),
        });
    }
    let epoch = synthetic_epoch();
    let rows = (0..target_rows)
        .map(|i| DataRow {
            timestamp: epoch + Duration::hours(i as i64),
            values: train.rows[i % train.len()].values,
        })
        .collect();
    Ok(TimeSeriesDataset {
        rows,
        provenance: Provenance::Replicated,
        partition: train.partition,
        normalized: train.normalized,
    })
}

/// Turn generated normalized windows back into an original-units dataset
/// with synthetic hourly timestamps.
pub fn dataset_from_windows(
    set: &WindowSet,
    params: &NormalizationParams,
    provenance: Provenance,
) -> Result<TimeSeriesDataset, DatasetError> {
    if !set.is_normalized() {
        return Err(DatasetError::NotNormalized);
    }
    if set.feature_count() != params.column_count() {
        return Err(DatasetError::ColumnCountMismatch {
            params: params.column_count(),
            data: set.feature_count(),
        });
    }
    let mut rows = Vec::with_capacity(set.len() * set.window_length());
    let mut timestamp = synthetic_epoch();
    for window in set.windows() {
        for step in 0..set.window_length() {
            let mut values = [0.0; NUM_FEATURES];
            for (c, out) in values.iter_mut().enumerate() {
                *out = params.denormalize_value(c, window.at2(step, c));
            }
            rows.push(DataRow { timestamp, values });
            timestamp += Duration::hours(1);
        }
    }
    Ok(TimeSeriesDataset {
        rows,
        provenance,
        partition: Partition::Train,
        normalized: false,
    })
}

/// One row of weather covariates without a load reading.
#[derive(Debug, Clone, PartialEq)]
pub struct WeatherRow {
    pub timestamp: NaiveDateTime,
    pub values: [f64; WEATHER_FEATURES],
}

/// Read a weather-only CSV (the ingest schema minus `load`), used to supply
/// next-day covariates for the dispatch forecast.
pub fn ingest_weather_csv(path: &Path) -> Result<Vec<WeatherRow>, DatasetError> {
    let file = std::fs::File::open(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = reader.headers()?.clone();
    let find = |name: &'static str| -> Result<usize, DatasetError> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or(DatasetError::MissingColumn(name))
    };
    let ts_idx = find("timestamp")?;
    let mut value_idx = [0usize; WEATHER_FEATURES];
    for (slot, name) in value_idx.iter_mut().zip(COLUMN_NAMES) {
        *slot = find(name)?;
    }

    let mut rows = Vec::new();
    for (record_no, record) in reader.records().enumerate() {
        let record = record?;
        let file_row = record_no + 2;
        let raw_ts = record.get(ts_idx).unwrap_or("").trim();
        let timestamp = parse_timestamp(raw_ts).ok_or_else(|| DatasetError::BadValue {
            row: file_row,
            column: "timestamp".into(),
            value: raw_ts.into(),
        })?;
        let mut values = [0.0; WEATHER_FEATURES];
        for (v, (&idx, name)) in values.iter_mut().zip(value_idx.iter().zip(COLUMN_NAMES)) {
            let raw = record.get(idx).unwrap_or("").trim();
            *v = raw
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| DatasetError::BadValue {
                    row: file_row,
                    column: name.into(),
                    value: raw.into(),
                })?;
        }
        rows.push(WeatherRow { timestamp, values });
    }
    if rows.is_empty() {
        return Err(DatasetError::Empty);
    }
    rows.sort_by_key(|r| r.timestamp);
    Ok(rows)
}
