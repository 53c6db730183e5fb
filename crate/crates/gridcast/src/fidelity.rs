//! Distribution diagnostics for generated data: 2-D PCA projection into the
//! reference frame, per-column Gaussian KDE overlays, and the per-source
//! mean/std comparison table, all emitted as SVG plus CSV backing files.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::dataset::{TimeSeriesDataset, COLUMN_NAMES, NUM_FEATURES};
use crate::plot::{self, PlotError, Series};

#[derive(Debug, Error)]
pub enum FidelityError {
    #[error("need at least {need} rows, got {got}")]
    TooFewRows { need: usize, got: usize },
    #[error("dataset {label:?} has no rows")]
    EmptyDataset { label: String },
    #[error("only {kept} non-constant reference columns; a 2-D projection needs 2")]
    TooFewVaryingColumns { kept: usize },
    #[error("kde needs at least one sample")]
    NoSamples,
    #[error("{what} contain non-finite values")]
    NonFinite { what: &'static str },
    #[error("bandwidth must be positive and finite, got {value}")]
    BadBandwidth { value: f64 },
    #[error(transparent)]
    Plot(#[from] PlotError),
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn sample_stats(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Cyclic Jacobi eigendecomposition of a small symmetric matrix. Returns
/// (eigenvalue, eigenvector) pairs sorted by descending eigenvalue.
fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> Vec<(f64, Vec<f64>)> {
    let m = a.len();
    let mut v = vec![vec![0.0; m]; m];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let scale: f64 = a
        .iter()
        .flat_map(|r| r.iter().map(|x| x * x))
        .sum::<f64>()
        .sqrt()
        .max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let off: f64 = (0..m)
            .flat_map(|p| ((p + 1)..m).map(move |q| (p, q)))
            .map(|(p, q)| a[p][q] * a[p][q])
            .sum();
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..m {
            for q in (p + 1)..m {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let apq = a[p][q];
                let app = a[p][p];
                let aqq = a[q][q];
                a[p][p] = app - t * apq;
                a[q][q] = aqq + t * apq;
                a[p][q] = 0.0;
                a[q][p] = 0.0;
                for k in 0..m {
                    if k != p && k != q {
                        let akp = a[k][p];
                        let akq = a[k][q];
                        a[k][p] = c * akp - s * akq;
                        a[p][k] = a[k][p];
                        a[k][q] = s * akp + c * akq;
                        a[q][k] = a[k][q];
                    }
                    let vkp = v[k][p];
                    let vkq = v[k][q];
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut pairs: Vec<(f64, Vec<f64>)> = (0..m)
        .map(|i| (a[i][i], (0..m).map(|k| v[k][i]).collect()))
        .collect();
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0));
    pairs
}

/// Flip so the largest-magnitude component is positive; keeps directions
/// reproducible without changing the spanned plane.
fn canonical_sign(mut dir: Vec<f64>) -> Vec<f64> {
    let lead = dir
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|(i, _)| i)
        .unwrap_or(0);
    if dir[lead] < 0.0 {
        for d in dir.iter_mut() {
            *d = -*d;
        }
    }
    dir
}

#[derive(Debug, Clone)]
pub struct PcaModel {
    /// Original column indices that survived the constant-column drop.
    pub columns: Vec<usize>,
    /// Reference mean/std per retained column, the standardization frame.
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub directions: [Vec<f64>; 2],
    pub explained: [f64; 2],
}

#[derive(Debug, Clone)]
pub struct Projection {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct PcaOutput {
    pub model: PcaModel,
    /// Reference first, then the other datasets in input order.
    pub projections: Vec<Projection>,
    pub warnings: Vec<String>,
}

/// Standardize by the reference's mean/std, fit the top-2 principal
/// directions on the reference only, and project every dataset into that
/// plane. Constant reference columns are dropped with a warning instead of
/// poisoning the standardization.
pub fn pca_project2d(
    reference: &TimeSeriesDataset,
    others: &[&TimeSeriesDataset],
) -> Result<PcaOutput, FidelityError> {
    if reference.len() < 3 {
        return Err(FidelityError::TooFewRows {
            need: 3,
            got: reference.len(),
        });
    }
    let mut columns = Vec::new();
    let mut means = Vec::new();
    let mut stds = Vec::new();
    let mut warnings = Vec::new();
    for c in 0..NUM_FEATURES {
        let (mean, std) = sample_stats(&reference.column(c));
        if !(mean.is_finite() && std.is_finite()) {
            return Err(FidelityError::NonFinite { what: "reference columns" });
        }
        if std > 0.0 {
            columns.push(c);
            means.push(mean);
            stds.push(std);
        } else {
            warnings.push(format!(
                "column {} is constant in the reference; dropped from the projection",
                COLUMN_NAMES[c]
            ));
        }
    }
    let m = columns.len();
    if m < 2 {
        return Err(FidelityError::TooFewVaryingColumns { kept: m });
    }
    let n = reference.len();
    let standardized: Vec<Vec<f64>> = reference
        .rows()
        .iter()
        .map(|row| {
            columns
                .iter()
                .enumerate()
                .map(|(j, &c)| (row.values[c] - means[j]) / stds[j])
                .collect()
        })
        .collect();
    let mut cov = vec![vec![0.0; m]; m];
    for z in &standardized {
        for j in 0..m {
            for k in j..m {
                cov[j][k] += z[j] * z[k];
            }
        }
    }
    for j in 0..m {
        for k in j..m {
            cov[j][k] /= (n - 1) as f64;
            cov[k][j] = cov[j][k];
        }
    }
    let eigen = jacobi_eigen(cov);
    let total: f64 = eigen.iter().map(|(val, _)| val).sum();
    let directions = [
        canonical_sign(eigen[0].1.clone()),
        canonical_sign(eigen[1].1.clone()),
    ];
    let explained = [
        (eigen[0].0 / total).clamp(0.0, 1.0),
        (eigen[1].0 / total).clamp(0.0, 1.0),
    ];
    let model = PcaModel {
        columns,
        means,
        stds,
        directions,
        explained,
    };
    let mut projections = Vec::with_capacity(1 + others.len());
    for ds in std::iter::once(&reference).chain(others.iter()) {
        if ds.is_empty() {
            return Err(FidelityError::EmptyDataset {
                label: ds.provenance().label().to_string(),
            });
        }
        let points = ds
            .rows()
            .iter()
            .map(|row| {
                let mut pc = [0.0f64; 2];
                for (j, &c) in model.columns.iter().enumerate() {
                    let z = (row.values[c] - model.means[j]) / model.stds[j];
                    pc[0] += z * model.directions[0][j];
                    pc[1] += z * model.directions[1][j];
                }
                (pc[0], pc[1])
            })
            .collect();
        projections.push(Projection {
            label: ds.provenance().label().to_string(),
            points,
        });
    }
    Ok(PcaOutput {
        model,
        projections,
        warnings,
    })
}

#[derive(Debug, Clone)]
pub struct KdeCurve {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
}

impl KdeCurve {
    /// Trapezoidal integral over the evaluation grid.
    pub fn integral(&self) -> f64 {
        self.grid
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(x, d)| 0.5 * (d[0] + d[1]) * (x[1] - x[0]))
            .sum()
    }
}

const MIN_GRID: usize = 256;

fn silverman_bandwidth(samples: &[f64]) -> f64 {
    // a constant sample leaves std as pure rounding noise; fall back to 1
    if samples.iter().all(|&s| s == samples[0]) {
        return 1.0;
    }
    let (_, std) = sample_stats(samples);
    1.06 * std * (samples.len() as f64).powf(-0.2)
}

fn resolve_bandwidth(samples: &[f64], bandwidth: Option<f64>) -> Result<f64, FidelityError> {
    match bandwidth {
        Some(h) if h > 0.0 && h.is_finite() => Ok(h),
        Some(h) => Err(FidelityError::BadBandwidth { value: h }),
        None => Ok(silverman_bandwidth(samples)),
    }
}

fn linspace(lo: f64, hi: f64, size: usize) -> Vec<f64> {
    let step = (hi - lo) / (size - 1) as f64;
    (0..size).map(|i| lo + step * i as f64).collect()
}

fn gaussian_density(samples: &[f64], h: f64, grid: &[f64]) -> Vec<f64> {
    let norm = 1.0 / (samples.len() as f64 * h * std::f64::consts::TAU.sqrt());
    grid.iter()
        .map(|&x| {
            samples
                .iter()
                .map(|&s| {
                    let u = (x - s) / h;
                    (-0.5 * u * u).exp()
                })
                .sum::<f64>()
                * norm
        })
        .collect()
}

/// Gaussian kernel density estimate. The default bandwidth is Silverman's
/// rule 1.06·σ̂·n^(−1/5); a zero-spread sample falls back to bandwidth 1.
/// The grid has at least 256 points and spans the samples ± 3 bandwidths,
/// so the curve integrates to ≈ 1.
pub fn kde_curve(
    samples: &[f64],
    grid_size: usize,
    bandwidth: Option<f64>,
) -> Result<KdeCurve, FidelityError> {
    if samples.is_empty() {
        return Err(FidelityError::NoSamples);
    }
    if !samples.iter().all(|s| s.is_finite()) {
        return Err(FidelityError::NonFinite { what: "kde samples" });
    }
    let h = resolve_bandwidth(samples, bandwidth)?;
    let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min) - 3.0 * h;
    let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 3.0 * h;
    let grid = linspace(lo, hi, grid_size.max(MIN_GRID));
    let density = gaussian_density(samples, h, &grid);
    Ok(KdeCurve {
        density,
        grid,
        bandwidth: h,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnStats {
    pub name: String,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub source: String,
    pub rows: usize,
    pub columns: Vec<ColumnStats>,
}

/// Per-column sample mean and n−1 standard deviation in original units.
pub fn feature_statistics(ds: &TimeSeriesDataset) -> Result<FeatureStats, FidelityError> {
    if ds.is_empty() {
        return Err(FidelityError::EmptyDataset {
            label: ds.provenance().label().to_string(),
        });
    }
    let columns = COLUMN_NAMES
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let (mean, std) = sample_stats(&ds.column(c));
            ColumnStats {
                name: name.to_string(),
                mean,
                std,
            }
        })
        .collect();
    Ok(FeatureStats {
        source: ds.provenance().label().to_string(),
        rows: ds.len(),
        columns,
    })
}

#[derive(Debug, Clone)]
pub struct ColumnKde {
    pub column: String,
    /// (source label, curve); all curves share one evaluation grid.
    pub curves: Vec<(String, KdeCurve)>,
}

#[derive(Debug, Clone)]
pub struct FidelityReport {
    pub stats: Vec<FeatureStats>,
    pub pca: PcaOutput,
    pub kde: Vec<ColumnKde>,
    pub files: Vec<PathBuf>,
}

fn write_file(
    dir: &Path,
    name: &str,
    contents: &str,
    files: &mut Vec<PathBuf>,
) -> Result<(), FidelityError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|source| FidelityError::Io {
        path: path.clone(),
        source,
    })?;
    files.push(path);
    Ok(())
}

/// Overlay KDEs for one column across all sources on a shared grid, so the
/// curves are directly comparable (and identical inputs give identical
/// curves).
fn column_overlay(sources: &[(&str, Vec<f64>)]) -> Result<Vec<(String, KdeCurve)>, FidelityError> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut widths = Vec::with_capacity(sources.len());
    for (_, samples) in sources {
        if samples.is_empty() {
            return Err(FidelityError::NoSamples);
        }
        if !samples.iter().all(|s| s.is_finite()) {
            return Err(FidelityError::NonFinite { what: "kde samples" });
        }
        let h = silverman_bandwidth(samples);
        lo = lo.min(samples.iter().cloned().fold(f64::INFINITY, f64::min) - 3.0 * h);
        hi = hi.max(samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 3.0 * h);
        widths.push(h);
    }
    let grid = linspace(lo, hi, MIN_GRID);
    Ok(sources
        .iter()
        .zip(widths)
        .map(|((label, samples), h)| {
            let density = gaussian_density(samples, h, &grid);
            (
                label.to_string(),
                KdeCurve {
                    grid: grid.clone(),
                    density,
                    bandwidth: h,
                },
            )
        })
        .collect())
}

/// Full diagnostic bundle: one PCA scatter, one KDE overlay per column, and
/// the per-source statistics table, each with a CSV carrying the exact
/// plotted numbers.
pub fn fidelity_report(
    original: &TimeSeriesDataset,
    generated: &[&TimeSeriesDataset],
    out_dir: &Path,
) -> Result<FidelityReport, FidelityError> {
    for ds in std::iter::once(&original).chain(generated.iter()) {
        if ds.is_empty() {
            return Err(FidelityError::EmptyDataset {
                label: ds.provenance().label().to_string(),
            });
        }
    }
    fs::create_dir_all(out_dir).map_err(|source| FidelityError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let mut files = Vec::new();

    let mut stats = vec![feature_statistics(original)?];
    for g in generated {
        stats.push(feature_statistics(g)?);
    }
    let mut stats_csv = String::from("feature");
    for s in &stats {
        stats_csv.push_str(&format!(",{}_mean,{}_std", s.source, s.source));
    }
    stats_csv.push('\n');
    for c in 0..NUM_FEATURES {
        stats_csv.push_str(COLUMN_NAMES[c]);
        for s in &stats {
            stats_csv.push_str(&format!(",{},{}", s.columns[c].mean, s.columns[c].std));
        }
        stats_csv.push('\n');
    }
    write_file(out_dir, "stats.csv", &stats_csv, &mut files)?;

    let pca = pca_project2d(original, generated)?;
    let scatter: Vec<Series> = pca
        .projections
        .iter()
        .map(|p| Series::new(&p.label, p.points.clone()))
        .collect();
    let svg = plot::scatter_svg("2-D projection by source", "pc1", "pc2", &scatter)?;
    write_file(out_dir, "pca.svg", &svg, &mut files)?;
    let mut pca_csv = String::from("source,pc1,pc2\n");
    for p in &pca.projections {
        for (a, b) in &p.points {
            pca_csv.push_str(&format!("{},{},{}\n", p.label, a, b));
        }
    }
    write_file(out_dir, "pca.csv", &pca_csv, &mut files)?;

    let mut kde = Vec::with_capacity(NUM_FEATURES);
    for c in 0..NUM_FEATURES {
        let sources: Vec<(&str, Vec<f64>)> = std::iter::once(&original)
            .chain(generated.iter())
            .map(|ds| (ds.provenance().label(), ds.column(c)))
            .collect();
        let curves = column_overlay(&sources)?;
        let series: Vec<Series> = curves
            .iter()
            .map(|(label, curve)| {
                Series::new(
                    label,
                    curve.grid.iter().cloned().zip(curve.density.iter().cloned()).collect(),
                )
            })
            .collect();
        let name = COLUMN_NAMES[c];
        let svg = plot::line_svg(&format!("density: {name}"), name, "density", &series)?;
        write_file(out_dir, &format!("kde_{name}.svg"), &svg, &mut files)?;
        let mut csv = String::from("source,x,density\n");
        for (label, curve) in &curves {
            for (x, d) in curve.grid.iter().zip(&curve.density) {
                csv.push_str(&format!("{label},{x},{d}\n"));
            }
        }
        write_file(out_dir, &format!("kde_{name}.csv"), &csv, &mut files)?;
        kde.push(ColumnKde {
            column: name.to_string(),
            curves,
        });
    }

    Ok(FidelityReport {
        stats,
        pca,
        kde,
        files,
    })
}
