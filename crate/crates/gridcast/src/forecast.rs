//! Tree-ensemble regressors mapping the seven weather columns to load,
//! plus RMSE/MAE metrics and the benchmark harness that compares training
//! variants (original, replicated, augmented) on one fixed test set.

use std::collections::HashSet;

use serde::Serialize;
use thiserror::Error;

use crate::dataset::{Provenance, TimeSeriesDataset, LOAD_COLUMN, WEATHER_FEATURES};
use crate::numerics::{derive_seed, NumericsError, Prng, Tensor};

#[derive(Debug, Error)]
pub enum ForecastError {
    #[error("no rows to fit on")]
    EmptyData,
    #[error("features have {rows} rows but targets have {targets}")]
    RowCountMismatch { rows: usize, targets: usize },
    #[error("hyperparameter {name} = {value} is out of range")]
    BadHyper { name: &'static str, value: String },
    #[error("{what} contain non-finite values")]
    NonFinite { what: &'static str },
    #[error("model was fit on {expected} features, got {got}")]
    FeatureWidthMismatch { expected: usize, got: usize },
    #[error("predictions ({predictions}) and targets ({targets}) differ in length")]
    LengthMismatch { predictions: usize, targets: usize },
    #[error("metrics need at least one prediction")]
    EmptyMetrics,
    #[error("nothing to benchmark: no {what} supplied")]
    NothingToBenchmark { what: &'static str },
    #[error("training variant {variant:?} shares {count} timestamps with the test set")]
    TestLeakage { variant: String, count: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Regression tree. Rows with `value < threshold` go left.
#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        value: f64,
        samples: usize,
    },
}

impl TreeNode {
    pub fn predict(&self, row: &[f64]) -> f64 {
        match self {
            TreeNode::Leaf { value, .. } => *value,
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if row[*feature] < *threshold {
                    left.predict(row)
                } else {
                    right.predict(row)
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnsembleKind {
    ExtraTrees,
    RandomForest,
    Gbdt,
}

/// The two bagging-style trainers accepted by [`fit_forest`]; boosted
/// ensembles come from [`fit_gbdt`], so an invalid kind cannot be expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForestKind {
    ExtraTrees,
    RandomForest,
}

impl From<ForestKind> for EnsembleKind {
    fn from(kind: ForestKind) -> EnsembleKind {
        match kind {
            ForestKind::ExtraTrees => EnsembleKind::ExtraTrees,
            ForestKind::RandomForest => EnsembleKind::RandomForest,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ForestHyper {
    pub trees: usize,
    /// Features sampled per node; `None` means max(1, d/3).
    pub features_per_node: Option<usize>,
    pub min_samples_leaf: usize,
    /// `None` grows until nodes are pure or unsplittable.
    pub max_depth: Option<usize>,
}

impl Default for ForestHyper {
    fn default() -> Self {
        ForestHyper {
            trees: 100,
            features_per_node: None,
            min_samples_leaf: 1,
            max_depth: None,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct GbdtHyper {
    pub rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
}

impl Default for GbdtHyper {
    fn default() -> Self {
        GbdtHyper {
            rounds: 200,
            learning_rate: 0.1,
            max_depth: 3,
            min_samples_leaf: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    kind: EnsembleKind,
    trees: Vec<TreeNode>,
    /// Per-tree weight: 1/n for averaging kinds, the learning rate for gbdt.
    weights: Vec<f64>,
    /// 0 for averaging kinds, the target mean for gbdt.
    base_score: f64,
    feature_count: usize,
}

impl EnsembleModel {
    pub fn from_parts(
        kind: EnsembleKind,
        trees: Vec<TreeNode>,
        weights: Vec<f64>,
        base_score: f64,
        feature_count: usize,
    ) -> Result<EnsembleModel, ForecastError> {
        if trees.is_empty() || trees.len() != weights.len() {
            return Err(ForecastError::BadHyper {
                name: "trees",
                value: format!("{} trees, {} weights", trees.len(), weights.len()),
            });
        }
        Ok(EnsembleModel {
            kind,
            trees,
            weights,
            base_score,
            feature_count,
        })
    }

    pub fn kind(&self) -> EnsembleKind {
        self.kind
    }

    pub fn trees(&self) -> &[TreeNode] {
        &self.trees
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn base_score(&self) -> f64 {
        self.base_score
    }

    pub fn feature_count(&self) -> usize {
        self.feature_count
    }
}

fn check_training_input(features: &Tensor, targets: &[f64]) -> Result<(), ForecastError> {
    if features.rows() == 0 || targets.is_empty() {
        return Err(ForecastError::EmptyData);
    }
    if features.rows() != targets.len() {
        return Err(ForecastError::RowCountMismatch {
            rows: features.rows(),
            targets: targets.len(),
        });
    }
    features
        .validate_finite("forest features")
        .map_err(|_| ForecastError::NonFinite { what: "features" })?;
    if !targets.iter().all(|v| v.is_finite()) {
        return Err(ForecastError::NonFinite { what: "targets" });
    }
    Ok(())
}

fn mean_of(rows: &[usize], y: &[f64]) -> f64 {
    rows.iter().map(|&r| y[r]).sum::<f64>() / rows.len() as f64
}

fn pure_target(rows: &[usize], y: &[f64]) -> bool {
    let first = y[rows[0]];
    rows.iter().all(|&r| y[r] == first)
}

fn leaf(rows: &[usize], y: &[f64]) -> TreeNode {
    TreeNode::Leaf {
        value: mean_of(rows, y),
        samples: rows.len(),
    }
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
    gain: f64,
}

/// Replace `best` when `cand` wins: larger gain, ties broken by lowest
/// feature index then lowest threshold.
fn keep_better(best: &mut Option<SplitChoice>, cand: SplitChoice) {
    let wins = match best {
        None => true,
        Some(b) => {
            cand.gain > b.gain
                || (cand.gain == b.gain
                    && (cand.feature < b.feature
                        || (cand.feature == b.feature && cand.threshold < b.threshold)))
        }
    };
    if wins {
        *best = Some(cand);
    }
}

const THRESHOLD_DRAWS: usize = 16;

/// One uniform threshold strictly inside the node range, redrawing the
/// handful of times fp rounding can land on an endpoint. `None` when the
/// feature is constant at this node or every draw violates the leaf floor.
fn draw_threshold(
    x: &Tensor,
    rows: &[usize],
    feature: usize,
    min_leaf: usize,
    prng: &mut Prng,
) -> Option<f64> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &r in rows {
        let v = x.at2(r, feature);
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !(hi > lo) {
        return None;
    }
    for _ in 0..THRESHOLD_DRAWS {
        let thr = lo + prng.uniform() * (hi - lo);
        if thr <= lo || thr >= hi {
            continue;
        }
        let left = rows.iter().filter(|&&r| x.at2(r, feature) < thr).count();
        if left >= min_leaf && rows.len() - left >= min_leaf {
            return Some(thr);
        }
    }
    None
}

fn split_gain(x: &Tensor, y: &[f64], rows: &[usize], feature: usize, thr: f64) -> f64 {
    let (mut nl, mut sl, mut ql) = (0.0f64, 0.0f64, 0.0f64);
    let (mut nr, mut sr, mut qr) = (0.0f64, 0.0f64, 0.0f64);
    for &r in rows {
        let t = y[r];
        if x.at2(r, feature) < thr {
            nl += 1.0;
            sl += t;
            ql += t * t;
        } else {
            nr += 1.0;
            sr += t;
            qr += t * t;
        }
    }
    let parent = ql + qr - (sl + sr) * (sl + sr) / (nl + nr);
    let children = (ql - sl * sl / nl) + (qr - sr * sr / nr);
    parent - children
}

fn build_extra_node(
    x: &Tensor,
    y: &[f64],
    rows: Vec<usize>,
    k: usize,
    hyper: &ForestHyper,
    depth: usize,
    prng: &mut Prng,
) -> TreeNode {
    if rows.len() < 2 * hyper.min_samples_leaf
        || hyper.max_depth.is_some_and(|m| depth >= m)
        || pure_target(&rows, y)
    {
        return leaf(&rows, y);
    }
    let mut best: Option<SplitChoice> = None;
    for feature in prng.sample_indices(x.cols(), k) {
        if let Some(threshold) = draw_threshold(x, &rows, feature, hyper.min_samples_leaf, prng) {
            let gain = split_gain(x, y, &rows, feature, threshold);
            keep_better(&mut best, SplitChoice { feature, threshold, gain });
        }
    }
    let Some(choice) = best else {
        return leaf(&rows, y);
    };
    let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
        .into_iter()
        .partition(|&r| x.at2(r, choice.feature) < choice.threshold);
    TreeNode::Split {
        feature: choice.feature,
        threshold: choice.threshold,
        left: Box::new(build_extra_node(x, y, left_rows, k, hyper, depth + 1, prng)),
        right: Box::new(build_extra_node(x, y, right_rows, k, hyper, depth + 1, prng)),
    }
}

/// Best split over `features` by exhaustive threshold scan: sort the node's
/// rows per feature, test the midpoint of every distinct-value gap that
/// leaves `min_leaf` rows on each side.
fn best_scan_split(
    x: &Tensor,
    y: &[f64],
    rows: &[usize],
    features: &[usize],
    min_leaf: usize,
) -> Option<SplitChoice> {
    let n = rows.len();
    let (mut total, mut total_sq) = (0.0f64, 0.0f64);
    for &r in rows {
        total += y[r];
        total_sq += y[r] * y[r];
    }
    let parent = total_sq - total * total / n as f64;
    let mut best: Option<SplitChoice> = None;
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(n);
    for &feature in features {
        pairs.clear();
        pairs.extend(rows.iter().map(|&r| (x.at2(r, feature), y[r])));
        pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        let (mut cum, mut cum_sq) = (0.0f64, 0.0f64);
        for i in 1..n {
            let (prev, t) = pairs[i - 1];
            cum += t;
            cum_sq += t * t;
            let next = pairs[i].0;
            if next <= prev || i < min_leaf || n - i < min_leaf {
                continue;
            }
            let mut threshold = prev + (next - prev) / 2.0;
            if threshold <= prev {
                threshold = next;
            }
            let left = cum_sq - cum * cum / i as f64;
            let rem = (n - i) as f64;
            let right = (total_sq - cum_sq) - (total - cum) * (total - cum) / rem;
            let gain = parent - left - right;
            keep_better(&mut best, SplitChoice { feature, threshold, gain });
        }
    }
    best
}

fn build_scan_node(
    x: &Tensor,
    y: &[f64],
    rows: Vec<usize>,
    sampler: &mut dyn FnMut() -> Vec<usize>,
    min_leaf: usize,
    max_depth: Option<usize>,
    depth: usize,
) -> TreeNode {
    if rows.len() < 2 * min_leaf
        || max_depth.is_some_and(|m| depth >= m)
        || pure_target(&rows, y)
    {
        return leaf(&rows, y);
    }
    let features = sampler();
    let Some(choice) = best_scan_split(x, y, &rows, &features, min_leaf) else {
        return leaf(&rows, y);
    };
    let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
        .into_iter()
        .partition(|&r| x.at2(r, choice.feature) < choice.threshold);
    TreeNode::Split {
        feature: choice.feature,
        threshold: choice.threshold,
        left: Box::new(build_scan_node(
            x, y, left_rows, sampler, min_leaf, max_depth, depth + 1,
        )),
        right: Box::new(build_scan_node(
            x, y, right_rows, sampler, min_leaf, max_depth, depth + 1,
        )),
    }
}

/// Fit a bagging ensemble. ExtraTrees grows every tree on the full dataset
/// with one random threshold per sampled feature; random forest bootstraps
/// rows and scans for the best threshold. Each tree owns a seeded substream,
/// so results do not depend on fit order.
pub fn fit_forest(
    features: &Tensor,
    targets: &[f64],
    kind: ForestKind,
    hyper: &ForestHyper,
    seed: u64,
) -> Result<EnsembleModel, ForecastError> {
    check_training_input(features, targets)?;
    if hyper.trees == 0 {
        return Err(ForecastError::BadHyper {
            name: "trees",
            value: "0".into(),
        });
    }
    if hyper.min_samples_leaf == 0 {
        return Err(ForecastError::BadHyper {
            name: "min_samples_leaf",
            value: "0".into(),
        });
    }
    let d = features.cols();
    let k = hyper.features_per_node.unwrap_or_else(|| (d / 3).max(1));
    if k == 0 || k > d {
        return Err(ForecastError::BadHyper {
            name: "features_per_node",
            value: format!("{k} of {d}"),
        });
    }
    let n = features.rows();
    let root = Prng::new(seed);
    let mut trees = Vec::with_capacity(hyper.trees);
    for i in 0..hyper.trees {
        let mut prng = root.substream(&format!("tree-{i}"));
        let tree = match kind {
            ForestKind::ExtraTrees => {
                build_extra_node(features, targets, (0..n).collect(), k, hyper, 0, &mut prng)
            }
            ForestKind::RandomForest => {
                let rows: Vec<usize> = (0..n).map(|_| prng.below(n)).collect();
                let mut sampler = || prng.sample_indices(d, k);
                build_scan_node(
                    features,
                    targets,
                    rows,
                    &mut sampler,
                    hyper.min_samples_leaf,
                    hyper.max_depth,
                    0,
                )
            }
        };
        trees.push(tree);
    }
    let weight = 1.0 / hyper.trees as f64;
    Ok(EnsembleModel {
        kind: kind.into(),
        weights: vec![weight; trees.len()],
        trees,
        base_score: 0.0,
        feature_count: d,
    })
}

/// Gradient-boosted trees on squared loss: base score is the target mean,
/// each round fits a depth-limited tree to the residuals by exact greedy
/// scan. The scan uses no randomness; the seed keeps trainer signatures
/// uniform and is recorded nowhere else.
pub fn fit_gbdt(
    features: &Tensor,
    targets: &[f64],
    hyper: &GbdtHyper,
    _seed: u64,
) -> Result<EnsembleModel, ForecastError> {
    check_training_input(features, targets)?;
    if hyper.rounds == 0 {
        return Err(ForecastError::BadHyper {
            name: "rounds",
            value: "0".into(),
        });
    }
    // (0, 2) keeps per-round training MSE non-increasing for squared loss.
    if !(hyper.learning_rate > 0.0 && hyper.learning_rate < 2.0) {
        return Err(ForecastError::BadHyper {
            name: "learning_rate",
            value: format!("{}", hyper.learning_rate),
        });
    }
    if hyper.min_samples_leaf == 0 {
        return Err(ForecastError::BadHyper {
            name: "min_samples_leaf",
            value: "0".into(),
        });
    }
    let n = features.rows();
    let d = features.cols();
    let base_score = targets.iter().sum::<f64>() / n as f64;
    let mut residuals: Vec<f64> = targets.iter().map(|t| t - base_score).collect();
    let mut trees = Vec::with_capacity(hyper.rounds);
    let mut all_features = || (0..d).collect::<Vec<usize>>();
    for _ in 0..hyper.rounds {
        let tree = build_scan_node(
            features,
            &residuals,
            (0..n).collect(),
            &mut all_features,
            hyper.min_samples_leaf,
            Some(hyper.max_depth),
            0,
        );
        for (r, row) in residuals.iter_mut().zip(0..n) {
            let slice = &features.data()[row * d..(row + 1) * d];
            *r -= hyper.learning_rate * tree.predict(slice);
        }
        trees.push(tree);
    }
    Ok(EnsembleModel {
        kind: EnsembleKind::Gbdt,
        weights: vec![hyper.learning_rate; trees.len()],
        trees,
        base_score,
        feature_count: d,
    })
}

/// Weighted-sum prediction: `base + Σ wᵢ·treeᵢ(x)` per row. For averaging
/// kinds the weights are 1/n, so this is the mean of the tree outputs.
pub fn predict_ensemble(
    model: &EnsembleModel,
    features: &Tensor,
) -> Result<Vec<f64>, ForecastError> {
    let d = features.cols();
    if d != model.feature_count {
        return Err(ForecastError::FeatureWidthMismatch {
            expected: model.feature_count,
            got: d,
        });
    }
    let mut out = Vec::with_capacity(features.rows());
    for row in 0..features.rows() {
        let slice = &features.data()[row * d..(row + 1) * d];
        let pred = match model.kind {
            // exact arithmetic mean, not a rounded weighted sum
            EnsembleKind::ExtraTrees | EnsembleKind::RandomForest => {
                model.trees.iter().map(|t| t.predict(slice)).sum::<f64>()
                    / model.trees.len() as f64
            }
            EnsembleKind::Gbdt => {
                model.base_score
                    + model
                        .trees
                        .iter()
                        .zip(&model.weights)
                        .map(|(tree, w)| w * tree.predict(slice))
                        .sum::<f64>()
            }
        };
        out.push(pred);
    }
    Ok(out)
}

/// (RMSE, MAE) over aligned prediction/target slices.
pub fn error_metrics(predictions: &[f64], targets: &[f64]) -> Result<(f64, f64), ForecastError> {
    if predictions.len() != targets.len() {
        return Err(ForecastError::LengthMismatch {
            predictions: predictions.len(),
            targets: targets.len(),
        });
    }
    if predictions.is_empty() {
        return Err(ForecastError::EmptyMetrics);
    }
    let n = predictions.len() as f64;
    let mut sq = 0.0;
    let mut abs = 0.0;
    for (p, t) in predictions.iter().zip(targets) {
        let e = p - t;
        sq += e * e;
        abs += e.abs();
    }
    Ok(((sq / n).sqrt(), abs / n))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub model: String,
    pub source: String,
    pub rmse: f64,
    pub mae: f64,
}

impl EvalRow {
    /// "0.05774 / 0.04276"-style cell used by the report tables.
    pub fn format_metrics(&self) -> String {
        format!("{:.5} / {:.5}", self.rmse, self.mae)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSize {
    pub label: String,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub seed: u64,
    pub test_size: usize,
    pub train_sizes: Vec<TrainSize>,
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,source,rmse,mae\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", r.model, r.source, r.rmse, r.mae));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is plain data")
    }
}

/// How one benchmark entry is trained. The suite used by the pipeline holds
/// four of these: the two forests plus two boosting configurations.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ForecasterSpec {
    pub label: String,
    pub config: ForecasterConfig,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForecasterConfig {
    Forest { kind: ForestKind, hyper: ForestHyper },
    Gbdt { hyper: GbdtHyper },
}

impl ForecasterSpec {
    pub fn extra_trees(label: &str) -> ForecasterSpec {
        ForecasterSpec {
            label: label.to_string(),
            config: ForecasterConfig::Forest {
                kind: ForestKind::ExtraTrees,
                hyper: ForestHyper::default(),
            },
        }
    }

    pub fn random_forest(label: &str) -> ForecasterSpec {
        ForecasterSpec {
            label: label.to_string(),
            config: ForecasterConfig::Forest {
                kind: ForestKind::RandomForest,
                hyper: ForestHyper::default(),
            },
        }
    }

    pub fn gbdt(label: &str, hyper: GbdtHyper) -> ForecasterSpec {
        ForecasterSpec {
            label: label.to_string(),
            config: ForecasterConfig::Gbdt { hyper },
        }
    }

    /// Four models per training variant: the benchmark tables' row set.
    pub fn default_suite() -> Vec<ForecasterSpec> {
        vec![
            ForecasterSpec::extra_trees("extratrees"),
            ForecasterSpec::random_forest("random_forest"),
            ForecasterSpec::gbdt("gbdt", GbdtHyper::default()),
            ForecasterSpec::gbdt(
                "gbdt_deep",
                GbdtHyper {
                    rounds: 300,
                    learning_rate: 0.05,
                    max_depth: 4,
                    min_samples_leaf: 1,
                },
            ),
        ]
    }

    pub fn fit(
        &self,
        features: &Tensor,
        targets: &[f64],
        seed: u64,
    ) -> Result<EnsembleModel, ForecastError> {
        match &self.config {
            ForecasterConfig::Forest { kind, hyper } => {
                fit_forest(features, targets, *kind, hyper, seed)
            }
            ForecasterConfig::Gbdt { hyper } => fit_gbdt(features, targets, hyper, seed),
        }
    }
}

/// Weather columns as the design matrix, load as the target. The timestamp
/// is never a feature.
pub fn design_matrix(ds: &TimeSeriesDataset) -> Result<(Tensor, Vec<f64>), ForecastError> {
    let mut data = Vec::with_capacity(ds.len() * WEATHER_FEATURES);
    for row in ds.rows() {
        data.extend_from_slice(&row.weather());
    }
    let x = Tensor::from_vec(&[ds.len(), WEATHER_FEATURES], data)?;
    Ok((x, ds.column(LOAD_COLUMN)))
}

#[derive(Debug, Clone)]
pub struct TrainVariant {
    pub label: String,
    pub data: TimeSeriesDataset,
}

impl TrainVariant {
    pub fn new(label: &str, data: TimeSeriesDataset) -> TrainVariant {
        TrainVariant {
            label: label.to_string(),
            data,
        }
    }
}

/// Fit every spec on every training variant and evaluate all of them on the
/// one shared test set. Per-fit seeds derive from (spec label, variant
/// label), so adding or reordering entries never changes another row.
///
/// Original-provenance training rows must be disjoint in time from the test
/// set; a timestamp collision aborts the whole benchmark.
pub fn benchmark_models(
    variants: &[TrainVariant],
    test: &TimeSeriesDataset,
    specs: &[ForecasterSpec],
    seed: u64,
) -> Result<EvalReport, ForecastError> {
    if variants.is_empty() {
        return Err(ForecastError::NothingToBenchmark { what: "training variants" });
    }
    if specs.is_empty() {
        return Err(ForecastError::NothingToBenchmark { what: "forecaster specs" });
    }
    if test.is_empty() {
        return Err(ForecastError::EmptyData);
    }
    let test_stamps: HashSet<_> = test.timestamps().collect();
    for v in variants {
        if v.data.provenance() == Provenance::Original {
            let count = v.data.timestamps().filter(|t| test_stamps.contains(t)).count();
            if count > 0 {
                return Err(ForecastError::TestLeakage {
                    variant: v.label.clone(),
                    count,
                });
            }
        }
    }
    let (test_x, test_y) = design_matrix(test)?;
    let mut rows = Vec::with_capacity(specs.len() * variants.len());
    for spec in specs {
        for v in variants {
            let (x, y) = design_matrix(&v.data)?;
            let fit_seed = derive_seed(derive_seed(seed, &spec.label), &v.label);
            let model = spec.fit(&x, &y, fit_seed)?;
            let predictions = predict_ensemble(&model, &test_x)?;
            let (rmse, mae) = error_metrics(&predictions, &test_y)?;
            rows.push(EvalRow {
                model: spec.label.clone(),
                source: v.label.clone(),
                rmse,
                mae,
            });
        }
    }
    Ok(EvalReport {
        seed,
        test_size: test.len(),
        train_sizes: variants
            .iter()
            .map(|v| TrainSize {
                label: v.label.clone(),
                rows: v.data.len(),
            })
            .collect(),
        rows,
    })
}
