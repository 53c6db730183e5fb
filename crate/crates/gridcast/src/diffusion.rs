//! Denoising-diffusion generator for normalized daily windows.
//!
//! Forward noising uses the closed-form composition of Gaussian steps; the
//! denoiser predicts the clean window x̂_0 directly and the sampler walks
//! the reverse recursion t = T..1. The training loss reweights per diffusion
//! step and adds a frequency-domain error term.

use thiserror::Error;

use crate::dataset::{
    dataset_from_windows, DatasetError, NormalizationParams, Partition, Provenance,
    TimeSeriesDataset, WindowSet,
};
use crate::numerics::{
    adam_step, backward_gradients, AdamConfig, AdamState, NodeId, NumericsError, Prng, Tape,
    Tensor,
};

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("diffusion step {t} outside 1..={max}")]
    StepOutOfRange { t: usize, max: usize },
    #[error("invalid config: {name} = {value}")]
    InvalidConfig { name: &'static str, value: f64 },
    #[error("training requires at least one window")]
    NoWindows,
    #[error("training data must be normalized")]
    NotNormalized,
    #[error("refusing to train a generator on test-partition windows")]
    TestDataInTraining,
    #[error("training diverged at epoch {epoch}: {cause}")]
    Diverged {
        epoch: usize,
        #[source]
        cause: NumericsError,
    },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Per-step noise amounts and their cumulative products.
///
/// `alpha_bar(0) = 1` by convention (empty product); steps are 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta_start: f64,
    beta_end: f64,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    one_minus_alpha_bars: Vec<f64>,
}

// Double-double helpers: a value is (hi, lo) with hi = fl(hi+lo). Used so
// ᾱ_t and 1−ᾱ_t come out correctly rounded; a plain f64 running product
// drifts enough that 1−ᾱ_t loses several digits near t = 0, and at t = 1
// the reverse-step coefficient on x̂_0 must come out exactly 1.
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn dd_mul(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    let p = a.0 * b.0;
    let e = a.0.mul_add(b.0, -p) + (a.0 * b.1 + a.1 * b.0);
    let s = p + e;
    (s, e - (s - p))
}

fn dd_one_minus(a: (f64, f64)) -> (f64, f64) {
    let (s, e) = two_sum(1.0, -a.0);
    let e = e - a.1;
    let hi = s + e;
    (hi, e - (hi - s))
}

/// Linear beta schedule from `beta_start` to `beta_end` over `steps` steps.
pub fn build_schedule(
    steps: usize,
    beta_start: f64,
    beta_end: f64,
) -> Result<NoiseSchedule, DiffusionError> {
    if steps < 1 {
        return Err(DiffusionError::InvalidSchedule("need at least 1 step".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(DiffusionError::InvalidSchedule(format!(
            "need 0 < start <= end < 1, got ({beta_start}, {beta_end})"
        )));
    }
    let betas: Vec<f64> = (0..steps)
        .map(|i| {
            if steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
            }
        })
        .collect();
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();

    let mut alpha_bars = Vec::with_capacity(steps + 1);
    let mut one_minus_alpha_bars = Vec::with_capacity(steps + 1);
    alpha_bars.push(1.0);
    one_minus_alpha_bars.push(0.0);
    let mut prod = (1.0_f64, 0.0_f64);
    for &b in &betas {
        prod = dd_mul(prod, two_sum(1.0, -b));
        alpha_bars.push(prod.0);
        one_minus_alpha_bars.push(dd_one_minus(prod).0);
    }
    for pair in alpha_bars.windows(2) {
        if !(pair[1] < pair[0] && pair[1] > 0.0) {
            return Err(DiffusionError::InvalidSchedule(
                "cumulative product must stay in (0,1) and strictly decrease".into(),
            ));
        }
    }
    Ok(NoiseSchedule {
        beta_start,
        beta_end,
        betas,
        alphas,
        alpha_bars,
        one_minus_alpha_bars,
    })
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta_start(&self) -> f64 {
        self.beta_start
    }

    pub fn beta_end(&self) -> f64 {
        self.beta_end
    }

    fn check_step(&self, t: usize) -> Result<(), DiffusionError> {
        if t >= 1 && t <= self.steps() {
            Ok(())
        } else {
            Err(DiffusionError::StepOutOfRange {
                t,
                max: self.steps(),
            })
        }
    }

    /// β_t for t in 1..=T.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// α_t = 1 − β_t for t in 1..=T.
    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// ᾱ_t = Π_{s≤t} α_s for t in 0..=T.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    /// 1−ᾱ_t, correctly rounded rather than recomputed by subtraction.
    pub fn one_minus_alpha_bar(&self, t: usize) -> f64 {
        self.one_minus_alpha_bars[t]
    }

    /// Loss weight w_t = λ·α_t·(1−ᾱ_t)/β_t².
    pub fn loss_weight(&self, t: usize, lambda: f64) -> f64 {
        let beta = self.beta(t);
        lambda * self.alpha(t) * self.one_minus_alpha_bar(t) / (beta * beta)
    }
}

/// The three affine coefficients of the reverse recursion at step t,
/// applied to (x̂_0, x_t, z) in that order.
pub fn reverse_coefficients(
    sched: &NoiseSchedule,
    t: usize,
) -> Result<(f64, f64, f64), DiffusionError> {
    sched.check_step(t)?;
    let denom = sched.one_minus_alpha_bar(t);
    let prev = sched.one_minus_alpha_bar(t - 1);
    let c_x0 = sched.alpha_bar(t - 1).sqrt() * sched.beta(t) / denom;
    let c_xt = sched.alpha(t).sqrt() * prev / denom;
    let c_z = prev / denom * sched.beta(t);
    Ok((c_x0, c_xt, c_z))
}

/// Closed-form forward noising: x_t = √ᾱ_t·x_0 + √(1−ᾱ_t)·noise.
pub fn forward_diffuse(
    x0: &Tensor,
    t: usize,
    noise: &Tensor,
    sched: &NoiseSchedule,
) -> Result<Tensor, DiffusionError> {
    sched.check_step(t)?;
    Ok(x0
        .scale(sched.alpha_bar(t).sqrt())
        .add(&noise.scale(sched.one_minus_alpha_bar(t).sqrt()))
        .map_err(DiffusionError::from)?)
}

/// One reverse step: x_{t−1} from (x_t, x̂_0, z). At t = 1 the x_t and z
/// coefficients vanish and the result is x̂_0 exactly.
pub fn reverse_step(
    x_t: &Tensor,
    t: usize,
    x0_hat: &Tensor,
    z: &Tensor,
    sched: &NoiseSchedule,
) -> Result<Tensor, DiffusionError> {
    let (c_x0, c_xt, c_z) = reverse_coefficients(sched, t)?;
    let out = x0_hat
        .scale(c_x0)
        .add(&x_t.scale(c_xt))
        .and_then(|s| s.add(&z.scale(c_z)))?;
    Ok(out)
}

/// Balance weights of the training loss.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Optional cap on w_t; the per-step weight grows large at small t on a
    /// linear schedule, and capping tames that without reshaping the rest.
    pub weight_cap: Option<f64>,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda: 1.0,
            lambda1: 1.0,
            lambda2: 0.01,
            weight_cap: None,
        }
    }
}

impl LossWeights {
    fn validate(&self) -> Result<(), DiffusionError> {
        let check = |name: &'static str, value: f64, ok: bool| {
            if ok {
                Ok(())
            } else {
                Err(DiffusionError::InvalidConfig { name, value })
            }
        };
        check("lambda", self.lambda, self.lambda > 0.0)?;
        check("lambda1", self.lambda1, self.lambda1 >= 0.0)?;
        check("lambda2", self.lambda2, self.lambda2 >= 0.0)?;
        check(
            "lambda1+lambda2",
            self.lambda1 + self.lambda2,
            self.lambda1 + self.lambda2 > 0.0,
        )?;
        if let Some(cap) = self.weight_cap {
            check("weight_cap", cap, cap > 0.0)?;
        }
        Ok(())
    }

    fn step_weight(&self, sched: &NoiseSchedule, t: usize) -> f64 {
        let w = sched.loss_weight(t, self.lambda);
        match self.weight_cap {
            Some(cap) => w.min(cap),
            None => w,
        }
    }
}

/// Record the loss on an existing tape so gradients can flow to `x0_hat`.
///
/// Both batches are `[B, steps·channels]` flattened windows (step-major).
/// Per row i: w_{t_i}·(λ₁·Σ(x_0−x̂_0)² + λ₂·Σ_k|FFT(x_0)−FFT(x̂_0)|²_k),
/// then the mean over the batch.
pub fn diffusion_loss_node(
    tape: &mut Tape,
    x0: NodeId,
    x0_hat: NodeId,
    ts: &[usize],
    sched: &NoiseSchedule,
    weights: &LossWeights,
    steps: usize,
    channels: usize,
) -> Result<NodeId, DiffusionError> {
    weights.validate()?;
    let rows = tape.value(x0).rows();
    if ts.len() != rows {
        return Err(NumericsError::ShapeMismatch {
            op: "diffusion_loss",
            lhs: vec![rows],
            rhs: vec![ts.len()],
        }
        .into());
    }
    for &t in ts {
        sched.check_step(t)?;
    }
    let w = Tensor::from_fn(&[rows], |i| weights.step_weight(sched, ts[i]));
    let w_node = tape.leaf(w)?;

    let diff = tape.sub(x0, x0_hat)?;
    let sq = tape.square(diff)?;
    let time_term = tape.row_sum(sq)?;
    let freq_term = tape.fourier_sq_error(x0, x0_hat, steps, channels)?;

    let time_scaled = tape.scale(time_term, weights.lambda1)?;
    let freq_scaled = tape.scale(freq_term, weights.lambda2)?;
    let combined = tape.add(time_scaled, freq_scaled)?;
    let weighted = tape.mul(w_node, combined)?;
    Ok(tape.mean(weighted)?)
}

/// Loss value without keeping a tape around.
pub fn diffusion_loss(
    x0: &Tensor,
    x0_hat: &Tensor,
    ts: &[usize],
    sched: &NoiseSchedule,
    weights: &LossWeights,
    steps: usize,
    channels: usize,
) -> Result<f64, DiffusionError> {
    let mut tape = Tape::new();
    let a = tape.leaf(x0.clone())?;
    let b = tape.leaf(x0_hat.clone())?;
    let loss = diffusion_loss_node(&mut tape, a, b, ts, sched, weights, steps, channels)?;
    Ok(tape.value(loss).scalar_value())
}

/// Shape constants of the denoiser network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenoiserArch {
    pub window_steps: usize,
    pub channels: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub trend_degree: usize,
}

impl DenoiserArch {
    pub fn for_windows(window_steps: usize, channels: usize) -> DenoiserArch {
        DenoiserArch {
            window_steps,
            channels,
            embed_dim: 16,
            hidden: 128,
            trend_degree: 3,
        }
    }

    pub fn window_len(&self) -> usize {
        self.window_steps * self.channels
    }

    fn input_dim(&self) -> usize {
        self.window_len() + self.embed_dim
    }

    fn trend_coeffs(&self) -> usize {
        (self.trend_degree + 1) * self.channels
    }
}

const PARAM_NAMES: [&str; 8] = [
    "w1", "b1", "w2", "b2", "w_trend", "b_trend", "w_seasonal", "b_seasonal",
];

/// Residual MLP predicting x̂_0 from (x_t, step embedding), decomposed into
/// a low-order polynomial trend head plus a full-resolution seasonal head.
#[derive(Debug, Clone)]
pub struct DenoiserModel {
    arch: DenoiserArch,
    params: Vec<Tensor>,
    /// Maps per-channel polynomial coefficients to flattened window layout.
    trend_basis: Tensor,
}

struct RecordedDenoiser {
    ids: Vec<NodeId>,
    basis: NodeId,
}

impl DenoiserModel {
    /// Seed-reproducible uniform init: weights U(−a, a) with
    /// a = √(6/(fan_in+fan_out)), biases zero.
    pub fn new(arch: DenoiserArch, seed: u64) -> DenoiserModel {
        let root = Prng::new(seed);
        let shapes: Vec<(usize, usize)> = vec![
            (arch.input_dim(), arch.hidden),
            (1, arch.hidden),
            (arch.hidden, arch.hidden),
            (1, arch.hidden),
            (arch.hidden, arch.trend_coeffs()),
            (1, arch.trend_coeffs()),
            (arch.hidden, arch.window_len()),
            (1, arch.window_len()),
        ];
        let params = PARAM_NAMES
            .iter()
            .zip(shapes)
            .map(|(name, (fan_in, fan_out))| {
                if name.starts_with('b') {
                    Tensor::zeros(&[fan_out])
                } else {
                    let mut prng = root.substream(name);
                    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    Tensor::from_fn(&[fan_in, fan_out], |_| (prng.uniform() * 2.0 - 1.0) * a)
                }
            })
            .collect();
        DenoiserModel {
            arch,
            params,
            trend_basis: trend_basis(arch),
        }
    }

    pub fn from_parts(arch: DenoiserArch, params: Vec<Tensor>) -> Result<DenoiserModel, DiffusionError> {
        let reference = DenoiserModel::new(arch, 0);
        if params.len() != reference.params.len() {
            return Err(DiffusionError::InvalidConfig {
                name: "parameter tensor count",
                value: params.len() as f64,
            });
        }
        for (have, want) in params.iter().zip(&reference.params) {
            if have.shape() != want.shape() {
                return Err(DiffusionError::InvalidConfig {
                    name: "parameter tensor shape",
                    value: have.len() as f64,
                });
            }
        }
        Ok(DenoiserModel {
            arch,
            params,
            trend_basis: trend_basis(arch),
        })
    }

    pub fn arch(&self) -> DenoiserArch {
        self.arch
    }

    pub fn param_names(&self) -> &'static [&'static str] {
        &PARAM_NAMES
    }

    pub fn param_tensors(&self) -> &[Tensor] {
        &self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    fn record(&self, tape: &mut Tape) -> Result<RecordedDenoiser, NumericsError> {
        let ids = self
            .params
            .iter()
            .map(|p| tape.leaf(p.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let basis = tape.leaf(self.trend_basis.clone())?;
        Ok(RecordedDenoiser { ids, basis })
    }

    fn forward(
        &self,
        tape: &mut Tape,
        recorded: &RecordedDenoiser,
        input: NodeId,
    ) -> Result<NodeId, NumericsError> {
        let [w1, b1, w2, b2, wt, bt, ws, bs]: [NodeId; 8] =
            recorded.ids.as_slice().try_into().expect("eight tensors");
        let a1 = tape.matmul(input, w1)?;
        let a1b = tape.add_row(a1, b1)?;
        let h1 = tape.relu(a1b)?;
        let a2 = tape.matmul(h1, w2)?;
        let a2b = tape.add_row(a2, b2)?;
        let r2 = tape.relu(a2b)?;
        let h2 = tape.add(r2, h1)?;

        let coeffs = tape.matmul(h2, wt)?;
        let coeffs = tape.add_row(coeffs, bt)?;
        let trend = tape.matmul(coeffs, recorded.basis)?;

        let seasonal = tape.matmul(h2, ws)?;
        let seasonal = tape.add_row(seasonal, bs)?;
        tape.add(trend, seasonal)
    }

    /// Batched x̂_0 prediction for inference; `x_t` is `[B, steps·channels]`.
    pub fn predict_x0(&self, x_t: &Tensor, ts: &[usize]) -> Result<Tensor, DiffusionError> {
        let mut tape = Tape::new();
        let recorded = self.record(&mut tape)?;
        let input = tape.leaf(embed_batch(&self.arch, x_t, ts)?)?;
        let out = self.forward(&mut tape, &recorded, input)?;
        Ok(tape.value(out).clone())
    }
}

/// Polynomial basis over normalized window time, expanded to the flattened
/// step-major layout: entry [(d·C+c), (s·C+c)] = τ_s^d with τ ∈ [−1,1].
fn trend_basis(arch: DenoiserArch) -> Tensor {
    let (steps, channels) = (arch.window_steps, arch.channels);
    let mut basis = Tensor::zeros(&[arch.trend_coeffs(), arch.window_len()]);
    for d in 0..=arch.trend_degree {
        for s in 0..steps {
            let tau = if steps == 1 {
                0.0
            } else {
                2.0 * s as f64 / (steps - 1) as f64 - 1.0
            };
            let v = tau.powi(d as i32);
            for c in 0..channels {
                basis.data_mut()[(d * channels + c) * arch.window_len() + s * channels + c] = v;
            }
        }
    }
    basis
}

/// Sinusoidal embedding of the diffusion step index.
fn step_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = (dim / 2).max(1);
    let mut out = Vec::with_capacity(half * 2);
    for i in 0..half {
        let exponent = if half > 1 {
            i as f64 / (half - 1) as f64
        } else {
            0.0
        };
        let angle = t as f64 * (10_000.0_f64).powf(-exponent);
        out.push(angle.sin());
        out.push(angle.cos());
    }
    out
}

/// Concatenate flattened windows with their per-row step embeddings.
fn embed_batch(arch: &DenoiserArch, x_t: &Tensor, ts: &[usize]) -> Result<Tensor, NumericsError> {
    let rows = x_t.rows();
    let d = arch.window_len();
    if x_t.cols() != d || ts.len() != rows {
        return Err(NumericsError::ShapeMismatch {
            op: "embed_batch",
            lhs: x_t.shape().to_vec(),
            rhs: vec![rows, d],
        });
    }
    let width = arch.input_dim();
    let mut data = vec![0.0; rows * width];
    for i in 0..rows {
        data[i * width..i * width + d].copy_from_slice(&x_t.data()[i * d..(i + 1) * d]);
        let emb = step_embedding(ts[i], arch.embed_dim);
        data[i * width + d..(i + 1) * width].copy_from_slice(&emb);
    }
    Tensor::from_vec(&[rows, width], data)
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct DiffusionTrainConfig {
    pub diffusion_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weights: LossWeights,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for DiffusionTrainConfig {
    fn default() -> Self {
        DiffusionTrainConfig {
            diffusion_steps: 200,
            beta_start: 1e-4,
            beta_end: 0.02,
            epochs: 900,
            batch_size: 32,
            learning_rate: 1e-3,
            weights: LossWeights::default(),
            hidden: 128,
            seed: 0,
        }
    }
}

impl DiffusionTrainConfig {
    fn validate(&self) -> Result<(), DiffusionError> {
        if self.batch_size == 0 {
            return Err(DiffusionError::InvalidConfig {
                name: "batch_size",
                value: 0.0,
            });
        }
        if self.hidden == 0 {
            return Err(DiffusionError::InvalidConfig {
                name: "hidden",
                value: 0.0,
            });
        }
        if !(self.learning_rate > 0.0) {
            return Err(DiffusionError::InvalidConfig {
                name: "learning_rate",
                value: self.learning_rate,
            });
        }
        self.weights.validate()
    }
}

/// A trained denoiser with the schedule it was trained against.
#[derive(Debug, Clone)]
pub struct TrainedDiffusion {
    pub model: DenoiserModel,
    pub schedule: NoiseSchedule,
    pub losses: Vec<f64>,
}

/// Train the denoiser on normalized windows.
///
/// Draw order per epoch: one permutation of the window indices, then per
/// batch item a step t and a window of noise; this makes runs bit-identical
/// for identical seeds.
pub fn train_diffusion(
    windows: &WindowSet,
    cfg: &DiffusionTrainConfig,
) -> Result<TrainedDiffusion, DiffusionError> {
    cfg.validate()?;
    if windows.is_empty() {
        return Err(DiffusionError::NoWindows);
    }
    if !windows.is_normalized() {
        return Err(DiffusionError::NotNormalized);
    }
    if windows.partition() == Partition::Test {
        return Err(DiffusionError::TestDataInTraining);
    }

    let sched = build_schedule(cfg.diffusion_steps, cfg.beta_start, cfg.beta_end)?;
    let steps = windows.window_length();
    let channels = windows.feature_count();
    let arch = DenoiserArch {
        hidden: cfg.hidden,
        ..DenoiserArch::for_windows(steps, channels)
    };
    let root = Prng::new(cfg.seed);
    let mut model = DenoiserModel::new(arch, root.substream("init").next_seed());
    let mut epoch_rng = root.substream("epochs");

    let flat: Vec<&[f64]> = windows.windows().iter().map(|w| w.data()).collect();
    let d = arch.window_len();
    let n = flat.len();
    let mut adam: Vec<AdamState> = model
        .params
        .iter()
        .map(|p| AdamState::new(p.shape()))
        .collect();
    let adam_cfg = AdamConfig::with_learning_rate(cfg.learning_rate);

    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let order = epoch_rng.permutation(n);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size.min(n)) {
            let b = chunk.len();
            let mut x0 = Tensor::zeros(&[b, d]);
            let mut xt = Tensor::zeros(&[b, d]);
            let mut ts = Vec::with_capacity(b);
            for (row, &w) in chunk.iter().enumerate() {
                let t = epoch_rng.below(sched.steps()) + 1;
                ts.push(t);
                let signal = sched.alpha_bar(t).sqrt();
                let noise = sched.one_minus_alpha_bar(t).sqrt();
                for j in 0..d {
                    let clean = flat[w][j];
                    x0.data_mut()[row * d + j] = clean;
                    xt.data_mut()[row * d + j] = signal * clean + noise * epoch_rng.normal();
                }
            }

            let mut step = || -> Result<f64, DiffusionError> {
                let mut tape = Tape::new();
                let recorded = model.record(&mut tape)?;
                let input = tape.leaf(embed_batch(&arch, &xt, &ts)?)?;
                let pred = model.forward(&mut tape, &recorded, input)?;
                let x0_node = tape.leaf(x0.clone())?;
                let loss = diffusion_loss_node(
                    &mut tape,
                    x0_node,
                    pred,
                    &ts,
                    &sched,
                    &cfg.weights,
                    steps,
                    channels,
                )?;
                let grads = backward_gradients(&tape, loss)?;
                for ((param, state), id) in
                    model.params.iter_mut().zip(&mut adam).zip(&recorded.ids)
                {
                    let g = grads.get_or_zero(*id, param.shape());
                    adam_step(param, &g, state, &adam_cfg)?;
                }
                Ok(tape.value(loss).scalar_value())
            };
            let batch_loss = step().map_err(|e| match e {
                DiffusionError::Numerics(cause) => DiffusionError::Diverged { epoch, cause },
                other => other,
            })?;
            epoch_loss += batch_loss;
            batches += 1;
        }
        losses.push(epoch_loss / batches as f64);
    }

    Ok(TrainedDiffusion {
        model,
        schedule: sched,
        losses,
    })
}

/// Sample normalized windows: x_T ~ N(0,I), reverse steps T..1, clip to
/// [0,1]. Row i draws from its own substream (first the start noise, then
/// one z per step down to t = 2), so windows are independent of batching.
pub fn generate_windows(
    model: &DenoiserModel,
    sched: &NoiseSchedule,
    n_windows: usize,
    seed: u64,
) -> Result<Vec<Tensor>, DiffusionError> {
    let arch = model.arch();
    let d = arch.window_len();
    if n_windows == 0 {
        return Ok(Vec::new());
    }
    let root = Prng::new(seed);
    let mut streams: Vec<Prng> = (0..n_windows)
        .map(|i| root.substream(&format!("window-{i}")))
        .collect();

    let mut x = Tensor::zeros(&[n_windows, d]);
    for (i, stream) in streams.iter_mut().enumerate() {
        for j in 0..d {
            x.data_mut()[i * d + j] = stream.normal();
        }
    }

    for t in (1..=sched.steps()).rev() {
        let ts = vec![t; n_windows];
        let x0_hat = model.predict_x0(&x, &ts)?;
        let mut z = Tensor::zeros(&[n_windows, d]);
        if t > 1 {
            for (i, stream) in streams.iter_mut().enumerate() {
                for j in 0..d {
                    z.data_mut()[i * d + j] = stream.normal();
                }
            }
        }
        x = reverse_step(&x, t, &x0_hat, &z, sched)?;
    }

    Ok((0..n_windows)
        .map(|i| {
            Tensor::from_fn(&[arch.window_steps, arch.channels], |j| {
                x.data()[i * d + j].clamp(0.0, 1.0)
            })
        })
        .collect())
}

/// Sample windows and flatten them into an original-units dataset.
pub fn generate_rows(
    model: &DenoiserModel,
    sched: &NoiseSchedule,
    n_windows: usize,
    params: &NormalizationParams,
    seed: u64,
) -> Result<TimeSeriesDataset, DiffusionError> {
    if n_windows == 0 {
        return Ok(TimeSeriesDataset::from_rows(Vec::new(), Provenance::Diffusion));
    }
    let windows = generate_windows(model, sched, n_windows, seed)?;
    let set = WindowSet::new(windows, Provenance::Diffusion, Partition::Train, true)?;
    Ok(dataset_from_windows(&set, params, Provenance::Diffusion)?)
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::derive_seed;

    fn tiny_schedule() -> NoiseSchedule {
        build_schedule(2, 0.1, 0.2).unwrap()
    }

    #[test]
    fn schedule_fixtures() {
        let s = build_schedule(1000, 1e-4, 0.02).unwrap();
        assert_eq!(s.alpha_bar(0), 1.0);
        assert!((s.alpha_bar(1) - 0.9999).abs() < 1e-12);
        let s2 = tiny_schedule();
        assert!((s2.alpha_bar(2) - 0.72).abs() < 1e-12);
        assert_eq!(s2.beta(1), 0.1);
        assert_eq!(s2.beta(2), 0.2);
    }

    #[test]
    fn schedule_alpha_bar_strictly_decreasing() {
        let s = build_schedule(200, 1e-4, 0.02).unwrap();
        for t in 1..=200 {
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            assert!(s.alpha_bar(t) > 0.0);
        }
    }

    #[test]
    fn schedule_rejects_bad_ranges() {
        assert!(build_schedule(0, 1e-4, 0.02).is_err());
        assert!(build_schedule(10, 0.0, 0.02).is_err());
        assert!(build_schedule(10, 0.2, 0.1).is_err());
        assert!(build_schedule(10, 0.5, 1.0).is_err());
    }

    #[test]
    fn forward_with_zero_noise_scales_signal() {
        let s = tiny_schedule();
        let x0 = Tensor::from_vec(&[4], vec![1.0, -0.5, 0.25, 2.0]).unwrap();
        let zero = Tensor::zeros(&[4]);
        let xt = forward_diffuse(&x0, 2, &zero, &s).unwrap();
        let scale = 0.72_f64.sqrt();
        for (a, b) in xt.data().iter().zip(x0.data()) {
            assert!((a - scale * b).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_noise_variance_matches_schedule() {
        let s = build_schedule(50, 1e-3, 0.3).unwrap();
        let t = 30;
        let expect = 1.0 - s.alpha_bar(t);
        let mut prng = Prng::new(4);
        let n = 10_000;
        let x0 = Tensor::zeros(&[1]);
        let mut acc = 0.0;
        for _ in 0..n {
            let noise = Tensor::from_vec(&[1], vec![prng.normal()]).unwrap();
            let xt = forward_diffuse(&x0, t, &noise, &s).unwrap();
            acc += xt.data()[0] * xt.data()[0];
        }
        let var = acc / n as f64;
        assert!((var - expect).abs() / expect < 0.05, "var {var} vs {expect}");
    }

    #[test]
    fn late_step_output_decorrelates_from_signal() {
        // At T=1000 with the standard range, ᾱ_T ≈ 4e-5 and x_T is noise.
        let s = build_schedule(1000, 1e-4, 0.02).unwrap();
        let t = s.steps();
        let mut prng = Prng::new(9);
        let n = 4000;
        let (mut sx, mut sy, mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let x0 = prng.normal();
            let noise = prng.normal();
            let x0_t = Tensor::from_vec(&[1], vec![x0]).unwrap();
            let n_t = Tensor::from_vec(&[1], vec![noise]).unwrap();
            let xt = forward_diffuse(&x0_t, t, &n_t, &s).unwrap().data()[0];
            sx += x0;
            sy += xt;
            sxy += x0 * xt;
            sxx += x0 * x0;
            syy += xt * xt;
        }
        let nf = n as f64;
        let corr = (sxy - sx * sy / nf)
            / ((sxx - sx * sx / nf).sqrt() * (syy - sy * sy / nf).sqrt());
        assert!(corr.abs() < 0.1, "corr {corr}");
    }

    #[test]
    fn final_reverse_step_returns_prediction_exactly() {
        let s = build_schedule(200, 1e-4, 0.02).unwrap();
        let x0_hat = Tensor::from_vec(&[3], vec![0.2, 0.4, 0.8]).unwrap();
        let x1 = Tensor::from_vec(&[3], vec![5.0, -3.0, 9.9]).unwrap();
        let z = Tensor::filled(&[3], 2.0);
        let out = reverse_step(&x1, 1, &x0_hat, &z, &s).unwrap();
        assert_eq!(out.data(), x0_hat.data());
    }

    #[test]
    fn reverse_step_fixture_t2() {
        let s = tiny_schedule();
        let one = Tensor::scalar(1.0);
        let zero = Tensor::scalar(0.0);
        let out = reverse_step(&one, 2, &one, &zero, &s).unwrap();
        let expected = (0.9_f64.sqrt() * 0.2 + 0.8_f64.sqrt() * 0.1) / 0.28;
        assert!((out.scalar_value() - expected).abs() < 1e-12);
    }

    #[test]
    fn reverse_step_is_affine() {
        let s = tiny_schedule();
        let xt = Tensor::from_vec(&[2], vec![0.3, -0.7]).unwrap();
        let x0 = Tensor::from_vec(&[2], vec![0.1, 0.9]).unwrap();
        let z = Tensor::from_vec(&[2], vec![1.0, -1.0]).unwrap();
        let once = reverse_step(&xt, 2, &x0, &z, &s).unwrap();
        let doubled =
            reverse_step(&xt.scale(2.0), 2, &x0.scale(2.0), &z.scale(2.0), &s).unwrap();
        for (a, b) in once.data().iter().zip(doubled.data()) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_zero_for_perfect_prediction() {
        let s = tiny_schedule();
        let x0 = Tensor::from_fn(&[2, 6], |i| 0.1 * i as f64);
        let loss = diffusion_loss(&x0, &x0, &[1, 2], &s, &LossWeights::default(), 3, 2).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn loss_scalar_fixture_weight_nine() {
        let s = build_schedule(1, 0.1, 0.1).unwrap();
        let x0 = Tensor::from_vec(&[1, 1], vec![1.0]).unwrap();
        let x0_hat = Tensor::from_vec(&[1, 1], vec![0.0]).unwrap();
        let w = LossWeights {
            lambda2: 0.0,
            ..LossWeights::default()
        };
        let loss = diffusion_loss(&x0, &x0_hat, &[1], &s, &w, 1, 1).unwrap();
        assert!((loss - 9.0).abs() < 1e-9, "loss {loss}");
    }

    #[test]
    fn loss_without_fourier_term_matches_reweighted_mse() {
        let s = tiny_schedule();
        let mut prng = Prng::new(21);
        let x0 = Tensor::from_fn(&[3, 8], |_| prng.uniform());
        let x0_hat = Tensor::from_fn(&[3, 8], |_| prng.uniform());
        let ts = [1, 2, 1];
        let w = LossWeights {
            lambda2: 0.0,
            ..LossWeights::default()
        };
        let loss = diffusion_loss(&x0, &x0_hat, &ts, &s, &w, 4, 2).unwrap();
        let mut expect = 0.0;
        for (i, &t) in ts.iter().enumerate() {
            let wt = s.loss_weight(t, 1.0);
            let sq: f64 = (0..8)
                .map(|j| (x0.data()[i * 8 + j] - x0_hat.data()[i * 8 + j]).powi(2))
                .sum();
            expect += wt * sq;
        }
        expect /= 3.0;
        assert!((loss - expect).abs() < 1e-12, "{loss} vs {expect}");
    }

    #[test]
    fn weight_cap_limits_early_steps() {
        // w_1 = α_1·β_1/β_1² ≈ 1/β_1 ≈ 1e4 dwarfs w_T without a cap.
        let s = build_schedule(200, 1e-4, 0.02).unwrap();
        assert!(s.loss_weight(1, 1.0) > 1e3);
        assert!(s.loss_weight(1, 1.0) > s.loss_weight(200, 1.0));
        let capped = LossWeights {
            weight_cap: Some(10.0),
            ..LossWeights::default()
        };
        assert_eq!(capped.step_weight(&s, 1), 10.0);
        assert!(capped.step_weight(&s, 200) <= 10.0);
    }

    #[test]
    fn loss_rejects_out_of_range_step() {
        let s = tiny_schedule();
        let x = Tensor::zeros(&[1, 2]);
        assert!(matches!(
            diffusion_loss(&x, &x, &[3], &s, &LossWeights::default(), 1, 2),
            Err(DiffusionError::StepOutOfRange { t: 3, .. })
        ));
    }

    fn toy_windows(n: usize, steps: usize, channels: usize) -> WindowSet {
        let windows = (0..n)
            .map(|w| {
                Tensor::from_fn(&[steps, channels], |i| {
                    let (s, c) = (i / channels, i % channels);
                    let phase = w as f64 * 0.3 + c as f64;
                    0.5 + 0.4 * ((s as f64 / steps as f64) * std::f64::consts::TAU + phase).sin()
                })
            })
            .collect();
        WindowSet::new(windows, Provenance::Original, Partition::Train, true).unwrap()
    }

    fn tiny_config(epochs: usize) -> DiffusionTrainConfig {
        DiffusionTrainConfig {
            diffusion_steps: 20,
            epochs,
            batch_size: 8,
            hidden: 32,
            weights: LossWeights {
                weight_cap: Some(50.0),
                ..LossWeights::default()
            },
            seed: 17,
            ..DiffusionTrainConfig::default()
        }
    }

    #[test]
    fn training_reduces_loss_on_learnable_signal() {
        let windows = toy_windows(16, 8, 2);
        let trained = train_diffusion(&windows, &tiny_config(120)).unwrap();
        let first = trained.losses[0];
        let last = *trained.losses.last().unwrap();
        assert!(
            last < 0.5 * first,
            "loss went {first} -> {last}, expected at least a halving"
        );
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let windows = toy_windows(4, 8, 2);
        let cfg = tiny_config(0);
        let trained = train_diffusion(&windows, &cfg).unwrap();
        let root = Prng::new(cfg.seed);
        let arch = DenoiserArch {
            hidden: cfg.hidden,
            ..DenoiserArch::for_windows(8, 2)
        };
        let fresh = DenoiserModel::new(arch, root.substream("init").next_seed());
        assert!(trained.losses.is_empty());
        for (a, b) in trained.model.param_tensors().iter().zip(fresh.param_tensors()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn same_seed_same_loss_history() {
        let windows = toy_windows(8, 8, 2);
        let cfg = tiny_config(10);
        let a = train_diffusion(&windows, &cfg).unwrap();
        let b = train_diffusion(&windows, &cfg).unwrap();
        assert_eq!(a.losses, b.losses);
    }

    #[test]
    fn test_partition_windows_rejected() {
        let windows = toy_windows(4, 8, 2);
        let test_set = WindowSet::new(
            windows.windows().to_vec(),
            Provenance::Original,
            Partition::Test,
            true,
        )
        .unwrap();
        assert!(matches!(
            train_diffusion(&test_set, &tiny_config(1)),
            Err(DiffusionError::TestDataInTraining)
        ));
    }

    #[test]
    fn unnormalized_windows_rejected() {
        let windows = toy_windows(4, 8, 2);
        let raw = WindowSet::new(
            windows.windows().to_vec(),
            Provenance::Original,
            Partition::Train,
            false,
        )
        .unwrap();
        assert!(matches!(
            train_diffusion(&raw, &tiny_config(1)),
            Err(DiffusionError::NotNormalized)
        ));
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        use crate::numerics::finite_difference_check;
        let arch = DenoiserArch {
            embed_dim: 4,
            hidden: 6,
            trend_degree: 2,
            ..DenoiserArch::for_windows(4, 2)
        };
        let model = DenoiserModel::new(arch, 3);
        let sched = build_schedule(5, 0.05, 0.3).unwrap();
        let mut prng = Prng::new(8);
        let x0 = Tensor::from_fn(&[2, 8], |_| prng.uniform());
        let xt = Tensor::from_fn(&[2, 8], |_| prng.normal());
        let ts = vec![2, 4];
        let weights = LossWeights::default();

        let loss_of = |params: &[Tensor]| -> Result<f64, DiffusionError> {
            let m = DenoiserModel::from_parts(arch, params.to_vec())?;
            let mut tape = Tape::new();
            let rec = m.record(&mut tape)?;
            let input = tape.leaf(embed_batch(&arch, &xt, &ts)?)?;
            let pred = m.forward(&mut tape, &rec, input)?;
            let x0n = tape.leaf(x0.clone())?;
            let l = diffusion_loss_node(&mut tape, x0n, pred, &ts, &sched, &weights, 4, 2)?;
            Ok(tape.value(l).scalar_value())
        };

        let mut tape = Tape::new();
        let rec = model.record(&mut tape).unwrap();
        let input = tape.leaf(embed_batch(&arch, &xt, &ts).unwrap()).unwrap();
        let pred = model.forward(&mut tape, &rec, input).unwrap();
        let x0n = tape.leaf(x0.clone()).unwrap();
        let l =
            diffusion_loss_node(&mut tape, x0n, pred, &ts, &sched, &weights, 4, 2).unwrap();
        let grads = backward_gradients(&tape, l).unwrap();

        for (pi, id) in rec.ids.iter().enumerate() {
            let analytic = grads.get_or_zero(*id, model.params[pi].shape());
            let base = model.params.clone();
            let err = finite_difference_check(
                |probe: &Tensor| {
                    let mut params = base.clone();
                    params[pi] = probe.clone();
                    loss_of(&params)
                        .map_err(|_| NumericsError::NonFinite { op: "loss" })
                },
                &model.params[pi],
                &analytic,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-4, "param {pi} fd error {err}");
        }
    }

    #[test]
    fn generation_counts_and_range() {
        let arch = DenoiserArch {
            embed_dim: 4,
            hidden: 8,
            ..DenoiserArch::for_windows(24, 8)
        };
        let model = DenoiserModel::new(arch, 5);
        let sched = build_schedule(10, 1e-3, 0.05).unwrap();
        let mins: Vec<f64> = (0..8).map(|c| c as f64).collect();
        let rows = {
            use crate::dataset::DataRow;
            use chrono::Duration;
            (0..3)
                .map(|i| DataRow {
                    timestamp: crate::dataset::synthetic_epoch() + Duration::hours(i),
                    values: [
                        mins[0] + i as f64,
                        mins[1] + i as f64,
                        mins[2] + i as f64,
                        mins[3] + i as f64,
                        mins[4] + i as f64,
                        mins[5] + i as f64,
                        mins[6] + i as f64,
                        mins[7] + i as f64,
                    ],
                })
                .collect()
        };
        let ds = TimeSeriesDataset::from_rows(rows, Provenance::Original);
        let (_, params) = crate::dataset::fit_apply_normalizer(&ds).unwrap();

        let out = generate_rows(&model, &sched, 144, &params, 11).unwrap();
        assert_eq!(out.len(), 3456);
        assert_eq!(out.provenance(), Provenance::Diffusion);
        for row in out.rows() {
            for (c, v) in row.values.iter().enumerate() {
                assert!(*v >= params.min(c) - 1e-12 && *v <= params.max(c) + 1e-12);
            }
        }

        let empty = generate_rows(&model, &sched, 0, &params, 11).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let arch = DenoiserArch {
            embed_dim: 4,
            hidden: 8,
            ..DenoiserArch::for_windows(6, 2)
        };
        let model = DenoiserModel::new(arch, 5);
        let sched = build_schedule(8, 1e-3, 0.05).unwrap();
        let a = generate_windows(&model, &sched, 5, 77).unwrap();
        let b = generate_windows(&model, &sched, 5, 77).unwrap();
        assert_eq!(a, b);
        let c = generate_windows(&model, &sched, 5, 78).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn oracle_denoiser_reverse_matches_posterior_mean() {
        // With the true x_0 supplied and z = 0, one reverse step must equal
        // the two deterministic terms of the recursion exactly.
        let s = build_schedule(40, 1e-3, 0.1).unwrap();
        let x0 = Tensor::from_vec(&[4], vec![0.2, 0.5, 0.7, 0.9]).unwrap();
        let mut prng = Prng::new(14);
        for t in [2, 10, 40] {
            let noise = Tensor::from_fn(&[4], |_| prng.normal());
            let xt = forward_diffuse(&x0, t, &noise, &s).unwrap();
            let zero = Tensor::zeros(&[4]);
            let stepped = reverse_step(&xt, t, &x0, &zero, &s).unwrap();
            let (c0, c1, _) = reverse_coefficients(&s, t).unwrap();
            for j in 0..4 {
                let expect = c0 * x0.data()[j] + c1 * xt.data()[j];
                assert!((stepped.data()[j] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn trained_model_preserves_channel_statistics() {
        // Two independent Gaussian AR(1) channels (mean 0.5, reversion 0.9,
        // marginal std 0.035); generated windows should land within 20% of
        // the training per-channel mean and std.
        let mut prng = Prng::new(0xA11CE);
        let (n, steps, channels) = (96, 24, 2);
        let (mu, rho, sigma) = (0.5, 0.9, 0.035);
        let innovation = sigma * (1.0f64 - rho * rho).sqrt();
        let windows: Vec<Tensor> = (0..n)
            .map(|_| {
                let mut state = [0.0; 2];
                for s in state.iter_mut() {
                    *s = mu + sigma * prng.normal();
                }
                let mut data = vec![0.0; steps * channels];
                for t in 0..steps {
                    for (c, s) in state.iter_mut().enumerate() {
                        *s = mu + rho * (*s - mu) + innovation * prng.normal();
                        *s = s.clamp(0.02, 0.98);
                        data[t * channels + c] = *s;
                    }
                }
                Tensor::from_vec(&[steps, channels], data).unwrap()
            })
            .collect();
        let set = WindowSet::new(windows, Provenance::Original, Partition::Train, true).unwrap();
        // beta_end chosen so ᾱ_T ≈ 0: generation then starts from the same
        // pure-noise distribution the trainer saw at t = T.
        let cfg = DiffusionTrainConfig {
            diffusion_steps: 30,
            beta_start: 1e-4,
            beta_end: 0.35,
            epochs: 260,
            batch_size: 32,
            hidden: 48,
            seed: 0x9C31,
            ..DiffusionTrainConfig::default()
        };
        let trained = train_diffusion(&set, &cfg).unwrap();
        let generated =
            generate_windows(&trained.model, &trained.schedule, 160, 0x5EED).unwrap();

        let stats = |ws: &[Tensor], c: usize| {
            let vals: Vec<f64> = ws
                .iter()
                .flat_map(|w| (0..steps).map(move |s| w.at2(s, c)))
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
                / (vals.len() - 1) as f64;
            (mean, var.sqrt())
        };
        for c in 0..channels {
            let (tm, tsd) = stats(set.windows(), c);
            let (gm, gsd) = stats(&generated, c);
            assert!(
                (gm - tm).abs() / tm.abs() < 0.2,
                "channel {c} mean {gm} vs {tm}"
            );
            assert!(
                (gsd - tsd).abs() / tsd < 0.2,
                "channel {c} std {gsd} vs {tsd}"
            );
        }
    }

    #[test]
    fn substream_seed_helper_is_stable() {
        let a = Prng::new(derive_seed(1, "x")).next_seed();
        let b = Prng::new(derive_seed(1, "x")).next_seed();
        assert_eq!(a, b);
    }
}
