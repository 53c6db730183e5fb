//! Adversarial sequence generator with five gated recurrent networks
//! (embedder, recovery, generator, supervisor, discriminator) trained in
//! three phases: autoencoding, supervised one-step prediction, and joint
//! adversarial refinement.

use thiserror::Error;

use crate::dataset::{
    dataset_from_windows, DatasetError, NormalizationParams, Partition, Provenance,
    TimeSeriesDataset, WindowSet,
};
use crate::numerics::{
    adam_step, backward_gradients, AdamConfig, AdamState, Gradients, NodeId, NumericsError, Prng,
    Tape, Tensor,
};

/// Scores are clamped to [`SCORE_FLOOR`, 1 − `SCORE_FLOOR`] before logs.
const SCORE_FLOOR: f64 = 1e-7;

/// Generated sequences use the fixed daily horizon; variable lengths are a
/// non-goal here.
const GENERATED_STEPS: usize = 24;

#[derive(Debug, Error)]
pub enum TimeGanError {
    #[error("invalid config: {name} = {value}")]
    InvalidConfig { name: &'static str, value: f64 },
    #[error("training requires at least one window")]
    NoWindows,
    #[error("training windows must be normalized")]
    NotNormalized,
    #[error("test-partition windows may not be used for training")]
    TestDataInTraining,
    #[error("joint phase requires a trained embedder; set embedding_steps > 0")]
    JointBeforeEmbedding,
    #[error("batch is missing {field}")]
    MissingField { field: &'static str },
    #[error("batch items disagree: {what}")]
    InconsistentBatch { what: &'static str },
    #[error("{phase} phase diverged at step {step}: {cause}")]
    Diverged {
        phase: &'static str,
        step: usize,
        cause: NumericsError,
    },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

const PART_NAMES: [&str; 11] = [
    "w_xz", "w_hz", "b_z", "w_xr", "w_hr", "b_r", "w_xc", "w_hc", "b_c", "w_out", "b_out",
];
const NET_NAMES: [&str; 5] = [
    "embedder",
    "recovery",
    "generator",
    "supervisor",
    "discriminator",
];

/// Single-layer gated recurrent cell plus an output projection. Parameter
/// order follows PART_NAMES; update/reset/candidate gates then projection.
#[derive(Debug, Clone)]
struct RecurrentNet {
    hidden: usize,
    params: Vec<Tensor>,
}

impl RecurrentNet {
    fn shapes(input: usize, hidden: usize, output: usize) -> Vec<Vec<usize>> {
        vec![
            vec![input, hidden],
            vec![hidden, hidden],
            vec![hidden],
            vec![input, hidden],
            vec![hidden, hidden],
            vec![hidden],
            vec![input, hidden],
            vec![hidden, hidden],
            vec![hidden],
            vec![hidden, output],
            vec![output],
        ]
    }

    /// Weights U(−a, a) with a = √(6/(fan_in+fan_out)), biases zero.
    fn new(input: usize, hidden: usize, output: usize, seed: u64) -> RecurrentNet {
        let root = Prng::new(seed);
        let params = PART_NAMES
            .iter()
            .zip(Self::shapes(input, hidden, output))
            .map(|(name, shape)| {
                if shape.len() == 1 {
                    Tensor::zeros(&shape)
                } else {
                    let mut prng = root.substream(name);
                    let a = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                    Tensor::from_fn(&shape, |_| (prng.uniform() * 2.0 - 1.0) * a)
                }
            })
            .collect();
        RecurrentNet { hidden, params }
    }

    fn record(&self, tape: &mut Tape) -> Result<RecordedNet, NumericsError> {
        let ids = self
            .params
            .iter()
            .map(|p| tape.leaf(p.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(RecordedNet {
            ids,
            hidden: self.hidden,
        })
    }
}

struct RecordedNet {
    ids: Vec<NodeId>,
    hidden: usize,
}

/// Runs the recurrent cell over time-major inputs (one [batch, input] node
/// per step, zero initial state) and returns the projected per-step outputs,
/// all passed through a sigmoid.
fn run_net(
    tape: &mut Tape,
    net: &RecordedNet,
    inputs: &[NodeId],
    batch: usize,
) -> Result<Vec<NodeId>, NumericsError> {
    let gate = |tape: &mut Tape, base: usize, x: NodeId, h: NodeId| {
        let xm = tape.matmul(x, net.ids[base])?;
        let hm = tape.matmul(h, net.ids[base + 1])?;
        let s = tape.add(xm, hm)?;
        tape.add_row(s, net.ids[base + 2])
    };
    let mut h = tape.leaf(Tensor::zeros(&[batch, net.hidden]))?;
    let mut outputs = Vec::with_capacity(inputs.len());
    for &x in inputs {
        let z_pre = gate(tape, 0, x, h)?;
        let z = tape.sigmoid(z_pre)?;
        let r_pre = gate(tape, 3, x, h)?;
        let r = tape.sigmoid(r_pre)?;
        let rh = tape.mul(r, h)?;
        let xm = tape.matmul(x, net.ids[6])?;
        let hm = tape.matmul(rh, net.ids[7])?;
        let c_sum = tape.add(xm, hm)?;
        let c_pre = tape.add_row(c_sum, net.ids[8])?;
        let c = tape.tanh(c_pre)?;
        // h' = h + z ⊙ (c − h), the usual convex gate written without a
        // ones constant.
        let delta = tape.sub(c, h)?;
        let gated = tape.mul(z, delta)?;
        h = tape.add(h, gated)?;
        let proj = tape.matmul(h, net.ids[9])?;
        let pre = tape.add_row(proj, net.ids[10])?;
        outputs.push(tape.sigmoid(pre)?);
    }
    Ok(outputs)
}

/// Five-network sequence GAN. Latents, reconstructions, and discriminator
/// scores all live in (0,1) through sigmoid projections.
#[derive(Debug, Clone)]
pub struct TimeGanModel {
    features: usize,
    hidden: usize,
    embedder: RecurrentNet,
    recovery: RecurrentNet,
    generator: RecurrentNet,
    supervisor: RecurrentNet,
    discriminator: RecurrentNet,
}

impl TimeGanModel {
    pub fn new(features: usize, hidden: usize, seed: u64) -> TimeGanModel {
        let root = Prng::new(seed);
        let sub = |name: &str| root.substream(name).next_seed();
        TimeGanModel {
            features,
            hidden,
            embedder: RecurrentNet::new(features, hidden, hidden, sub("embedder")),
            recovery: RecurrentNet::new(hidden, hidden, features, sub("recovery")),
            generator: RecurrentNet::new(features, hidden, hidden, sub("generator")),
            supervisor: RecurrentNet::new(hidden, hidden, hidden, sub("supervisor")),
            discriminator: RecurrentNet::new(hidden, hidden, 1, sub("discriminator")),
        }
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    fn nets(&self) -> [&RecurrentNet; 5] {
        [
            &self.embedder,
            &self.recovery,
            &self.generator,
            &self.supervisor,
            &self.discriminator,
        ]
    }

    /// All parameter tensors in a fixed order (network by network, gates
    /// then projection), for checkpointing.
    pub fn param_tensors(&self) -> Vec<&Tensor> {
        self.nets().into_iter().flat_map(|n| &n.params).collect()
    }

    pub fn param_names(&self) -> Vec<String> {
        NET_NAMES
            .iter()
            .flat_map(|net| PART_NAMES.iter().map(move |part| format!("{net}.{part}")))
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.nets()
            .into_iter()
            .flat_map(|n| &n.params)
            .map(Tensor::len)
            .sum()
    }

    /// Rebuild from checkpointed tensors; shapes must match a fresh model.
    pub fn from_parts(
        features: usize,
        hidden: usize,
        params: Vec<Tensor>,
    ) -> Result<TimeGanModel, TimeGanError> {
        let mut model = TimeGanModel::new(features, hidden, 0);
        let expected: usize = model.nets().iter().map(|n| n.params.len()).sum();
        if params.len() != expected {
            return Err(TimeGanError::InvalidConfig {
                name: "parameter tensor count",
                value: params.len() as f64,
            });
        }
        let mut iter = params.into_iter();
        for net in [
            &mut model.embedder,
            &mut model.recovery,
            &mut model.generator,
            &mut model.supervisor,
            &mut model.discriminator,
        ] {
            for slot in net.params.iter_mut() {
                let tensor = iter.next().expect("count checked above");
                if tensor.shape() != slot.shape() {
                    return Err(TimeGanError::InvalidConfig {
                        name: "parameter tensor shape",
                        value: tensor.len() as f64,
                    });
                }
                *slot = tensor;
            }
        }
        Ok(model)
    }
}

/// One batch of sequences with whatever derived members a caller has: real
/// data x, optional static features s, latents h, reconstructions, and
/// supervisor predictions aligned index-for-index with the latents.
#[derive(Debug, Clone, Default)]
pub struct SequenceBatch {
    sequences: Option<Vec<Tensor>>,
    statics: Option<Tensor>,
    static_reconstructions: Option<Tensor>,
    reconstructions: Option<Vec<Tensor>>,
    latents: Option<Vec<Tensor>>,
    supervised: Option<Vec<Tensor>>,
}

fn check_uniform(items: &[Tensor], what: &'static str) -> Result<(), TimeGanError> {
    if items.is_empty() {
        return Err(TimeGanError::InconsistentBatch { what });
    }
    let shape = items[0].shape();
    if items.iter().any(|t| t.shape() != shape) {
        return Err(TimeGanError::InconsistentBatch { what });
    }
    Ok(())
}

impl SequenceBatch {
    pub fn new() -> SequenceBatch {
        SequenceBatch::default()
    }

    fn items(&self) -> Option<usize> {
        self.sequences
            .as_ref()
            .map(Vec::len)
            .or_else(|| self.latents.as_ref().map(Vec::len))
    }

    fn steps(&self) -> Option<usize> {
        self.sequences
            .as_ref()
            .map(|s| s[0].rows())
            .or_else(|| self.latents.as_ref().map(|h| h[0].rows()))
    }

    fn check_sizes(
        &self,
        count: usize,
        steps: usize,
        what: &'static str,
    ) -> Result<(), TimeGanError> {
        if self.items().is_some_and(|n| n != count) || self.steps().is_some_and(|t| t != steps) {
            return Err(TimeGanError::InconsistentBatch { what });
        }
        Ok(())
    }

    /// Real sequences, one [steps, features] tensor per item.
    pub fn with_sequences(mut self, x: Vec<Tensor>) -> Result<SequenceBatch, TimeGanError> {
        check_uniform(&x, "sequences")?;
        self.check_sizes(x.len(), x[0].rows(), "sequences")?;
        self.sequences = Some(x);
        Ok(self)
    }

    /// Reconstructions x̃, shaped exactly like the real sequences.
    pub fn with_reconstructions(
        mut self,
        x_tilde: Vec<Tensor>,
    ) -> Result<SequenceBatch, TimeGanError> {
        let x = self
            .sequences
            .as_ref()
            .ok_or(TimeGanError::MissingField {
                field: "sequences",
            })?;
        if x_tilde.len() != x.len() || x_tilde.iter().zip(x).any(|(a, b)| a.shape() != b.shape()) {
            return Err(TimeGanError::InconsistentBatch {
                what: "reconstructions",
            });
        }
        self.reconstructions = Some(x_tilde);
        Ok(self)
    }

    /// Static features s and their reconstructions s̃, one row per item.
    pub fn with_statics(
        mut self,
        s: Tensor,
        s_tilde: Tensor,
    ) -> Result<SequenceBatch, TimeGanError> {
        if s.shape() != s_tilde.shape() {
            return Err(TimeGanError::InconsistentBatch { what: "statics" });
        }
        if self.items().is_some_and(|n| n != s.rows()) {
            return Err(TimeGanError::InconsistentBatch { what: "statics" });
        }
        self.statics = Some(s);
        self.static_reconstructions = Some(s_tilde);
        Ok(self)
    }

    /// Real-data latents h, one [steps, hidden] tensor per item.
    pub fn with_latents(mut self, h: Vec<Tensor>) -> Result<SequenceBatch, TimeGanError> {
        check_uniform(&h, "latents")?;
        self.check_sizes(h.len(), h[0].rows(), "latents")?;
        self.latents = Some(h);
        Ok(self)
    }

    /// Supervisor predictions aligned with the latents; the index-0 entry is
    /// ignored by the loss (no predecessor to predict from).
    pub fn with_supervised(mut self, sup: Vec<Tensor>) -> Result<SequenceBatch, TimeGanError> {
        let h = self.latents.as_ref().ok_or(TimeGanError::MissingField {
            field: "latents",
        })?;
        if sup.len() != h.len() || sup.iter().zip(h).any(|(a, b)| a.shape() != b.shape()) {
            return Err(TimeGanError::InconsistentBatch { what: "supervised" });
        }
        self.supervised = Some(sup);
        Ok(self)
    }
}

/// Per-row L2 norms of the difference between two [batch, n] nodes.
fn l2_rows(tape: &mut Tape, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
    let diff = tape.sub(a, b)?;
    let sq = tape.square(diff)?;
    let sums = tape.row_sum(sq)?;
    tape.sqrt(sums)
}

/// E over items of ‖s−s̃‖₂ + Σ_t ‖x_t−x̃_t‖₂, as tape nodes. `real` and
/// `recon` are per-step [items, n] nodes; gradients flow into both sides.
pub fn recon_loss_node(
    tape: &mut Tape,
    real: &[NodeId],
    recon: &[NodeId],
    statics: Option<(NodeId, NodeId)>,
) -> Result<NodeId, NumericsError> {
    let mut total = match statics {
        Some((s, s_tilde)) => Some(l2_rows(tape, s, s_tilde)?),
        None => None,
    };
    for (&x, &x_tilde) in real.iter().zip(recon) {
        let norms = l2_rows(tape, x, x_tilde)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, norms)?,
            None => norms,
        });
    }
    let total = total.ok_or(NumericsError::EmptyInput { op: "loss accumulation" })?;
    tape.mean(total)
}

/// E over items of Σ ‖target − prediction‖₂ for already-aligned step pairs.
pub fn sup_loss_node(
    tape: &mut Tape,
    targets: &[NodeId],
    predictions: &[NodeId],
) -> Result<NodeId, NumericsError> {
    let mut total = None;
    for (&h, &p) in targets.iter().zip(predictions) {
        let norms = l2_rows(tape, h, p)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, norms)?,
            None => norms,
        });
    }
    let total = total.ok_or(NumericsError::EmptyInput { op: "loss accumulation" })?;
    tape.mean(total)
}

/// E over items of Σ_t log(score) (or log(1−score)), clamping scores away
/// from {0,1} first. Scores are per-step [batch, 1] nodes.
pub fn log_score_node(
    tape: &mut Tape,
    scores: &[NodeId],
    complement: bool,
) -> Result<NodeId, NumericsError> {
    let mut total = None;
    for &s in scores {
        let clamped = tape.clamp(s, SCORE_FLOOR, 1.0 - SCORE_FLOOR)?;
        let arg = if complement {
            tape.affine(clamped, -1.0, 1.0)?
        } else {
            clamped
        };
        let logs = tape.ln(arg)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, logs)?,
            None => logs,
        });
    }
    let total = total.ok_or(NumericsError::EmptyInput { op: "loss accumulation" })?;
    tape.mean(total)
}

/// Turns per-item [steps, n] tensors into one [items, n] leaf per step.
fn time_major_leaves(tape: &mut Tape, items: &[Tensor]) -> Result<Vec<NodeId>, NumericsError> {
    let (steps, cols) = (items[0].rows(), items[0].cols());
    (0..steps)
        .map(|t| {
            let slab = Tensor::from_fn(&[items.len(), cols], |i| {
                items[i / cols].at2(t, i % cols)
            });
            tape.leaf(slab)
        })
        .collect()
}

/// Reconstruction loss: E[‖s−s̃‖₂ + Σ_t ‖x_t−x̃_t‖₂] with plain (unsquared)
/// L2 norms; the static term is zero when the batch has no static features.
pub fn reconstruction_loss(batch: &SequenceBatch) -> Result<f64, TimeGanError> {
    let x = batch.sequences.as_ref().ok_or(TimeGanError::MissingField {
        field: "sequences",
    })?;
    let x_tilde = batch
        .reconstructions
        .as_ref()
        .ok_or(TimeGanError::MissingField {
            field: "reconstructions",
        })?;
    let mut tape = Tape::new();
    let real = time_major_leaves(&mut tape, x)?;
    let recon = time_major_leaves(&mut tape, x_tilde)?;
    let statics = match (&batch.statics, &batch.static_reconstructions) {
        (Some(s), Some(s_tilde)) => {
            Some((tape.leaf(s.clone())?, tape.leaf(s_tilde.clone())?))
        }
        _ => None,
    };
    let loss = recon_loss_node(&mut tape, &real, &recon, statics)?;
    Ok(tape.value(loss).scalar_value())
}

/// Supervised loss: E[Σ_t ‖h_t − prediction_t‖₂] over t ≥ 2; the first step
/// has no predecessor and is excluded.
pub fn supervised_loss(batch: &SequenceBatch) -> Result<f64, TimeGanError> {
    let h = batch.latents.as_ref().ok_or(TimeGanError::MissingField {
        field: "latents",
    })?;
    let sup = batch.supervised.as_ref().ok_or(TimeGanError::MissingField {
        field: "supervised",
    })?;
    if h[0].rows() < 2 {
        return Err(TimeGanError::InconsistentBatch {
            what: "latents shorter than two steps",
        });
    }
    let mut tape = Tape::new();
    let targets = time_major_leaves(&mut tape, h)?;
    let predictions = time_major_leaves(&mut tape, sup)?;
    let loss = sup_loss_node(&mut tape, &targets[1..], &predictions[1..])?;
    Ok(tape.value(loss).scalar_value())
}

/// Adversarial objective: E_real[Σ_t log y_t] + E_fake[Σ_t log(1−ŷ_t)].
/// Scores are [items, steps] tensors (include a static column if one
/// exists); each entry is clamped into (0,1) before the logarithm. The
/// discriminator maximizes this; generator updates use its own sign
/// convention inside the trainer.
pub fn unsupervised_loss(
    real_scores: &Tensor,
    fake_scores: &Tensor,
) -> Result<f64, TimeGanError> {
    if real_scores.is_empty() || fake_scores.is_empty() {
        return Err(TimeGanError::InconsistentBatch { what: "scores" });
    }
    let mut tape = Tape::new();
    let real = tape.leaf(real_scores.clone())?;
    let fake = tape.leaf(fake_scores.clone())?;
    let real_term = log_score_node(&mut tape, &[real], false)?;
    let fake_term = log_score_node(&mut tape, &[fake], true)?;
    let loss = tape.add(real_term, fake_term)?;
    Ok(tape.value(loss).scalar_value())
}

/// Phase schedule and loss mix; defaults follow common sequence-GAN
/// practice at desk scale.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TimeGanTrainConfig {
    pub embedding_steps: usize,
    pub supervised_steps: usize,
    pub joint_steps: usize,
    /// Weight of the supervised loss inside the joint generator objective.
    pub eta: f64,
    /// Weight of the reconstruction loss inside the joint generator objective.
    pub recon_weight: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for TimeGanTrainConfig {
    fn default() -> TimeGanTrainConfig {
        TimeGanTrainConfig {
            embedding_steps: 500,
            supervised_steps: 500,
            joint_steps: 1800,
            eta: 10.0,
            recon_weight: 10.0,
            learning_rate: 3e-4,
            batch_size: 32,
            hidden: 24,
            seed: 0,
        }
    }
}

impl TimeGanTrainConfig {
    fn validate(&self) -> Result<(), TimeGanError> {
        let positive: [(&'static str, f64); 3] = [
            ("learning_rate", self.learning_rate),
            ("batch_size", self.batch_size as f64),
            ("hidden", self.hidden as f64),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(TimeGanError::InvalidConfig { name, value });
            }
        }
        for (name, value) in [("eta", self.eta), ("recon_weight", self.recon_weight)] {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(TimeGanError::InvalidConfig { name, value });
            }
        }
        Ok(())
    }
}

/// Trained model plus per-step loss traces for each phase (the joint phase
/// records the generator-side and discriminator-side objectives separately).
#[derive(Debug)]
pub struct TrainedTimeGan {
    pub model: TimeGanModel,
    pub embedding_losses: Vec<f64>,
    pub supervised_losses: Vec<f64>,
    pub joint_generator_losses: Vec<f64>,
    pub joint_discriminator_losses: Vec<f64>,
}

struct NetOptimizer {
    states: Vec<AdamState>,
}

impl NetOptimizer {
    fn new(net: &RecurrentNet) -> NetOptimizer {
        NetOptimizer {
            states: net.params.iter().map(|p| AdamState::new(p.shape())).collect(),
        }
    }

    fn apply(
        &mut self,
        net: &mut RecurrentNet,
        recorded: &RecordedNet,
        grads: &Gradients,
        cfg: &AdamConfig,
    ) -> Result<(), NumericsError> {
        for ((param, state), id) in net
            .params
            .iter_mut()
            .zip(&mut self.states)
            .zip(&recorded.ids)
        {
            let g = grads.get_or_zero(*id, param.shape());
            adam_step(param, &g, state, cfg)?;
        }
        Ok(())
    }
}

/// Draws a batch of windows and lays it out time-major on the tape.
fn batch_leaves(
    tape: &mut Tape,
    windows: &WindowSet,
    indices: &[usize],
) -> Result<Vec<NodeId>, NumericsError> {
    let (steps, cols) = (windows.window_length(), windows.feature_count());
    let all = windows.windows();
    (0..steps)
        .map(|t| {
            let slab = Tensor::from_fn(&[indices.len(), cols], |i| {
                all[indices[i / cols]].at2(t, i % cols)
            });
            tape.leaf(slab)
        })
        .collect()
}

fn noise_leaves(
    tape: &mut Tape,
    rng: &mut Prng,
    steps: usize,
    batch: usize,
    features: usize,
) -> Result<Vec<NodeId>, NumericsError> {
    (0..steps)
        .map(|_| {
            let z = Tensor::from_fn(&[batch, features], |_| rng.uniform());
            tape.leaf(z)
        })
        .collect()
}

/// Three-phase trainer: (1) embedder+recovery on the reconstruction loss,
/// (2) supervisor+embedder on the supervised loss, (3) alternating
/// generator-side (adversarial + η·supervised + reconstruction) and
/// discriminator-side updates. Deterministic for a fixed seed.
pub fn train_timegan(
    windows: &WindowSet,
    cfg: &TimeGanTrainConfig,
) -> Result<TrainedTimeGan, TimeGanError> {
    cfg.validate()?;
    if windows.is_empty() {
        return Err(TimeGanError::NoWindows);
    }
    if !windows.is_normalized() {
        return Err(TimeGanError::NotNormalized);
    }
    if windows.partition() == Partition::Test {
        return Err(TimeGanError::TestDataInTraining);
    }
    if cfg.joint_steps > 0 && cfg.embedding_steps == 0 {
        return Err(TimeGanError::JointBeforeEmbedding);
    }

    let features = windows.feature_count();
    let seq_len = windows.window_length();
    let n = windows.len();
    let batch = cfg.batch_size.min(n);
    let root = Prng::new(cfg.seed);
    let mut model = TimeGanModel::new(features, cfg.hidden, root.substream("init").next_seed());
    let adam_cfg = AdamConfig::with_learning_rate(cfg.learning_rate);
    let mut opts: Vec<NetOptimizer> = model.nets().into_iter().map(NetOptimizer::new).collect();

    let mut embedding_losses = Vec::with_capacity(cfg.embedding_steps);
    let mut rng = root.substream("embedding");
    for step in 0..cfg.embedding_steps {
        let indices = rng.sample_indices(n, batch);
        let mut run = || -> Result<f64, NumericsError> {
            let mut tape = Tape::new();
            let rec_e = model.embedder.record(&mut tape)?;
            let rec_r = model.recovery.record(&mut tape)?;
            let x = batch_leaves(&mut tape, windows, &indices)?;
            let h = run_net(&mut tape, &rec_e, &x, batch)?;
            let x_tilde = run_net(&mut tape, &rec_r, &h, batch)?;
            let loss = recon_loss_node(&mut tape, &x, &x_tilde, None)?;
            let grads = backward_gradients(&tape, loss)?;
            opts[0].apply(&mut model.embedder, &rec_e, &grads, &adam_cfg)?;
            opts[1].apply(&mut model.recovery, &rec_r, &grads, &adam_cfg)?;
            Ok(tape.value(loss).scalar_value())
        };
        let loss = run().map_err(|cause| TimeGanError::Diverged {
            phase: "embedding",
            step,
            cause,
        })?;
        embedding_losses.push(loss);
    }

    let mut supervised_losses = Vec::with_capacity(cfg.supervised_steps);
    let mut rng = root.substream("supervised");
    for step in 0..cfg.supervised_steps {
        let indices = rng.sample_indices(n, batch);
        let mut run = || -> Result<f64, NumericsError> {
            let mut tape = Tape::new();
            let rec_e = model.embedder.record(&mut tape)?;
            let rec_s = model.supervisor.record(&mut tape)?;
            let x = batch_leaves(&mut tape, windows, &indices)?;
            let h = run_net(&mut tape, &rec_e, &x, batch)?;
            let predictions = run_net(&mut tape, &rec_s, &h[..seq_len - 1], batch)?;
            let loss = sup_loss_node(&mut tape, &h[1..], &predictions)?;
            let grads = backward_gradients(&tape, loss)?;
            opts[3].apply(&mut model.supervisor, &rec_s, &grads, &adam_cfg)?;
            opts[0].apply(&mut model.embedder, &rec_e, &grads, &adam_cfg)?;
            Ok(tape.value(loss).scalar_value())
        };
        let loss = run().map_err(|cause| TimeGanError::Diverged {
            phase: "supervised",
            step,
            cause,
        })?;
        supervised_losses.push(loss);
    }

    let mut joint_generator_losses = Vec::with_capacity(cfg.joint_steps);
    let mut joint_discriminator_losses = Vec::with_capacity(cfg.joint_steps);
    let mut rng = root.substream("joint");
    for step in 0..cfg.joint_steps {
        // Generator side: adversarial term on synthetic latents plus the
        // supervised and reconstruction anchors; updates g, g_X, e, r.
        let indices = rng.sample_indices(n, batch);
        let mut gen_side = || -> Result<f64, NumericsError> {
            let mut tape = Tape::new();
            let rec_e = model.embedder.record(&mut tape)?;
            let rec_r = model.recovery.record(&mut tape)?;
            let rec_g = model.generator.record(&mut tape)?;
            let rec_s = model.supervisor.record(&mut tape)?;
            let rec_d = model.discriminator.record(&mut tape)?;
            let x = batch_leaves(&mut tape, windows, &indices)?;
            let z = noise_leaves(&mut tape, &mut rng, seq_len, batch, features)?;

            let h = run_net(&mut tape, &rec_e, &x, batch)?;
            let x_tilde = run_net(&mut tape, &rec_r, &h, batch)?;
            let open_loop = run_net(&mut tape, &rec_g, &z, batch)?;
            let h_hat = run_net(&mut tape, &rec_s, &open_loop, batch)?;
            let fake_scores = run_net(&mut tape, &rec_d, &h_hat, batch)?;
            let predictions = run_net(&mut tape, &rec_s, &h[..seq_len - 1], batch)?;

            // Non-saturating adversarial term: minimize −E[Σ log ŷ].
            let log_fake = log_score_node(&mut tape, &fake_scores, false)?;
            let adv = tape.scale(log_fake, -1.0)?;
            let sup = sup_loss_node(&mut tape, &h[1..], &predictions)?;
            let sup_scaled = tape.scale(sup, cfg.eta)?;
            let recon = recon_loss_node(&mut tape, &x, &x_tilde, None)?;
            let recon_scaled = tape.scale(recon, cfg.recon_weight)?;
            let partial = tape.add(adv, sup_scaled)?;
            let loss = tape.add(partial, recon_scaled)?;

            let grads = backward_gradients(&tape, loss)?;
            opts[2].apply(&mut model.generator, &rec_g, &grads, &adam_cfg)?;
            opts[3].apply(&mut model.supervisor, &rec_s, &grads, &adam_cfg)?;
            opts[0].apply(&mut model.embedder, &rec_e, &grads, &adam_cfg)?;
            opts[1].apply(&mut model.recovery, &rec_r, &grads, &adam_cfg)?;
            Ok(tape.value(loss).scalar_value())
        };
        let loss = gen_side().map_err(|cause| TimeGanError::Diverged {
            phase: "joint-generator",
            step,
            cause,
        })?;
        joint_generator_losses.push(loss);

        // Discriminator side: maximize the adversarial objective, so the
        // minimized quantity is its negation; updates d only.
        let indices = rng.sample_indices(n, batch);
        let mut disc_side = || -> Result<f64, NumericsError> {
            let mut tape = Tape::new();
            let rec_e = model.embedder.record(&mut tape)?;
            let rec_g = model.generator.record(&mut tape)?;
            let rec_s = model.supervisor.record(&mut tape)?;
            let rec_d = model.discriminator.record(&mut tape)?;
            let x = batch_leaves(&mut tape, windows, &indices)?;
            let z = noise_leaves(&mut tape, &mut rng, seq_len, batch, features)?;

            let h = run_net(&mut tape, &rec_e, &x, batch)?;
            let open_loop = run_net(&mut tape, &rec_g, &z, batch)?;
            let h_hat = run_net(&mut tape, &rec_s, &open_loop, batch)?;
            let real_scores = run_net(&mut tape, &rec_d, &h, batch)?;
            let fake_scores = run_net(&mut tape, &rec_d, &h_hat, batch)?;

            let real_term = log_score_node(&mut tape, &real_scores, false)?;
            let fake_term = log_score_node(&mut tape, &fake_scores, true)?;
            let objective = tape.add(real_term, fake_term)?;
            let loss = tape.scale(objective, -1.0)?;

            let grads = backward_gradients(&tape, loss)?;
            opts[4].apply(&mut model.discriminator, &rec_d, &grads, &adam_cfg)?;
            Ok(tape.value(loss).scalar_value())
        };
        let loss = disc_side().map_err(|cause| TimeGanError::Diverged {
            phase: "joint-discriminator",
            step,
            cause,
        })?;
        joint_discriminator_losses.push(loss);
    }

    Ok(TrainedTimeGan {
        model,
        embedding_losses,
        supervised_losses,
        joint_generator_losses,
        joint_discriminator_losses,
    })
}

/// Discriminator scores for real windows: embed, score, return one row per
/// window and one column per step. Untrained models score near 0.5.
pub fn score_windows(
    model: &TimeGanModel,
    windows: &WindowSet,
) -> Result<Tensor, TimeGanError> {
    if windows.is_empty() {
        return Err(TimeGanError::NoWindows);
    }
    let batch = windows.len();
    let mut tape = Tape::new();
    let rec_e = model.embedder.record(&mut tape)?;
    let rec_d = model.discriminator.record(&mut tape)?;
    let indices: Vec<usize> = (0..batch).collect();
    let x = batch_leaves(&mut tape, windows, &indices)?;
    let h = run_net(&mut tape, &rec_e, &x, batch)?;
    let scores = run_net(&mut tape, &rec_d, &h, batch)?;
    Ok(Tensor::from_fn(&[batch, windows.window_length()], |i| {
        let (row, t) = (i / windows.window_length(), i % windows.window_length());
        tape.value(scores[t]).at2(row, 0)
    }))
}

/// Sample normalized windows: per-step noise through generator, supervisor,
/// and recovery, clipped to [0,1]. Window i draws from its own substream, so
/// outputs are independent of batching.
pub fn generate_windows_gan(
    model: &TimeGanModel,
    n_windows: usize,
    steps: usize,
    seed: u64,
) -> Result<Vec<Tensor>, TimeGanError> {
    if n_windows == 0 {
        return Ok(Vec::new());
    }
    let root = Prng::new(seed);
    let mut tape = Tape::new();
    let rec_g = model.generator.record(&mut tape)?;
    let rec_s = model.supervisor.record(&mut tape)?;
    let rec_r = model.recovery.record(&mut tape)?;
    let mut streams: Vec<Prng> = (0..n_windows)
        .map(|i| root.substream(&format!("window-{i}")))
        .collect();
    let z: Vec<NodeId> = (0..steps)
        .map(|_| {
            let mut slab = Tensor::zeros(&[n_windows, model.features]);
            for (row, stream) in streams.iter_mut().enumerate() {
                for c in 0..model.features {
                    slab.data_mut()[row * model.features + c] = stream.uniform();
                }
            }
            tape.leaf(slab)
        })
        .collect::<Result<_, _>>()?;
    let open_loop = run_net(&mut tape, &rec_g, &z, n_windows)?;
    let h_hat = run_net(&mut tape, &rec_s, &open_loop, n_windows)?;
    let decoded = run_net(&mut tape, &rec_r, &h_hat, n_windows)?;
    Ok((0..n_windows)
        .map(|row| {
            Tensor::from_fn(&[steps, model.features], |i| {
                let (t, c) = (i / model.features, i % model.features);
                tape.value(decoded[t]).at2(row, c).clamp(0.0, 1.0)
            })
        })
        .collect())
}

/// Generate synthetic rows: sampled windows are flattened, denormalized, and
/// stamped with synthetic hourly timestamps.
pub fn generate_rows_gan(
    model: &TimeGanModel,
    n_windows: usize,
    params: &NormalizationParams,
    seed: u64,
) -> Result<TimeSeriesDataset, TimeGanError> {
    if n_windows == 0 {
        return Ok(TimeSeriesDataset::from_rows(
            Vec::new(),
            Provenance::Timegan,
        ));
    }
    let windows = generate_windows_gan(model, n_windows, GENERATED_STEPS, seed)?;
    let set = WindowSet::new(windows, Provenance::Timegan, Partition::Train, true)?;
    Ok(dataset_from_windows(&set, params, Provenance::Timegan)?)
}
