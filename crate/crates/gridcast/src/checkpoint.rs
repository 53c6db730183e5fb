//! Versioned binary model container. Layout:
//!
//! ```text
//! magic "GCKP" | version u32 | kind u8 | seed u64
//! header_len u32 | header JSON | payload_len u64 | payload | sha256
//! ```
//!
//! All integers and floats are little-endian. The header carries the
//! hyperparameters needed to rebuild the model skeleton; the payload carries
//! bulk parameters (tensor entries as raw f64, trees in preorder). The
//! trailing SHA-256 covers every preceding byte, so corruption and
//! truncation surface as checksum failures before any parsing happens.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::diffusion::{
    build_schedule, DenoiserArch, DenoiserModel, DiffusionError, NoiseSchedule,
};
use crate::forecast::{EnsembleKind, EnsembleModel, ForecastError, TreeNode};
use crate::numerics::{NumericsError, Tensor};
use crate::timegan::{TimeGanError, TimeGanModel};

const MAGIC: &[u8; 4] = b"GCKP";
const VERSION: u32 = 1;
const SHA_LEN: usize = 32;
/// magic + version + kind + seed + header_len + payload_len + sha256.
const MIN_LEN: usize = 4 + 4 + 1 + 8 + 4 + 8 + SHA_LEN;
/// Trees can't get deeper than their training-row count; anything past this
/// is a corrupt or hostile file, not a model.
const MAX_TREE_DEPTH: usize = 10_000;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path} is too short to be a checkpoint")]
    Truncated { path: PathBuf },
    #[error("{path}: checksum mismatch (file corrupt or truncated)")]
    ChecksumMismatch { path: PathBuf },
    #[error("{path} is not a checkpoint (bad magic)")]
    NotACheckpoint { path: PathBuf },
    #[error("checkpoint version {found} is not supported (expected {supported})")]
    VersionMismatch { found: u32, supported: u32 },
    #[error("unknown model-kind tag {tag}")]
    UnknownKind { tag: u8 },
    #[error("checkpoint holds a {found} model, expected {expected}")]
    WrongKind { expected: ModelKind, found: ModelKind },
    #[error("corrupt header: {reason}")]
    CorruptHeader { reason: String },
    #[error("corrupt payload: {reason}")]
    CorruptPayload { reason: String },
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    TimeGan(#[from] TimeGanError),
    #[error(transparent)]
    Forecast(#[from] ForecastError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Diffusion,
    TimeGan,
    Ensemble,
}

impl ModelKind {
    fn tag(self) -> u8 {
        match self {
            ModelKind::Diffusion => 1,
            ModelKind::TimeGan => 2,
            ModelKind::Ensemble => 3,
        }
    }

    fn from_tag(tag: u8) -> Result<ModelKind, CheckpointError> {
        match tag {
            1 => Ok(ModelKind::Diffusion),
            2 => Ok(ModelKind::TimeGan),
            3 => Ok(ModelKind::Ensemble),
            _ => Err(CheckpointError::UnknownKind { tag }),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Diffusion => "diffusion",
            ModelKind::TimeGan => "timegan",
            ModelKind::Ensemble => "ensemble",
        })
    }
}

struct RawCheckpoint {
    kind: ModelKind,
    seed: u64,
    header: Vec<u8>,
    payload: Vec<u8>,
}

fn write_container(
    path: &Path,
    kind: ModelKind,
    seed: u64,
    header: &[u8],
    payload: &[u8],
) -> Result<(), CheckpointError> {
    let mut buf = Vec::with_capacity(MIN_LEN + header.len() + payload.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(kind.tag());
    buf.extend_from_slice(&seed.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(header);
    buf.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    buf.extend_from_slice(payload);
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    std::fs::write(path, buf).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_container(path: &Path) -> Result<RawCheckpoint, CheckpointError> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if bytes.len() < MIN_LEN {
        return Err(CheckpointError::Truncated {
            path: path.to_path_buf(),
        });
    }
    let (body, trailer) = bytes.split_at(bytes.len() - SHA_LEN);
    if Sha256::digest(body).as_slice() != trailer {
        return Err(CheckpointError::ChecksumMismatch {
            path: path.to_path_buf(),
        });
    }
    // Checksum verified: the writer's layout invariants hold below.
    let truncated = || CheckpointError::Truncated {
        path: path.to_path_buf(),
    };
    if &body[..4] != MAGIC {
        return Err(CheckpointError::NotACheckpoint {
            path: path.to_path_buf(),
        });
    }
    let version = u32::from_le_bytes(body[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: version,
            supported: VERSION,
        });
    }
    let kind = ModelKind::from_tag(body[8])?;
    let seed = u64::from_le_bytes(body[9..17].try_into().unwrap());
    let header_len = u32::from_le_bytes(body[17..21].try_into().unwrap()) as usize;
    let header_end = 21usize.checked_add(header_len).ok_or_else(truncated)?;
    if body.len() < header_end + 8 {
        return Err(truncated());
    }
    let header = body[21..header_end].to_vec();
    let payload_len =
        u64::from_le_bytes(body[header_end..header_end + 8].try_into().unwrap()) as usize;
    let payload_end = (header_end + 8).checked_add(payload_len).ok_or_else(truncated)?;
    if body.len() != payload_end {
        return Err(truncated());
    }
    let payload = body[header_end + 8..].to_vec();
    Ok(RawCheckpoint {
        kind,
        seed,
        header,
        payload,
    })
}

fn open_as(path: &Path, expected: ModelKind) -> Result<RawCheckpoint, CheckpointError> {
    let raw = read_container(path)?;
    if raw.kind != expected {
        return Err(CheckpointError::WrongKind {
            expected,
            found: raw.kind,
        });
    }
    Ok(raw)
}

/// Model kind stored at `path`, for dispatching without a full load.
pub fn peek_kind(path: &Path) -> Result<ModelKind, CheckpointError> {
    Ok(read_container(path)?.kind)
}

fn decode_header<'de, T: Deserialize<'de>>(header: &'de [u8]) -> Result<T, CheckpointError> {
    serde_json::from_slice(header).map_err(|e| CheckpointError::CorruptHeader {
        reason: e.to_string(),
    })
}

fn encode_header<T: Serialize>(header: &T) -> Vec<u8> {
    serde_json::to_vec(header).expect("headers are plain structs")
}

fn push_tensor(payload: &mut Vec<u8>, tensor: &Tensor) {
    for v in tensor.data() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
}

/// Sequential payload reader; every branch checks bounds explicitly so a
/// short payload is reported instead of panicking.
struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8]) -> Cursor<'a> {
        Cursor { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let slice = &self.buf[self.pos..end];
                self.pos = end;
                Ok(slice)
            }
            None => Err(CheckpointError::CorruptPayload {
                reason: format!("wanted {n} bytes at offset {}", self.pos),
            }),
        }
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn tensor(&mut self, shape: &[usize]) -> Result<Tensor, CheckpointError> {
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(self.f64()?);
        }
        Ok(Tensor::from_vec(shape, data)?)
    }

    fn finish(&self) -> Result<(), CheckpointError> {
        if self.pos != self.buf.len() {
            return Err(CheckpointError::CorruptPayload {
                reason: format!("{} trailing bytes", self.buf.len() - self.pos),
            });
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct DiffusionHeader {
    window_steps: usize,
    channels: usize,
    embed_dim: usize,
    hidden: usize,
    trend_degree: usize,
    diffusion_steps: usize,
    beta_start: f64,
    beta_end: f64,
    shapes: Vec<Vec<usize>>,
}

pub fn save_diffusion(
    path: &Path,
    model: &DenoiserModel,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<(), CheckpointError> {
    let arch = model.arch();
    let header = DiffusionHeader {
        window_steps: arch.window_steps,
        channels: arch.channels,
        embed_dim: arch.embed_dim,
        hidden: arch.hidden,
        trend_degree: arch.trend_degree,
        diffusion_steps: schedule.steps(),
        beta_start: schedule.beta_start(),
        beta_end: schedule.beta_end(),
        shapes: model
            .param_tensors()
            .iter()
            .map(|t| t.shape().to_vec())
            .collect(),
    };
    let mut payload = Vec::new();
    for tensor in model.param_tensors() {
        push_tensor(&mut payload, tensor);
    }
    write_container(
        path,
        ModelKind::Diffusion,
        seed,
        &encode_header(&header),
        &payload,
    )
}

pub fn load_diffusion(path: &Path) -> Result<(DenoiserModel, NoiseSchedule, u64), CheckpointError> {
    let raw = open_as(path, ModelKind::Diffusion)?;
    let header: DiffusionHeader = decode_header(&raw.header)?;
    let arch = DenoiserArch {
        window_steps: header.window_steps,
        channels: header.channels,
        embed_dim: header.embed_dim,
        hidden: header.hidden,
        trend_degree: header.trend_degree,
    };
    let mut cursor = Cursor::new(&raw.payload);
    let params = header
        .shapes
        .iter()
        .map(|shape| cursor.tensor(shape))
        .collect::<Result<Vec<_>, _>>()?;
    cursor.finish()?;
    let model = DenoiserModel::from_parts(arch, params)?;
    let schedule = build_schedule(header.diffusion_steps, header.beta_start, header.beta_end)?;
    Ok((model, schedule, raw.seed))
}

#[derive(Serialize, Deserialize)]
struct TimeGanHeader {
    features: usize,
    hidden: usize,
    shapes: Vec<Vec<usize>>,
}

pub fn save_timegan(path: &Path, model: &TimeGanModel, seed: u64) -> Result<(), CheckpointError> {
    let tensors = model.param_tensors();
    let header = TimeGanHeader {
        features: model.features(),
        hidden: model.hidden(),
        shapes: tensors.iter().map(|t| t.shape().to_vec()).collect(),
    };
    let mut payload = Vec::new();
    for tensor in &tensors {
        push_tensor(&mut payload, tensor);
    }
    write_container(
        path,
        ModelKind::TimeGan,
        seed,
        &encode_header(&header),
        &payload,
    )
}

pub fn load_timegan(path: &Path) -> Result<(TimeGanModel, u64), CheckpointError> {
    let raw = open_as(path, ModelKind::TimeGan)?;
    let header: TimeGanHeader = decode_header(&raw.header)?;
    let mut cursor = Cursor::new(&raw.payload);
    let params = header
        .shapes
        .iter()
        .map(|shape| cursor.tensor(shape))
        .collect::<Result<Vec<_>, _>>()?;
    cursor.finish()?;
    let model = TimeGanModel::from_parts(header.features, header.hidden, params)?;
    Ok((model, raw.seed))
}

#[derive(Serialize, Deserialize)]
struct EnsembleHeader {
    kind: String,
    feature_count: usize,
    trees: usize,
    base_score: f64,
}

fn ensemble_kind_name(kind: EnsembleKind) -> &'static str {
    match kind {
        EnsembleKind::ExtraTrees => "extra-trees",
        EnsembleKind::RandomForest => "random-forest",
        EnsembleKind::Gbdt => "gbdt",
    }
}

fn parse_ensemble_kind(name: &str) -> Result<EnsembleKind, CheckpointError> {
    match name {
        "extra-trees" => Ok(EnsembleKind::ExtraTrees),
        "random-forest" => Ok(EnsembleKind::RandomForest),
        "gbdt" => Ok(EnsembleKind::Gbdt),
        _ => Err(CheckpointError::CorruptHeader {
            reason: format!("unknown ensemble kind {name:?}"),
        }),
    }
}

fn push_tree(payload: &mut Vec<u8>, node: &TreeNode) {
    match node {
        TreeNode::Leaf { value, samples } => {
            payload.push(0);
            payload.extend_from_slice(&value.to_le_bytes());
            payload.extend_from_slice(&(*samples as u64).to_le_bytes());
        }
        TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        } => {
            payload.push(1);
            payload.extend_from_slice(&(*feature as u32).to_le_bytes());
            payload.extend_from_slice(&threshold.to_le_bytes());
            push_tree(payload, left);
            push_tree(payload, right);
        }
    }
}

fn pop_tree(cursor: &mut Cursor<'_>, depth: usize) -> Result<TreeNode, CheckpointError> {
    if depth > MAX_TREE_DEPTH {
        return Err(CheckpointError::CorruptPayload {
            reason: format!("tree deeper than {MAX_TREE_DEPTH}"),
        });
    }
    match cursor.u8()? {
        0 => Ok(TreeNode::Leaf {
            value: cursor.f64()?,
            samples: cursor.u64()? as usize,
        }),
        1 => Ok(TreeNode::Split {
            feature: cursor.u32()? as usize,
            threshold: cursor.f64()?,
            left: Box::new(pop_tree(cursor, depth + 1)?),
            right: Box::new(pop_tree(cursor, depth + 1)?),
        }),
        tag => Err(CheckpointError::CorruptPayload {
            reason: format!("unknown node tag {tag}"),
        }),
    }
}

pub fn save_ensemble(
    path: &Path,
    model: &EnsembleModel,
    seed: u64,
) -> Result<(), CheckpointError> {
    let header = EnsembleHeader {
        kind: ensemble_kind_name(model.kind()).to_string(),
        feature_count: model.feature_count(),
        trees: model.trees().len(),
        base_score: model.base_score(),
    };
    let mut payload = Vec::new();
    for w in model.weights() {
        payload.extend_from_slice(&w.to_le_bytes());
    }
    for tree in model.trees() {
        push_tree(&mut payload, tree);
    }
    write_container(
        path,
        ModelKind::Ensemble,
        seed,
        &encode_header(&header),
        &payload,
    )
}

pub fn load_ensemble(path: &Path) -> Result<(EnsembleModel, u64), CheckpointError> {
    let raw = open_as(path, ModelKind::Ensemble)?;
    let header: EnsembleHeader = decode_header(&raw.header)?;
    let kind = parse_ensemble_kind(&header.kind)?;
    let mut cursor = Cursor::new(&raw.payload);
    let mut weights = Vec::with_capacity(header.trees);
    for _ in 0..header.trees {
        weights.push(cursor.f64()?);
    }
    let mut trees = Vec::with_capacity(header.trees);
    for _ in 0..header.trees {
        trees.push(pop_tree(&mut cursor, 0)?);
    }
    cursor.finish()?;
    let model = EnsembleModel::from_parts(kind, trees, weights, header.base_score, header.feature_count)?;
    Ok((model, raw.seed))
}
