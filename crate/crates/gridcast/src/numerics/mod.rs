//! Dense tensor arithmetic, reverse-mode automatic differentiation, Adam
//! optimization, seeded randomness, and discrete Fourier transforms.
//!
//! The tape ([`Tape`]) records eagerly-evaluated primitive ops; a backward
//! pass over the recording yields gradients for every leaf. Gradient
//! correctness is guarded by [`finite_difference_check`].

mod adam;
mod fft;
mod gradcheck;
mod rng;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use fft::{dft, inverse_dft, Spectrum};
pub use gradcheck::{finite_difference_check, finite_difference_error};
pub use rng::{derive_seed, Prng};
pub use tape::{backward_gradients, Gradients, NodeId, Tape};
pub use tensor::Tensor;

use thiserror::Error;

/// Errors from tensor, tape, and optimizer operations.
#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("shape {shape:?} does not hold {len} elements")]
    ShapeLenMismatch { shape: Vec<usize>, len: usize },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("empty input to {op}")]
    EmptyInput { op: &'static str },
    #[error("backward requires a scalar output, got shape {shape:?}")]
    NonScalarOutput { shape: Vec<usize> },
    #[error("backward on an empty tape")]
    EmptyTape,
    #[error("invalid hyperparameter {name}: {value}")]
    InvalidHyperParameter { name: &'static str, value: f64 },
    #[error("finite-difference step must be positive, got {0}")]
    InvalidStep(f64),
}
