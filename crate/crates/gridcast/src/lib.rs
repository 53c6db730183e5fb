//! Small-sample load forecasting toolkit.
//!
//! Takes a week of hourly household load + weather measurements and runs the
//! full augmentation-to-dispatch workflow on a desk-scale CPU budget:
//!
//! - [`dataset`]: CSV ingestion, min-max normalization, chronological
//!   splitting, daily window extraction, and a replication baseline.
//! - [`diffusion`]: a denoising-diffusion generator over daily windows
//!   (forward noising, trained denoiser, reverse sampler).
//! - [`timegan`]: an adversarial sequence generator with embedder, recovery,
//!   generator, supervisor, and discriminator networks trained in phases.
//! - [`forecast`]: extremely randomized trees, random forests, and gradient
//!   boosted trees mapping weather features to load, with an evaluation
//!   harness comparing original / replicated / augmented training sets.
//! - [`fidelity`]: PCA projections, kernel density estimates, and per-column
//!   statistics that quantify how closely generated data matches the source.
//! - [`dispatch`]: the 24-hour grid-vs-PV cost minimization with a
//!   brute-force optimality validator.
//! - [`pipeline`]: end-to-end orchestration with checkpoints, plots, and a
//!   checksummed artifact manifest.
//!
//! Everything is driven by a single 64-bit seed through a counter-based
//! PRNG ([`numerics::Prng`]); identical seeds give bit-identical artifacts
//! on a given platform. All arithmetic is `f64`.

pub mod checkpoint;
pub mod dataset;
pub mod diffusion;
pub mod dispatch;
pub mod fidelity;
pub mod forecast;
pub mod numerics;
pub mod pipeline;
pub mod plot;
pub mod timegan;
