//! Deterministic simulator and library for privacy-aware, cross-silo
//! federated training of an ECG page segmenter, plus the calibration-aware
//! page-to-12-lead-signal digitizer and the statistics used to compare
//! training methods.
//!
//! Module map:
//!
//! * [`raster`]: image primitives (normalization, rotation, blur, noise,
//!   block-DCT artifacts, morphology, grid and skew estimation, PGM I/O).
//! * [`synthgen`]: synthetic 12-lead waveforms, page rendering, per-site
//!   perturbation profiles, dataset builds.
//! * [`segnet`]: the small encoder–decoder segmenter with hand-written
//!   reverse-mode gradients, compound BCE + soft-Dice loss, AdamW.
//! * [`secagg`]: clipping, fixed-point ring encoding, pairwise masks.
//! * [`dpcore`]: central Gaussian mechanism and Rényi accounting.
//! * [`fedcore`]: rounds, FedAvg / FedProx / FedAdam, centralized baseline.
//! * [`digitize`]: preprocessing, tiled inference, mask cleanup,
//!   centerline tracing, vectorization.
//! * [`evalstats`]: mask and signal metrics, BCa bootstrap, Hedges' g,
//!   paired t-tests with Holm correction.
//! * [`harness`]: configuration, run directories and the command entry
//!   points used by the `ecgfed` binary.

pub mod digitize;
pub mod dpcore;
pub mod error;
pub mod evalstats;
pub mod fedcore;
pub mod harness;
pub mod raster;
pub mod rng;
pub mod secagg;
pub mod segnet;
pub mod synthgen;

pub use error::{Error, Result};

// The guide's code blocks run as doc-tests, one module per chapter.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/synthetic-data.md")]
    mod synthetic_data {}
    #[doc = include_str!("../../../book/src/segmenter.md")]
    mod segmenter {}
    #[doc = include_str!("../../../book/src/federation.md")]
    mod federation {}
    #[doc = include_str!("../../../book/src/privacy.md")]
    mod privacy {}
    #[doc = include_str!("../../../book/src/digitization.md")]
    mod digitization {}
    #[doc = include_str!("../../../book/src/statistics.md")]
    mod statistics {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
