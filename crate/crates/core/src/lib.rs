//! Statistical model of narrowband RSS variance caused by a person moving
//! near a radio link.
//!
//! The chain, end to end:
//!
//! 1. [`geometry`] — link/person geometry, cylinder shadow tests, and the
//!    normalized link frame used by the measurement pipeline.
//! 2. [`propagation`] — single-bounce power kernels for scattering and
//!    reflection (the scattering kernel's iso-contours are Cassini ovals).
//! 3. [`etap`] — expected total affected power as a function of the person's
//!    position: a closed form for scattering, adaptive quadrature for
//!    reflection, and grid evaluation.
//! 4. [`fading`] — Ricean envelope statistics: the K-factor, the variance of
//!    `R_dB` as a function of K, its affine fit, and the expected-log
//!    approximation error.
//! 5. [`simulator`] — a brute-force Monte Carlo oracle: Poisson scatterer
//!    fields, phase-perturbed RSS series, empirical affected power, and the
//!    ensemble regression tying variance to affected power.
//! 6. [`surface`] / [`ingest`] — grid sweeps and serialized outputs, plus
//!    ingestion of measured RSS logs into empirical variance surfaces.
//!
//! Everything randomized takes explicit seeds ([`rng`]) and produces
//! identical results regardless of worker count.

pub mod config;
pub mod error;
pub mod etap;
pub mod fading;
pub mod geometry;
pub mod ingest;
pub mod propagation;
pub mod quad;
pub mod rng;
pub mod simulator;
pub mod surface;
pub mod validate;

pub use error::{Error, Result};

/// Artifact version, embedded in every output's provenance block.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
