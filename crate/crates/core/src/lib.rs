//! Reduced-bias estimation for structural equation models.
//!
//! This crate fits linear structural equation models (confirmatory factor /
//! path models with optional mean structures) by maximum likelihood and by
//! bias-reducing refinements of it, and ships the machinery needed to study
//! those estimators by simulation:
//!
//! - [`model`] — model specification (pattern matrices with fixed, free and
//!   shared cells), parameter packing, and implied moments μ(ϑ), Σ(ϑ).
//! - [`likelihood`] — multivariate-normal log-likelihood, analytic scores,
//!   observed information, and sandwich standard errors.
//! - [`estimators`] — maximum likelihood, explicit and implicit reduced-bias
//!   estimators, bootstrap and jackknife bias corrections, and restricted
//!   maximum likelihood for random-coefficient growth models.
//! - [`datagen`] — simulation of multivariate data with controlled skewness
//!   and excess kurtosis via polynomial transforms of normals.
//! - [`simstudy`] — a seeded, resumable simulation harness computing bias,
//!   RMSE, coverage and acceptance-rate summaries over a grid of settings.
//!
//! The `rbsem` binary exposes fitting, data simulation and the study harness
//! on the command line.

pub mod data;
pub mod datagen;
pub mod error;
pub mod estimators;
pub mod likelihood;
pub mod model;
pub mod numdiff;
pub mod optim;
pub mod simstudy;

// Parameter vectors and moment matrices in the public API are nalgebra
// types; re-export them so downstream crates need not pin the same version.
pub use nalgebra::{DMatrix, DVector};

/// Deterministic substream derivation: every resample, restart and
/// simulation replication hashes (seed, tag) through SplitMix64 so streams
/// never collide and never depend on scheduling order.
pub(crate) mod seeds {
    pub fn mix(seed: u64, tag: u64) -> u64 {
        let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
}

pub use data::{DataSummary, Dataset};
pub use error::{Error, Result};
pub use model::{MatrixId, ModelSpec, ParamLabel};
