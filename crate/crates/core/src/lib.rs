//! Proxy-guided measurement calibration.
//!
//! A two-stage variational autoencoder recovers a content latent from proxy
//! measurements (stage 1) and, with that latent frozen, a scalar bias latent
//! from the observed outcome (stage 2). Thresholding the bias score and
//! matching biased units to unbiased neighbours in content space estimates
//! the additive reporting bias and its per-unit effects.

pub mod avae;
pub mod calibrate;
pub mod cli;
pub mod dataset;
pub mod dgp;
pub mod error;
pub mod fixtures;
pub mod identcheck;
pub mod inject;
pub mod io;
pub mod metrics;
pub mod nncore;
pub mod pipeline;
pub mod stats;
pub mod vae;
pub mod zvae;

pub use dataset::{Dataset, DatasetMeta, ProxyView};
pub use error::{Error, Result};
