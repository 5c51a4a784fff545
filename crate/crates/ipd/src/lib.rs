//! Inference on predicted data: estimators that combine a small labeled
//! sample with a large sample of model predictions, plus the simulation and
//! benchmarking tools used to compare them.
//!
//! The numeric kernels are generic over [`stat_core::Real`] (`f64` or
//! `f32`); the aliases below pin the default double-precision surface that
//! the CLI and most callers use.
//!
//! Typical flow: [`dataset::load_stacked`] or [`simdat::simdat`] to get a
//! [`dataset::StackedDataset`], [`dataset::formula::parse_formula`] for the
//! outcome/covariate spec, [`methods::fit_ipd`] to estimate, and [`report`]
//! to project the fit into tidy/glance/augment form.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod methods;
pub mod report;
pub mod simdat;
pub mod stat_core;

pub use error::{IpdError, Result};

/// Default-precision fit result.
pub type Fit = methods::IpdFit<f64>;
/// Reduced-precision fit result.
pub type Fit32 = methods::IpdFit<f32>;
/// Default-precision dense matrix.
pub type Matrix = stat_core::linalg::Matrix<f64>;
/// Default-precision trained prediction rule.
pub type TrainedModel = simdat::TrainedModel<f64>;
