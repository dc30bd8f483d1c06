//! Transfer learning for high-dimensional quantile regression with
//! convolution-smoothed check loss.
//!
//! The crate is organised bottom-up:
//!
//! * [`data`]: datasets, quantile levels, coefficient vectors and the plain
//!   check loss.
//! * [`smoothing`]: kernels and the convolution-smoothed loss with its gradient.
//! * [`solver`]: the l1-penalized smoothed quantile regression solver (LAMM).
//! * [`selection`]: bandwidth defaults, lambda grids, cross-validation and BIC.
//! * [`transfer`]: the two-step (transferring + debiasing) estimator.
//! * [`detection`]: transferability indices and the full detection pipeline.
//! * [`distributed`]: the communication-efficient transferring step over
//!   simulated sites.
//! * [`simulation`]: data generators and the Monte-Carlo experiment runner.
//! * [`io`]: CSV datasets, experiment config files, results and manifests.
//!
//! Independent jobs (replications, CV folds, per-source fits, per-site
//! gradients) run on rayon when the `parallel` feature is enabled (the
//! default) and sequentially otherwise. Every reduction happens in a fixed
//! order, so results are bit-identical either way.

pub mod data;
pub mod detection;
pub mod distributed;
pub mod error;
pub mod io;
pub mod par;
pub mod rng;
pub mod selection;
pub mod simulation;
pub mod smoothing;
pub mod solver;
pub mod transfer;

pub use data::{
    check_loss, empirical_check_loss, pool_datasets, CoefVector, Dataset, QuantileLevel,
};
pub use error::{Error, Result};
pub use smoothing::{Bandwidth, Kernel};
pub use solver::{fit_l1_sqr, FitConfig, SqrFit};
