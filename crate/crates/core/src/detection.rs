//! Transferable-set detection and the full pipeline built on it.
//!
//! The target is split into a training and a validation half. A benchmark
//! fit uses the training half alone; each source gets a fit on itself plus
//! the training half. The transferability index of source `k` is the
//! validation check loss of its fit minus that of the benchmark. Sources
//! whose index falls strictly below `t * max(benchmark_loss, 0.01)` are kept,
//! and the two-step estimator then runs on the full target plus those sources.

use std::collections::BTreeSet;

use crate::data::{empirical_check_loss, pool_datasets, Dataset};
use crate::error::{Error, Result};
use crate::par;
use crate::rng::{derive_seed, permutation, seeded};
use crate::selection::default_bandwidth;
use crate::smoothing::Bandwidth;
use crate::transfer::{oracle_trans_sqr, select_and_fit, TransferEstimate, TransferParams, Tuning};

/// Floor on the benchmark loss in the detection threshold.
pub const BENCHMARK_FLOOR: f64 = 0.01;

/// Settings for source detection.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionParams {
    pub threshold: f64,
    pub tuning: Tuning,
    /// Penalties for the benchmark fit (index 0) and each source fit (1..=K).
    pub lambdas: Option<Vec<f64>>,
    /// Bandwidths, indexed like `lambdas`.
    pub bandwidths: Option<Vec<Bandwidth>>,
    pub seed: u64,
}

impl DetectionParams {
    pub fn new(tuning: Tuning) -> Self {
        Self {
            threshold: 0.2,
            tuning,
            lambdas: None,
            bandwidths: None,
            seed: 0,
        }
    }

    fn validate(&self, k: usize) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "threshold must be positive, got {}",
                self.threshold
            )));
        }
        if self.lambdas.as_ref().is_some_and(|l| l.len() != k + 1) {
            return Err(Error::InvalidParameter(format!(
                "expected {} penalties",
                k + 1
            )));
        }
        if self.bandwidths.as_ref().is_some_and(|b| b.len() != k + 1) {
            return Err(Error::InvalidParameter(format!(
                "expected {} bandwidths",
                k + 1
            )));
        }
        Ok(())
    }
}

/// Transferability indices and the detected set.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionReport {
    /// `indices[k - 1]` is the index of source `k`.
    pub indices: Vec<f64>,
    /// Validation check loss of the benchmark fit.
    pub benchmark_loss: f64,
    pub threshold: f64,
    /// Detected sources, numbered 1..=K in input order.
    pub detected: BTreeSet<usize>,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Random split of `0..n0` with `floor(n0/2)` validation rows; both halves sorted.
pub fn split_target(n0: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n0 < 4 {
        return Err(Error::InvalidData(format!(
            "need at least 4 target rows to split, got {n0}"
        )));
    }
    let perm = permutation(&mut seeded(seed), n0);
    let n_val = n0 / 2;
    let mut val = perm[..n_val].to_vec();
    let mut train = perm[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}

/// `{k : T_k < t * max(benchmark, 0.01)}`, with sources numbered from 1.
pub fn detect_transferable(
    indices: &[f64],
    benchmark_loss: f64,
    threshold: f64,
) -> BTreeSet<usize> {
    let cut = threshold * benchmark_loss.max(BENCHMARK_FLOOR);
    indices
        .iter()
        .enumerate()
        .filter(|(_, &t)| t < cut)
        .map(|(i, _)| i + 1)
        .collect()
}

/// Computes the transferability index of every source.
pub fn transferability_indices(
    target: &Dataset,
    sources: &[&Dataset],
    params: &DetectionParams,
) -> Result<DetectionReport> {
    let k = sources.len();
    if k == 0 {
        return Err(Error::InvalidParameter(
            "detection needs at least one source".into(),
        ));
    }
    params.validate(k)?;
    let (train_idx, val_idx) = split_target(target.n(), derive_seed(params.seed, 10))?;
    let train = target.subset(&train_idx)?;
    let val = target.subset(&val_idx)?;
    let tau = params.tuning.tau;

    // job 0 is the benchmark, job k pools source k with the training half
    let jobs: Vec<usize> = (0..=k).collect();
    let fits = par::map(&jobs, |&j| {
        let data = if j == 0 {
            train.clone()
        } else {
            pool_datasets(&[sources[j - 1], &train])?
        };
        let h = params
            .bandwidths
            .as_ref()
            .map(|b| b[j])
            .unwrap_or_else(|| default_bandwidth(tau, data.n(), data.p()));
        let lambda = params.lambdas.as_ref().map(|l| l[j]);
        let (fit, _) = select_and_fit(
            &data,
            &params.tuning,
            h,
            lambda,
            derive_seed(params.seed, 100 + j as u64),
        )
        .map_err(|e| Error::SourceFit {
            source_index: j,
            source: Box::new(e),
        })?;
        empirical_check_loss(&fit.coef, &val, tau)
    });
    let mut losses = Vec::with_capacity(k + 1);
    for f in fits {
        losses.push(f?);
    }
    let benchmark_loss = losses[0];
    let indices: Vec<f64> = losses[1..].iter().map(|l| l - benchmark_loss).collect();
    let detected = detect_transferable(&indices, benchmark_loss, params.threshold);
    Ok(DetectionReport {
        indices,
        benchmark_loss,
        threshold: params.threshold,
        detected,
        train: train_idx,
        validation: val_idx,
    })
}

/// Two-step estimator on the full target plus the sources numbered in `set`.
pub fn trans_sqr_with_set(
    target: &Dataset,
    sources: &[&Dataset],
    set: &BTreeSet<usize>,
    transfer: &TransferParams,
) -> Result<TransferEstimate> {
    let chosen: Vec<&Dataset> = set
        .iter()
        .map(|&k| {
            sources
                .get(k.wrapping_sub(1))
                .copied()
                .ok_or_else(|| Error::InvalidParameter(format!("no source numbered {k}")))
        })
        .collect::<Result<_>>()?;
    oracle_trans_sqr(target, &chosen, transfer)
}

/// Detection followed by the two-step estimator on the detected sources.
pub fn trans_sqr(
    target: &Dataset,
    sources: &[&Dataset],
    detection: &DetectionParams,
    transfer: &TransferParams,
) -> Result<(TransferEstimate, DetectionReport)> {
    let report = transferability_indices(target, sources, detection)?;
    let est = trans_sqr_with_set(target, sources, &report.detected, transfer)?;
    Ok((est, report))
}
