//! Two-step transfer estimator with a known transferable set.
//!
//! Step one fits the penalized smoothed QR on the pool of the target and the
//! given sources, producing `w_hat`. Step two fits the same estimator on the
//! target alone with responses replaced by residuals `y - x'w_hat` (the
//! intercept of `w_hat` included), producing the correction `delta_hat`.
//! The estimate is `beta_hat = w_hat + delta_hat`.

use serde::{Deserialize, Serialize};

use crate::data::{pool_datasets, CoefVector, Dataset, QuantileLevel};
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::selection::{bic_select, cv_select, default_bandwidth, CvConfig};
use crate::smoothing::{Bandwidth, Kernel};
use crate::solver::{fit_l1_sqr, FitConfig, SqrFit};

/// How a penalty level is chosen when it is not given explicitly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LambdaSelection {
    #[default]
    Cv,
    Bic,
    /// Use the supplied values; missing values are an error.
    Fixed,
}

impl std::str::FromStr for LambdaSelection {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cv" => Ok(Self::Cv),
            "bic" => Ok(Self::Bic),
            "fixed" => Ok(Self::Fixed),
            other => Err(Error::InvalidParameter(format!(
                "unknown selection '{other}'"
            ))),
        }
    }
}

/// Penalty and solver settings shared by every fit of a pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct Tuning {
    pub tau: QuantileLevel,
    pub kernel: Kernel,
    pub selection: LambdaSelection,
    pub cv: CvConfig,
    /// With CV selection, switch to BIC when the fitted data has more rows.
    pub bic_above: Option<usize>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Tuning {
    pub fn new(tau: QuantileLevel) -> Self {
        Self {
            tau,
            kernel: Kernel::Gaussian,
            selection: LambdaSelection::Cv,
            cv: CvConfig::default(),
            bic_above: Some(2000),
            tol: FitConfig::DEFAULT_TOL,
            max_iter: FitConfig::DEFAULT_MAX_ITER,
        }
    }

    pub(crate) fn fit_config(&self, h: Bandwidth, lambda: f64) -> FitConfig {
        FitConfig::new(self.tau, h, lambda)
            .with_kernel(self.kernel)
            .with_tol(self.tol)
            .with_max_iter(self.max_iter)
    }
}

/// Diagnostics for one penalized fit inside a pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub n: usize,
    pub lambda: f64,
    pub h: f64,
    /// Lambda grid searched, empty when lambda was given.
    pub grid: Vec<f64>,
    pub iterations: usize,
    pub kkt_gap: f64,
    pub converged: bool,
}

/// Chooses lambda (unless given) and fits `data` at bandwidth `h`.
pub fn select_and_fit(
    data: &Dataset,
    tuning: &Tuning,
    h: Bandwidth,
    lambda: Option<f64>,
    seed: u64,
) -> Result<(SqrFit, StepReport)> {
    let base = tuning.fit_config(h, 0.0);
    let (lambda, grid) = match lambda {
        Some(l) => (l, Vec::new()),
        None => {
            let cv = tuning.cv.with_seed(seed);
            let use_bic = match tuning.selection {
                LambdaSelection::Bic => true,
                LambdaSelection::Cv => tuning.bic_above.is_some_and(|m| data.n() > m),
                LambdaSelection::Fixed => {
                    return Err(Error::InvalidParameter(
                        "fixed lambda selection needs explicit penalty values".into(),
                    ))
                }
            };
            let sel = if use_bic {
                bic_select(data, &base, &cv)?
            } else {
                cv_select(data, &base, &cv)?
            };
            (sel.lambda, sel.grid)
        }
    };
    let fit = fit_l1_sqr(data, &base.with_lambda(lambda), None)?;
    let report = StepReport {
        n: data.n(),
        lambda,
        h: h.value(),
        grid,
        iterations: fit.iterations,
        kkt_gap: fit.kkt_gap,
        converged: fit.converged,
    };
    Ok((fit, report))
}

/// Settings for the two-step estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferParams {
    pub tuning: Tuning,
    pub lambda_w: Option<f64>,
    pub lambda_delta: Option<f64>,
    pub h_w: Option<Bandwidth>,
    pub h_delta: Option<Bandwidth>,
    pub seed: u64,
}

impl TransferParams {
    pub fn new(tau: QuantileLevel) -> Self {
        Self {
            tuning: Tuning::new(tau),
            lambda_w: None,
            lambda_delta: None,
            h_w: None,
            h_delta: None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tuning.selection == LambdaSelection::Fixed
            && (self.lambda_w.is_none() || self.lambda_delta.is_none())
        {
            return Err(Error::InvalidParameter(
                "fixed selection requires both lambda_w and lambda_delta".into(),
            ));
        }
        for l in [self.lambda_w, self.lambda_delta].into_iter().flatten() {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::InvalidParameter(format!("invalid penalty {l}")));
            }
        }
        Ok(())
    }
}

/// Output of the two-step estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferEstimate {
    pub w_hat: CoefVector,
    pub delta_hat: CoefVector,
    /// Exactly `w_hat + delta_hat`.
    pub beta_hat: CoefVector,
    pub transfer_step: StepReport,
    pub debias_step: StepReport,
}

impl TransferEstimate {
    pub fn converged(&self) -> bool {
        self.transfer_step.converged && self.debias_step.converged
    }
}

/// Target rows with responses replaced by residuals from `w_hat`.
pub fn residual_target(target: &Dataset, w_hat: &CoefVector) -> Result<Dataset> {
    let r = target.residuals(w_hat)?;
    target.with_response(r)
}

/// Debiasing fit at a fixed penalty: l1-SQR on the target residuals.
pub fn debias(target: &Dataset, w_hat: &CoefVector, cfg: &FitConfig) -> Result<SqrFit> {
    let resid = residual_target(target, w_hat)?;
    fit_l1_sqr(&resid, cfg, None)
}

/// Runs the debiasing step with the pipeline's defaults and assembles the estimate.
pub(crate) fn finish_with_debias(
    target: &Dataset,
    w_hat: CoefVector,
    transfer_step: StepReport,
    params: &TransferParams,
) -> Result<TransferEstimate> {
    let resid = residual_target(target, &w_hat)?;
    let h_delta = params
        .h_delta
        .unwrap_or_else(|| default_bandwidth(params.tuning.tau, target.n(), target.p()));
    let (fit, debias_step) = select_and_fit(
        &resid,
        &params.tuning,
        h_delta,
        params.lambda_delta,
        derive_seed(params.seed, 2),
    )?;
    let delta_hat = fit.coef;
    Ok(TransferEstimate {
        beta_hat: w_hat.add(&delta_hat),
        w_hat,
        delta_hat,
        transfer_step,
        debias_step,
    })
}

/// Two-step transfer estimator on `target` with the transferable `sources`.
///
/// An empty source list is valid: the transferring step then fits the
/// target alone.
pub fn oracle_trans_sqr(
    target: &Dataset,
    sources: &[&Dataset],
    params: &TransferParams,
) -> Result<TransferEstimate> {
    params.validate()?;
    let mut all: Vec<&Dataset> = sources.to_vec();
    all.push(target);
    let pool = pool_datasets(&all)?;
    let h_w = params
        .h_w
        .unwrap_or_else(|| default_bandwidth(params.tuning.tau, pool.n(), pool.p()));
    let (fit, transfer_step) = select_and_fit(
        &pool,
        &params.tuning,
        h_w,
        params.lambda_w,
        derive_seed(params.seed, 1),
    )?;
    finish_with_debias(target, fit.coef, transfer_step, params)
}
