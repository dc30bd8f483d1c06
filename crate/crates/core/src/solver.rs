//! l1-penalized smoothed quantile regression via local adaptive
//! majorize-minimize (LAMM).
//!
//! Each iteration majorizes the smooth part at the current iterate `w` by an
//! isotropic quadratic with curvature `phi` and takes the proximal step
//! `w+ = prox_{lambda/phi}(w - grad/phi)`. If the majorization fails at `w+`,
//! `phi` doubles and the step is retried; at the start of every iteration
//! `phi` shrinks by a constant factor down to a floor. Accepted steps never
//! increase the penalized objective.

use ndarray::Array1;

use crate::data::{empirical_quantile, CoefVector, Dataset, QuantileLevel};
use crate::error::{Error, Result};
use crate::smoothing::{kernel_cdf, normal_pdf, smoothed_loss, Bandwidth, Kernel};

/// Curvature schedule for LAMM.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LammSchedule {
    /// Starting curvature.
    pub phi_init: f64,
    /// Multiplier applied at the start of each iteration.
    pub shrink: f64,
    /// Lower bound on the curvature.
    pub floor: f64,
    /// Multiplier applied when the majorization fails.
    pub grow: f64,
}

impl Default for LammSchedule {
    fn default() -> Self {
        Self {
            phi_init: 1.0,
            shrink: 0.9,
            floor: 1e-4,
            grow: 2.0,
        }
    }
}

/// Settings for one penalized fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub tau: QuantileLevel,
    pub h: Bandwidth,
    pub lambda: f64,
    pub kernel: Kernel,
    pub tol: f64,
    pub max_iter: usize,
    pub penalize_intercept: bool,
    pub schedule: LammSchedule,
    /// Keep the penalized objective after every iteration in [`SqrFit::trace`].
    pub record_trace: bool,
}

impl FitConfig {
    pub const DEFAULT_TOL: f64 = 1e-5;
    pub const DEFAULT_MAX_ITER: usize = 5000;

    pub fn new(tau: QuantileLevel, h: Bandwidth, lambda: f64) -> Self {
        Self {
            tau,
            h,
            lambda,
            kernel: Kernel::Gaussian,
            tol: Self::DEFAULT_TOL,
            max_iter: Self::DEFAULT_MAX_ITER,
            penalize_intercept: false,
            schedule: LammSchedule::default(),
            record_trace: false,
        }
    }

    pub fn with_kernel(mut self, kernel: Kernel) -> Self {
        self.kernel = kernel;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_bandwidth(mut self, h: Bandwidth) -> Self {
        self.h = h;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be a finite nonnegative number, got {}",
                self.lambda
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter(
                "max_iter must be at least 1".into(),
            ));
        }
        let s = &self.schedule;
        if !(s.phi_init > 0.0 && s.floor > 0.0 && s.grow > 1.0 && s.shrink > 0.0 && s.shrink <= 1.0)
        {
            return Err(Error::InvalidParameter(format!(
                "invalid LAMM schedule {s:?}"
            )));
        }
        Ok(())
    }
}

/// Result of a penalized fit.
#[derive(Debug, Clone, PartialEq)]
pub struct SqrFit {
    pub coef: CoefVector,
    pub iterations: usize,
    /// Penalized objective at `coef`.
    pub final_objective: f64,
    pub kkt_gap: f64,
    pub converged: bool,
    /// Penalized objective after each iteration; empty unless requested.
    pub trace: Vec<f64>,
}

/// Proximal map of `lam * |.|`.
#[inline]
pub fn soft_threshold(x: f64, lam: f64) -> f64 {
    if x > lam {
        x - lam
    } else if x < -lam {
        x + lam
    } else {
        0.0
    }
}

/// Smoothed empirical loss, optionally minus a linear term `<shift, w>`.
pub(crate) struct Problem<'a> {
    data: &'a Dataset,
    kernel: Kernel,
    tau: QuantileLevel,
    h: Bandwidth,
    shift: Option<&'a CoefVector>,
}

impl<'a> Problem<'a> {
    pub(crate) fn new(data: &'a Dataset, cfg: &FitConfig, shift: Option<&'a CoefVector>) -> Self {
        Self {
            data,
            kernel: cfg.kernel,
            tau: cfg.tau,
            h: cfg.h,
            shift,
        }
    }

    fn residuals(&self, w: &CoefVector) -> Array1<f64> {
        let mut r = self.data.x().dot(&w.slopes);
        r.zip_mut_with(self.data.y(), |ri, &yi| *ri = yi - *ri - w.intercept);
        r
    }

    /// Residuals at `w + d` given residuals `r` at `w`; touches only the
    /// coordinates where `d` is non-zero.
    fn residuals_after(&self, r: &Array1<f64>, d: &CoefVector) -> Array1<f64> {
        let nz: Vec<(usize, f64)> = d
            .slopes
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(j, &v)| (j, v))
            .collect();
        let x = self.data.x();
        let mut out = r.clone();
        if 2 * nz.len() > d.slopes.len() {
            out -= &x.dot(&d.slopes);
        } else {
            for (i, ri) in out.iter_mut().enumerate() {
                let row = x.row(i);
                *ri -= nz.iter().map(|&(j, v)| row[j] * v).sum::<f64>();
            }
        }
        if d.intercept != 0.0 {
            out -= d.intercept;
        }
        out
    }

    /// Objective at `w` and the per-row gradient weights, in one pass.
    fn value_and_weights(&self, r: &Array1<f64>, w: &CoefVector) -> (f64, Array1<f64>) {
        let n = self.data.n() as f64;
        let (t, h) = (self.tau.value(), self.h.value());
        let mut total = 0.0;
        let weights = r.mapv(|ri| {
            let cdf = kernel_cdf(self.kernel, -ri / h);
            total += match self.kernel {
                Kernel::Gaussian => ri * (t - cdf) + h * normal_pdf(ri / h),
                Kernel::Uniform => smoothed_loss(self.kernel, self.tau, self.h, ri),
            };
            (cdf - t) / n
        });
        let mean = total / n;
        let f = match self.shift {
            Some(s) => mean - s.intercept * w.intercept - s.slopes.dot(&w.slopes),
            None => mean,
        };
        (f, weights)
    }

    fn grad_from_weights(&self, weights: &Array1<f64>) -> CoefVector {
        let mut g = CoefVector {
            intercept: weights.sum(),
            slopes: xt_dot(self.data, weights),
        };
        if let Some(s) = self.shift {
            g.intercept -= s.intercept;
            g.slopes -= &s.slopes;
        }
        g
    }

    pub(crate) fn value_and_grad(&self, w: &CoefVector) -> (f64, CoefVector) {
        let r = self.residuals(w);
        let (f, weights) = self.value_and_weights(&r, w);
        (f, self.grad_from_weights(&weights))
    }
}

/// `X^T v`, accumulated row by row so reads stay contiguous.
pub(crate) fn xt_dot(data: &Dataset, v: &Array1<f64>) -> Array1<f64> {
    let x = data.x();
    let mut out = Array1::zeros(x.ncols());
    for (row, &vi) in x.rows().into_iter().zip(v.iter()) {
        if vi != 0.0 {
            out.scaled_add(vi, &row);
        }
    }
    out
}

fn penalty(w: &CoefVector, lambda: f64, penalize_intercept: bool) -> f64 {
    let l1 = w.slopes.iter().map(|v| v.abs()).sum::<f64>()
        + if penalize_intercept {
            w.intercept.abs()
        } else {
            0.0
        };
    lambda * l1
}

#[inline]
fn coord_violation(wj: f64, gj: f64, lambda: f64) -> f64 {
    if wj == 0.0 {
        (gj.abs() - lambda).max(0.0)
    } else {
        (gj + lambda * wj.signum()).abs()
    }
}

/// First-order optimality violation given the smooth-part gradient at `w`.
pub(crate) fn kkt_from_grad(
    w: &CoefVector,
    g: &CoefVector,
    lambda: f64,
    penalize_intercept: bool,
) -> f64 {
    let intercept = if penalize_intercept {
        coord_violation(w.intercept, g.intercept, lambda)
    } else {
        g.intercept.abs()
    };
    w.slopes
        .iter()
        .zip(g.slopes.iter())
        .fold(intercept, |m, (&wj, &gj)| {
            m.max(coord_violation(wj, gj, lambda))
        })
}

fn prox_step(
    w: &CoefVector,
    g: &CoefVector,
    phi: f64,
    lambda: f64,
    penalize_intercept: bool,
) -> CoefVector {
    let thr = lambda / phi;
    let b = w.intercept - g.intercept / phi;
    let intercept = if penalize_intercept {
        soft_threshold(b, thr)
    } else {
        b
    };
    let mut slopes = w.slopes.clone();
    slopes.zip_mut_with(&g.slopes, |wj, &gj| {
        *wj = soft_threshold(*wj - gj / phi, thr)
    });
    CoefVector { intercept, slopes }
}

const MAX_BACKTRACKS: usize = 200;

/// Runs LAMM on `problem` from `init`.
pub(crate) fn lamm(problem: &Problem<'_>, cfg: &FitConfig, init: CoefVector) -> Result<SqrFit> {
    let lambda = cfg.lambda;
    let pen_int = cfg.penalize_intercept;
    let sched = cfg.schedule;

    let mut w = init;
    let mut r = problem.residuals(&w);
    let (mut f, weights) = problem.value_and_weights(&r, &w);
    let mut g = problem.grad_from_weights(&weights);
    if !f.is_finite() || !g.is_finite() {
        return Err(Error::NumericalBlowUp {
            iterations: 0,
            last_iterate: Box::new(w),
        });
    }
    let mut phi = sched.phi_init;
    let mut trace = Vec::new();
    let mut kkt = kkt_from_grad(&w, &g, lambda, pen_int);
    let mut converged = false;
    let mut iterations = 0;

    for it in 1..=cfg.max_iter {
        iterations = it;
        phi = (phi * sched.shrink).max(sched.floor);
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let cand = prox_step(&w, &g, phi, lambda, pen_int);
            let d = cand.sub(&w);
            let r_new = problem.residuals_after(&r, &d);
            let (f_new, weights) = problem.value_and_weights(&r_new, &cand);
            if f_new.is_finite() {
                let lin = g.intercept * d.intercept + g.slopes.dot(&d.slopes);
                let sq = d.intercept * d.intercept + d.slopes.dot(&d.slopes);
                let bound = f + lin + 0.5 * phi * sq;
                if f_new <= bound + 1e-14 * (1.0 + f.abs()) {
                    accepted = Some((cand, r_new, f_new, weights, d.max_abs()));
                    break;
                }
            }
            phi *= sched.grow;
        }
        let Some((cand, r_new, f_new, weights, step)) = accepted else {
            return Err(Error::NumericalBlowUp {
                iterations: it,
                last_iterate: Box::new(w),
            });
        };
        w = cand;
        r = r_new;
        f = f_new;
        g = problem.grad_from_weights(&weights);
        if !g.is_finite() {
            return Err(Error::NumericalBlowUp {
                iterations: it,
                last_iterate: Box::new(w),
            });
        }
        kkt = kkt_from_grad(&w, &g, lambda, pen_int);
        if cfg.record_trace {
            trace.push(f + penalty(&w, lambda, pen_int));
        }
        if step <= cfg.tol && kkt <= 10.0 * cfg.tol {
            converged = true;
            break;
        }
    }

    Ok(SqrFit {
        final_objective: f + penalty(&w, lambda, pen_int),
        coef: w,
        iterations,
        kkt_gap: kkt,
        converged,
        trace,
    })
}

fn check_fit_inputs(
    data: &Dataset,
    cfg: &FitConfig,
    warm_start: Option<&CoefVector>,
) -> Result<()> {
    cfg.validate()?;
    if data.n() < 2 {
        return Err(Error::InvalidData(format!(
            "need at least 2 rows to fit, got {}",
            data.n()
        )));
    }
    if let Some(w) = warm_start {
        data.check_coef(w)?;
    }
    Ok(())
}

/// Cold start: empirical tau-quantile intercept, zero slopes.
pub fn cold_start(data: &Dataset, tau: QuantileLevel) -> CoefVector {
    CoefVector::new(
        empirical_quantile(data.y().as_slice().expect("contiguous"), tau),
        Array1::zeros(data.p()),
    )
}

/// Fits l1-penalized smoothed quantile regression on `data`.
///
/// Returns a fit with `converged = false` when `max_iter` is reached.
pub fn fit_l1_sqr(
    data: &Dataset,
    cfg: &FitConfig,
    warm_start: Option<&CoefVector>,
) -> Result<SqrFit> {
    check_fit_inputs(data, cfg, warm_start)?;
    let init = warm_start
        .cloned()
        .unwrap_or_else(|| cold_start(data, cfg.tau));
    lamm(&Problem::new(data, cfg, None), cfg, init)
}

/// Fits the shifted problem `mean smoothed loss - <shift, w> + lambda |slopes|_1`.
pub fn fit_shifted_sqr(
    data: &Dataset,
    cfg: &FitConfig,
    shift: &CoefVector,
    warm_start: Option<&CoefVector>,
) -> Result<SqrFit> {
    check_fit_inputs(data, cfg, warm_start)?;
    data.check_coef(shift)?;
    let init = warm_start
        .cloned()
        .unwrap_or_else(|| cold_start(data, cfg.tau));
    lamm(&Problem::new(data, cfg, Some(shift)), cfg, init)
}

/// KKT certificate of `coef` for the penalized problem described by `cfg`.
pub fn kkt_gap(coef: &CoefVector, data: &Dataset, cfg: &FitConfig) -> Result<f64> {
    data.check_coef(coef)?;
    let (_, g) = Problem::new(data, cfg, None).value_and_grad(coef);
    Ok(kkt_from_grad(coef, &g, cfg.lambda, cfg.penalize_intercept))
}

/// Intercept of the unpenalized intercept-only smoothed fit: the root of
/// `mean Kbar((b - y_i)/h) = tau`.
pub fn intercept_only_fit(data: &Dataset, kernel: Kernel, tau: QuantileLevel, h: Bandwidth) -> f64 {
    let y = data.y();
    let hv = h.value();
    let lo0 = y.iter().copied().fold(f64::INFINITY, f64::min) - 40.0 * hv;
    let hi0 = y.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 40.0 * hv;
    let excess = |b: f64| {
        y.iter()
            .map(|&yi| kernel_cdf(kernel, (b - yi) / hv))
            .sum::<f64>()
            / y.len() as f64
            - tau.value()
    };
    let (mut lo, mut hi) = (lo0, hi0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if excess(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
