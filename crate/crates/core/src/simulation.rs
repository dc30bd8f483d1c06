//! Synthetic multi-study data and the Monte-Carlo experiment runner.
//!
//! The target has `s` active slopes of 0.5 and intercept 0.5, with AR(1)
//! designs (`rho = 0.7`). Each source perturbs the target coefficients on a
//! random set `H` of `floor(0.4 p)` inactive coordinates. Transferable
//! sources add `eta / |H|` times a Rademacher sign on `H`, so their contrast
//! has l1 norm exactly `eta`. The others replace the coefficients entirely by
//! `2 eta / |H|` times a sign on `H` and the active set. Source designs add
//! a rank-one term `e g` where `e ~ N(0, delta^2 I)` is drawn once per source.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::{CoefVector, Dataset, QuantileLevel};
use crate::detection::{trans_sqr, DetectionParams};
use crate::distributed::{distributed_oracle_trans_sqr, DistributedParams, SiteHandle};
use crate::error::{Error, Result};
use crate::par;
use crate::rng::{
    derive_seed, normal_quantile, rademacher, sample_without_replacement, seeded, standard_normal,
    student_t,
};
use crate::selection::{default_bandwidth, CvConfig};
use crate::smoothing::{Bandwidth, Kernel};
use crate::transfer::{oracle_trans_sqr, select_and_fit, LambdaSelection, TransferParams, Tuning};

/// AR(1) correlation of the designs.
pub const AR_RHO: f64 = 0.7;
/// Intercept of every study.
pub const INTERCEPT: f64 = 0.5;
/// Value of each active target slope.
pub const SIGNAL: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorDist {
    #[default]
    Gaussian,
    T3,
}

impl ErrorDist {
    pub fn quantile(self, tau: QuantileLevel) -> f64 {
        match self {
            ErrorDist::Gaussian => normal_quantile(tau.value()),
            ErrorDist::T3 => StudentsT::new(0.0, 1.0, 3.0)
                .expect("valid t parameters")
                .inverse_cdf(tau.value()),
        }
    }

    fn draw<R: rand::RngCore>(self, rng: &mut R) -> f64 {
        match self {
            ErrorDist::Gaussian => standard_normal(rng),
            ErrorDist::T3 => student_t(rng, 3),
        }
    }
}

impl FromStr for ErrorDist {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(Self::Gaussian),
            "t3" => Ok(Self::T3),
            other => Err(Error::InvalidParameter(format!(
                "unknown error distribution '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "L1-SQR")]
    L1Sqr,
    #[serde(rename = "Oracle-TSQR")]
    OracleTsqr,
    #[serde(rename = "Naive-TSQR")]
    NaiveTsqr,
    #[serde(rename = "TSQR")]
    Tsqr,
    #[serde(rename = "Distributed")]
    Distributed,
    /// The oracle two-step estimator with a tiny bandwidth in both steps,
    /// standing in for the non-smoothed estimator.
    #[serde(rename = "SmallH-Baseline")]
    SmallHBaseline,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::L1Sqr,
        Method::OracleTsqr,
        Method::NaiveTsqr,
        Method::Tsqr,
        Method::Distributed,
        Method::SmallHBaseline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::L1Sqr => "L1-SQR",
            Method::OracleTsqr => "Oracle-TSQR",
            Method::NaiveTsqr => "Naive-TSQR",
            Method::Tsqr => "TSQR",
            Method::Distributed => "Distributed",
            Method::SmallHBaseline => "SmallH-Baseline",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidParameter(format!("unknown method '{s}'")))
    }
}

/// Tuning knobs shared by the methods of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodSettings {
    pub kernel: Kernel,
    pub selection: LambdaSelection,
    pub folds: usize,
    pub grid_size: usize,
    pub grid_min_ratio: f64,
    pub bic_above: Option<usize>,
    pub tol: f64,
    pub max_iter: usize,
    pub h_w: Option<f64>,
    pub h_delta: Option<f64>,
    pub lambda_w: Option<f64>,
    pub lambda_delta: Option<f64>,
    pub threshold: f64,
    pub rho0: f64,
    pub rounds: Option<usize>,
    pub small_h: f64,
    /// Add the squared intercept error to the reported error.
    pub include_intercept: bool,
}

impl Default for MethodSettings {
    fn default() -> Self {
        let cv = CvConfig::default();
        Self {
            kernel: Kernel::Gaussian,
            selection: LambdaSelection::Cv,
            folds: cv.folds,
            grid_size: cv.grid_size,
            grid_min_ratio: cv.grid_min_ratio,
            bic_above: Some(2000),
            tol: crate::solver::FitConfig::DEFAULT_TOL,
            max_iter: crate::solver::FitConfig::DEFAULT_MAX_ITER,
            h_w: None,
            h_delta: None,
            lambda_w: None,
            lambda_delta: None,
            threshold: 0.2,
            rho0: 0.2,
            rounds: None,
            small_h: 0.01,
            include_intercept: false,
        }
    }
}

/// One simulation scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub n0: usize,
    /// Number of sources `K`.
    pub sources: usize,
    pub n_source: usize,
    pub p: usize,
    pub s: usize,
    pub eta: f64,
    /// Number of transferable sources; sources `1..=transferable` are transferable.
    pub transferable: usize,
    pub delta_design: f64,
    pub error_dist: ErrorDist,
    pub tau: f64,
    pub replications: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub settings: MethodSettings,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "scenario".into(),
            n0: 150,
            sources: 20,
            n_source: 100,
            p: 500,
            s: 16,
            eta: 10.0,
            transferable: 8,
            delta_design: 0.3,
            error_dist: ErrorDist::Gaussian,
            tau: 0.5,
            replications: 100,
            seed: 0,
            methods: vec![
                Method::L1Sqr,
                Method::OracleTsqr,
                Method::NaiveTsqr,
                Method::Tsqr,
            ],
            settings: MethodSettings::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.p == 0 || self.s > self.p {
            return bad(format!(
                "need 1 <= p and s <= p, got p={}, s={}",
                self.p, self.s
            ));
        }
        if self.transferable > self.sources {
            return bad(format!(
                "transferable={} exceeds sources={}",
                self.transferable, self.sources
            ));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return bad(format!("eta must be non-negative, got {}", self.eta));
        }
        if !(self.delta_design >= 0.0 && self.delta_design.is_finite()) {
            return bad(format!(
                "delta_design must be non-negative, got {}",
                self.delta_design
            ));
        }
        QuantileLevel::new(self.tau)?;
        if self.n0 < 4 {
            return bad(format!("n0 must be at least 4, got {}", self.n0));
        }
        if self.sources > 0 && self.n_source < 2 {
            return bad(format!(
                "n_source must be at least 2, got {}",
                self.n_source
            ));
        }
        if self.methods.is_empty() {
            return bad("no methods listed".into());
        }
        let st = &self.settings;
        if !(st.small_h > 0.0) || !(st.rho0 > 0.0 && st.rho0 < 1.0) || !(st.threshold > 0.0) {
            return bad(
                "small_h and threshold must be positive and rho0 must lie in (0, 1)".into(),
            );
        }
        for h in [st.h_w, st.h_delta].into_iter().flatten() {
            Bandwidth::new(h)?;
        }
        Ok(())
    }

    pub fn quantile_level(&self) -> QuantileLevel {
        QuantileLevel::new(self.tau).expect("validated")
    }

    /// Size of each perturbation set `H`.
    pub fn h_set_size(&self) -> usize {
        (2 * self.p / 5).min(self.p - self.s)
    }

    pub fn tuning(&self) -> Tuning {
        let st = &self.settings;
        Tuning {
            tau: self.quantile_level(),
            kernel: st.kernel,
            selection: st.selection,
            cv: CvConfig {
                folds: st.folds,
                grid_size: st.grid_size,
                grid_min_ratio: st.grid_min_ratio,
                seed: 0,
            },
            bic_above: st.bic_above,
            tol: st.tol,
            max_iter: st.max_iter,
        }
    }

    pub fn transfer_params(&self, seed: u64) -> TransferParams {
        let st = &self.settings;
        TransferParams {
            tuning: self.tuning(),
            lambda_w: st.lambda_w,
            lambda_delta: st.lambda_delta,
            h_w: bandwidth(st.h_w),
            h_delta: bandwidth(st.h_delta),
            seed,
        }
    }

    pub fn detection_params(&self, seed: u64) -> DetectionParams {
        let mut det = DetectionParams::new(self.tuning());
        det.threshold = self.settings.threshold;
        det.seed = seed;
        det
    }

    pub fn distributed_params(&self, seed: u64) -> DistributedParams {
        let st = &self.settings;
        let mut params = DistributedParams::new(self.tuning());
        params.rho0 = st.rho0;
        params.rounds = st.rounds;
        params.lambda_delta = st.lambda_delta;
        params.h_delta = bandwidth(st.h_delta);
        params.seed = seed;
        params
    }
}

/// Coefficients of one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSet {
    pub beta: CoefVector,
    /// `sources[k - 1]` is `w^(k)`.
    pub sources: Vec<CoefVector>,
    /// `contrasts[k - 1] = beta - w^(k)`.
    pub contrasts: Vec<CoefVector>,
    pub transferable: BTreeSet<usize>,
    pub h_sets: Vec<Vec<usize>>,
}

pub fn target_beta(p: usize, s: usize) -> CoefVector {
    CoefVector::new(
        INTERCEPT,
        Array1::from_shape_fn(p, |j| if j < s { SIGNAL } else { 0.0 }),
    )
}

pub fn gen_coefficients(cfg: &ScenarioConfig, seed: u64) -> CoefficientSet {
    let (p, s) = (cfg.p, cfg.s);
    let beta = target_beta(p, s);
    let m = cfg.h_set_size();
    let mut sources = Vec::with_capacity(cfg.sources);
    let mut h_sets = Vec::with_capacity(cfg.sources);
    for k in 1..=cfg.sources {
        let mut rng = seeded(derive_seed(seed, k as u64));
        let h: Vec<usize> = sample_without_replacement(&mut rng, p - s, m)
            .into_iter()
            .map(|j| j + s)
            .collect();
        let signs: Vec<f64> = (0..p).map(|_| rademacher(&mut rng)).collect();
        let mut w = beta.clone();
        if k <= cfg.transferable {
            let mag = if m == 0 { 0.0 } else { cfg.eta / m as f64 };
            for &j in &h {
                w.slopes[j] += mag * signs[j];
            }
        } else {
            let mag = if m == 0 {
                0.0
            } else {
                2.0 * cfg.eta / m as f64
            };
            w.slopes.fill(0.0);
            for j in (0..s).chain(h.iter().copied()) {
                w.slopes[j] = mag * signs[j];
            }
        }
        sources.push(w);
        h_sets.push(h);
    }
    let contrasts = sources.iter().map(|w| beta.sub(w)).collect();
    CoefficientSet {
        beta,
        sources,
        contrasts,
        transferable: (1..=cfg.transferable).collect(),
        h_sets,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Target,
    /// Source number `k`, from 1.
    Source(usize),
}

/// Draws one study's rows.
pub fn gen_dataset(
    role: Role,
    cfg: &ScenarioConfig,
    coef: &CoefficientSet,
    seed: u64,
) -> Result<Dataset> {
    let (p, w, n, site) = match role {
        Role::Target => (cfg.p, &coef.beta, cfg.n0, 0),
        Role::Source(k) => {
            let w = coef
                .sources
                .get(k.wrapping_sub(1))
                .ok_or_else(|| Error::InvalidParameter(format!("no source numbered {k}")))?;
            (cfg.p, w, cfg.n_source, k)
        }
    };
    let mut rng = seeded(seed);
    let direction: Option<Vec<f64>> = match role {
        Role::Source(_) if cfg.delta_design > 0.0 => Some(
            (0..p)
                .map(|_| cfg.delta_design * standard_normal(&mut rng))
                .collect(),
        ),
        _ => None,
    };
    let innov = (1.0 - AR_RHO * AR_RHO).sqrt();
    let mut x = Array2::zeros((n, p));
    let mut y = Array1::zeros(n);
    for i in 0..n {
        let mut prev = 0.0;
        for j in 0..p {
            let z = standard_normal(&mut rng);
            prev = if j == 0 { z } else { AR_RHO * prev + innov * z };
            x[[i, j]] = prev;
        }
        if let Some(d) = &direction {
            let g = standard_normal(&mut rng);
            for j in 0..p {
                x[[i, j]] += d[j] * g;
            }
        }
        y[i] = w.predict_row(x.row(i)) + cfg.error_dist.draw(&mut rng);
    }
    Dataset::new(x, y, site)
}

/// Coefficients of the `tau`-quantile: the intercept moves by the error quantile.
pub fn true_quantile_beta(beta: &CoefVector, tau: QuantileLevel, dist: ErrorDist) -> CoefVector {
    CoefVector::new(beta.intercept + dist.quantile(tau), beta.slopes.clone())
}

/// All data of one replication.
#[derive(Debug, Clone)]
pub struct Replication {
    pub coef: CoefficientSet,
    pub target: Dataset,
    pub sources: Vec<Dataset>,
    pub truth: CoefVector,
}

/// Seed of replication `r`.
pub fn replication_seed(cfg: &ScenarioConfig, r: usize) -> u64 {
    cfg.seed.wrapping_add(r as u64)
}

pub fn gen_replication(cfg: &ScenarioConfig, r: usize) -> Result<Replication> {
    cfg.validate()?;
    let seed = replication_seed(cfg, r);
    let coef = gen_coefficients(cfg, derive_seed(seed, 1));
    for &k in &coef.transferable {
        let l1: f64 = coef.contrasts[k - 1].slopes.iter().map(|v| v.abs()).sum();
        if cfg.h_set_size() > 0 && (l1 - cfg.eta).abs() > 1e-9 * cfg.eta.max(1.0) {
            return Err(Error::InvalidData(format!(
                "contrast of source {k} has l1 norm {l1}, expected {}",
                cfg.eta
            )));
        }
    }
    let target = gen_dataset(Role::Target, cfg, &coef, derive_seed(seed, 2))?;
    let sources = (1..=cfg.sources)
        .map(|k| {
            gen_dataset(
                Role::Source(k),
                cfg,
                &coef,
                derive_seed(seed, 100 + k as u64),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let truth = true_quantile_beta(&coef.beta, cfg.quantile_level(), cfg.error_dist);
    Ok(Replication {
        coef,
        target,
        sources,
        truth,
    })
}

/// Output of one method on one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodOutcome {
    pub estimate: CoefVector,
    pub converged: bool,
    pub detected: Option<BTreeSet<usize>>,
}

fn bandwidth(h: Option<f64>) -> Option<Bandwidth> {
    h.map(|v| Bandwidth::new(v).expect("validated"))
}

/// Runs `method` on replication data.
pub fn run_method(
    method: Method,
    cfg: &ScenarioConfig,
    rep: &Replication,
    seed: u64,
) -> Result<MethodOutcome> {
    let tuning = cfg.tuning();
    let st = &cfg.settings;
    let transfer = cfg.transfer_params(seed);
    let oracle: Vec<&Dataset> = rep
        .coef
        .transferable
        .iter()
        .map(|&k| &rep.sources[k - 1])
        .collect();
    let done = |est: crate::transfer::TransferEstimate| MethodOutcome {
        converged: est.converged(),
        estimate: est.beta_hat,
        detected: None,
    };
    match method {
        Method::L1Sqr => {
            let h = transfer
                .h_delta
                .unwrap_or_else(|| default_bandwidth(tuning.tau, rep.target.n(), rep.target.p()));
            let (fit, _) = select_and_fit(
                &rep.target,
                &tuning,
                h,
                st.lambda_delta,
                derive_seed(seed, 2),
            )?;
            Ok(MethodOutcome {
                converged: fit.converged,
                estimate: fit.coef,
                detected: None,
            })
        }
        Method::OracleTsqr => oracle_trans_sqr(&rep.target, &oracle, &transfer).map(done),
        Method::NaiveTsqr => {
            let all: Vec<&Dataset> = rep.sources.iter().collect();
            oracle_trans_sqr(&rep.target, &all, &transfer).map(done)
        }
        Method::Tsqr => {
            let all: Vec<&Dataset> = rep.sources.iter().collect();
            let det = cfg.detection_params(seed);
            if all.is_empty() {
                return oracle_trans_sqr(&rep.target, &[], &transfer).map(done);
            }
            let (est, report) = trans_sqr(&rep.target, &all, &det, &transfer)?;
            Ok(MethodOutcome {
                converged: est.converged(),
                estimate: est.beta_hat,
                detected: Some(report.detected),
            })
        }
        Method::Distributed => {
            let target = SiteHandle::new(0, rep.target.clone());
            let sites: Vec<SiteHandle> = rep
                .coef
                .transferable
                .iter()
                .map(|&k| SiteHandle::new(k, rep.sources[k - 1].clone()))
                .collect();
            let params = cfg.distributed_params(seed);
            let (est, _) = distributed_oracle_trans_sqr(&target, &sites, &params)?;
            Ok(done(est))
        }
        Method::SmallHBaseline => {
            let h = Some(Bandwidth::new(st.small_h)?);
            let params = TransferParams {
                h_w: h,
                h_delta: h,
                ..transfer
            };
            oracle_trans_sqr(&rep.target, &oracle, &params).map(done)
        }
    }
}

/// Squared l2 error over the slopes, plus the intercept when asked.
pub fn estimation_error(estimate: &CoefVector, truth: &CoefVector, include_intercept: bool) -> f64 {
    let slopes = estimate.slope_sq_dist(truth);
    if include_intercept {
        slopes + (estimate.intercept - truth.intercept).powi(2)
    } else {
        slopes
    }
}

/// One successful (replication, method) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub scenario: String,
    pub replication: usize,
    pub method: Method,
    pub tau: f64,
    pub error: f64,
    pub seconds: f64,
    pub converged: bool,
    pub detected: Option<BTreeSet<usize>>,
    pub estimate: CoefVector,
}

/// A (replication, method) cell that failed.
#[derive(Debug, Clone, PartialEq)]
pub struct FailedCell {
    pub scenario: String,
    pub replication: usize,
    pub method: Method,
    pub tau: f64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub scenario: String,
    pub method: Method,
    pub tau: f64,
    pub replications: usize,
    pub mean: f64,
    pub sd: f64,
    pub mean_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultsTable {
    pub rows: Vec<ResultRow>,
    pub failures: Vec<FailedCell>,
}

impl ResultsTable {
    pub fn extend(&mut self, other: ResultsTable) {
        self.rows.extend(other.rows);
        self.failures.extend(other.failures);
    }

    pub fn errors(&self, scenario: &str, method: Method) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.scenario == scenario && r.method == method)
            .map(|r| r.error)
            .collect()
    }

    /// Mean and sample standard deviation per (scenario, method), in first-seen order.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut keys: Vec<(String, Method, f64)> = Vec::new();
        for r in &self.rows {
            if !keys
                .iter()
                .any(|(s, m, _)| *s == r.scenario && *m == r.method)
            {
                keys.push((r.scenario.clone(), r.method, r.tau));
            }
        }
        keys.into_iter()
            .map(|(scenario, method, tau)| {
                let cells: Vec<&ResultRow> = self
                    .rows
                    .iter()
                    .filter(|r| r.scenario == scenario && r.method == method)
                    .collect();
                let errs: Vec<f64> = cells.iter().map(|r| r.error).collect();
                let (mean, sd) = mean_sd(&errs);
                let mean_seconds =
                    cells.iter().map(|r| r.seconds).sum::<f64>() / cells.len() as f64;
                SummaryRow {
                    scenario,
                    method,
                    tau,
                    replications: errs.len(),
                    mean,
                    sd,
                    mean_seconds,
                }
            })
            .collect()
    }
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs one replication of every listed method.
pub fn run_replication(cfg: &ScenarioConfig, r: usize) -> ResultsTable {
    let mut table = ResultsTable::default();
    let fail = |method, message: String| FailedCell {
        scenario: cfg.name.clone(),
        replication: r,
        method,
        tau: cfg.tau,
        message,
    };
    let rep = match gen_replication(cfg, r) {
        Ok(rep) => rep,
        Err(e) => {
            table.failures = cfg
                .methods
                .iter()
                .map(|&m| fail(m, e.to_string()))
                .collect();
            return table;
        }
    };
    let seed = derive_seed(replication_seed(cfg, r), 7);
    for &method in &cfg.methods {
        let start = Instant::now();
        match run_method(method, cfg, &rep, seed) {
            Ok(out) => table.rows.push(ResultRow {
                scenario: cfg.name.clone(),
                replication: r,
                method,
                tau: cfg.tau,
                error: estimation_error(&out.estimate, &rep.truth, cfg.settings.include_intercept),
                seconds: start.elapsed().as_secs_f64(),
                converged: out.converged,
                detected: out.detected,
                estimate: out.estimate,
            }),
            Err(e) => {
                log::warn!("{} replication {r} {method}: {e}", cfg.name);
                table.failures.push(fail(method, e.to_string()));
            }
        }
    }
    table
}

/// Runs every replication (in parallel when enabled), merged in replication order.
pub fn run_experiment(cfg: &ScenarioConfig) -> Result<ResultsTable> {
    cfg.validate()?;
    let parts = par::map_range(cfg.replications, |r| run_replication(cfg, r));
    let mut table = ResultsTable::default();
    for part in parts {
        table.extend(part);
    }
    Ok(table)
}
