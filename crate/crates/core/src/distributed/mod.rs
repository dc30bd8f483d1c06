//! Communication-efficient transferring step over simulated sites.
//!
//! The coordinator pools a small pilot subsample drawn from every site and
//! fits an initial estimate on it. Each round it broadcasts the current
//! iterate, gathers per-site gradient sums at the full-data bandwidth `h_w`,
//! and minimises the pilot loss minus a linear correction that aligns its
//! gradient with the full-data gradient. Only gradient vectors and the pilot
//! rows cross a site boundary; every frame is logged with its byte size.

pub mod codec;
pub mod site;

use std::collections::BTreeSet;

use log::warn;
use rand::Rng;

use crate::data::{pool_datasets, CoefVector, Dataset};
use crate::error::{Error, Result};
use crate::par;
use crate::rng::{derive_seed, seeded};
use crate::selection::default_bandwidth;
use crate::smoothing::{smoothed_objective_and_grad, Bandwidth};
use crate::solver::{fit_shifted_sqr, FitConfig, SqrFit};
use crate::transfer::{
    finish_with_debias, select_and_fit, StepReport, TransferEstimate, TransferParams, Tuning,
};

use codec::{encode, Frame, Tag};
pub use site::{decode_gradient, decode_pilot, local_gradient, GradientMessage, SiteHandle};

/// One logged frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    /// Round number, 0 for the pilot transfer.
    pub round: usize,
    pub site_id: usize,
    pub tag: Tag,
    pub reals: usize,
    pub bytes: usize,
}

/// Communication log of a distributed run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CommStats {
    /// Site order used for aggregation and for `bytes_sent` columns.
    pub site_ids: Vec<usize>,
    pub rounds: usize,
    pub pilot_bytes: usize,
    /// `bytes_sent[t][k]`: bytes uploaded by site `k` in round `t + 1`.
    pub bytes_sent: Vec<Vec<usize>>,
    /// Bytes of model broadcasts, counted once per receiving site.
    pub broadcast_bytes: usize,
    pub frames: Vec<FrameRecord>,
}

impl CommStats {
    fn log(&mut self, round: usize, site_id: usize, tag: Tag, reals: usize, bytes: usize) {
        self.frames.push(FrameRecord {
            round,
            site_id,
            tag,
            reals,
            bytes,
        });
    }

    pub fn frames_with_tag(&self, tag: Tag) -> impl Iterator<Item = &FrameRecord> {
        self.frames.iter().filter(move |f| f.tag == tag)
    }

    pub fn total_bytes(&self) -> usize {
        self.frames.iter().map(|f| f.bytes).sum()
    }
}

/// Rows pooled at the coordinator.
#[derive(Debug, Clone)]
pub struct PilotSample {
    pub data: Dataset,
    /// Rows contributed by each site, in site order.
    pub counts: Vec<usize>,
    pub site_ids: Vec<usize>,
    pub rho0: f64,
    pub n_star: usize,
    pub frames: Vec<FrameRecord>,
}

impl PilotSample {
    pub fn bytes(&self) -> usize {
        self.frames.iter().map(|f| f.bytes).sum()
    }

    /// Every row of every site; the surrogate then coincides with the full loss.
    pub fn full(sites: &[&SiteHandle]) -> Result<Self> {
        let counts: Vec<usize> = sites.iter().map(|s| s.n()).collect();
        gather_pilot(sites, counts, 1.0, 0)
    }
}

fn check_sites(sites: &[&SiteHandle]) -> Result<usize> {
    let first = sites
        .first()
        .ok_or_else(|| Error::InvalidParameter("no sites".into()))?;
    let p = first.p();
    let mut ids = BTreeSet::new();
    for s in sites {
        if s.p() != p {
            return Err(Error::DimensionMismatch(format!(
                "site {} has p = {}, expected {p}",
                s.site_id(),
                s.p()
            )));
        }
        if !ids.insert(s.site_id()) {
            return Err(Error::InvalidParameter(format!(
                "duplicate site id {}",
                s.site_id()
            )));
        }
    }
    Ok(p)
}

/// Multinomial counts with the overflow of any site moved to the site with
/// the most spare rows.
pub fn pilot_counts(sizes: &[usize], n_star: usize, seed: u64) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    let mut cum = Vec::with_capacity(sizes.len());
    let mut acc = 0usize;
    for &n in sizes {
        acc += n;
        cum.push(acc as f64 / total as f64);
    }
    let mut counts = vec![0usize; sizes.len()];
    let mut rng = seeded(seed);
    for _ in 0..n_star {
        let u: f64 = rng.random();
        let k = cum.partition_point(|&c| c <= u).min(sizes.len() - 1);
        counts[k] += 1;
    }
    let mut excess = 0;
    for (c, &n) in counts.iter_mut().zip(sizes) {
        if *c > n {
            warn!("pilot draw of {c} exceeds site size {n}; capping");
            excess += *c - n;
            *c = n;
        }
    }
    while excess > 0 {
        let (k, spare) = counts
            .iter()
            .zip(sizes)
            .map(|(&c, &n)| n - c)
            .enumerate()
            .max_by_key(|&(i, s)| (s, std::cmp::Reverse(i)))
            .expect("non-empty");
        let moved = spare.min(excess);
        counts[k] += moved;
        excess -= moved;
    }
    counts
}

fn gather_pilot(
    sites: &[&SiteHandle],
    counts: Vec<usize>,
    rho0: f64,
    seed: u64,
) -> Result<PilotSample> {
    let p = check_sites(sites)?;
    let mut parts = Vec::new();
    let mut frames = Vec::new();
    for (s, &c) in sites.iter().zip(&counts) {
        if c == 0 {
            continue;
        }
        let bytes = s.respond_pilot(c, derive_seed(seed, 1 + s.site_id() as u64))?;
        frames.push(FrameRecord {
            round: 0,
            site_id: s.site_id(),
            tag: Tag::Pilot,
            reals: c * (p + 1),
            bytes: bytes.len(),
        });
        parts.push(decode_pilot(&bytes, p, s.site_id())?);
    }
    let refs: Vec<&Dataset> = parts.iter().collect();
    Ok(PilotSample {
        data: pool_datasets(&refs)?,
        n_star: counts.iter().sum(),
        counts,
        site_ids: sites.iter().map(|s| s.site_id()).collect(),
        rho0,
        frames,
    })
}

/// Draws the pilot: `round(rho0 * N)` rows (at least one), split across
/// sites by one multinomial draw with probabilities proportional to site size.
pub fn draw_pilot(sites: &[&SiteHandle], rho0: f64, seed: u64) -> Result<PilotSample> {
    if !(rho0 > 0.0 && rho0 < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "rho0 must lie in (0, 1), got {rho0}"
        )));
    }
    check_sites(sites)?;
    let sizes: Vec<usize> = sites.iter().map(|s| s.n()).collect();
    let total: usize = sizes.iter().sum();
    let n_star = ((rho0 * total as f64).round() as usize).clamp(1, total);
    let counts = pilot_counts(&sizes, n_star, derive_seed(seed, 0));
    gather_pilot(sites, counts, rho0, seed)
}

/// Minimises the pilot loss at `cfg.h` minus `<pilot_grad - global_grad, w>`
/// plus the penalty `cfg.lambda`, warm-started at `w_prev`.
pub fn surrogate_step(
    pilot: &PilotSample,
    w_prev: &CoefVector,
    global_grad: &CoefVector,
    pilot_grad: &CoefVector,
    cfg: &FitConfig,
) -> Result<SqrFit> {
    let shift = pilot_grad.sub(global_grad);
    fit_shifted_sqr(&pilot.data, cfg, &shift, Some(w_prev))
}

/// `ceil(ln(N / n_star))`, at least 1.
pub fn default_rounds(n_total: usize, n_star: usize) -> usize {
    ((n_total as f64 / n_star.max(1) as f64).ln().ceil() as usize).max(1)
}

/// Geometric interpolation from `lambda_star` (exclusive) to `lambda_w` over
/// `rounds` steps; linear when either end is zero.
pub fn lambda_schedule(lambda_star: f64, lambda_w: f64, rounds: usize) -> Vec<f64> {
    (1..=rounds)
        .map(|t| {
            let s = t as f64 / rounds as f64;
            if t == rounds {
                lambda_w
            } else if lambda_star > 0.0 && lambda_w > 0.0 {
                lambda_star * (lambda_w / lambda_star).powf(s)
            } else {
                lambda_star + (lambda_w - lambda_star) * s
            }
        })
        .collect()
}

/// Settings for the distributed estimator. Unset values take defaults:
/// `h_star` and `h_w` from the pilot and total sizes, `lambda_star` by the
/// tuning rule on the pilot, `lambda_w = lambda_star * sqrt(n_star / N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributedParams {
    pub tuning: Tuning,
    pub rho0: f64,
    pub rounds: Option<usize>,
    pub lambda_star: Option<f64>,
    pub lambda_w: Option<f64>,
    /// Overrides the per-round penalties; length must equal the round count.
    pub lambda_schedule: Option<Vec<f64>>,
    pub lambda_delta: Option<f64>,
    pub h_star: Option<Bandwidth>,
    pub h_w: Option<Bandwidth>,
    pub h_delta: Option<Bandwidth>,
    pub seed: u64,
}

impl DistributedParams {
    pub fn new(tuning: Tuning) -> Self {
        Self {
            tuning,
            rho0: 0.2,
            rounds: None,
            lambda_star: None,
            lambda_w: None,
            lambda_schedule: None,
            lambda_delta: None,
            h_star: None,
            h_w: None,
            h_delta: None,
            seed: 0,
        }
    }
}

/// Diagnostics of one surrogate round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub round: usize,
    pub lambda: f64,
    /// Sup-norm of the gradient correction.
    pub shift_norm: f64,
    pub coef: CoefVector,
    pub iterations: usize,
    pub kkt_gap: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistributedReport {
    pub comm: CommStats,
    pub pilot_counts: Vec<usize>,
    pub n_star: usize,
    pub n_total: usize,
    pub lambda_star: f64,
    pub lambda_w: f64,
    pub h_star: f64,
    pub h_w: f64,
    /// Fit on the pilot alone.
    pub initial: CoefVector,
    pub rounds: Vec<RoundReport>,
}

/// Distributed two-step estimator. Sites are ordered sources first, target last.
pub fn distributed_oracle_trans_sqr(
    target: &SiteHandle,
    sources: &[SiteHandle],
    params: &DistributedParams,
) -> Result<(TransferEstimate, DistributedReport)> {
    let mut sites: Vec<&SiteHandle> = sources.iter().collect();
    sites.push(target);
    let pilot = draw_pilot(&sites, params.rho0, derive_seed(params.seed, 20))?;
    distributed_with_pilot(target, sources, pilot, params)
}

/// As [`distributed_oracle_trans_sqr`] with a given pilot sample.
pub fn distributed_with_pilot(
    target: &SiteHandle,
    sources: &[SiteHandle],
    pilot: PilotSample,
    params: &DistributedParams,
) -> Result<(TransferEstimate, DistributedReport)> {
    let mut sites: Vec<&SiteHandle> = sources.iter().collect();
    sites.push(target);
    let p = check_sites(&sites)?;
    let site_ids: Vec<usize> = sites.iter().map(|s| s.site_id()).collect();
    if pilot.site_ids != site_ids || pilot.data.p() != p {
        return Err(Error::InvalidParameter(
            "pilot was drawn from a different set of sites".into(),
        ));
    }
    let tuning = &params.tuning;
    let (tau, kernel) = (tuning.tau, tuning.kernel);
    let n_total: usize = sites.iter().map(|s| s.n()).sum();
    let n_star = pilot.n_star;

    let h_star = params
        .h_star
        .unwrap_or_else(|| default_bandwidth(tau, n_star, p));
    let h_w = params
        .h_w
        .unwrap_or_else(|| default_bandwidth(tau, n_total, p));
    if h_w.value() > h_star.value() {
        return Err(Error::InvalidParameter(format!(
            "h_w = {} must not exceed h_star = {}",
            h_w.value(),
            h_star.value()
        )));
    }
    let rounds = params
        .rounds
        .unwrap_or_else(|| default_rounds(n_total, n_star));
    if rounds == 0 {
        return Err(Error::InvalidParameter(
            "at least one round is required".into(),
        ));
    }

    let (init, init_step) = select_and_fit(
        &pilot.data,
        tuning,
        h_star,
        params.lambda_star,
        derive_seed(params.seed, 3),
    )?;
    let lambda_star = init_step.lambda;
    let lambda_w = params
        .lambda_w
        .unwrap_or_else(|| lambda_star * (n_star as f64 / n_total as f64).sqrt());
    let schedule = match &params.lambda_schedule {
        Some(s) if s.len() != rounds => {
            return Err(Error::InvalidParameter(format!(
                "lambda schedule has {} entries for {rounds} rounds",
                s.len()
            )))
        }
        Some(s) => s.clone(),
        None => lambda_schedule(lambda_star, lambda_w, rounds),
    };

    let mut comm = CommStats {
        site_ids: site_ids.clone(),
        rounds,
        pilot_bytes: pilot.bytes(),
        frames: pilot.frames.clone(),
        ..CommStats::default()
    };
    let base = tuning.fit_config(h_star, 0.0);
    let mut w = init.coef.clone();
    let mut reports = Vec::with_capacity(rounds);
    for (t, &lambda_t) in (1..=rounds).zip(&schedule) {
        let model = encode(&Frame::new(Tag::Model, t as u64, w.to_vec()));
        for s in &sites {
            comm.log(t, s.site_id(), Tag::Model, p + 1, model.len());
            comm.broadcast_bytes += model.len();
        }
        let round_err = |e: Error| Error::Round {
            round: t,
            source: Box::new(e),
        };
        let replies = par::map(&sites, |s| s.respond_gradient(&model, h_w, tau, kernel));
        let mut global = CoefVector::zeros(p);
        let mut count = 0usize;
        let mut sent = Vec::with_capacity(sites.len());
        for (s, reply) in sites.iter().zip(replies) {
            let bytes = reply.map_err(round_err)?;
            comm.log(t, s.site_id(), Tag::Grad, p + 1, bytes.len());
            sent.push(bytes.len());
            let msg = decode_gradient(&bytes).map_err(round_err)?;
            global = global.add(&msg.sum);
            count += msg.count;
        }
        comm.bytes_sent.push(sent);
        global.intercept /= count as f64;
        global.slopes /= count as f64;

        let (_, pilot_grad) =
            smoothed_objective_and_grad(kernel, tau, h_star, &w, &pilot.data).map_err(round_err)?;
        let shift_norm = pilot_grad.sub(&global).max_abs();
        let fit = surrogate_step(
            &pilot,
            &w,
            &global,
            &pilot_grad,
            &base.clone().with_lambda(lambda_t),
        )
        .map_err(round_err)?;
        w = fit.coef.clone();
        reports.push(RoundReport {
            round: t,
            lambda: lambda_t,
            shift_norm,
            coef: fit.coef,
            iterations: fit.iterations,
            kkt_gap: fit.kkt_gap,
            converged: fit.converged,
        });
    }

    let transfer_step = StepReport {
        n: n_total,
        lambda: lambda_w,
        h: h_w.value(),
        grid: init_step.grid,
        iterations: reports.iter().map(|r| r.iterations).sum(),
        kkt_gap: reports.last().map_or(0.0, |r| r.kkt_gap),
        converged: init_step.converged && reports.iter().all(|r| r.converged),
    };
    let debias_params = TransferParams {
        tuning: tuning.clone(),
        lambda_w: None,
        lambda_delta: params.lambda_delta,
        h_w: None,
        h_delta: params.h_delta,
        seed: params.seed,
    };
    let est = finish_with_debias(target.data(), w, transfer_step, &debias_params)?;
    let report = DistributedReport {
        comm,
        pilot_counts: pilot.counts,
        n_star,
        n_total,
        lambda_star,
        lambda_w,
        h_star: h_star.value(),
        h_w: h_w.value(),
        initial: init.coef,
        rounds: reports,
    };
    Ok((est, report))
}
