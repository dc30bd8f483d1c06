use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use transqr::detection::trans_sqr;
use transqr::distributed::{distributed_oracle_trans_sqr, SiteHandle};
use transqr::io::{
    fmt_real, load_csv_with_site, manifest_path, sidecar_path, write_experiment_outputs,
    ExperimentConfigFile, Manifest,
};
use transqr::selection::default_bandwidth;
use transqr::simulation::{run_experiment, ResultsTable, ScenarioConfig};
use transqr::transfer::{oracle_trans_sqr, select_and_fit, TransferEstimate};
use transqr::{Bandwidth, CoefVector, Dataset, Error};

use crate::standardize::Scaler;
use crate::{Common, Failure};

/// Effective settings: the config file (if any) with command-line overrides.
fn effective_config(common: &Common) -> Result<ExperimentConfigFile, Failure> {
    let mut file = match &common.config {
        Some(path) => ExperimentConfigFile::load(path)?,
        None => ExperimentConfigFile {
            scenario: ScenarioConfig::default(),
            sweep: Default::default(),
            output: Default::default(),
            base_dir: PathBuf::new(),
        },
    };
    let sc = &mut file.scenario;
    let st = &mut sc.settings;
    if let Some(t) = common.tau {
        sc.tau = t;
        file.sweep.tau.clear();
    }
    if let Some(s) = common.seed {
        sc.seed = s;
    }
    if let Some(t) = common.threshold {
        st.threshold = t;
    }
    if let Some(r) = common.rho0 {
        st.rho0 = r;
    }
    if let Some(t) = common.iters {
        st.rounds = Some(t);
    }
    if let Some(h) = common.bandwidth {
        st.h_w = Some(h);
        st.h_delta = Some(h);
        file.sweep.h_w.clear();
        file.sweep.h_delta.clear();
    }
    if let Some(l) = common.lambda {
        st.lambda_w = Some(l);
        st.lambda_delta = Some(l);
    }
    file.scenarios()?;
    Ok(file)
}

fn out_path(common: &Common, file: &ExperimentConfigFile) -> Result<PathBuf, Failure> {
    common
        .out
        .clone()
        .or_else(|| file.results_path())
        .ok_or_else(|| Failure::usage("no output path: pass --out or set [output] results"))
}

fn base_manifest(command: &str, file: &ExperimentConfigFile) -> Manifest {
    let mut m = Manifest::new(command);
    m.push("cli_version", env!("CARGO_PKG_VERSION"));
    m.push("seed", file.scenario.seed)
        .push("tau", fmt_real(file.scenario.tau));
    m.set_config(file.to_toml());
    m
}

struct Inputs {
    target: Dataset,
    sources: Vec<Dataset>,
    scaler: Option<Scaler>,
}

fn load_inputs(target: &Path, sources: &[PathBuf], standardize: bool) -> Result<Inputs, Failure> {
    let target = load_csv_with_site(target, 0)?;
    let sources = sources
        .iter()
        .enumerate()
        .map(|(k, p)| load_csv_with_site(p, k + 1))
        .collect::<transqr::Result<Vec<_>>>()?;
    if !standardize {
        return Ok(Inputs {
            target,
            sources,
            scaler: None,
        });
    }
    let scaler = Scaler::fit(&target);
    Ok(Inputs {
        target: scaler.apply(&target)?,
        sources: sources
            .iter()
            .map(|s| scaler.apply(s))
            .collect::<transqr::Result<_>>()?,
        scaler: Some(scaler),
    })
}

fn unscale(scaler: &Option<Scaler>, w: &CoefVector) -> CoefVector {
    scaler.as_ref().map_or_else(|| w.clone(), |s| s.unscale(w))
}

fn term_names(p: usize) -> Vec<String> {
    std::iter::once("intercept".to_string())
        .chain((1..=p).map(|j| format!("x{j}")))
        .collect()
}

/// Writes `term,<columns...>` with one row per coefficient.
fn write_coefficients(path: &Path, columns: &[&str], values: &[CoefVector]) -> Result<(), Failure> {
    let p = values.first().map_or(0, |v| v.p());
    let mut text = String::from("term");
    for c in columns {
        text.push(',');
        text.push_str(c);
    }
    text.push('\n');
    let flat: Vec<Vec<f64>> = values.iter().map(|v| v.to_vec()).collect();
    for (j, name) in term_names(p).into_iter().enumerate() {
        text.push_str(&name);
        for col in &flat {
            text.push(',');
            text.push_str(&fmt_real(col[j]));
        }
        text.push('\n');
    }
    write_file(path, &text)
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(Error::from)?;
    }
    fs::write(path, text).map_err(Error::from)?;
    Ok(())
}

/// Flushes a results file that holds only a FAILED marker row, then passes
/// the failure on.
fn flush_failure(path: &Path, columns: &[&str], failure: Failure) -> Failure {
    let header = std::iter::once("term")
        .chain(columns.iter().copied())
        .collect::<Vec<_>>()
        .join(",");
    let msg = failure.message.replace(['\n', ','], " ");
    let body = format!("{header}\nFAILED: {msg}{}\n", ",".repeat(columns.len()));
    if let Err(e) = write_file(path, &body) {
        warn!("could not write {}: {}", path.display(), e.message);
    }
    failure
}

fn warn_unconverged(converged: bool) {
    if !converged {
        warn!("solver stopped at the iteration limit; see kkt_gap in the manifest");
    }
}

pub fn simulate(common: &Common) -> Result<(), Failure> {
    if common.config.is_none() {
        return Err(Failure::usage("simulate needs --config"));
    }
    let file = effective_config(common)?;
    let out = out_path(common, &file)?;
    let mut table = ResultsTable::default();
    let start = Instant::now();
    let scenarios = file.scenarios()?;
    for sc in &scenarios {
        info!("scenario {} ({} replications)", sc.name, sc.replications);
        table.extend(run_experiment(sc)?);
    }
    write_experiment_outputs(&out, &table)?;
    let mut m = base_manifest("simulate", &file);
    m.push(
        "scenarios",
        scenarios
            .iter()
            .map(|s| s.name.as_str())
            .collect::<Vec<_>>()
            .join(" "),
    )
    .push("cells", table.rows.len())
    .push("failed_cells", table.failures.len())
    .push("seconds", format!("{:.3}", start.elapsed().as_secs_f64()));
    m.write(&manifest_path(&out))?;
    for s in table.summary() {
        println!(
            "{}\t{}\tmean {:.5}\tsd {:.5}",
            s.scenario, s.method, s.mean, s.sd
        );
    }
    if table.failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::numerical(format!(
            "{} cells failed; see FAILED rows in {}",
            table.failures.len(),
            out.display()
        )))
    }
}

pub fn fit(common: &Common, data: &Path, standardize: bool) -> Result<(), Failure> {
    let file = effective_config(common)?;
    let out = out_path(common, &file)?;
    let inputs = load_inputs(data, &[], standardize)?;
    let d = &inputs.target;
    let sc = &file.scenario;
    let tuning = sc.tuning();
    let h = match sc.settings.h_delta {
        Some(h) => Bandwidth::new(h)?,
        None => default_bandwidth(tuning.tau, d.n(), d.p()),
    };
    let (fit, report) = select_and_fit(d, &tuning, h, sc.settings.lambda_delta, sc.seed)
        .map_err(|e| flush_failure(&out, &["estimate"], e.into()))?;
    warn_unconverged(fit.converged);
    write_coefficients(&out, &["estimate"], &[unscale(&inputs.scaler, &fit.coef)])?;
    let mut m = base_manifest("fit", &file);
    m.push("data", data.display())
        .push("standardize", standardize)
        .push("n", d.n())
        .push("p", d.p())
        .push("h", fmt_real(report.h))
        .push("lambda", fmt_real(report.lambda))
        .push_reals("grid", &report.grid)
        .push("iterations", report.iterations)
        .push("kkt_gap", fmt_real(report.kkt_gap))
        .push("converged", report.converged);
    m.write(&manifest_path(&out))?;
    println!(
        "lambda = {:.6e}, h = {:.6}, support = {}",
        report.lambda,
        report.h,
        fit.coef.support().len()
    );
    Ok(())
}

const TRANSFER_COLUMNS: [&str; 3] = ["w_hat", "delta_hat", "beta_hat"];

fn write_transfer(
    out: &Path,
    est: &TransferEstimate,
    scaler: &Option<Scaler>,
    m: &mut Manifest,
) -> Result<(), Failure> {
    write_coefficients(
        out,
        &TRANSFER_COLUMNS,
        &[
            unscale(scaler, &est.w_hat),
            unscale(scaler, &est.delta_hat),
            unscale(scaler, &est.beta_hat),
        ],
    )?;
    for (key, step) in [
        ("transfer", &est.transfer_step),
        ("debias", &est.debias_step),
    ] {
        m.push(&format!("{key}.n"), step.n)
            .push(&format!("{key}.h"), fmt_real(step.h))
            .push(&format!("{key}.lambda"), fmt_real(step.lambda))
            .push_reals(&format!("{key}.grid"), &step.grid)
            .push(&format!("{key}.iterations"), step.iterations)
            .push(&format!("{key}.kkt_gap"), fmt_real(step.kkt_gap))
            .push(&format!("{key}.converged"), step.converged);
    }
    warn_unconverged(est.converged());
    Ok(())
}

fn push_inputs(m: &mut Manifest, target: &Path, sources: &[PathBuf], standardize: bool) {
    m.push("target", target.display());
    for (k, s) in sources.iter().enumerate() {
        m.push(&format!("source.{}", k + 1), s.display());
    }
    m.push("standardize", standardize);
}

pub fn transfer(
    common: &Common,
    target: &Path,
    sources: &[PathBuf],
    standardize: bool,
) -> Result<(), Failure> {
    let file = effective_config(common)?;
    let out = out_path(common, &file)?;
    let inputs = load_inputs(target, sources, standardize)?;
    let srcs: Vec<&Dataset> = inputs.sources.iter().collect();
    let params = file.scenario.transfer_params(file.scenario.seed);
    let est = oracle_trans_sqr(&inputs.target, &srcs, &params)
        .map_err(|e| flush_failure(&out, &TRANSFER_COLUMNS, e.into()))?;
    let mut m = base_manifest("transfer", &file);
    push_inputs(&mut m, target, sources, standardize);
    write_transfer(&out, &est, &inputs.scaler, &mut m)?;
    m.write(&manifest_path(&out))?;
    println!(
        "transfer lambda = {:.6e}, debias lambda = {:.6e}",
        est.transfer_step.lambda, est.debias_step.lambda
    );
    Ok(())
}

pub fn detect(
    common: &Common,
    target: &Path,
    sources: &[PathBuf],
    standardize: bool,
) -> Result<(), Failure> {
    if sources.is_empty() {
        return Err(Failure::usage("detect needs at least one --source"));
    }
    let file = effective_config(common)?;
    let out = out_path(common, &file)?;
    let inputs = load_inputs(target, sources, standardize)?;
    let srcs: Vec<&Dataset> = inputs.sources.iter().collect();
    let seed = file.scenario.seed;
    let det = file.scenario.detection_params(seed);
    let params = file.scenario.transfer_params(seed);
    let (est, report) = trans_sqr(&inputs.target, &srcs, &det, &params)
        .map_err(|e| flush_failure(&out, &TRANSFER_COLUMNS, e.into()))?;

    let mut text = String::from("source,path,index,detected\n");
    for (k, (t, path)) in report.indices.iter().zip(sources).enumerate() {
        let hit = report.detected.contains(&(k + 1));
        text.push_str(&format!(
            "{},{},{},{}\n",
            k + 1,
            path.display(),
            fmt_real(*t),
            hit
        ));
        println!(
            "T[{}] = {:.6e}{}",
            k + 1,
            t,
            if hit { "  (transferable)" } else { "" }
        );
    }
    write_file(&sidecar_path(&out, "detection"), &text)?;
    let set = report
        .detected
        .iter()
        .map(|k| k.to_string())
        .collect::<Vec<_>>()
        .join(" ");
    println!(
        "benchmark = {:.6e}, threshold = {}, A = {{{}}}",
        report.benchmark_loss, report.threshold, set
    );

    let mut m = base_manifest("detect", &file);
    push_inputs(&mut m, target, sources, standardize);
    m.push("threshold", fmt_real(report.threshold))
        .push("benchmark_loss", fmt_real(report.benchmark_loss))
        .push_reals("indices", &report.indices)
        .push("detected", set);
    write_transfer(&out, &est, &inputs.scaler, &mut m)?;
    m.write(&manifest_path(&out))?;
    Ok(())
}

pub fn distributed(
    common: &Common,
    target: &Path,
    sources: &[PathBuf],
    standardize: bool,
) -> Result<(), Failure> {
    let file = effective_config(common)?;
    let out = out_path(common, &file)?;
    let inputs = load_inputs(target, sources, standardize)?;
    let sc = &file.scenario;
    let mut params = sc.distributed_params(sc.seed);
    if let Some(h) = sc.settings.h_w {
        let h = Bandwidth::new(h)?;
        params.h_w = Some(h);
        params.h_star = Some(h);
    }
    params.lambda_w = sc.settings.lambda_w;
    let target_site = SiteHandle::new(0, inputs.target.clone());
    let sites: Vec<SiteHandle> = inputs
        .sources
        .iter()
        .enumerate()
        .map(|(k, d)| SiteHandle::new(k + 1, d.clone()))
        .collect();
    let (est, report) = distributed_oracle_trans_sqr(&target_site, &sites, &params)
        .map_err(|e| flush_failure(&out, &TRANSFER_COLUMNS, e.into()))?;

    let mut log = String::from("round,site,tag,reals,bytes\n");
    for f in &report.comm.frames {
        log.push_str(&format!(
            "{},{},{},{},{}\n",
            f.round, f.site_id, f.tag, f.reals, f.bytes
        ));
    }
    write_file(&sidecar_path(&out, "comm"), &log)?;

    let mut m = base_manifest("distributed", &file);
    push_inputs(&mut m, target, sources, standardize);
    m.push("rho0", fmt_real(params.rho0))
        .push("n_total", report.n_total)
        .push("n_star", report.n_star)
        .push(
            "pilot_counts",
            report
                .pilot_counts
                .iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join(" "),
        )
        .push("rounds", report.rounds.len())
        .push("lambda_star", fmt_real(report.lambda_star))
        .push("lambda_w", fmt_real(report.lambda_w))
        .push("h_star", fmt_real(report.h_star))
        .push("h_w", fmt_real(report.h_w))
        .push("pilot_bytes", report.comm.pilot_bytes)
        .push("broadcast_bytes", report.comm.broadcast_bytes)
        .push("total_bytes", report.comm.total_bytes());
    for r in &report.rounds {
        m.push(
            &format!("round.{}", r.round),
            format!(
                "lambda={} shift_norm={} iterations={} kkt_gap={} converged={}",
                fmt_real(r.lambda),
                fmt_real(r.shift_norm),
                r.iterations,
                fmt_real(r.kkt_gap),
                r.converged
            ),
        );
    }
    write_transfer(&out, &est, &inputs.scaler, &mut m)?;
    m.write(&manifest_path(&out))?;
    println!(
        "{} rounds, pilot n* = {}, {} bytes exchanged",
        report.rounds.len(),
        report.n_star,
        report.comm.total_bytes()
    );
    Ok(())
}

/// Runs the configured experiment under the default pool and under a
/// one-thread pool, checking the two result tables agree.
pub fn bench(common: &Common) -> Result<(), Failure> {
    let file = effective_config(common)?;
    let out = out_path(common, &file)?;
    let scenarios = file.scenarios()?;
    let run = || -> Result<(ResultsTable, f64), Failure> {
        let start = Instant::now();
        let mut table = ResultsTable::default();
        for sc in &scenarios {
            table.extend(run_experiment(sc)?);
        }
        Ok((table, start.elapsed().as_secs_f64()))
    };
    #[cfg_attr(not(feature = "parallel"), allow(unused_mut))]
    let mut rows = vec![("default", crate::pool_threads(), run()?)];
    #[cfg(feature = "parallel")]
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .map_err(|e| Failure::usage(e.to_string()))?;
        rows.push(("sequential", 1, pool.install(run)?));
    }
    let reference = &rows[0].2 .0;
    let mut text = String::from("mode,threads,seconds,cells,identical\n");
    for (mode, threads, (table, secs)) in &rows {
        let same = same_results(reference, table);
        text.push_str(&format!(
            "{mode},{threads},{secs:.6},{},{same}\n",
            table.rows.len()
        ));
        println!("{mode:>10} {threads:>3} threads {secs:>9.3}s identical={same}");
    }
    write_file(&out, &text)?;
    let mut m = base_manifest("bench", &file);
    m.push("threads", crate::pool_threads());
    m.write(&manifest_path(&out))?;
    Ok(())
}

fn same_results(a: &ResultsTable, b: &ResultsTable) -> bool {
    a.rows.len() == b.rows.len()
        && a.failures == b.failures
        && a.rows.iter().zip(&b.rows).all(|(x, y)| {
            x.scenario == y.scenario
                && x.replication == y.replication
                && x.method == y.method
                && x.error.to_bits() == y.error.to_bits()
                && x.estimate == y.estimate
        })
}
