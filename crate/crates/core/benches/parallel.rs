use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use transqr::detection::{transferability_indices, DetectionParams};
use transqr::selection::{cv_select, default_bandwidth, CvConfig};
use transqr::simulation::{gen_replication, run_experiment, ErrorDist, Method, ScenarioConfig};
use transqr::transfer::Tuning;
use transqr::{Dataset, FitConfig, QuantileLevel};

fn design() -> ScenarioConfig {
    ScenarioConfig {
        name: "bench".into(),
        n0: 100,
        sources: 4,
        n_source: 80,
        p: 50,
        s: 8,
        eta: 1.0,
        transferable: 2,
        error_dist: ErrorDist::Gaussian,
        replications: 4,
        seed: 7,
        methods: vec![Method::L1Sqr, Method::OracleTsqr],
        ..ScenarioConfig::default()
    }
}

/// Runs `f` on the global pool and on a one-thread pool.
fn pools(c: &mut Criterion, group: &str, f: impl Fn() + Sync) {
    let single = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let mut g = c.benchmark_group(group);
    g.sample_size(10);
    g.bench_function(
        BenchmarkId::new("pool", rayon::current_num_threads()),
        |b| b.iter(&f),
    );
    g.bench_function(BenchmarkId::new("pool", 1), |b| {
        b.iter(|| single.install(&f))
    });
    g.finish();
}

fn replications(c: &mut Criterion) {
    let cfg = design();
    pools(c, "replications", || {
        run_experiment(&cfg).unwrap();
    });
}

fn cv_folds(c: &mut Criterion) {
    let rep = gen_replication(&design(), 0).unwrap();
    let tau = QuantileLevel::median();
    let h = default_bandwidth(tau, rep.target.n(), rep.target.p());
    let cfg = FitConfig::new(tau, h, 0.0);
    pools(c, "cv_folds", || {
        cv_select(&rep.target, &cfg, &CvConfig::default()).unwrap();
    });
}

fn source_indices(c: &mut Criterion) {
    let rep = gen_replication(&design(), 0).unwrap();
    let sources: Vec<&Dataset> = rep.sources.iter().collect();
    let params = DetectionParams::new(Tuning::new(QuantileLevel::median()));
    pools(c, "source_indices", || {
        transferability_indices(&rep.target, &sources, &params).unwrap();
    });
}

criterion_group!(benches, replications, cv_folds, source_indices);
criterion_main!(benches);
