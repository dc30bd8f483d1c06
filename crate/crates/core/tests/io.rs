use std::fs;

use ndarray::{Array1, Array2};
use proptest::prelude::*;
use transqr::io::{load_csv, save_csv, write_experiment_outputs, ExperimentConfigFile};
use transqr::simulation::run_experiment;
use transqr::Dataset;

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        -1e3f64..1e3,
        prop::num::f64::NORMAL,
        prop::num::f64::SUBNORMAL,
        Just(0.0),
        Just(-0.0),
        Just(f64::MAX),
        Just(f64::MIN_POSITIVE),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csv_round_trip_is_bit_exact(
        n in 1usize..6,
        p in 1usize..5,
        cells in prop::collection::vec(finite(), 30),
    ) {
        let x = Array2::from_shape_fn((n, p), |(i, j)| cells[(i * p + j) % cells.len()]);
        let y = Array1::from_shape_fn(n, |i| cells[(7 * i + 3) % cells.len()]);
        let d = Dataset::new(x, y, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        save_csv(&path, &d).unwrap();
        let back = load_csv(&path).unwrap();
        prop_assert_eq!(back.n(), n);
        for (a, b) in d.x().iter().chain(d.y().iter()).zip(back.x().iter().chain(back.y().iter())) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}

const CONFIG: &str = r#"
[scenario]
name = "grid"
n0 = 40
sources = 2
n_source = 40
p = 8
s = 2
eta = 0.5
replications = 2
seed = 3
methods = ["L1-SQR", "Oracle-TSQR"]

[scenario.settings]
grid_size = 10

[sweep]
tau = [0.3, 0.7]
transferable = [0, 2]

[output]
results = "out/grid.csv"
"#;

#[test]
fn sweep_config_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("grid.toml");
    fs::write(&path, CONFIG).unwrap();
    let cfg = ExperimentConfigFile::load(&path).unwrap();
    let scenarios = cfg.scenarios().unwrap();
    let names: Vec<&str> = scenarios.iter().map(|s| s.name.as_str()).collect();
    assert_eq!(
        names,
        [
            "grid/tau=0.3/A=0",
            "grid/tau=0.3/A=2",
            "grid/tau=0.7/A=0",
            "grid/tau=0.7/A=2"
        ]
    );
    let out = cfg.results_path().unwrap();
    assert_eq!(out, dir.path().join("out/grid.csv"));

    let mut table = transqr::simulation::ResultsTable::default();
    for s in &scenarios {
        table.extend(run_experiment(s).unwrap());
    }
    write_experiment_outputs(&out, &table).unwrap();
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 1 + 4 * 2 * 2);
    let summary = fs::read_to_string(dir.path().join("out/grid.summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 4 * 2);

    let again = ExperimentConfigFile::parse(&cfg.to_toml()).unwrap();
    assert_eq!(again.scenarios().unwrap(), scenarios);
}
