use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use transqr::io::save_csv;
use transqr::simulation::{gen_replication, Method, ScenarioConfig};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_transqr"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn small_design() -> ScenarioConfig {
    ScenarioConfig {
        name: "small".into(),
        n0: 60,
        sources: 2,
        n_source: 60,
        p: 10,
        s: 3,
        eta: 0.5,
        transferable: 1,
        replications: 2,
        seed: 11,
        methods: vec![Method::L1Sqr, Method::OracleTsqr],
        ..ScenarioConfig::default()
    }
}

/// Writes target.csv, s1.csv, s2.csv from one simulated replication.
fn write_inputs(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let rep = gen_replication(&small_design(), 0).unwrap();
    let t = dir.join("target.csv");
    let s1 = dir.join("s1.csv");
    let s2 = dir.join("s2.csv");
    save_csv(&t, &rep.target).unwrap();
    save_csv(&s1, &rep.sources[0]).unwrap();
    save_csv(&s2, &rep.sources[1]).unwrap();
    (t, s1, s2)
}

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("s1.toml");
    let text = format!(
        r#"[scenario]
name = "small"
n0 = 60
sources = 2
n_source = 60
p = 10
s = 3
eta = 0.5
transferable = 1
replications = 2
seed = 11
methods = ["L1-SQR", "Oracle-TSQR", "TSQR"]
{extra}
[scenario.settings]
grid_size = 12
"#
    );
    fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["fit"]).status.code(), Some(1));
    assert_eq!(
        run(&["fit", "--data", "x.csv", "--tau", "abc"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn unknown_config_key_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bogus_key = 3\n");
    let o = run(&[
        "simulate",
        "--config",
        s(&cfg),
        "--out",
        s(&dir.path().join("r.csv")),
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("bogus_key"));
}

#[test]
fn nan_cell_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bad.csv");
    fs::write(&data, "y,x1,x2\n1.0,NaN,2.0\n2.0,1.0,0.5\n3.0,0.0,1.0\n").unwrap();
    let o = run(&[
        "fit",
        "--data",
        s(&data),
        "--out",
        s(&dir.path().join("r.csv")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("row 2") && err.contains("x1"), "{err}");
}

#[test]
fn fit_selects_lambda_and_records_it() {
    let dir = tempfile::tempdir().unwrap();
    let (t, _, _) = write_inputs(dir.path());
    let out = dir.path().join("fit.csv");
    let o = run(&["fit", "--data", s(&t), "--tau", "0.5", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let coef = fs::read_to_string(&out).unwrap();
    assert_eq!(coef.lines().count(), 12);
    assert!(coef.starts_with("term,estimate\nintercept,"));
    let manifest = fs::read_to_string(dir.path().join("fit.manifest.txt")).unwrap();
    let lambda = manifest
        .lines()
        .find_map(|l| l.strip_prefix("lambda = "))
        .unwrap();
    let grid = manifest
        .lines()
        .find_map(|l| l.strip_prefix("grid = "))
        .unwrap();
    assert_eq!(grid.split(' ').count(), 50);
    assert!(grid.split(' ').any(|g| g == lambda));
    assert!(manifest.contains("\n[config]\n"));
}

#[test]
fn fixed_lambda_skips_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    let (t, _, _) = write_inputs(dir.path());
    let out = dir.path().join("fit.csv");
    let o = run(&[
        "fit",
        "--data",
        s(&t),
        "--lambda",
        "0.05",
        "--bandwidth",
        "0.2",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest = fs::read_to_string(dir.path().join("fit.manifest.txt")).unwrap();
    assert!(manifest.contains("lambda = 5.0000000000000003e-2\n"));
    assert!(manifest.contains("h = 2.0000000000000001e-1\n"));
    assert!(manifest.contains("grid = \n"));
}

#[test]
fn standardized_fit_reports_original_scale() {
    let dir = tempfile::tempdir().unwrap();
    let (t, _, _) = write_inputs(dir.path());
    let data = transqr::io::load_csv(&t).unwrap();
    let mut x = data.x().clone();
    x.column_mut(0).mapv_inplace(|v| 100.0 * v);
    let wide = transqr::Dataset::new(x, data.y().clone(), 0).unwrap();
    let path = dir.path().join("wide.csv");
    save_csv(&path, &wide).unwrap();

    let read = |name: &str| -> Vec<f64> {
        fs::read_to_string(dir.path().join(name))
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
            .collect()
    };
    let a = run(&[
        "fit",
        "--data",
        s(&t),
        "--standardize",
        "--out",
        s(&dir.path().join("a.csv")),
    ]);
    let b = run(&[
        "fit",
        "--data",
        s(&path),
        "--standardize",
        "--out",
        s(&dir.path().join("b.csv")),
    ]);
    assert!(a.status.success() && b.status.success());
    let (ca, cb) = (read("a.csv"), read("b.csv"));
    assert!(
        (ca[1] - 100.0 * cb[1]).abs() < 1e-8 * ca[1].abs().max(1.0),
        "{} vs {}",
        ca[1],
        cb[1]
    );
    for j in [0, 2, 3] {
        assert!(
            (ca[j] - cb[j]).abs() < 1e-8,
            "coefficient {j}: {} vs {}",
            ca[j],
            cb[j]
        );
    }
}

#[test]
fn simulate_twice_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let r1 = dir.path().join("r1.csv");
    let r2 = dir.path().join("r2.csv");
    for r in [&r1, &r2] {
        let o = run(&["simulate", "--config", s(&cfg), "--out", s(r)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let a = fs::read(&r1).unwrap();
    assert_eq!(a, fs::read(&r2).unwrap());
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 3);
    assert_eq!(
        fs::read(dir.path().join("r1.estimates.csv")).unwrap(),
        fs::read(dir.path().join("r2.estimates.csv")).unwrap()
    );
    let manifest = fs::read_to_string(dir.path().join("r1.manifest.txt")).unwrap();
    assert!(manifest.contains("seed = 11\n"));
    assert!(manifest.contains("failed_cells = 0\n"));
}

#[test]
fn simulate_uses_config_output_path_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let text = fs::read_to_string(&cfg).unwrap() + "\n[output]\nresults = \"out/res.csv\"\n";
    fs::write(&cfg, text).unwrap();
    let o = run(&[
        "simulate",
        "--config",
        s(&cfg),
        "--tau",
        "0.3",
        "--seed",
        "5",
        "--jobs",
        "1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let res = fs::read_to_string(dir.path().join("out/res.csv")).unwrap();
    assert!(res
        .lines()
        .skip(1)
        .all(|l| l.split(',').nth(3) == Some("2.9999999999999999e-1")));
    let manifest = fs::read_to_string(dir.path().join("out/res.manifest.txt")).unwrap();
    assert!(manifest.contains("seed = 5\n"));
}

#[test]
fn detect_reports_indices_and_set() {
    let dir = tempfile::tempdir().unwrap();
    let (t, s1, s2) = write_inputs(dir.path());
    let out = dir.path().join("det.csv");
    let o = run(&[
        "detect",
        "--target",
        s(&t),
        "--source",
        s(&s1),
        "--source",
        s(&s2),
        "--tau",
        "0.5",
        "--threshold",
        "0.2",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(
        text.contains("T[1] = ") && text.contains("T[2] = ") && text.contains("A = {"),
        "{text}"
    );
    let report = fs::read_to_string(dir.path().join("det.detection.csv")).unwrap();
    assert_eq!(report.lines().count(), 3);
    assert!(report.starts_with("source,path,index,detected\n1,"));
    assert!(fs::read_to_string(&out)
        .unwrap()
        .starts_with("term,w_hat,delta_hat,beta_hat\n"));
    let manifest = fs::read_to_string(dir.path().join("det.manifest.txt")).unwrap();
    assert!(manifest.contains("threshold = 2.0000000000000001e-1\n"));
}

#[test]
fn detect_needs_a_source() {
    let dir = tempfile::tempdir().unwrap();
    let (t, _, _) = write_inputs(dir.path());
    let o = run(&[
        "detect",
        "--target",
        s(&t),
        "--out",
        s(&dir.path().join("d.csv")),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn transfer_and_distributed_write_estimates() {
    let dir = tempfile::tempdir().unwrap();
    let (t, s1, _) = write_inputs(dir.path());
    let out = dir.path().join("tr.csv");
    let o = run(&[
        "transfer",
        "--target",
        s(&t),
        "--source",
        s(&s1),
        "--seed",
        "3",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 12);

    let out = dir.path().join("dist.csv");
    let o = run(&[
        "distributed",
        "--target",
        s(&t),
        "--source",
        s(&s1),
        "--rho0",
        "0.3",
        "--iters",
        "2",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let log = fs::read_to_string(dir.path().join("dist.comm.csv")).unwrap();
    let grads = log
        .lines()
        .filter(|l| l.contains(",GRAD,"))
        .collect::<Vec<_>>();
    assert_eq!(grads.len(), 2 * 2);
    assert!(grads.iter().all(|l| l.split(',').nth(3) == Some("11")));
    let manifest = fs::read_to_string(dir.path().join("dist.manifest.txt")).unwrap();
    assert!(manifest.contains("rounds = 2\n"));
}

#[test]
fn bench_compares_pools() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = dir.path().join("bench.csv");
    let o = run(&["bench", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("mode,threads,seconds,cells,identical\ndefault,"));
    assert!(text.lines().skip(1).all(|l| l.ends_with(",true")));
}
