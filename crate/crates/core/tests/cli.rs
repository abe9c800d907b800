use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mjfilter(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mjfilter"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn column(csv: &str, name: &str) -> Vec<f64> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let i = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split(',').nth(i).unwrap().parse().unwrap()).collect()
}

#[test]
fn same_seed_gives_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        ok(&mjfilter(&["simulate", "--seed", "11", "--out", out], dir.path()));
        ok(&mjfilter(&["filter", "--seed", "11", "--out", out], dir.path()));
    }
    for file in ["path.csv", "observations.csv", "trajectory.csv", "report.json"] {
        let a = fs::read(dir.path().join("a").join(file)).unwrap();
        let b = fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs");
    }
    ok(&mjfilter(&["simulate", "--seed", "12", "--out", "c"], dir.path()));
    assert_ne!(
        fs::read(dir.path().join("a/observations.csv")).unwrap(),
        fs::read(dir.path().join("c/observations.csv")).unwrap()
    );
}

#[test]
fn telegraph_defaults_write_one_row_per_step() {
    let dir = tempfile::tempdir().unwrap();
    ok(&mjfilter(&["simulate", "--out", "o"], dir.path()));
    let obs = fs::read_to_string(dir.path().join("o/observations.csv")).unwrap();
    assert_eq!(obs.lines().count(), 5001);
    assert_eq!(obs.lines().next().unwrap(), "r,t,dy,dw,x_level");

    ok(&mjfilter(&["filter", "--out", "o"], dir.path()));
    let traj = fs::read_to_string(dir.path().join("o/trajectory.csv")).unwrap();
    assert_eq!(traj.lines().next().unwrap(), "r,t,y,x_level,p_1,p_2,xbar,map_state");
    let (p1, p2) = (column(&traj, "p_1"), column(&traj, "p_2"));
    assert_eq!(p1.len(), 5001);
    assert!(p1.iter().zip(&p2).all(|(a, b)| (a - b).abs() <= 1.0));
    let map = column(&traj, "map_state");
    assert!(map.iter().all(|m| *m == 1.0 || *m == 2.0));

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("o/report.json")).unwrap()).unwrap();
    assert_eq!(report["scheme"], "wonham-ito");
    assert_eq!(report["sign_variant"], "innovation");
    assert_eq!(report["correction_sign"], -1);
    assert_eq!(report["clamps"], 0);
}

#[test]
fn filter_reads_observation_file_and_writes_weights() {
    let dir = tempfile::tempdir().unwrap();
    ok(&mjfilter(&["simulate", "--out", "o"], dir.path()));
    fs::write(
        dir.path().join("cfg.json"),
        r#"{"scheme": "zakai-ito", "observations": "o/observations.csv", "output_dir": "z"}"#,
    )
    .unwrap();
    ok(&mjfilter(&["filter", "--config", "cfg.json"], dir.path()));
    let psi = fs::read_to_string(dir.path().join("z/psi.csv")).unwrap();
    assert_eq!(psi.lines().next().unwrap(), "r,t,psi_1,psi_2,log_normalizer");
    assert_eq!(psi.lines().count(), 5002);

    // Same increments as the synthesized run, so the oracle columns line up.
    ok(&mjfilter(&["filter", "--out", "w"], dir.path()));
    fs::write(
        dir.path().join("bayes.json"),
        r#"{"scheme": "bayes-oracle", "observations": "o/observations.csv", "output_dir": "b"}"#,
    )
    .unwrap();
    ok(&mjfilter(&["filter", "--config", "bayes.json"], dir.path()));
    let w = column(&fs::read_to_string(dir.path().join("w/trajectory.csv")).unwrap(), "p_1");
    let b = column(&fs::read_to_string(dir.path().join("b/trajectory.csv")).unwrap(), "p_1");
    let gap = w.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(gap < 0.1, "{gap}");
}

#[test]
fn single_state_model_has_constant_signal() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("cfg.json"),
        r#"{"model": {"levels": [0.7], "rates": [[0.0]], "initial": [1.0]}, "horizon": 1.0}"#,
    )
    .unwrap();
    ok(&mjfilter(&["simulate", "--config", "cfg.json", "--out", "o"], dir.path()));
    let obs = fs::read_to_string(dir.path().join("o/observations.csv")).unwrap();
    assert!(column(&obs, "x_level").iter().all(|x| *x == 0.7));
}

#[test]
fn prediction_needs_a_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let out = mjfilter(&["predict", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("run `filter` first"));

    ok(&mjfilter(&["filter", "--out", "o"], dir.path()));
    ok(&mjfilter(&["predict", "--out", "o"], dir.path()));
    let traj = fs::read_to_string(dir.path().join("o/trajectory.csv")).unwrap();
    let pred = fs::read_to_string(dir.path().join("o/predictions.csv")).unwrap();
    assert_eq!(pred.lines().next().unwrap(), "h,p_1,p_2");
    let last: Vec<&str> = traj.lines().last().unwrap().split(',').collect();
    let first: Vec<&str> = pred.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(first[1..3], last[4..6]);
    let far: Vec<f64> = pred.lines().last().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(far[0], 50.0);
    assert!((far[1] - 0.5).abs() <= 1e-8 && (far[2] - 0.5).abs() <= 1e-8);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("bad.json"),
        r#"{"model": {"levels": [1, -1], "rates": [[0, -1], [1, 0]], "initial": [0.5, 0.5]}}"#,
    )
    .unwrap();
    let out = mjfilter(&["filter", "--config", "bad.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("negative rate"));

    let out = mjfilter(&["simulate", "--dt", "0.003", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(2));

    fs::write(dir.path().join("typo.json"), r#"{"horizn": 1.0}"#).unwrap();
    assert_eq!(mjfilter(&["simulate", "--config", "typo.json"], dir.path()).status.code(), Some(2));

    // Equal levels carry no information: the filter cannot beat the
    // unconditional mean, so the validation threshold fails.
    fs::write(
        dir.path().join("flat.json"),
        r#"{"model": {"levels": [0.5, 0.5], "rates": [[0, 1], [1, 0]], "initial": [0.9, 0.1]}, "horizon": 0.5}"#,
    )
    .unwrap();
    let out = mjfilter(&["validate", "--config", "flat.json", "--replicas", "200", "--out", "v"], dir.path());
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    let out = mjfilter(&["validate", "--replicas", "500", "--out", "v"], dir.path());
    ok(&out);
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("v/validation.json")).unwrap()).unwrap();
    for key in ["z_scores", "mse_filter", "mse_const", "truncation_bound"] {
        assert!(!v[key].is_null(), "{key}");
    }
    assert!(v["truncation_bound"].as_f64().unwrap() <= 1e-4);
}

#[test]
fn adjudication_report_on_benchmark() {
    let dir = tempfile::tempdir().unwrap();
    let out = mjfilter(&["adjudicate", "--out", "o"], dir.path());
    ok(&out);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("o/adjudication.json")).unwrap()).unwrap();
    assert_eq!(report["verdict"], serde_json::json!({"correction_sign": -1, "eq11": "innovation"}));

    fs::write(
        dir.path().join("zero.json"),
        r#"{"model": {"levels": [0, 0], "rates": [[0, 1], [1, 0]], "initial": [0.9, 0.1]}, "horizon": 1.0, "replicas": 2}"#,
    )
    .unwrap();
    ok(&mjfilter(&["adjudicate", "--config", "zero.json", "--out", "z"], dir.path()));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("z/adjudication.json")).unwrap()).unwrap();
    assert_eq!(report["verdict"], "indistinguishable");
}

#[test]
fn convergence_table_layout() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.json"), r#"{"horizon": 1.0, "replicas": 2, "halvings": 2}"#).unwrap();
    ok(&mjfilter(&["convergence", "--config", "c.json", "--out", "o"], dir.path()));
    let table = fs::read_to_string(dir.path().join("o/convergence.csv")).unwrap();
    assert_eq!(table.lines().next().unwrap(), "pair,level,dt,discrepancy,order");
    let identity: Vec<&str> = table.lines().filter(|l| l.starts_with("telegraph-ito vs")).collect();
    assert_eq!(identity.len(), 3);
    for line in identity {
        let e: f64 = line.split(',').nth(3).unwrap().parse().unwrap();
        assert!(e <= 1e-12, "{line}");
    }

    fs::write(dir.path().join("short.json"), r#"{"halvings": 1}"#).unwrap();
    let out = mjfilter(&["convergence", "--config", "short.json", "--out", "s"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}
