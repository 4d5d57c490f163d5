//! End-to-end runs of the `ou-fpt` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ou-fpt"));
    c.env_remove("OU_FPT_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn assert_exit(o: &Output, code: i32) {
    assert_eq!(o.status.code(), Some(code), "stderr: {}", stderr(o));
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn data_rows(path: &Path) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    lines.next().expect("column header");
    lines.map(|l| l.split(',').map(str::to_string).collect()).collect()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const BASE: [&str; 8] = ["--a", "-1", "--b", "1", "--x0", "0", "--sigma", "1"];

fn psi_columns(path: &Path) -> Vec<(f64, f64)> {
    data_rows(path)
        .iter()
        .map(|r| (r[1].parse().unwrap(), r[2].parse().unwrap()))
        .collect()
}

#[test]
fn charfun_csv_header_zero_row_and_scaling() {
    let dir = tempfile::tempdir().unwrap();
    let one = dir.path().join("one.csv");
    let two = dir.path().join("two.csv");
    let wide = dir.path().join("wide.csv");
    let o = run(&[&["charfun", "--theta", "1", "--alpha-start", "-10", "--alpha-stop", "10", "--alpha-n", "21", "--out", path_str(&one)][..], &BASE].concat());
    assert_exit(&o, 0);
    let text = std::fs::read_to_string(&one).unwrap();
    assert!(text.starts_with("# ou-fpt "));
    assert!(text.lines().nth(1).unwrap().starts_with("# config: {"));
    assert!(text.contains("\nalpha,psi_re,psi_im\n"));
    let rows = data_rows(&one);
    assert_eq!(rows.len(), 21);
    assert_eq!(rows[10], ["0e0", "1e0", "0e0"]);

    let o = run(&[&["charfun", "--theta", "2", "--alpha-start", "-20", "--alpha-stop", "20", "--alpha-n", "21", "--out", path_str(&two)][..], &BASE].concat());
    assert_exit(&o, 0);
    for (p, q) in psi_columns(&one).iter().zip(psi_columns(&two)) {
        assert!((p.0 - q.0).abs() < 1e-10 && (p.1 - q.1).abs() < 1e-10);
    }

    let mut args = vec!["charfun", "--theta", "1", "--alpha-start", "-10", "--alpha-stop", "10", "--alpha-n", "21", "--out", path_str(&wide)];
    args.extend_from_slice(&BASE[..6]);
    args.extend_from_slice(&["--sigma", "3"]);
    assert_exit(&run(&args), 0);
    let differs = psi_columns(&one)
        .iter()
        .zip(psi_columns(&wide))
        .any(|(p, q)| (p.0 - q.0).abs() > 1e-3);
    assert!(differs, "sigma should change the shape");
}

#[test]
fn moments_report_mirrors_and_is_theta_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let mut reports = Vec::new();
    for (name, theta, x0) in [("l", "1", "-0.4"), ("r", "1", "0.4"), ("t", "7", "0.4")] {
        let out = dir.path().join(format!("{name}.json"));
        let o = run(&["moments", "--theta", theta, "--sigma", "1", "--a", "-1", "--b", "1", "--x0", x0, "--out", path_str(&out)]);
        assert_exit(&o, 0);
        reports.push(json(&out));
    }
    assert_eq!(reports[0]["schema_version"], 1);
    assert_eq!(reports[0]["command"], "moments");
    // mirrored start: same statistics up to finite-difference rounding
    for field in ["mean", "std", "cv", "skewness"] {
        let l = reports[0]["summary"][field].as_f64().unwrap();
        let r = reports[1]["summary"][field].as_f64().unwrap();
        assert!((l / r - 1.0).abs() < 1e-7, "{field}: {l} vs {r}");
    }
    assert_eq!(reports[0]["limiting_cv"], reports[1]["limiting_cv"]);
    let cv = |r: &Value| r["summary"]["cv"].as_f64().unwrap();
    assert!((cv(&reports[1]) / cv(&reports[2]) - 1.0).abs() < 1e-8);
}

#[test]
fn sweeps_write_csv_and_trend_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sigma.csv");
    let o = run(&["sweep-sigma", "--theta", "1", "--a", "-1", "--b", "1", "--x0", "0", "--from", "0.25", "--to", "100", "--points", "25", "--out", path_str(&out)]);
    assert_exit(&o, 0);
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.contains("\nswept_value,mean,cv,error\n"));
    let rows = data_rows(&out);
    assert_eq!(rows.len(), 25);
    assert!(rows.iter().all(|r| r[3].is_empty()));
    let side = json(&out.with_extension("json"));
    assert_eq!(side["schema_version"], 1);
    assert_eq!(side["cv_trend"]["trend"], "decreasing");
    assert_eq!(side["mean_trend"]["trend"], "decreasing");

    let out = dir.path().join("reflect.csv");
    let o = run(&["sweep-sigma", "--theta", "1", "--a", "-1", "--b", "1", "--x0", "0", "--boundary", "reflect-absorb", "--from", "0.1", "--to", "100", "--points", "25", "--out", path_str(&out)]);
    assert_exit(&o, 0);
    assert_eq!(json(&out.with_extension("json"))["cv_trend"]["trend"], "interior-minimum");

    let out = dir.path().join("b.csv");
    let o = run(&["sweep-threshold", "--theta", "1", "--sigma", "1", "--boundary", "reflect-absorb", "--x0-rule", "plus-half-b", "--from", "0.05", "--to", "5", "--points", "20", "--out", path_str(&out)]);
    assert_exit(&o, 0);
    let side = json(&out.with_extension("json"));
    assert_eq!(side["parameter"], "b");
    assert_eq!(side["cv_trend"]["trend"], "decreasing");
    assert_eq!(side["config"]["x0_rule"], "plus-half-b");
}

#[test]
fn sweep_with_too_many_failed_rows_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("tiny.csv");
    // sigma far below the threshold gap: moments overflow
    let o = run(&["sweep-sigma", "--theta", "1", "--a", "-1", "--b", "1", "--x0", "0", "--from", "0.001", "--to", "0.01", "--points", "10", "--out", path_str(&out)]);
    assert_exit(&o, 3);
    assert!(stderr(&o).contains("sweep rows succeeded"));
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn simulate_is_deterministic_and_matches_moments() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &PathBuf| {
        vec![
            "simulate".to_string(), "--theta".into(), "4".into(), "--sigma".into(), "1".into(),
            "--a".into(), "-1".into(), "--b".into(), "1".into(), "--x0".into(), "0".into(),
            "--dt".into(), "1e-4".into(), "--paths".into(), "20000".into(), "--seed".into(), "7".into(),
            "--out".into(), out.to_str().unwrap().to_string(),
        ]
    };
    let first = dir.path().join("first.csv");
    let second = dir.path().join("second.csv");
    assert_exit(&bin().args(args(&first)).output().unwrap(), 0);
    assert_exit(&bin().env("OU_FPT_THREADS", "1").args(args(&second)).output().unwrap(), 0);
    assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());
    assert_eq!(data_rows(&first).len(), 20000);

    let summary = json(&first.with_extension("json"));
    let moments_out = dir.path().join("m.json");
    assert_exit(&run(&["moments", "--theta", "4", "--sigma", "1", "--a", "-1", "--b", "1", "--x0", "0", "--out", path_str(&moments_out)]), 0);
    let exact = json(&moments_out);
    let m = &summary["moments"];
    let z_mean = (m["summary"]["mean"].as_f64().unwrap() - exact["summary"]["mean"].as_f64().unwrap()) / m["mean_stderr"].as_f64().unwrap();
    let z_cv = (m["summary"]["cv"].as_f64().unwrap() - exact["summary"]["cv"].as_f64().unwrap()) / m["cv_stderr"].as_f64().unwrap();
    assert!(z_mean.abs() < 3.0 && z_cv.abs() < 3.0, "z_mean {z_mean}, z_cv {z_cv}");
    assert_eq!(summary["n_censored"], 0);
}

#[test]
fn fit_dist_reports_each_sigma() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fit.json");
    let o = run(&["fit-dist", "--a", "-1", "--b", "1", "--x0", "0", "--target-mean", "1", "--target-cv", "0.5", "--sigmas", "0.5,1,2", "--theta-lo", "1e-3", "--theta-hi", "1e2", "--out", path_str(&out)]);
    assert_exit(&o, 0);
    let r = json(&out);
    let fits = r["fits"].as_array().unwrap();
    assert_eq!(fits.len(), 3);
    let thetas: Vec<f64> = fits.iter().map(|f| f["fit"]["theta_opt"].as_f64().unwrap()).collect();
    assert!(thetas.windows(2).all(|w| w[1] <= w[0]), "{thetas:?}");
    assert!(fits.iter().all(|f| f["fit"]["converged"] == true));
    assert!((r["target"]["shape"].as_f64().unwrap() - 4.0).abs() < 1e-12);
}

#[test]
fn fit_moments_round_trip_and_unreachable() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fm.json");
    let o = run(&["fit-moments", "--a", "-1", "--b", "1", "--x0", "0", "--target-mean", "3", "--target-cv", "0.9", "--out", path_str(&out)]);
    assert_exit(&o, 0);
    let fit = &json(&out)["fit"];
    let theta = fit["theta_opt"].as_f64().unwrap().to_string();
    let sigma = fit["sigma_opt"].as_f64().unwrap().to_string();
    let check = dir.path().join("check.json");
    assert_exit(&run(&["moments", "--theta", &theta, "--sigma", &sigma, "--a", "-1", "--b", "1", "--x0", "0", "--out", path_str(&check)]), 0);
    let s = &json(&check)["summary"];
    assert!((s["mean"].as_f64().unwrap() / 3.0 - 1.0).abs() < 1e-3);
    assert!((s["cv"].as_f64().unwrap() / 0.9 - 1.0).abs() < 1e-3);

    let out = dir.path().join("low.json");
    let o = run(&["fit-moments", "--a", "-1", "--b", "1", "--x0", "0", "--target-mean", "3", "--target-cv", "0.5", "--out", path_str(&out)]);
    assert_exit(&o, 3);
    assert!(stderr(&o).contains("0.816"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(
        &cfg,
        r#"{"theta": 2.0, "sigma": 1.0, "a": -1.0, "b": 1.0, "x0": 0.0, "boundary": "reflect-absorb"}"#,
    )
    .unwrap();
    let out = dir.path().join("m.json");
    let o = run(&["moments", "--config", path_str(&cfg), "--theta", "5", "--out", path_str(&out)]);
    assert_exit(&o, 0);
    let r = json(&out);
    assert_eq!(r["config"]["theta"], 5.0);
    assert_eq!(r["config"]["boundary"], "reflect-absorb");
}

#[test]
fn config_errors_exit_2_with_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"theta": 1.0, "sim": {"dt": "small"}}"#).unwrap();
    let out = dir.path().join("x.csv");
    let cases: Vec<(Vec<&str>, &str)> = vec![
        (vec!["simulate", "--config", path_str(&cfg), "--out", path_str(&out)], "sim.dt"),
        (vec!["moments", "--theta", "1", "--sigma", "1", "--a", "-1", "--b", "1", "--x0", "3", "--out", path_str(&out)], "x0"),
        (vec!["moments", "--theta", "1", "--sigma", "1", "--a", "-1", "--b", "1", "--x0", "0"], "out"),
        (vec!["moments", "--theta", "0", "--sigma", "1", "--a", "-1", "--b", "1", "--x0", "0", "--out", path_str(&out)], "theta"),
        (vec!["charfun", "--theta", "1", "--sigma", "1", "--a", "-1", "--b", "1", "--x0", "0", "--alpha-start", "0", "--alpha-stop", "1", "--out", path_str(&out)], "alpha.n"),
        (vec!["fit-moments", "--a", "-1", "--b", "1", "--x0", "0", "--target-mean", "1", "--out", path_str(&out)], "target.cv"),
        (vec!["fit-dist", "--a", "-1", "--b", "1", "--x0", "0", "--target-mean", "1", "--target-cv", "0.5", "--sigmas", "2,1", "--out", path_str(&out)], "fit.sigmas[1]"),
        (vec!["sweep-sigma", "--theta", "1", "--a", "-1", "--b", "1", "--x0", "0", "--from", "1", "--to", "2", "--points", "3", "--out", "s.json"], "out"),
    ];
    for (args, field) in cases {
        let o = run(&args);
        assert_exit(&o, 2);
        assert!(stderr(&o).contains(&format!("{field}: ")), "{args:?}: {}", stderr(&o));
    }
    assert!(!out.exists());
    let o = run(&["moments", "--boundary", "sideways"]);
    assert_exit(&o, 2);
}

#[test]
fn threads_env_is_validated() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.json");
    let args = ["moments", "--theta", "1", "--sigma", "1", "--a", "-1", "--b", "1", "--x0", "0", "--out", path_str(&out)];
    let o = bin().env("OU_FPT_THREADS", "zero").args(args).output().unwrap();
    assert_exit(&o, 2);
    assert!(stderr(&o).contains("OU_FPT_THREADS: "));
    assert_exit(&bin().env("OU_FPT_THREADS", "2").args(args).output().unwrap(), 0);
}

#[test]
fn computation_error_exits_3_and_leaves_no_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("psi.csv");
    // a start near the threshold loses precision at large alpha
    let o = run(&["charfun", "--theta", "1", "--sigma", "1", "--a", "-1", "--b", "1", "--x0", "0.9", "--alpha-start", "0", "--alpha-stop", "5000", "--alpha-n", "11", "--out", path_str(&out)]);
    assert_exit(&o, 3);
    assert!(stderr(&o).contains("computation error"));
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}
