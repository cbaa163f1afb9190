use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn etank(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_etank"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn etank")
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn exponential_example_exits_with_escape() {
    let dir = tempfile::tempdir().unwrap();
    let out = etank(
        dir.path(),
        &["simulate", "--scenario", "example1", "--tank", "exponential", "--dt", "1e-4", "--t-end", "3", "--out", "run1.csv"],
    );
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    let manifest: toml::Table =
        fs::read_to_string(dir.path().join("run1.csv.manifest.toml")).unwrap().parse().unwrap();
    let term = manifest["termination"].as_table().unwrap();
    assert_eq!(term["reason"].as_str(), Some("escape"));
    let t = term["time"].as_float().unwrap();
    assert!((t - 2f64.sqrt()).abs() < 1e-3, "{t}");
    assert_eq!(manifest["parameters"]["law"].as_str(), Some("exponential"));
    assert!(manifest.contains_key("config_hash"));
    assert!(manifest.contains_key("tool_version"));
    // Partial trace is still written.
    let csv = fs::read_to_string(dir.path().join("run1.csv")).unwrap();
    assert!(csv.lines().count() > 14000);
}

#[test]
fn valve_run_completes_and_audits() {
    let dir = tempfile::tempdir().unwrap();
    let out = etank(
        dir.path(),
        &["simulate", "--scenario", "example1", "--tank", "quadratic", "--valve", "--epsilon", "0.01", "--out", "v.csv"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let audit = etank(dir.path(), &["audit", "v.csv", "--storage", "total"]);
    assert_eq!(code(&audit), 0, "{}", stdout(&audit));
    assert!(stdout(&audit).contains("passed = true"));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&etank(dir.path(), &["simulate"])), 1);
    let unknown = etank(dir.path(), &["simulate", "--scenario", "nope"]);
    assert_eq!(code(&unknown), 1);
    assert!(stderr(&unknown).contains("example1"));
    assert_eq!(code(&etank(dir.path(), &["simulate", "--scenario", "example1", "--tank", "cubic"])), 1);
    assert_eq!(code(&etank(dir.path(), &["simulate", "--scenario", "example1", "--dt", "-1"])), 1);
    assert_eq!(code(&etank(dir.path(), &["frobnicate"])), 1);
    assert_eq!(code(&etank(dir.path(), &["--help"])), 0);
}

const HEADER: &str = "t,x_0,x_t,H,T,Htot,alpha,P_c,P_t,P_e,P_d";

#[test]
fn violating_trace_fails_audit() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = format!("{HEADER}\n");
    for k in 0..=10 {
        let t = k as f64 * 0.1;
        let h = 0.5 + t;
        text.push_str(&format!("{t},0,1,{h},0.5,{},1,0,0,0,0\n", h + 0.5));
    }
    fs::write(dir.path().join("bad.csv"), text).unwrap();
    let out = etank(dir.path(), &["audit", "bad.csv"]);
    assert_eq!(code(&out), 3, "{}", stdout(&out));
    assert!(stdout(&out).contains("FAIL"));
    assert_eq!(code(&etank(dir.path(), &["audit", "bad.csv", "--storage", "plant"])), 3);
}

#[test]
fn audit_input_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let good = format!("{HEADER}\n0,0,1,0,0.5,0.5,1,0,0,0,0\n0.1,0,1,0,0.5,0.5,1,0,0,0,0\n");
    fs::write(dir.path().join("good.csv"), &good).unwrap();
    assert_eq!(code(&etank(dir.path(), &["audit", "good.csv"])), 0);
    assert_eq!(code(&etank(dir.path(), &["audit", "good.csv", "--tol", "-1"])), 1);
    assert_eq!(code(&etank(dir.path(), &["audit", "good.csv", "--storage", "both"])), 1);
    assert_eq!(code(&etank(dir.path(), &["audit", "missing.csv"])), 1);

    let bad = format!("{HEADER}\n0,0,1,0,0.5,0.5,1,0,0,0,0\n0.1,0,1,0,x,0.5,1,0,0,0,0\n");
    fs::write(dir.path().join("bad.csv"), bad).unwrap();
    let out = etank(dir.path(), &["audit", "bad.csv"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("row 3"), "{}", stderr(&out));
}

fn read_wide(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn summary_diff(summary: &str) -> f64 {
    let rest = summary.split("= ").nth(1).unwrap();
    rest.split_whitespace().next().unwrap().parse().unwrap()
}

#[test]
fn compare_tanks_default() {
    let dir = tempfile::tempdir().unwrap();
    let out = etank(dir.path(), &["compare-tanks", "--out", "fig3.csv"]);
    assert_eq!(code(&out), 0);
    let summary = stdout(&out);
    assert!(summary_diff(&summary) <= 1e-6, "{summary}");
    let header = fs::read_to_string(dir.path().join("fig3.csv")).unwrap();
    assert!(header.starts_with("t,T_quad,T_exp,xt_quad,xt_exp\n"));
}

#[test]
fn compare_tanks_short_horizon_has_no_termination() {
    let dir = tempfile::tempdir().unwrap();
    let out = etank(dir.path(), &["compare-tanks", "--t-end", "1.0", "--out", "c.csv"]);
    assert_eq!(code(&out), 0);
    let rows = read_wide(&dir.path().join("c.csv"));
    let last = rows.last().unwrap();
    assert_eq!(last[0].parse::<f64>().unwrap(), 1.0);
    assert!(rows.iter().all(|r| r.iter().all(|c| !c.is_empty())));
    assert_eq!(stdout(&out).matches("completed").count(), 2);
}

#[test]
fn compare_tanks_heavier_mass() {
    let dir = tempfile::tempdir().unwrap();
    let out = etank(dir.path(), &["compare-tanks", "--m", "2", "--f-bar", "1", "--out", "c.csv"]);
    assert_eq!(code(&out), 0);
    let rows = read_wide(&dir.path().join("c.csv"));
    let last_filled = |col: usize| {
        rows.iter()
            .filter(|r| !r[col].is_empty())
            .map(|r| r[0].parse::<f64>().unwrap())
            .fold(0.0, f64::max)
    };
    assert!((last_filled(1) - 2.0).abs() < 2e-3);
    assert!((last_filled(2) - 2.0).abs() < 2e-3);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("run.toml"),
        "scenario = \"example1\"\ntank = \"quadratic\"\nt-end = 0.5\ndt = 1e-3\nout = \"from_file.csv\"\n",
    )
    .unwrap();
    let out = etank(dir.path(), &["simulate", "--config", "run.toml", "--t-end", "0.2"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let rows = fs::read_to_string(dir.path().join("from_file.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 201);
}

#[test]
fn batch_reports_active_failures() {
    let dir = tempfile::tempdir().unwrap();
    let passive = etank(dir.path(), &["batch", "--cases", "3", "--t-end", "0.5"]);
    assert_eq!(code(&passive), 0, "{}", stdout(&passive));
    let active = etank(dir.path(), &["batch", "--scenario", "active-env", "--cases", "3", "--t-end", "0.5"]);
    assert_eq!(code(&active), 3, "{}", stdout(&active));
}
