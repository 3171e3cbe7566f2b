//! End-to-end runs of the `boxloop` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn boxloop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_boxloop")).args(args).current_dir(repo()).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("stdout is not JSON ({e}): {}", String::from_utf8_lossy(&o.stdout)))
}

fn stderr_error(o: &Output) -> Value {
    let v: Value = serde_json::from_slice(&o.stderr).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {}", String::from_utf8_lossy(&o.stderr)));
    v["error"].clone()
}

const PPL_CONFIG: &str = "fixtures/loop/ppl_eight_schools.toml";

fn ppl_run(out: &Path) -> PathBuf {
    let o = boxloop(&["ppl-search", "--config", PPL_CONFIG, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    PathBuf::from(stdout_json(&o)["dir"].as_str().unwrap())
}

#[test]
fn ppl_search_is_deterministic_and_replays() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (da, db) = (ppl_run(a.path()), ppl_run(b.path()));
    assert_eq!(da.file_name(), db.file_name());
    let ra = std::fs::read(da.join("record.json")).unwrap();
    assert_eq!(ra, std::fs::read(db.join("record.json")).unwrap());
    assert!(da.join("run.toml").is_file());

    let record: Value = serde_json::from_slice(&ra).unwrap();
    let candidates = record["rounds"][0]["candidates"].as_array().unwrap();
    assert_eq!(candidates.len(), 3);
    assert_eq!(candidates.iter().filter(|c| c["score"].is_number()).count(), 2);

    let o = boxloop(&["replay", da.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout_json(&o)["checked"], 2);

    // A tampered score is caught.
    let mut tampered = record.clone();
    let c = tampered["rounds"][0]["candidates"]
        .as_array_mut()
        .unwrap()
        .iter_mut()
        .find(|c| c["score"].is_number())
        .unwrap();
    c["score"] = Value::from(c["score"].as_f64().unwrap() + 1.0);
    std::fs::write(db.join("record.json"), serde_json::to_vec_pretty(&tampered).unwrap()).unwrap();
    let o = boxloop(&["replay", db.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    let e = stderr_error(&o);
    assert_eq!((e["kind"].as_str(), e["exit_code"].as_i64()), (Some("replay_mismatch"), Some(3)));

    // Report with the bundled reference program.
    let o = boxloop(&["report", da.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let md = String::from_utf8(o.stdout).unwrap();
    assert!(md.contains("## Reference program"), "{md}");
    let report: Value = serde_json::from_slice(&std::fs::read(da.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["proposals"], 3);
    assert!(report["reference"]["comparison"]["verdict"].is_string());
    for svg in ["scores.svg", "predictive.svg"] {
        let text = std::fs::read_to_string(da.join(svg)).unwrap();
        assert!(text.starts_with("<svg"), "{svg}");
    }
}

#[test]
fn gp_search_on_small_series() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("series.csv");
    let mut text = String::from("x,y\n");
    for i in 0..36 {
        let x = 1990.0 + i as f64 / 12.0;
        let y = 0.05 * i as f64 + (std::f64::consts::TAU * i as f64 / 12.0).sin() + 0.1 * ((i * 7 % 5) as f64 - 2.0);
        text.push_str(&format!("{x},{y}\n"));
    }
    std::fs::write(&csv, text).unwrap();
    let out = dir.path().join("runs");
    let args = [
        "gp-search",
        "--config",
        "fixtures/loop/gp_air.toml",
        "--dataset",
        csv.to_str().unwrap(),
        "--set",
        "data.split=30",
        "--out",
        out.to_str().unwrap(),
        "--report",
    ];
    let o = boxloop(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = stdout_json(&o);
    assert_eq!(v["rounds"], 2);
    // Two of the eight scripted proposals do not parse.
    assert_eq!(v["success_rate"], 0.75);
    let run = PathBuf::from(v["dir"].as_str().unwrap());
    let fit = std::fs::read_to_string(run.join("fit.svg")).unwrap();
    assert!(fit.contains("class=\"extrapolation\""));
    assert!(run.join("report.md").is_file());
}

#[test]
fn config_errors_exit_1() {
    for args in [
        &["gp-search", "--preset", "ppl_default"][..],
        &["ppl-search", "--preset", "no_such_preset"],
        &["ppl-search", "--config", PPL_CONFIG, "--set", "roundz=2"],
        &["ppl-search", "--config", "fixtures/loop/missing.toml"],
        &["frobnicate"],
        &["simulate"],
    ] {
        let o = boxloop(args);
        assert_eq!(code(&o), 1, "{args:?}");
        let e = stderr_error(&o);
        assert_eq!((e["kind"].as_str(), e["exit_code"].as_i64()), (Some("config"), Some(1)), "{args:?}");
    }
}

#[test]
fn exhausted_proposer_is_a_run_failure() {
    let dir = tempfile::tempdir().unwrap();
    let o = boxloop(&["ppl-search", "--config", PPL_CONFIG, "--rounds", "2", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    let e = stderr_error(&o);
    assert_eq!(e["kind"], "run_failure");
    assert_eq!(e["detail"]["rounds_completed"], 1);
}

#[test]
fn print_config_round_trips() {
    let o = boxloop(&["ppl-search", "--config", PPL_CONFIG, "--seed", "9", "--print-config"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("seed = 9"), "{text}");
    assert!(text.contains("[paths]"));
}

#[test]
fn compare_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    std::fs::write(&a, r#"{"elpd": 7, "se": 2}"#).unwrap();
    std::fs::write(&b, r#"{"elpd": 0, "se": 0}"#).unwrap();
    let o = boxloop(&["compare", a.to_str().unwrap(), b.to_str().unwrap()]);
    assert_eq!((code(&o), String::from_utf8(o.stdout).unwrap().trim()), (0, "tie"));
    std::fs::write(&b, r#"{"elpd": -2, "se": 0}"#).unwrap();
    let o = boxloop(&["compare", "--json", a.to_str().unwrap(), b.to_str().unwrap()]);
    let v = stdout_json(&o);
    assert_eq!((v["verdict"].as_str(), v["diff"].as_f64()), (Some("a"), Some(9.0)));
}

#[test]
fn simulate_preset_and_program() {
    let o = boxloop(&["simulate", "--preset", "lv_decaying", "--seed", "1"]);
    assert_eq!(code(&o), 0);
    let csv = String::from_utf8(o.stdout).unwrap();
    assert_eq!(csv.lines().next(), Some("t,b,c"));
    assert_eq!(csv, String::from_utf8(boxloop(&["simulate", "--preset", "lv_decaying", "--seed", "1"]).stdout).unwrap());

    let dir = tempfile::tempdir().unwrap();
    let params = dir.path().join("params.json");
    let o = boxloop(&[
        "simulate",
        "--program",
        "fixtures/ppl/dugongs_expert.ppl",
        "--data",
        "dugongs",
        "--fix",
        "alpha=2.6",
        "--fix",
        "beta=1",
        "--fix",
        "tau=10",
        "--params-out",
        params.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8(o.stdout).unwrap().lines().count() > 20);
    assert!(params.is_file());
}

#[test]
fn score_prints_the_convergence_report() {
    let o = boxloop(&["score", "--backend", "ppl", "--program", "fixtures/ppl/dugongs_expert.ppl", "--data", "dugongs"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = stdout_json(&o);
    for key in ["elpd_loo", "se", "rhat_max", "elpd_pointwise"] {
        assert!(!v[key].is_null(), "{key} missing: {v}");
    }
}
