use fbundle::algebra::GradedAlgebra;
use fbundle::cli::{run_job, Command, JobCaps, JobSpec};
use fbundle::connection::{product, rank_one_from_potential, Connection};
use fbundle::series::{MatSeries, Ring, Series, Var};
use serde_json::{json, Value};
use std::path::PathBuf;
use std::process::Command as Process;

fn write_input(name: &str, v: &Value) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("fbundle-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(v).unwrap()).unwrap();
    path
}

fn job(command: Command) -> JobSpec {
    JobSpec { command, caps: JobCaps::default(), seed: 0, out: None }
}

fn log_residue_without_form() -> Value {
    let r = Ring::new(vec![Var::log("q")], "u", 3, 3);
    let q = MatSeries::from_entries(&r, 1, 1, vec![Series::parse(&r, "u").unwrap()]);
    let c = Connection::new(&r, MatSeries::zeros(&r, 1, 1), vec![q]).unwrap();
    serde_json::to_value(c.to_json()).unwrap()
}

fn point_projbundle() -> Value {
    let alg = GradedAlgebra::point();
    json!({ "algebra": alg.descriptor(), "rank": 2, "chern": ["0", "0"], "c1_tangent": "0" })
}

#[test]
fn frame_rejects_log_direction_without_residue_form() {
    let path = write_input("frame413.json", &log_residue_without_form());
    let out = run_job(&job(Command::Frame { input: path }));
    assert_ne!(out.exit_code, 0);
    let err = out.report.error.expect("stage error");
    assert_eq!(err.stage, "frame");
    assert!(err.tag.starts_with("FramingAtPoint/"), "{}", err.tag);
}

#[test]
fn projbundle_point_reports_limit_operator() {
    let path = write_input("proj_point.json", &point_projbundle());
    let out = run_job(&job(Command::Projbundle { input: path }));
    assert_eq!(out.exit_code, 0, "{:?}", out.report);
    assert_eq!(out.report.result["k_lim"], json!([["0", "2"], ["2", "0"]]));
    assert_eq!(out.report.result["verified"], json!(true));
}

#[test]
fn decompose_presplit_product_is_identity() {
    let r1 = Ring::new(vec![Var::plain("a")], "u", 3, 2);
    let r2 = Ring::new(vec![Var::plain("b")], "u", 3, 2);
    let c1 = rank_one_from_potential(&Series::parse(&r1, "1 + a + a^2*u").unwrap());
    let c2 = rank_one_from_potential(&Series::parse(&r2, "2 + b + b^3").unwrap());
    let c = product(&c1, &c2).unwrap();
    let input = json!({ "connection": c.to_json(), "cyclic": ["1", "1"], "blocks": [[0], [1]] });
    let path = write_input("decompose_split.json", &input);
    let out = run_job(&job(Command::Decompose { input: path }));
    assert_eq!(out.exit_code, 0, "{:?}", out.report);
    assert_eq!(out.report.result["identity_gauge"], json!(true));
    assert_eq!(out.report.result["identity_coordinates"], json!(true));
}

#[test]
fn malformed_input_exits_with_parse_error() {
    let dir = std::env::temp_dir().join(format!("fbundle-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("broken.json");
    std::fs::write(&path, "{ \"rank\": 1,\n  \"vars\": [").unwrap();
    let out = run_job(&job(Command::CheckFlat { input: path }));
    assert_eq!(out.exit_code, 2);
    let err = out.report.error.unwrap();
    assert_eq!(err.stage, "parse");
    assert_eq!(err.kind, "Parse");
    assert!(err.message.contains("line 2"), "{}", err.message);
}

#[test]
fn zero_caps_rejected() {
    let path = write_input("proj_point_caps.json", &point_projbundle());
    let mut spec = job(Command::Projbundle { input: path });
    spec.caps.u = Some(0);
    let out = run_job(&spec);
    assert_eq!(out.exit_code, 1);
    assert_eq!(out.report.error.unwrap().kind, "InvalidCaps");
}

#[test]
fn reports_are_bit_identical() {
    let path = write_input("proj_point_repeat.json", &point_projbundle());
    let spec = JobSpec { seed: 17, ..job(Command::Projbundle { input: path }) };
    let a = fbundle::cli::report_json(&run_job(&spec).report);
    let b = fbundle::cli::report_json(&run_job(&spec).report);
    assert_eq!(a, b);
}

#[test]
fn binary_writes_report_and_exit_code() {
    let input = write_input("frame_bin.json", &log_residue_without_form());
    let report = input.with_extension("report.json");
    let status = Process::new(env!("CARGO_BIN_EXE_fbundle"))
        .args(["frame", input.to_str().unwrap(), "--out", report.to_str().unwrap()])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["schema"], json!("fbundle-report/1"));
    assert_eq!(v["passed"], json!(false));
}

#[test]
fn env_var_sets_default_caps() {
    let input = write_input("proj_point_env.json", &point_projbundle());
    let report = input.with_extension("env.report.json");
    let status = Process::new(env!("CARGO_BIN_EXE_fbundle"))
        .args(["projbundle", input.to_str().unwrap(), "--out", report.to_str().unwrap()])
        .env("FBUNDLE_ORDER_U", "3")
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["caps"]["u"], json!(3));
    assert_eq!(v["result"]["u_cap"], json!(3));
}
