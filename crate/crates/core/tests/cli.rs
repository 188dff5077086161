use std::path::PathBuf;
use std::process::{Command, Output};

fn errcalc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_errcalc")).args(args).output().unwrap()
}

fn write_config(name: &str, text: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("errcalc-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

const SMALL: &str = r#"{"seed": 3, "samples": {"m_samples": 2000, "realizations": 2000, "image_samples": 2000, "points": 20}}"#;

#[test]
fn check_writes_reports_and_exits_zero() {
    let cfg = write_config("ok.json", SMALL);
    let out = cfg.with_extension("out.json");
    let o = errcalc(&["check", "--config", cfg.to_str().unwrap(), "--suite", "prop5", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let reports: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let arr = reports.as_array().unwrap();
    assert!(arr.len() >= 5);
    assert!(arr.iter().all(|r| r["verdict"] == "pass" && r["name"].as_str().unwrap().starts_with("prop5.")));
}

#[test]
fn csv_format_has_a_header_and_one_row_per_check() {
    let cfg = write_config("csv.json", SMALL);
    let o = errcalc(&["check", "--config", cfg.to_str().unwrap(), "--suite", "corollary", "--format", "csv"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines().filter(|l| !l.is_empty());
    assert!(lines.next().unwrap().starts_with("name,target,provenance"));
    assert_eq!(lines.count(), 5);
}

#[test]
fn failing_check_exits_one() {
    let cfg = write_config(
        "fail.json",
        r#"{"seed": 3, "structure": {"name": "gaussian_product", "dim": 1}, "functionals": [{"name": "bad", "expr": "sqrt(x1)"}],
            "samples": {"m_samples": 2000, "realizations": 2000}}"#,
    );
    let o = errcalc(&["check", "--config", cfg.to_str().unwrap(), "--suite", "prop1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("FAIL prop1.config.bad"));
}

#[test]
fn configuration_errors_exit_two_with_location() {
    let cfg = write_config("parse.json", r#"{"seed": 1, "functionals": [{"name": "f", "expr": "x1 +"}]}"#);
    let o = errcalc(&["check", "--config", cfg.to_str().unwrap(), "--suite", "axioms"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1, column 4"), "{}", String::from_utf8_lossy(&o.stderr));

    let no_seed = write_config("noseed.json", "{}");
    let o = errcalc(&["check", "--config", no_seed.to_str().unwrap(), "--suite", "axioms"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("seed is required"));

    let o = errcalc(&["check", "--config", cfg.to_str().unwrap(), "--suite", "nope"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn seed_flag_overrides_a_missing_seed() {
    let cfg = write_config("seedless.json", r#"{"samples": {"m_samples": 2000, "realizations": 2000, "image_samples": 2000}}"#);
    let o = errcalc(&["check", "--config", cfg.to_str().unwrap(), "--suite", "prop5", "--seed", "9"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn sens_reports_total_and_decomposition() {
    let cfg = write_config("sens.json", r#"{"seed": 1, "structure": {"name": "gaussian_product", "dim": 2}, "samples": {"image_samples": 2000}}"#);
    let o = errcalc(&["sens", "--config", cfg.to_str().unwrap(), "--quantity", "x1 + x2", "--inputs", "x1,x2"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["total"]["value"], 2.0);
    assert_eq!(v["decomposition"][0]["value"], 1.0);
    assert_eq!(v["decomposition"][1]["value"], 1.0);
}

#[test]
fn parse_prints_ast_and_gradient() {
    let o = errcalc(&["parse", "--expr", "x1*x2 + sin(x1)", "--at", "0,2"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("ast: "));
    assert!(text.contains("gradient: [3.0, 0.0]"), "{text}");
    let o = errcalc(&["parse", "--expr", "x1 +"]);
    assert_eq!(o.status.code(), Some(2));
}
