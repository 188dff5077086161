use errcalc::harness::{parse_config, run_suite, run_suite_with_workers, Provenance, Verdict, SUITES};
use errcalc::Error;

fn reduced(extra: &str) -> errcalc::harness::RunConfig {
    let text = format!(
        r#"{{"seed": 11, "samples": {{"m_samples": 4000, "realizations": 4000, "image_samples": 4000, "points": 50}}{extra}}}"#
    );
    parse_config(&text).unwrap()
}

#[test]
fn squared_coordinate_against_unit_test_function() {
    let cfg = reduced(r#", "structure": {"name": "gaussian_product", "dim": 1}, "functionals": [{"name": "sq", "expr": "x1^2"}]"#);
    let reports = run_suite(&cfg, "prop1").unwrap();
    let r = reports.iter().find(|r| r.name == "prop1.config.sq.1").unwrap();
    assert_eq!(r.target, 4.0);
    assert_eq!(r.provenance, Provenance::Analytic);
    assert_eq!(r.verdict, Verdict::Pass, "{r:?}");
}

#[test]
fn module_errors_become_failed_entries() {
    let cfg = reduced(r#", "structure": {"name": "gaussian_product", "dim": 1}, "functionals": [{"name": "bad", "expr": "sqrt(x1)"}]"#);
    let reports = run_suite(&cfg, "prop1").unwrap();
    let bad = reports.iter().find(|r| r.name == "prop1.config.bad.1").unwrap();
    assert_eq!(bad.verdict, Verdict::Fail);
    assert!(bad.detail.contains("sqrt of negative"), "{}", bad.detail);
    // the other groups still ran
    assert!(reports.iter().any(|r| r.name == "prop1.variance.x1.one" && r.verdict == Verdict::Pass));
}

#[test]
fn unknown_suite_and_invalid_budgets_are_rejected() {
    let cfg = reduced("");
    assert!(matches!(run_suite(&cfg, "prop6"), Err(Error::Validation(_))));
    let mut zero = cfg.clone();
    zero.samples.realizations = 0;
    match run_suite_with_workers(&zero, "all", 1) {
        Err(Error::Validation(v)) => assert!(v.iter().any(|m| m.contains("realizations")), "{v:?}"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn every_suite_has_checks_and_names_are_unique() {
    let cfg = reduced("");
    for suite in ["prop2", "prop5", "corollary", "star"] {
        let reports = run_suite(&cfg, suite).unwrap();
        assert!(!reports.is_empty(), "{suite}");
        assert!(reports.iter().all(|r| r.name.starts_with(&format!("{suite}."))));
        let mut names: Vec<&str> = reports.iter().map(|r| r.name.as_str()).collect();
        names.dedup();
        assert_eq!(names.len(), reports.len());
    }
    let groups = errcalc::harness::registry();
    for suite in SUITES.iter().filter(|s| **s != "all") {
        assert!(groups.iter().any(|g| g.suite == *suite), "{suite}");
    }
}

#[test]
fn star_suite_reports_a_positive_gap_for_the_square_map() {
    let cfg = reduced("");
    let reports = run_suite(&cfg, "star").unwrap();
    let gap = reports.iter().find(|r| r.name == "star.gap.square_map").unwrap();
    assert!(gap.estimate > 5.0, "{gap:?}");
    assert_eq!(gap.verdict, Verdict::Pass);
}

#[test]
fn reports_do_not_depend_on_worker_count() {
    let cfg = reduced("");
    let one = errcalc::harness::without_timing(&run_suite_with_workers(&cfg, "prop3", 1).unwrap());
    let three = errcalc::harness::without_timing(&run_suite_with_workers(&cfg, "prop3", 3).unwrap());
    assert_eq!(one, three);
}
