//! Exit gate: one PASS/FAIL line per acceptance criterion, computed from
//! suite `all` at the default budgets. Runs without the libtest harness so
//! the lines are printed on every run.

use std::process::ExitCode;

use errcalc::harness::{parse_config, report, run_suite_with_workers, without_timing, CheckReport, RunConfig, Verdict};

const CONFIG: &str = r#"{"seed": 20240917}"#;

struct Gate<'a> {
    reports: &'a [CheckReport],
    lines: Vec<String>,
    failed: usize,
}

impl<'a> Gate<'a> {
    fn select(&self, prefix: &str) -> Vec<&'a CheckReport> {
        self.reports.iter().filter(|r| r.name == prefix || r.name.starts_with(&format!("{prefix}."))).collect()
    }

    fn record(&mut self, id: u32, label: &str, ok: bool, detail: String) {
        let verdict = if ok { "PASS" } else { "FAIL" };
        self.lines.push(format!("criterion {id:>2} {verdict} {label}: {detail}"));
        if !ok {
            self.failed += 1;
        }
    }
}

fn passed(rs: &[&CheckReport]) -> bool {
    !rs.is_empty() && rs.iter().all(|r| r.verdict == Verdict::Pass)
}

fn failing(rs: &[&CheckReport]) -> String {
    let bad: Vec<&str> = rs.iter().filter(|r| r.verdict == Verdict::Fail).map(|r| r.name.as_str()).collect();
    if bad.is_empty() {
        format!("{} checks pass", rs.len())
    } else {
        format!("failing: {}", bad.join(", "))
    }
}

fn leading_count(detail: &str) -> usize {
    detail.split_whitespace().next().and_then(|t| t.parse().ok()).unwrap_or(0)
}

fn json(reports: &[CheckReport]) -> String {
    report::to_json(&without_timing(reports)).unwrap()
}

fn config() -> RunConfig {
    parse_config(CONFIG).unwrap()
}

fn main() -> ExitCode {
    let cfg = config();
    let first = run_suite_with_workers(&cfg, "all", 1).unwrap();
    let mut g = Gate { reports: &first, lines: Vec::new(), failed: 0 };

    let fc = g.select("axioms.functional_calculus");
    let pairs = fc.first().map_or(0, |r| leading_count(&r.detail));
    let worst = fc.first().map_or(f64::NAN, |r| r.estimate);
    g.record(1, "functional calculus", passed(&fc) && pairs >= 20, format!("{pairs} pairs, largest relative error {worst:.2e}"));

    let mut wn = g.select("axioms.wn.normality");
    wn.extend(g.select("axioms.wn.additivity"));
    let independence = g.select("axioms.wn.independence");
    wn.extend(independence.iter().copied());
    g.record(2, "white noise axioms", passed(&wn) && independence.len() >= 3, failing(&wn));

    let transforms = g.select("axioms.wn.transform");
    let cases = transforms.iter().filter(|r| !r.name.ends_with(".metadata")).count();
    g.record(3, "transformation algebra", passed(&transforms) && cases >= 9, format!("{cases} variance cases; {}", failing(&transforms)));

    let targets = [("x1.one", 1.0), ("x1sq.one", 4.0), ("x1sq.positive", 2.0), ("x1x2.one", 2.0)];
    let variance: Vec<&CheckReport> =
        targets.iter().flat_map(|(n, _)| g.select(&format!("prop1.variance.{n}"))).collect();
    let right_targets = variance.len() == 4 && variance.iter().zip(&targets).all(|(r, (_, t))| r.target == *t);
    g.record(4, "variance identity", passed(&variance) && right_targets, failing(&variance));

    let chain = g.select("prop2.chain_rule");
    g.record(5, "chain rule", passed(&chain) && chain.len() >= 10, failing(&chain));

    let density: Vec<&CheckReport> = ["prop3.density.square_map", "prop3.density.shear"].iter().flat_map(|n| g.select(n)).collect();
    let zs: Vec<String> = density.iter().map(|r| format!("{:.2}", r.estimate)).collect();
    g.record(6, "image density", passed(&density) && density.len() == 2, format!("largest |z| {}", zs.join(", ")));

    let mut cauchy: Vec<&CheckReport> =
        g.select("prop4.cauchy").into_iter().filter(|r| r.name.ends_with(".monotone") || r.name.ends_with(".limit")).collect();
    cauchy.extend(g.select("prop4.coherence"));
    g.record(7, "Cauchy approximation and coherence", passed(&cauchy) && cauchy.len() >= 7, failing(&cauchy));

    let compose = g.select("prop5.compose");
    let has_mixed = compose.iter().any(|r| r.name.ends_with(".sum_product"));
    g.record(8, "composition of image gradients", passed(&compose) && compose.len() >= 5 && has_mixed, failing(&compose));

    let dirichlet = g.select("corollary.dirichlet_gradient");
    let cholesky = dirichlet.iter().any(|r| r.detail.split(", ").next().is_some_and(|c| leading_count(c) > 0));
    let eigen = dirichlet.iter().any(|r| r.detail.split(", ").nth(1).is_some_and(|c| leading_count(c) > 0));
    g.record(9, "image Dirichlet gradient", passed(&dirichlet) && cholesky && eigen, failing(&dirichlet));

    let star: Vec<&CheckReport> = ["star.gap.square_map", "star.gap.identity"].iter().flat_map(|n| g.select(n)).collect();
    let gap_z = star.first().map_or(f64::NAN, |r| r.estimate);
    g.record(10, "conditioning gap", passed(&star) && star.len() == 2, format!("smallest gap z {gap_z:.1}; {}", failing(&star)));

    let wiener = g.select("wiener.variance");
    let wall = wiener.first().map_or(f64::INFINITY, |r| r.wall_time);
    g.record(11, "Wiener variance identity", passed(&wiener) && wiener.len() >= 15 && wall <= 300.0, format!("{wall:.1} s; {}", failing(&wiener)));

    let again = run_suite_with_workers(&cfg, "all", 1).unwrap();
    let four = run_suite_with_workers(&cfg, "all", 4).unwrap();
    let (a, b, c) = (json(&first), json(&again), json(&four));
    g.record(12, "reproducibility", a == b && a == c, format!("{} bytes; rerun identical {}, 4 workers identical {}", a.len(), a == b, a == c));

    let total_fail = first.iter().filter(|r| r.verdict == Verdict::Fail).count();
    for line in &g.lines {
        println!("{line}");
    }
    println!("{} reports, {} failing; {} of 12 criteria failed", first.len(), total_fail, g.failed);
    if g.failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
