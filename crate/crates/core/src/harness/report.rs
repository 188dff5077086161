//! Check reports and their JSON/CSV serializations.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::image::z_score;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    /// Closed form or exact algebra.
    Analytic,
    /// An independent estimator with a larger budget and its own seed stream.
    OracleEstimated,
}

/// How the verdict is reached from `(estimate, target, tolerance)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    /// `|estimate − target| ≤ tolerance`.
    Within,
    /// `estimate ≥ target`.
    AtLeast,
    /// `estimate ≤ target`.
    AtMost,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub target: f64,
    pub provenance: Provenance,
    pub estimate: f64,
    pub stderr: f64,
    /// Truncation defect added to the tolerance.
    pub defect: f64,
    /// Bias of the conditional estimator, reported but not added.
    pub estimator_bias: f64,
    pub z: f64,
    pub rule: Rule,
    pub tolerance: f64,
    pub verdict: Verdict,
    pub wall_time: f64,
    pub detail: String,
}

impl CheckReport {
    /// Statistical comparison: `|estimate − target| ≤ z·stderr + defect`.
    pub fn statistical(name: &str, target: f64, provenance: Provenance, estimate: f64, stderr: f64, defect: f64, z: f64) -> CheckReport {
        let diff = estimate - target;
        let excess = (diff.abs() - defect).max(0.0).copysign(diff);
        CheckReport::new(name, target, provenance, estimate, Rule::Within, z * stderr + defect)
            .with_stderr(stderr, defect)
            .with_z(z_score(excess, stderr))
    }

    /// Identity up to an absolute tolerance.
    pub fn exact(name: &str, target: f64, estimate: f64, tolerance: f64) -> CheckReport {
        CheckReport::new(name, target, Provenance::Analytic, estimate, Rule::Within, tolerance)
    }

    /// `estimate` must not exceed `bound`.
    pub fn at_most(name: &str, bound: f64, estimate: f64) -> CheckReport {
        CheckReport::new(name, bound, Provenance::Analytic, estimate, Rule::AtMost, 0.0)
    }

    /// `estimate` must reach `bound`.
    pub fn at_least(name: &str, bound: f64, estimate: f64) -> CheckReport {
        CheckReport::new(name, bound, Provenance::Analytic, estimate, Rule::AtLeast, 0.0)
    }

    fn new(name: &str, target: f64, provenance: Provenance, estimate: f64, rule: Rule, tolerance: f64) -> CheckReport {
        let mut r = CheckReport {
            name: name.to_string(),
            target,
            provenance,
            estimate,
            stderr: 0.0,
            defect: 0.0,
            estimator_bias: 0.0,
            z: 0.0,
            rule,
            tolerance,
            verdict: Verdict::Fail,
            wall_time: 0.0,
            detail: String::new(),
        };
        r.decide();
        r
    }

    /// A check whose computation failed.
    pub fn failed(name: &str, err: &Error) -> CheckReport {
        let mut r = CheckReport::new(name, f64::NAN, Provenance::Analytic, f64::NAN, Rule::Within, 0.0);
        r.detail = err.to_string();
        r.verdict = Verdict::Fail;
        r
    }

    fn decide(&mut self) {
        let ok = match self.rule {
            Rule::Within => (self.estimate - self.target).abs() <= self.tolerance,
            Rule::AtLeast => self.estimate >= self.target,
            Rule::AtMost => self.estimate <= self.target,
        };
        self.verdict = if ok { Verdict::Pass } else { Verdict::Fail };
    }

    pub fn with_stderr(mut self, stderr: f64, defect: f64) -> CheckReport {
        self.stderr = stderr;
        self.defect = defect;
        self
    }

    pub fn with_z(mut self, z: f64) -> CheckReport {
        self.z = z;
        self
    }

    pub fn with_bias(mut self, bias: f64) -> CheckReport {
        self.estimator_bias = bias;
        self
    }

    pub fn with_provenance(mut self, p: Provenance) -> CheckReport {
        self.provenance = p;
        self
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> CheckReport {
        self.detail = detail.into();
        self
    }

    /// Fail regardless of the numbers, keeping them for the record.
    pub fn require(mut self, condition: bool, why: &str) -> CheckReport {
        if !condition {
            self.verdict = Verdict::Fail;
            if !self.detail.is_empty() {
                self.detail.push_str("; ");
            }
            self.detail.push_str(why);
        }
        self
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

/// JSON number fields cannot hold NaN or infinities; they are written as
/// `null` by [`to_json`].
pub fn to_json(reports: &[CheckReport]) -> Result<String> {
    serde_json::to_string_pretty(reports).map_err(|e| Error::Io(e.to_string()))
}

pub fn to_csv(reports: &[CheckReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in reports {
        w.serialize(r).map_err(|e| Error::Io(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
}

/// The report payload with wall-time fields zeroed.
pub fn without_timing(reports: &[CheckReport]) -> Vec<CheckReport> {
    reports.iter().map(|r| CheckReport { wall_time: 0.0, ..r.clone() }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn statistical_verdicts() {
        let r = CheckReport::statistical("a", 4.0, Provenance::Analytic, 4.05, 0.02, 0.0, 3.0);
        assert!(r.passed());
        assert!((r.z - 2.5).abs() < 1e-12);
        let r = CheckReport::statistical("b", 4.0, Provenance::Analytic, 4.2, 0.02, 0.1, 3.0);
        assert!(!r.passed());
        assert!((r.z - 5.0).abs() < 1e-9);
        let r = CheckReport::statistical("c", 1.0, Provenance::Analytic, 0.95, 0.0, 0.06, 3.0);
        assert!(r.passed() && r.z == 0.0);
    }

    #[test]
    fn rules_and_failures() {
        assert!(CheckReport::at_least("s", 5.0, 6.0).passed());
        assert!(!CheckReport::at_most("m", 1e-4, 2e-4).passed());
        assert!(!CheckReport::exact("e", 1.0, 1.0, 1e-10).require(false, "path not taken").passed());
        let f = CheckReport::failed("x", &Error::Domain("log of 0".into()));
        assert!(!f.passed() && f.detail.contains("log"));
    }

    #[test]
    fn csv_has_one_row_per_report() {
        let rs = vec![CheckReport::exact("a", 1.0, 1.0, 0.0), CheckReport::at_most("b", 2.0, 1.0)];
        let text = to_csv(&rs).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("name,target,provenance,estimate"));
        assert!(lines[2].contains("at-most"));
        let json: serde_json::Value = serde_json::from_str(&to_json(&rs).unwrap()).unwrap();
        assert_eq!(json[1]["verdict"], "pass");
    }
}
