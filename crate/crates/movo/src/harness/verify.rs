//! Report verification: check an emitted metrics document against a set of
//! named expectations, each with its own comparison and tolerance.

use serde::{Deserialize, Serialize};

use super::HarnessError;

fn default_tolerance_pct() -> f64 {
    5.0
}

/// One check against one metric. Any combination of bounds may be given;
/// `approx` uses `tolerance_pct` (default 5%). An empty expectation is
/// vacuously true.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectation {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub equals: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub approx: Option<f64>,
    #[serde(default = "default_tolerance_pct")]
    pub tolerance_pct: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub at_least: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub at_most: Option<f64>,
}

/// Outcome of one expectation, ready to print.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub metric: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    pub fn line(&self) -> String {
        format!(
            "{} {} {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.metric,
            self.detail
        )
    }
}

/// Resolve a dotted path (`charging.server_payout`) inside the report JSON
/// to a number. Booleans count as 1/0 so they can be pinned with `equals`.
fn lookup(report: &serde_json::Value, path: &str) -> Option<f64> {
    let mut node = report;
    for part in path.split('.') {
        node = node.get(part)?;
    }
    match node {
        serde_json::Value::Number(n) => n.as_f64(),
        serde_json::Value::Bool(b) => Some(if *b { 1.0 } else { 0.0 }),
        _ => None,
    }
}

/// Check every expectation against the report. Returns one result per
/// expectation in name order; an empty expectation set passes vacuously.
pub fn verify_report(
    report_json: &str,
    expectations_json: &str,
) -> Result<Vec<CheckResult>, HarnessError> {
    let report: serde_json::Value =
        serde_json::from_str(report_json).map_err(|e| HarnessError::Malformed {
            what: "metrics report",
            reason: e.to_string(),
        })?;
    let expectations: super::Expectations =
        serde_json::from_str(expectations_json).map_err(|e| HarnessError::Malformed {
            what: "expectations file",
            reason: e.to_string(),
        })?;

    let mut results = Vec::new();
    for (metric, exp) in &expectations {
        let Some(actual) = lookup(&report, metric) else {
            results.push(CheckResult {
                metric: metric.clone(),
                passed: false,
                detail: "metric not present in report".to_string(),
            });
            continue;
        };
        let mut failures = Vec::new();
        if let Some(want) = exp.equals {
            if actual != want {
                failures.push(format!("expected exactly {want}, got {actual}"));
            }
        }
        if let Some(want) = exp.approx {
            let tolerance = want.abs() * exp.tolerance_pct / 100.0;
            if (actual - want).abs() > tolerance {
                failures.push(format!(
                    "expected {want} within {}%, got {actual}",
                    exp.tolerance_pct
                ));
            }
        }
        if let Some(want) = exp.at_least {
            if actual < want {
                failures.push(format!("expected at least {want}, got {actual}"));
            }
        }
        if let Some(want) = exp.at_most {
            if actual > want {
                failures.push(format!("expected at most {want}, got {actual}"));
            }
        }
        results.push(CheckResult {
            metric: metric.clone(),
            passed: failures.is_empty(),
            detail: if failures.is_empty() {
                format!("= {actual}")
            } else {
                failures.join("; ")
            },
        });
    }
    Ok(results)
}
