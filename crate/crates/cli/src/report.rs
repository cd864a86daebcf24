//! Versioned JSON report, aligned text table and effect CSV.
//!
//! Non-finite numbers are written as the strings `"inf"`, `"-inf"` and
//! `"nan"` so that unbounded intervals survive a JSON round trip.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::{Serialize, Serializer};

use crate::config::RunConfig;
use crate::error::Result;
use crate::ingest::Centering;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Real(pub f64);

impl Serialize for Real {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let v = self.0;
        if v.is_finite() {
            s.serialize_f64(v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub format_version: u32,
    pub config: RunConfig,
    pub n: usize,
    pub m_stop: usize,
    pub sigma2: Real,
    pub centering: Centering,
    pub learners: Vec<String>,
    pub selected: Vec<SelectedLearner>,
    pub targets: Vec<TargetReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing: Option<Timing>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SelectedLearner {
    pub name: String,
    pub kind: String,
    pub coefficients: Vec<Real>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    NotSelected,
    Error,
}

#[derive(Debug, Clone, Serialize)]
pub struct TargetReport {
    pub learner: String,
    pub test: String,
    pub method: String,
    pub status: Status,
    pub reason: Option<String>,
    pub results: Vec<TestResult>,
}

impl TargetReport {
    pub fn failed(learner: &str, test: &str, method: &str, status: Status, reason: String) -> Self {
        Self {
            learner: learner.to_string(),
            test: test.to_string(),
            method: method.to_string(),
            status,
            reason: Some(reason),
            results: Vec::new(),
        }
    }
}

/// One hypothesis. Every key is always present; fields that do not apply
/// are null.
#[derive(Debug, Clone, Serialize)]
pub struct TestResult {
    /// Covariate value for pointwise tests.
    pub c: Option<Real>,
    pub estimate: Real,
    /// Boosted (shrunken) estimate of the same quantity.
    pub boosted: Option<Real>,
    pub p_value: Real,
    pub ci_lo: Option<Real>,
    pub ci_hi: Option<Real>,
    pub diagnostics: TestDiagnostics,
}

#[derive(Debug, Clone, Serialize)]
pub struct TestDiagnostics {
    pub ess: Option<Real>,
    pub accepted: Option<usize>,
    pub draws: Option<usize>,
    pub refits: Option<usize>,
    pub bracket: Option<[Real; 2]>,
    pub bracket_unbounded: Option<[bool; 2]>,
    pub truncation: Option<[Real; 2]>,
    pub low_accuracy: bool,
    pub infinite_ci: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub total_seconds: f64,
    pub selection_seconds: f64,
    pub inference_seconds: f64,
}

impl Report {
    pub fn has_errors(&self) -> bool {
        self.targets.iter().any(|t| t.status == Status::Error)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let sel: Vec<&str> = self.selected.iter().map(|s| s.name.as_str()).collect();
        let _ = writeln!(out, "n = {}, m_stop = {}, sigma2 = {}", self.n, self.m_stop, fmt_num(self.sigma2.0));
        let _ = writeln!(out, "selected: {}", if sel.is_empty() { "(none)".to_string() } else { sel.join(", ") });
        let header = ["learner", "test", "method", "c", "estimate", "p_value", "ci_lo", "ci_hi", "ess", "status"];
        let mut rows: Vec<Vec<String>> = vec![header.iter().map(|h| h.to_string()).collect()];
        for t in &self.targets {
            let status = match t.status {
                Status::Ok => "ok".to_string(),
                Status::NotSelected => "not selected".to_string(),
                Status::Error => format!("error: {}", t.reason.as_deref().unwrap_or("")),
            };
            if t.results.is_empty() {
                let mut r = vec![t.learner.clone(), t.test.clone(), t.method.clone()];
                r.extend(std::iter::repeat_n("-".to_string(), 6));
                r.push(status.clone());
                rows.push(r);
            }
            for res in &t.results {
                rows.push(vec![
                    t.learner.clone(),
                    t.test.clone(),
                    t.method.clone(),
                    opt(res.c),
                    fmt_num(res.estimate.0),
                    fmt_num(res.p_value.0),
                    opt(res.ci_lo),
                    opt(res.ci_hi),
                    opt(res.diagnostics.ess),
                    status.clone(),
                ]);
            }
        }
        let widths: Vec<usize> =
            (0..header.len()).map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0)).collect();
        for r in rows {
            let cells: Vec<String> = r.iter().zip(&widths).map(|(s, w)| format!("{s:<w$}")).collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        out
    }

    /// Plot-ready effect table: one row per tested value.
    pub fn write_effects<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["learner", "test", "c", "estimate", "boosted", "ci_lo", "ci_hi", "p_value"])
            .map_err(csv_err)?;
        for t in self.targets.iter().filter(|t| t.status == Status::Ok) {
            for r in &t.results {
                w.write_record([
                    t.learner.clone(),
                    t.test.clone(),
                    opt_csv(r.c),
                    fmt_num(r.estimate.0),
                    opt_csv(r.boosted),
                    opt_csv(r.ci_lo),
                    opt_csv(r.ci_hi),
                    fmt_num(r.p_value.0),
                ])
                .map_err(csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn selected_names(&self) -> BTreeMap<String, usize> {
        self.selected.iter().enumerate().map(|(i, s)| (s.name.clone(), i)).collect()
    }
}

fn csv_err(e: csv::Error) -> crate::error::CliError {
    crate::error::CliError::Data(e.to_string())
}

fn fmt_num(v: f64) -> String {
    if v.is_finite() {
        let a = v.abs();
        if a != 0.0 && !(1e-4..1e6).contains(&a) {
            format!("{v:.4e}")
        } else {
            format!("{v:.4}")
        }
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn opt(v: Option<Real>) -> String {
    v.map(|r| fmt_num(r.0)).unwrap_or_else(|| "-".into())
}

fn opt_csv(v: Option<Real>) -> String {
    v.map(|r| fmt_num(r.0)).unwrap_or_default()
}
