//! `results.csv`, `summary.json` and `timing.json`.

use crate::config::Suite;
use crate::run::ExperimentResult;
use serde::Serialize;
use std::cmp::Ordering;
use std::io;
use std::path::Path;

pub const CSV_HEADER: [&str; 13] = [
    "experiment",
    "suite",
    "d",
    "r",
    "nu_expected",
    "eps",
    "h",
    "norm_name",
    "value",
    "slope",
    "slope_model",
    "r_squared",
    "verdict",
];

/// Process exit status.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitStatus {
    Pass,
    AcceptanceFailure,
    ConfigError,
    NonConvergence,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        match self {
            ExitStatus::Pass => 0,
            ExitStatus::AcceptanceFailure => 1,
            ExitStatus::ConfigError => 2,
            ExitStatus::NonConvergence => 3,
        }
    }
}

/// Non-convergence anywhere wins over acceptance failures.
pub fn aggregate(results: &[ExperimentResult]) -> ExitStatus {
    let suites = || results.iter().flat_map(|e| &e.suites);
    if suites().any(|s| s.non_converged()) {
        ExitStatus::NonConvergence
    } else if suites().any(|s| s.verdict.is_failure()) {
        ExitStatus::AcceptanceFailure
    } else {
        ExitStatus::Pass
    }
}

#[derive(Serialize)]
pub struct RunReport<'a> {
    pub version: &'static str,
    pub seed: u64,
    pub exit_status: ExitStatus,
    pub exit_code: i32,
    pub experiments: &'a [ExperimentResult],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub experiment: String,
    pub suite: Suite,
    pub d: usize,
    pub r: Option<f64>,
    pub nu_expected: Option<f64>,
    pub eps: Option<f64>,
    pub h: Option<f64>,
    pub norm_name: String,
    pub value: Option<f64>,
    pub slope: Option<f64>,
    pub slope_model: Option<&'static str>,
    pub r_squared: Option<f64>,
    pub verdict: &'static str,
}

fn float(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:.12e}"))
}

impl Row {
    fn fields(&self) -> [String; 13] {
        [
            self.experiment.clone(),
            self.suite.as_str().to_string(),
            self.d.to_string(),
            float(self.r),
            float(self.nu_expected),
            float(self.eps),
            float(self.h),
            self.norm_name.clone(),
            float(self.value),
            float(self.slope),
            self.slope_model.unwrap_or("").to_string(),
            float(self.r_squared),
            self.verdict.to_string(),
        ]
    }
}

/// Per-sample rows of every rate report, one row per check measurement and
/// one per error, in canonical order.
pub fn rows(results: &[ExperimentResult]) -> Vec<Row> {
    let mut out = Vec::new();
    for ex in results {
        for s in &ex.suites {
            let base = |norm_name: String, verdict: &'static str| Row {
                experiment: ex.id.clone(),
                suite: s.suite,
                d: ex.d,
                r: ex.r,
                nu_expected: None,
                eps: None,
                h: None,
                norm_name,
                value: None,
                slope: None,
                slope_model: None,
                r_squared: None,
                verdict,
            };
            for rep in &s.reports {
                for ((e, h), v) in rep.eps.iter().zip(&rep.h).zip(&rep.values) {
                    out.push(Row {
                        nu_expected: Some(rep.nu_expected),
                        eps: Some(*e),
                        h: Some(*h),
                        value: Some(*v),
                        slope: rep.fit.map(|f| f.slope),
                        slope_model: Some(rep.model.as_str()),
                        r_squared: rep.fit.map(|f| f.r_squared),
                        ..base(rep.norm_name.clone(), rep.verdict.as_str())
                    });
                }
            }
            for c in &s.checks {
                for m in &c.measured {
                    out.push(Row {
                        eps: m.eps,
                        value: Some(m.value),
                        ..base(format!("{}/{}", c.name, m.name), c.verdict.as_str())
                    });
                }
            }
            for e in &s.errors {
                let kind = if e.non_convergence { "error:non_convergence" } else { "error" };
                out.push(Row {
                    eps: e.eps,
                    ..base(kind.to_string(), e.verdict().as_str())
                });
            }
        }
    }
    out.sort_by(canonical);
    out
}

/// Experiment, suite, norm name, then `ε` from coarse to fine; ties keep
/// their insertion order.
fn canonical(a: &Row, b: &Row) -> Ordering {
    a.experiment
        .cmp(&b.experiment)
        .then(a.suite.cmp(&b.suite))
        .then_with(|| a.norm_name.cmp(&b.norm_name))
        .then_with(|| match (a.eps, b.eps) {
            (Some(x), Some(y)) => y.total_cmp(&x),
            (x, y) => x.is_some().cmp(&y.is_some()),
        })
}

pub fn write_csv(path: &Path, rows: &[Row]) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record(r.fields())?;
    }
    w.flush()
}

pub fn write_summary(path: &Path, report: &RunReport) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    std::fs::write(path, text)
}

#[derive(Serialize)]
struct SuiteTiming<'a> {
    experiment: &'a str,
    suite: &'static str,
    seconds: f64,
}

#[derive(Serialize)]
struct Timing<'a> {
    total_seconds: f64,
    workers: usize,
    suites: Vec<SuiteTiming<'a>>,
}

pub fn write_timing(path: &Path, results: &[ExperimentResult], total: f64, workers: usize) -> io::Result<()> {
    let suites = results
        .iter()
        .flat_map(|e| {
            e.suites.iter().map(|s| SuiteTiming {
                experiment: &e.id,
                suite: s.suite.as_str(),
                seconds: s.seconds,
            })
        })
        .collect();
    let t = Timing {
        total_seconds: total,
        workers,
        suites,
    };
    let mut text = serde_json::to_string_pretty(&t)?;
    text.push('\n');
    std::fs::write(path, text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(norm: &str, eps: Option<f64>) -> Row {
        Row {
            experiment: "a".into(),
            suite: Suite::Theorem11,
            d: 2,
            r: None,
            nu_expected: None,
            eps,
            h: None,
            norm_name: norm.into(),
            value: Some(1.0),
            slope: None,
            slope_model: None,
            r_squared: None,
            verdict: "pass",
        }
    }

    #[test]
    fn canonical_order_puts_coarse_eps_first() {
        let mut v = [row("b", Some(0.125)), row("b", None), row("a", Some(0.5)), row("b", Some(0.25))];
        v.sort_by(canonical);
        let keys: Vec<_> = v.iter().map(|r| (r.norm_name.as_str(), r.eps)).collect();
        assert_eq!(keys, vec![("a", Some(0.5)), ("b", None), ("b", Some(0.25)), ("b", Some(0.125))]);
    }

    #[test]
    fn floats_use_twelve_digit_scientific_format() {
        assert_eq!(float(Some(0.5)), "5.000000000000e-1");
        assert_eq!(float(None), "");
        let f = row("x", Some(0.25)).fields();
        assert_eq!(f.len(), CSV_HEADER.len());
        assert_eq!(f[5], "2.500000000000e-1");
        assert_eq!(f[4], "");
    }
}
