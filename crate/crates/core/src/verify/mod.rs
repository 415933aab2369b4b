//! Rate fits, assumption checks, counterexamples, exact oracles and sweep
//! suites. Every check returns data plus a verdict; nothing here writes files.

pub mod counterexamples;
pub mod green;
pub mod lipschitz;
pub mod oracle_1d;
pub mod rates;
pub mod sublinearity;
pub mod suites;

pub use rates::{rate_fit, RateCriterion, RateModel, RateReport};

use serde::Serialize;

/// Outcome of a check or rate report.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    /// Every value at the discretization floor.
    DegeneratePass,
    Fail,
    /// Too many samples failed to produce a value.
    Inconclusive,
    /// Failure of an extended-tier check.
    Warning,
    /// Reported quantity without an acceptance rule.
    Info,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::DegeneratePass => "degenerate_pass",
            Verdict::Fail => "fail",
            Verdict::Inconclusive => "inconclusive",
            Verdict::Warning => "warning",
            Verdict::Info => "info",
        }
    }

    pub fn is_pass(self) -> bool {
        matches!(self, Verdict::Pass | Verdict::DegeneratePass)
    }

    /// Counts against the run's exit status.
    pub fn is_failure(self) -> bool {
        matches!(self, Verdict::Fail | Verdict::Inconclusive)
    }

    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    /// Extended-tier checks report failures as warnings.
    pub fn downgraded(self) -> Self {
        if self.is_failure() {
            Verdict::Warning
        } else {
            self
        }
    }
}

/// Named measurement of a check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Measurement {
    pub name: String,
    pub value: f64,
    /// `ε` of the sample, when the quantity belongs to one.
    pub eps: Option<f64>,
}

impl Measurement {
    pub fn new(name: impl Into<String>, value: f64) -> Self {
        Measurement {
            name: name.into(),
            value,
            eps: None,
        }
    }

    pub fn at(name: impl Into<String>, eps: f64, value: f64) -> Self {
        Measurement {
            name: name.into(),
            value,
            eps: Some(eps),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckVerdict {
    pub name: String,
    pub measured: Vec<Measurement>,
    pub verdict: Verdict,
    /// For failures, the violated inequality with the measured values.
    pub notes: Vec<String>,
}

impl CheckVerdict {
    pub fn new(name: impl Into<String>) -> Self {
        CheckVerdict {
            name: name.into(),
            measured: Vec::new(),
            verdict: Verdict::Pass,
            notes: Vec::new(),
        }
    }

    pub fn measure(&mut self, m: Measurement) {
        self.measured.push(m);
    }

    /// Records `ok`; a false value fails the check with `note`.
    pub fn require(&mut self, ok: bool, note: impl Into<String>) {
        if !ok {
            self.verdict = Verdict::Fail;
            self.notes.push(note.into());
        }
    }

    pub fn note(&mut self, note: impl Into<String>) {
        self.notes.push(note.into());
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.measured.iter().find(|m| m.name == name).map(|m| m.value)
    }
}
