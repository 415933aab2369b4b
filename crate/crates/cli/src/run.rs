//! Suite dispatch for validated experiments.

use crate::config::{default_norms, Experiment, Suite, Tolerances};
use homlab::linalg::SolverOptions;
use homlab::pipeline::PipelineOptions;
use homlab::verify::counterexamples::{dyadic_counterexample, transpose_counterexample, TransposeOptions};
use homlab::verify::green::{green_estimates_check, GreenOptions};
use homlab::verify::lipschitz::{lipschitz_stability_check, LipschitzOptions};
use homlab::verify::oracle_1d::{oracle_1d, Oracle1dOptions};
use homlab::verify::sublinearity::{corrector_sublinearity, SublinearityOptions};
use homlab::verify::suites::{homogenized_tensor_check, potential_identities_check, residual_refinement, theorem11_suite};
use homlab::verify::{CheckVerdict, RateReport, Verdict};
use homlab::Error;
use serde::Serialize;
use std::time::Instant;

/// A solve or setup error kept as a result row.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteError {
    pub eps: Option<f64>,
    pub non_convergence: bool,
    pub message: String,
}

impl SuiteError {
    fn new(eps: Option<f64>, err: &Error) -> Self {
        SuiteError {
            eps,
            non_convergence: err.is_non_convergence(),
            message: err.to_string(),
        }
    }

    pub fn verdict(&self) -> Verdict {
        if self.non_convergence {
            Verdict::Inconclusive
        } else {
            Verdict::Fail
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteResult {
    pub suite: Suite,
    /// Extended-tier suites report failures as warnings.
    pub extended: bool,
    pub reports: Vec<RateReport>,
    pub checks: Vec<CheckVerdict>,
    pub errors: Vec<SuiteError>,
    pub verdict: Verdict,
    #[serde(skip)]
    pub seconds: f64,
}

impl SuiteResult {
    fn new(suite: Suite) -> Self {
        SuiteResult {
            suite,
            extended: suite == Suite::Green,
            reports: Vec::new(),
            checks: Vec::new(),
            errors: Vec::new(),
            verdict: Verdict::Pass,
            seconds: 0.0,
        }
    }

    fn error(&mut self, eps: Option<f64>, err: &Error) {
        self.errors.push(SuiteError::new(eps, err));
    }

    /// Worst verdict: failure over warning over info over pass.
    fn finish(&mut self) {
        if self.extended {
            for r in &mut self.reports {
                r.verdict = r.verdict.downgraded();
            }
            for c in &mut self.checks {
                c.verdict = c.verdict.downgraded();
            }
        }
        let verdicts = self
            .reports
            .iter()
            .map(|r| r.verdict)
            .chain(self.checks.iter().map(|c| c.verdict))
            .chain(self.errors.iter().map(SuiteError::verdict));
        let rank = |v: Verdict| match v {
            Verdict::Pass => 0,
            Verdict::DegeneratePass => 1,
            Verdict::Info => 2,
            Verdict::Warning => 3,
            Verdict::Fail => 4,
            Verdict::Inconclusive => 5,
        };
        let worst = verdicts.max_by_key(|v| rank(*v)).unwrap_or(Verdict::Pass);
        self.verdict = if self.extended { worst.downgraded() } else { worst };
    }

    pub fn non_converged(&self) -> bool {
        self.errors.iter().any(|e| e.non_convergence)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub id: String,
    pub family: String,
    pub d: usize,
    pub r: Option<f64>,
    pub nu_expected: f64,
    pub tolerances: Tolerances,
    pub suites: Vec<SuiteResult>,
}

pub fn solver_options(t: &Tolerances) -> SolverOptions {
    SolverOptions {
        tol: t.solver,
        max_iter: t.max_iter,
        ..SolverOptions::default()
    }
}

pub fn pipeline_options(ex: &Experiment) -> PipelineOptions {
    let c = &ex.config;
    let base = PipelineOptions::default();
    PipelineOptions {
        cells_per_period: c.resolution.cells_per_period.unwrap_or(base.cells_per_period),
        half_width: c.domain.half_width,
        inner_fraction: c.domain.inner_fraction,
        box_margin: c.resolution.box_margin.unwrap_or(base.box_margin),
        solver: solver_options(&ex.tolerances),
        u_star: c.source.clone(),
        ..base
    }
}

pub fn run_experiment(ex: &Experiment, seed: u64) -> ExperimentResult {
    let suites = ex
        .suites
        .iter()
        .map(|&s| {
            let t = Instant::now();
            let mut out = SuiteResult::new(s);
            match s {
                Suite::Theorem11 => theorem11(ex, seed, &mut out),
                Suite::Green => green(ex, &mut out),
                Suite::Oracle1d => oracle(ex, &mut out),
                Suite::Counterexamples => counterexamples(ex, seed, &mut out),
                Suite::Assumptions => assumptions(ex, &mut out),
            }
            for r in &mut out.reports {
                r.experiment = ex.id().to_string();
            }
            out.finish();
            out.seconds = t.elapsed().as_secs_f64();
            out
        })
        .collect();
    ExperimentResult {
        id: ex.id().to_string(),
        family: ex.field.family().to_string(),
        d: ex.field.dim(),
        r: ex.field.r(),
        nu_expected: ex.field.nu(),
        tolerances: ex.tolerances.clone(),
        suites,
    }
}

fn theorem11(ex: &Experiment, seed: u64, out: &mut SuiteResult) {
    let c = &ex.config;
    let norms = c.norms.clone().unwrap_or_else(default_norms);
    match theorem11_suite(ex.id(), &ex.field, pipeline_options(ex), &c.eps, &norms, seed) {
        Ok(o) => {
            out.reports = o.reports;
            for (e, err) in &o.failures {
                out.error(Some(*e), err);
            }
        }
        Err(err) => out.error(None, &err),
    }
    if let Some(eps) = c.residual_eps {
        let cells = c.resolution.residual_cells.clone().unwrap_or_else(|| vec![8, 16]);
        match residual_refinement(&ex.field, pipeline_options(ex), eps, &cells, ex.tolerances.residual_factor) {
            Ok(check) => out.checks.push(check),
            Err(err) => out.error(Some(eps), &err),
        }
    }
}

fn green(ex: &Experiment, out: &mut SuiteResult) {
    let c = &ex.config;
    let base = GreenOptions::default();
    let opts = GreenOptions {
        cells: c.resolution.green_cells.unwrap_or(base.cells),
        cells_per_period: c.resolution.cells_per_period.unwrap_or(base.cells_per_period),
        pair_cells: c.resolution.green_pair_cells.unwrap_or(base.pair_cells),
        eps: c.eps.clone(),
        reciprocity_tol: ex.tolerances.reciprocity,
        solver: SolverOptions {
            tol: ex.tolerances.solver.min(base.solver.tol),
            max_iter: ex.tolerances.max_iter,
            ..base.solver.clone()
        },
        ..base
    };
    match green_estimates_check(&ex.field, &opts) {
        Ok((check, report)) => {
            out.checks.push(check);
            out.reports.push(report);
        }
        Err(err) => out.error(None, &err),
    }
}

fn oracle(ex: &Experiment, out: &mut SuiteResult) {
    let c = &ex.config;
    let base = Oracle1dOptions::default();
    let opts = Oracle1dOptions {
        cells_per_period: c.resolution.cells_per_period.unwrap_or(base.cells_per_period),
        rel_tol: ex.tolerances.oracle_rel,
        ..base
    };
    let r = ex.field.r().unwrap_or(2.0);
    let delta = c.field.params.get("delta").copied().unwrap_or(1.0);
    let xs = c.oracle_x.clone().unwrap_or_else(|| vec![0.25, 0.5, 1.0]);
    match oracle_1d(r, delta, &c.eps, &xs, &opts) {
        Ok(rep) => {
            out.reports.push(rep.raw);
            out.reports.push(rep.adjusted);
            out.checks.push(rep.check);
        }
        Err(err) => out.error(None, &err),
    }
}

fn counterexamples(ex: &Experiment, seed: u64, out: &mut SuiteResult) {
    let result = match ex.config.field.family.as_str() {
        "dyadic" => dyadic_counterexample(&ex.field, ex.tolerances.dyadic).map(|(c, _)| c),
        _ => transpose_counterexample(
            &ex.field,
            &TransposeOptions {
                seed,
                ..TransposeOptions::default()
            },
        ),
    };
    match result {
        Ok(c) => out.checks.push(c),
        Err(err) => out.error(None, &err),
    }
}

fn assumptions(ex: &Experiment, out: &mut SuiteResult) {
    let c = &ex.config;
    let t = &ex.tolerances;
    let n = c.resolution.cell_n.unwrap_or(8);
    let mut push = |r: homlab::Result<CheckVerdict>, eps: Option<f64>| match r {
        Ok(check) => out.checks.push(check),
        Err(err) => out.errors.push(SuiteError::new(eps, &err)),
    };
    if let Some(expected) = ex.expected_a_star() {
        push(homogenized_tensor_check(&ex.field, n, &expected, t.a_star), None);
    }
    if ex.field.dim() >= 2 {
        push(potential_identities_check(&ex.field, n), None);
    }
    // the sublinearity box and the Lipschitz balls are sized for d = 2
    if ex.field.dim() == 2 {
        let cpp = c.resolution.cells_per_period.unwrap_or(8);
        let sub = SublinearityOptions {
            cells_per_period: cpp,
            slack: t.sublinearity_slack,
            ..SublinearityOptions::default()
        };
        push(corrector_sublinearity(&ex.field, &sub), None);
        let lip = LipschitzOptions {
            cells_per_period: cpp,
            max_spread: t.lipschitz_spread,
            solver: solver_options(t),
            ..LipschitzOptions::default()
        };
        let radius = c.lipschitz_radius.unwrap_or(0.5);
        if c.eps.len() >= 2 {
            push(lipschitz_stability_check(&ex.field, &c.eps, radius, &lip), None);
        }
    }
}
