//! `homlab run <config.toml>`: runs the configured experiments and writes
//! `results.csv`, `summary.json`, `timing.json` and optional grid dumps.
//!
//! Exit codes: 0 all pass, 1 acceptance failure, 2 config error (nothing
//! written), 3 solver non-convergence.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod dump;
mod report;
mod run;

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use report::{ExitStatus, RunReport};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

#[derive(Parser)]
#[command(name = "homlab", version, about = "Homogenization rate experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiments of a TOML config.
    Run {
        config: PathBuf,
        /// Output directory; overrides `output_dir` of the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Experiments run concurrently; overrides `workers` of the config.
        #[arg(long, env = "HOMLAB_WORKERS")]
        workers: Option<usize>,
        /// Sampling seed; overrides `seed` of the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Write grid dumps under `<out>/dumps`.
        #[arg(long)]
        dump_fields: bool,
    },
}

fn config_error(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("config error: {msg}");
    ExitCode::from(ExitStatus::ConfigError.code() as u8)
}

fn main() -> ExitCode {
    let Command::Run {
        config,
        out,
        workers,
        seed,
        dump_fields,
    } = Cli::parse().command;
    let cfg = match config::load(&config) {
        Ok(c) => c,
        Err(e) => return config_error(e),
    };
    let experiments = match config::validate(&cfg) {
        Ok(e) => e,
        Err(e) => return config_error(e),
    };
    let workers = workers.or(cfg.workers).unwrap_or(1);
    if workers == 0 {
        return config_error("workers must be at least 1");
    }
    let seed = seed.unwrap_or(cfg.seed);
    let out = out.or(cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("homlab-out"));
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(p) => p,
        Err(e) => return config_error(e),
    };
    if let Err(e) = std::fs::create_dir_all(&out) {
        eprintln!("cannot create {}: {e}", out.display());
        return ExitCode::from(1);
    }

    let t = Instant::now();
    // collect keeps the id order of `experiments`
    let results: Vec<_> = pool.install(|| experiments.par_iter().map(|ex| run::run_experiment(ex, seed)).collect());
    let total = t.elapsed().as_secs_f64();
    let status = report::aggregate(&results);

    for ex in &results {
        for s in &ex.suites {
            eprintln!("{} {}: {} ({:.1}s)", ex.id, s.suite.as_str(), s.verdict.as_str(), s.seconds);
            for r in &s.reports {
                let slope = r.slope().map_or("-".to_string(), |v| format!("{v:.3}"));
                eprintln!("  {} slope {slope} nu {} {}", r.norm_name, r.nu_expected, r.verdict.as_str());
            }
            for c in &s.checks {
                eprintln!("  {} {}", c.name, c.verdict.as_str());
                for n in &c.notes {
                    eprintln!("    {n}");
                }
            }
            for e in &s.errors {
                let kind = if e.non_convergence { "non-convergence" } else { "error" };
                eprintln!("  {kind}: {}", e.message);
            }
        }
    }

    let written = (|| -> std::io::Result<()> {
        report::write_csv(&out.join("results.csv"), &report::rows(&results))?;
        let summary = RunReport {
            version: env!("CARGO_PKG_VERSION"),
            seed,
            exit_status: status,
            exit_code: status.code(),
            experiments: &results,
        };
        report::write_summary(&out.join("summary.json"), &summary)?;
        report::write_timing(&out.join("timing.json"), &results, total, workers)?;
        if dump_fields {
            let root = out.join("dumps");
            for ex in &experiments {
                for w in dump::dump_experiment(&root, ex)? {
                    eprintln!("warning: {w}");
                }
            }
        }
        Ok(())
    })();
    if let Err(e) = written {
        eprintln!("cannot write results to {}: {e}", out.display());
        return ExitCode::from(1);
    }
    eprintln!("{} -> exit {}", status_name(status), status.code());
    ExitCode::from(status.code() as u8)
}

fn status_name(s: ExitStatus) -> &'static str {
    match s {
        ExitStatus::Pass => "all pass",
        ExitStatus::AcceptanceFailure => "acceptance failure",
        ExitStatus::ConfigError => "config error",
        ExitStatus::NonConvergence => "solver non-convergence",
    }
}
