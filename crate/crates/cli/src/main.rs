//! `swarmalloc` command line: cheat-sheet measurement, experiment runs, the brute-force
//! oracle and report recomputation. Failures print `{"error": kind, "message": ...}` on stderr.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use swarmalloc::cheatsheet::{build, CheatSheet, GridSpec, RunPolicy};
use swarmalloc::controllers::ControllerKind;
use swarmalloc::harness::{emit_report, reload_report, run_experiment, run_oracle, ExperimentConfig, Report};
use swarmalloc::solver::Objective;
use swarmalloc::{Error, Result};

#[derive(Parser)]
#[command(name = "swarmalloc", version, about = "Server bandwidth allocation across content-distribution swarms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Measure a cheat sheet over a grid and write it as CSV.
    Measure {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run one experiment and write its report.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        controller: Option<String>,
        #[arg(long)]
        objective: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Report directory; overrides the config's `report_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exhaustive optimum over ground-truth curves measured on the allocation lattice.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "grid-step")]
        grid_step: f64,
        /// Simulation replications per measured point.
        #[arg(long, default_value_t = 3)]
        reps: usize,
    },
    /// Recompute a report's summary from its time series.
    Report {
        #[arg(long = "in")]
        dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", &e.to_string()),
    };
    match execute(cli.command) {
        Ok(doc) => {
            println!("{}", serde_json::to_string_pretty(&doc).expect("JSON values always serialize"));
            ExitCode::SUCCESS
        }
        Err(e) => fail(e.kind(), &e.to_string()),
    }
}

fn fail(kind: &str, message: &str) -> ExitCode {
    eprintln!("{}", json!({ "error": kind, "message": message.trim_end() }));
    ExitCode::FAILURE
}

fn execute(command: Command) -> Result<serde_json::Value> {
    match command {
        Command::Measure { grid, out, reps, seed } => measure(&grid, &out, reps, seed),
        Command::Run { config, controller, objective, seed, out } => {
            let mut cfg = load_config(&config)?;
            if let Some(name) = controller {
                cfg.controller = name.parse::<ControllerKind>()?;
            }
            if let Some(name) = objective {
                cfg.objective = name.parse::<Objective>()?;
            }
            if seed.is_some() {
                cfg.seed = seed;
            }
            if out.is_some() {
                cfg.report_dir = out;
            }
            let report = run_experiment(&cfg)?;
            let written = match &cfg.report_dir {
                Some(dir) => emit_report(&report, dir)?,
                None => Vec::new(),
            };
            Ok(json!({ "summary": report.summary, "files": written, "warnings": report.warnings }))
        }
        Command::Oracle { config, grid_step, reps } => {
            let cfg = load_config(&config)?;
            Ok(serde_json::to_value(run_oracle(&cfg, grid_step, reps, &RunPolicy::default())?)?)
        }
        Command::Report { dir } => {
            let report: Report = reload_report(&dir)?;
            Ok(json!({ "summary": report.summary, "epochs": report.rows.len() }))
        }
    }
}

fn measure(grid: &Path, out: &Path, reps: Option<usize>, seed: Option<u64>) -> Result<serde_json::Value> {
    let text = std::fs::read_to_string(grid).map_err(|e| io(grid, e))?;
    let mut spec: GridSpec = serde_json::from_str(&text)?;
    if let Some(reps) = reps {
        spec.reps = reps;
    }
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let sheet: CheatSheet<f64> = build(&spec)?;
    sheet.save(out)?;
    Ok(json!({ "cells": sheet.cells().len(), "out": out }))
}

/// Loads a config; a relative `cheatsheet_path` or `report_dir` is taken relative to the
/// config file.
fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    let base = path.parent().unwrap_or(Path::new(""));
    for p in [&mut cfg.cheatsheet_path, &mut cfg.report_dir].into_iter().flatten() {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    Ok(cfg)
}

fn io(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source }
}
