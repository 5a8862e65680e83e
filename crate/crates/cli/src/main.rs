//! `tsla`: run, sweep, estimate and verify label-smoothing experiments.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tsla_core::estimators::{estimate_delta, estimate_sigma2, tsla_schedule, verify_lemma1, verify_lemma1_synthetic};
use tsla_core::harness::{
    build_oracle, initial_point, parse_config, report_from_dir, run_experiment, AlgorithmSpec, BuiltOracle,
    DataSource, ExperimentConfig, OracleSpec,
};
use tsla_core::{Error, LabelSource, ProblemConstants, Result, SmoothingSpec};

/// Monte-Carlo draws for the synthetic variance check.
const LEMMA1_DRAWS: usize = 100_000;

#[derive(Parser)]
#[command(name = "tsla", version, about = "Two-stage label smoothing experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every repeat of an experiment and write traces and a summary.
    Run(RunArgs),
    /// Like `run`, but the config must contain a [sweep] table.
    Sweep(RunArgs),
    /// Print the problem constants and the smoothed-variance report at the start point.
    Estimate {
        config: PathBuf,
    },
    /// Run an experiment and fail unless every theorem bound holds.
    Verify(RunArgs),
    /// Rebuild the report of a finished experiment from its trace files.
    Report {
        dir: PathBuf,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    config: PathBuf,
    /// Override the configured output directory.
    #[arg(short, long)]
    output_dir: Option<PathBuf>,
}

enum Outcome {
    Ok,
    Failed(String),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Failed(msg)) => {
            eprintln!("tsla: {msg}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("tsla: {e}");
            ExitCode::from(e.category().exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<Outcome> {
    match command {
        Command::Run(args) => {
            let out = run_experiment(&load(&args)?)?;
            print!("{}", out.report);
            Ok(Outcome::Ok)
        }
        Command::Sweep(args) => {
            let config = load(&args)?;
            if config.sweep.is_none() {
                return Err(Error::Config(format!("{}: no [sweep] table", args.config.display())));
            }
            let out = run_experiment(&config)?;
            print!("{}", out.report);
            Ok(Outcome::Ok)
        }
        Command::Estimate { config } => {
            let config = load_config(&config)?;
            print!("{}", estimate(&config)?);
            Ok(Outcome::Ok)
        }
        Command::Verify(args) => {
            let out = run_experiment(&load(&args)?)?;
            print!("{}", out.report);
            if out.bounds.is_empty() {
                Ok(Outcome::Failed("no theorem bound applies to this configuration".into()))
            } else if out.all_bounds_pass() {
                Ok(Outcome::Ok)
            } else {
                Ok(Outcome::Failed("a theorem bound was exceeded".into()))
            }
        }
        Command::Report { dir } => {
            let report = report_from_dir(&dir)?;
            print!("{}", report.text);
            if report.mismatches.is_empty() {
                Ok(Outcome::Ok)
            } else {
                for m in &report.mismatches {
                    eprintln!("mismatch: {m}");
                }
                Ok(Outcome::Failed("summary.csv disagrees with the traces".into()))
            }
        }
    }
}

fn load(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut config = load_config(&args.config)?;
    if let Some(dir) = &args.output_dir {
        config.output_dir = dir.clone();
    }
    Ok(config)
}

/// Reads a config; relative dataset paths are taken from the config's directory.
fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut config = parse_config(&text).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        e => e,
    })?;
    let base = path.parent().unwrap_or(Path::new(""));
    if let OracleSpec::Classification { data, holdout, .. } = &mut config.oracle {
        for source in std::iter::once(data).chain(holdout.as_mut()) {
            if let DataSource::File(p) = source {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
    }
    Ok(config)
}

/// Smoothing strength and source named by the algorithm; `None` for the
/// baseline, which picks `1/(1+δ)` once δ is known.
fn smoothing_of(algorithm: &AlgorithmSpec) -> Option<(f64, LabelSource)> {
    match algorithm {
        AlgorithmSpec::Baseline { .. } => None,
        AlgorithmSpec::Lsr { smoothing, .. } => Some((smoothing.theta(), smoothing.source().clone())),
        AlgorithmSpec::Tsla { theta, source, .. } => Some((*theta, source.clone())),
        AlgorithmSpec::TslaAuto { .. } => None,
    }
}

fn estimate(config: &ExperimentConfig) -> Result<String> {
    let oracle = build_oracle(&config.oracle)?;
    let w0 = initial_point(&config.init, oracle.as_oracle().dim(), config.base_seed)?;
    let mut out = String::new();
    match &oracle {
        BuiltOracle::Synthetic(o) => {
            let constants = ProblemConstants::from_synthetic(o, &w0)?;
            out.push_str(&constants.to_kv());
            let theta = match smoothing_of(&config.algorithm) {
                Some((theta, _)) => theta,
                None => 1.0 / (1.0 + constants.delta),
            };
            let spec = SmoothingSpec::new(theta, LabelSource::Uniform)?;
            let report = verify_lemma1_synthetic(o, &w0, &spec, LEMMA1_DRAWS, config.base_seed)?;
            out.push_str(&report.to_kv());
            if let AlgorithmSpec::TslaAuto { epsilon, .. } = &config.algorithm {
                let s = tsla_schedule(&constants, *epsilon)?;
                out.push_str(&format!(
                    "schedule_theta={:e}\nschedule_eta1={:e}\nschedule_t1={}\nschedule_eta2={:e}\nschedule_t2={}\n",
                    s.theta, s.eta1, s.t1, s.eta2, s.t2
                ));
            }
        }
        BuiltOracle::Classification(o) => {
            let (theta, source) = match smoothing_of(&config.algorithm) {
                Some(s) => s,
                None => {
                    let delta = estimate_delta(o, &w0, &LabelSource::Uniform)?;
                    (1.0 / (1.0 + delta), LabelSource::Uniform)
                }
            };
            let sigma2 = estimate_sigma2(o, &w0)?;
            let delta = estimate_delta(o, &w0, &source)?;
            out.push_str(&format!("sigma2={sigma2:e}\ndelta={delta:e}\n"));
            let report = verify_lemma1(o, &w0, &SmoothingSpec::new(theta, source)?)?;
            out.push_str(&report.to_kv());
        }
    }
    Ok(out)
}
