//! Aggregation over repeats, bound checks, and the text and CSV reports.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::config::{parse_config, AlgorithmSpec, ExperimentConfig, Init};
use super::run::{build_oracle, build_synthetic, initial_point, opt_real, sweep_points, RunPlan, RunResult, SweepPoint, RUNS_HEADER};
use crate::error::{Error, Result};
use crate::estimators::{theorem1_bound, theorem3_bound};
use crate::optimizer::{parse_trace_csv, trace_stationarity, IterateRange, RunTrace};

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { mean, std }
    }

    /// Standard error of the mean.
    pub fn se(&self, n: usize) -> f64 {
        self.std / (n as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub label: String,
    pub repeats: usize,
    pub final_objective: Stat,
    pub final_accuracy: Option<Stat>,
    pub stationarity: Option<Stat>,
}

fn all_some(v: impl Iterator<Item = Option<f64>>) -> Option<Vec<f64>> {
    v.collect()
}

/// One row per sweep point, runs taken in repeat order.
pub fn summarize(points: &[SweepPoint], runs: &[RunResult], repeats: u32) -> Result<Vec<SummaryRow>> {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut rs: Vec<&RunResult> = runs.iter().filter(|r| r.point == i).collect();
            rs.sort_by_key(|r| r.repeat);
            if rs.len() != repeats as usize {
                return Err(Error::invalid(format!(
                    "{} has {} runs, expected {repeats}",
                    p.label,
                    rs.len()
                )));
            }
            let objective: Vec<f64> = rs.iter().map(|r| r.final_objective).collect();
            Ok(SummaryRow {
                label: p.label.clone(),
                repeats: rs.len(),
                final_objective: Stat::of(&objective),
                final_accuracy: all_some(rs.iter().map(|r| r.final_accuracy)).map(|v| Stat::of(&v)),
                stationarity: all_some(rs.iter().map(|r| r.stationarity)).map(|v| Stat::of(&v)),
            })
        })
        .collect()
}

pub const SUMMARY_HEADER: &str = "label,repeats,final_objective_mean,final_objective_std,final_accuracy_mean,final_accuracy_std,stationarity_mean,stationarity_std";

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:.16e},{:.16e},{},{},{},{}",
            r.label,
            r.repeats,
            r.final_objective.mean,
            r.final_objective.std,
            opt_real(r.final_accuracy.map(|s| s.mean)),
            opt_real(r.final_accuracy.map(|s| s.std)),
            opt_real(r.stationarity.map(|s| s.mean)),
            opt_real(r.stationarity.map(|s| s.std)),
        );
    }
    out
}

/// A measured value next to the bound it should respect.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundCheck {
    pub label: String,
    pub name: String,
    pub measured: f64,
    pub bound: f64,
}

impl BoundCheck {
    pub fn pass(&self) -> bool {
        self.measured <= self.bound
    }
}

/// Bounds that apply to the rows of a synthetic experiment run with a
/// constant step and a fixed starting point: the one-hot bound for
/// baseline rows, the smoothing bound for rows with `θ = 1/(1+δ)`, and `ε²`
/// for automatically scheduled two-stage rows.
pub fn bound_checks(config: &ExperimentConfig, points: &[SweepPoint], rows: &[SummaryRow]) -> Result<Vec<BoundCheck>> {
    let Some(oracle) = build_synthetic(&config.oracle)? else {
        return Ok(Vec::new());
    };
    if config.lr_decay.is_some() || matches!(config.init, Init::Random { scale } if scale > 0.0) {
        return Ok(Vec::new());
    }
    let w0 = initial_point(&config.init, oracle.problem.dim(), config.base_seed)?;
    let k = oracle.problem.constants();
    let f0 = oracle.problem.value(&w0) - k.f_star;
    let (sigma2, delta) = (oracle.noise.sigma2(), oracle.noise.delta());
    let mut out = Vec::new();
    for (p, row) in points.iter().zip(rows) {
        let Some(measured) = row.stationarity.map(|s| s.mean) else {
            continue;
        };
        let check = |name: &str, bound: f64| BoundCheck {
            label: row.label.clone(),
            name: name.into(),
            measured,
            bound,
        };
        match &p.plan {
            RunPlan::Sgd {
                eta,
                iterations,
                smoothing,
            } if *eta <= 1.0 / k.l => {
                if smoothing.is_baseline() {
                    out.push(check("one-hot bound", theorem3_bound(f0, *eta, *iterations, k.l, sigma2)?));
                } else if (smoothing.theta() - 1.0 / (1.0 + delta)).abs() <= 1e-9 {
                    out.push(check("smoothing bound", theorem1_bound(f0, *eta, *iterations, delta, sigma2)?));
                }
            }
            RunPlan::TwoStage { .. } => {
                if let AlgorithmSpec::TslaAuto { epsilon, .. } = config.algorithm {
                    if p.slug == "tsla" {
                        out.push(check("epsilon^2", epsilon * epsilon));
                    }
                }
            }
            _ => {}
        }
    }
    Ok(out)
}

fn cell(s: Option<Stat>) -> String {
    match s {
        Some(s) => format!("{:.6e} ± {:.2e}", s.mean, s.std),
        None => "-".into(),
    }
}

/// Table of rows by metric, followed by bound checks when there are any.
pub fn compare_report(rows: &[SummaryRow], bounds: &[BoundCheck]) -> String {
    let width = rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(9);
    let mut out = format!(
        "{:<width$}  {:>7}  {:<26}  {:<26}  {:<26}\n",
        "algorithm", "repeats", "final objective", "final accuracy", "stationarity"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>7}  {:<26}  {:<26}  {:<26}",
            r.label,
            r.repeats,
            cell(Some(r.final_objective)),
            cell(r.final_accuracy),
            cell(r.stationarity)
        );
    }
    if !bounds.is_empty() {
        out.push_str("\nbounds\n");
        for b in bounds {
            let _ = writeln!(
                out,
                "{} {}: measured {:.6e} <= {} {:.6e}",
                if b.pass() { "PASS" } else { "FAIL" },
                b.label,
                b.measured,
                b.name,
                b.bound
            );
        }
    }
    out
}

/// Summaries rebuilt from the trace files of an output directory.
#[derive(Debug, Clone)]
pub struct DirReport {
    pub summaries: Vec<SummaryRow>,
    pub bounds: Vec<BoundCheck>,
    pub text: String,
    /// Disagreements between the stored summary and the traces.
    pub mismatches: Vec<String>,
}

fn read(dir: &Path, name: &str) -> Result<String> {
    let path = dir.join(name);
    fs::read_to_string(&path).map_err(|e| Error::io(path, e))
}

fn parse_opt(s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        s.parse().map(Some).map_err(|_| Error::Parse(format!("bad number `{s}`")))
    }
}

fn last_accuracy(text: &str) -> Result<Option<f64>> {
    match text.lines().filter(|l| !l.trim().is_empty()).skip(1).last() {
        None => Ok(None),
        Some(line) => {
            let value = line
                .split(',')
                .nth(1)
                .ok_or_else(|| Error::Parse(format!("bad accuracy line `{line}`")))?;
            parse_opt(value)
        }
    }
}

fn rebuild(dir: &Path, line: &str) -> Result<RunResult> {
    let f: Vec<&str> = line.split(',').collect();
    if f.len() != 11 {
        return Err(Error::Parse(format!("runs.csv line `{line}`")));
    }
    let bad = |what: &str| Error::Parse(format!("runs.csv: bad {what} in `{line}`"));
    let records = parse_trace_csv(&read(dir, f[4])?)?;
    let boundary = records.iter().find(|r| r.stage == 2).map(|r| r.t);
    let last = *records.last().ok_or_else(|| bad("trace"))?;
    let trace = RunTrace {
        eval_stride: 1,
        final_params: Vec::new(),
        stage_boundary: boundary,
        records,
    };
    let range = match f[6] {
        "all" => Some(IterateRange::All),
        "second_stage" => Some(IterateRange::SecondStage),
        "none" => None,
        _ => return Err(bad("range")),
    };
    let final_accuracy = if f[5].is_empty() { None } else { last_accuracy(&read(dir, f[5])?)? };
    Ok(RunResult {
        label: f[0].to_string(),
        point: f[1].parse().map_err(|_| bad("point"))?,
        repeat: f[2].parse().map_err(|_| bad("repeat"))?,
        seed: f[3].parse().map_err(|_| bad("seed"))?,
        trace_file: f[4].to_string(),
        accuracy_file: (!f[5].is_empty()).then(|| f[5].to_string()),
        range,
        final_objective: last.objective,
        final_grad_norm_sq: last.grad_norm_sq,
        final_accuracy,
        stationarity: range.map(|r| trace_stationarity(&trace, r)).transpose()?,
    })
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

fn compare_rows(stored: &str, rows: &[SummaryRow]) -> Result<Vec<String>> {
    let mut mismatches = Vec::new();
    let lines: Vec<&str> = stored.lines().skip(1).filter(|l| !l.trim().is_empty()).collect();
    if lines.len() != rows.len() {
        mismatches.push(format!("summary.csv has {} rows, traces give {}", lines.len(), rows.len()));
        return Ok(mismatches);
    }
    for (line, row) in lines.iter().zip(rows) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 || f[0] != row.label {
            mismatches.push(format!("summary row `{line}` does not match {}", row.label));
            continue;
        }
        let pairs = [
            ("final_objective", parse_opt(f[2])?, Some(row.final_objective.mean)),
            ("final_accuracy", parse_opt(f[4])?, row.final_accuracy.map(|s| s.mean)),
            ("stationarity", parse_opt(f[6])?, row.stationarity.map(|s| s.mean)),
        ];
        for (name, a, b) in pairs {
            match (a, b) {
                (Some(a), Some(b)) if close(a, b) => {}
                (None, None) => {}
                _ => mismatches.push(format!("{}: stored {name} {a:?} differs from traces {b:?}", row.label)),
            }
        }
    }
    Ok(mismatches)
}

/// Recomputes the summary of an output directory from its traces and
/// checks it against the stored `summary.csv`.
pub fn report_from_dir(dir: &Path) -> Result<DirReport> {
    let config = parse_config(&read(dir, "config.toml")?)?;
    let runs_text = read(dir, "runs.csv")?;
    let mut lines = runs_text.lines();
    if lines.next().map(str::trim) != Some(RUNS_HEADER) {
        return Err(Error::Parse("runs.csv header mismatch".into()));
    }
    let runs = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| rebuild(dir, l))
        .collect::<Result<Vec<_>>>()?;
    let oracle = build_oracle(&config.oracle)?;
    let points = sweep_points(&config, &oracle)?;
    let summaries = summarize(&points, &runs, config.repeats)?;
    let bounds = bound_checks(&config, &points, &summaries)?;
    let mismatches = compare_rows(&read(dir, "summary.csv")?, &summaries)?;
    let mut text = compare_report(&summaries, &bounds);
    if !mismatches.is_empty() {
        text.push_str("\nsummary mismatches\n");
        for m in &mismatches {
            let _ = writeln!(text, "{m}");
        }
    }
    Ok(DirReport {
        summaries,
        bounds,
        text,
        mismatches,
    })
}
