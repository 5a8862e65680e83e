//! Plain SGD, SGD with smoothed labels, and the two-stage schedule that
//! drops smoothing after `T₁` iterations.
//!
//! Every run records `F(w_t)` and `‖∇F(w_t)‖²` from the exact objective at
//! `t = 0`, at every multiple of the evaluation stride, at the stage
//! boundary and at the final iterate.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::labels::{LabelSource, SmoothingSpec};
use crate::oracle::{norm_sq, LabelMode, Oracle, SampleStreams};

/// `w − η g`.
pub fn sgd_step(w: &[f64], g: &[f64], eta: f64) -> Vec<f64> {
    w.iter().zip(g).map(|(wi, gi)| wi - eta * gi).collect()
}

fn sgd_step_in_place(w: &mut [f64], g: &[f64], eta: f64) {
    w.iter_mut().zip(g).for_each(|(wi, gi)| *wi -= eta * gi);
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgdConfig {
    pub eta: f64,
    pub iterations: u64,
    pub smoothing: SmoothingSpec,
    pub seed: u64,
}

impl SgdConfig {
    pub fn baseline(eta: f64, iterations: u64, seed: u64) -> Self {
        Self {
            eta,
            iterations,
            smoothing: SmoothingSpec::none(),
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TslaSchedule {
    pub theta: f64,
    pub eta1: f64,
    pub t1: u64,
    pub eta2: f64,
    pub t2: u64,
}

impl TslaSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(Error::invalid(format!(
                "TSLA smoothing strength {} outside (0, 1)",
                self.theta
            )));
        }
        check_eta(self.eta1)?;
        check_eta(self.eta2)?;
        if self.t2 == 0 {
            return Err(Error::invalid("second stage needs at least one iteration"));
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.t1 + self.t2
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::invalid(format!("learning rate {eta} must be positive")));
    }
    Ok(())
}

/// Multiplies the learning rate by `factor` every `every` iterations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrDecay {
    pub every: u64,
    pub factor: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunOptions {
    /// Iterations between probes; `None` uses the oracle's default.
    pub eval_stride: Option<usize>,
    pub lr_decay: Option<LrDecay>,
}

impl RunOptions {
    pub fn every_iteration() -> Self {
        Self {
            eval_stride: Some(1),
            lr_decay: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub t: u64,
    pub stage: u8,
    pub objective: f64,
    pub grad_norm_sq: f64,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub records: Vec<TraceRecord>,
    pub final_params: Vec<f64>,
    pub eval_stride: usize,
    /// First iteration of the second stage, for two-stage runs.
    pub stage_boundary: Option<u64>,
}

impl RunTrace {
    pub fn iterations(&self) -> u64 {
        self.records.last().map_or(0, |r| r.t)
    }

    pub fn last(&self) -> &TraceRecord {
        self.records.last().expect("a trace always holds the initial point")
    }

    pub fn first_stage_end(&self) -> u64 {
        self.stage_boundary.unwrap_or_else(|| self.iterations())
    }

    /// Same iterates and measurements, ignoring stage markers.
    pub fn same_path(&self, other: &RunTrace) -> bool {
        let bits = |r: &TraceRecord| {
            (
                r.t,
                r.objective.to_bits(),
                r.grad_norm_sq.to_bits(),
                r.accuracy.map(f64::to_bits),
            )
        };
        self.records.len() == other.records.len()
            && self.records.iter().zip(&other.records).all(|(a, b)| bits(a) == bits(b))
            && self.final_params.len() == other.final_params.len()
            && self
                .final_params
                .iter()
                .zip(&other.final_params)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// `t,stage,objective,grad_norm_sq` with 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,stage,objective,grad_norm_sq\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{:.16e},{:.16e}",
                r.t, r.stage, r.objective, r.grad_norm_sq
            );
        }
        out
    }

    /// `t,accuracy` for the records that carry an accuracy.
    pub fn accuracy_csv(&self) -> Option<String> {
        if self.records.iter().all(|r| r.accuracy.is_none()) {
            return None;
        }
        let mut out = String::from("t,accuracy\n");
        for r in &self.records {
            if let Some(a) = r.accuracy {
                let _ = writeln!(out, "{},{a:.16e}", r.t);
            }
        }
        Some(out)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Parses the trace CSV written by [`RunTrace::to_csv`].
pub fn parse_trace_csv(text: &str) -> Result<Vec<TraceRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == "t,stage,objective,grad_norm_sq" => {}
        _ => return Err(Error::Parse("trace CSV header mismatch".into())),
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let bad = || Error::Parse(format!("trace CSV line {}: `{line}`", i + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(bad());
            }
            Ok(TraceRecord {
                t: f[0].parse().map_err(|_| bad())?,
                stage: f[1].parse().map_err(|_| bad())?,
                objective: f[2].parse().map_err(|_| bad())?,
                grad_norm_sq: f[3].parse().map_err(|_| bad())?,
                accuracy: None,
            })
        })
        .collect()
}

struct Stage {
    mode: LabelMode,
    eta: f64,
    iterations: u64,
}

fn probe<O: Oracle + ?Sized>(oracle: &O, w: &[f64], t: u64, stage: u8) -> TraceRecord {
    TraceRecord {
        t,
        stage,
        objective: oracle.value(w),
        grad_norm_sq: norm_sq(&oracle.gradient(w)),
        accuracy: oracle.accuracy(w),
    }
}

fn run_stages<O: Oracle + ?Sized>(
    oracle: &O,
    w0: &[f64],
    stages: &[Stage],
    two_stage: bool,
    seed: u64,
    opts: &RunOptions,
) -> Result<RunTrace> {
    if w0.len() != oracle.dim() {
        return Err(Error::invalid(format!(
            "initial point has dimension {}, oracle expects {}",
            w0.len(),
            oracle.dim()
        )));
    }
    for s in stages {
        oracle.check_mode(&s.mode)?;
    }
    let stride = opts.eval_stride.unwrap_or_else(|| oracle.default_eval_stride()).max(1) as u64;
    if let Some(d) = opts.lr_decay {
        if d.every == 0 || !(d.factor > 0.0) {
            return Err(Error::invalid("learning-rate decay needs every >= 1 and factor > 0"));
        }
    }
    let boundary = two_stage.then(|| stages[0].iterations);
    let stage_of = |t: u64| match boundary {
        Some(b) if t >= b => 2,
        _ => 1,
    };
    let total: u64 = stages.iter().map(|s| s.iterations).sum();
    let mut streams = SampleStreams::new(seed);
    let mut w = w0.to_vec();
    let mut records = vec![probe(oracle, &w, 0, stage_of(0))];
    let mut t = 0u64;
    for stage in stages {
        for _ in 0..stage.iterations {
            let g = oracle.sample_gradient(&w, &stage.mode, &mut streams)?;
            let eta = match opts.lr_decay {
                Some(d) => stage.eta * d.factor.powi((t / d.every) as i32),
                None => stage.eta,
            };
            sgd_step_in_place(&mut w, &g, eta);
            t += 1;
            if t % stride == 0 || t == total || Some(t) == boundary {
                records.push(probe(oracle, &w, t, stage_of(t)));
            }
        }
    }
    if boundary == Some(0) && records.len() > 1 && records[1].t == 0 {
        records.remove(1);
    }
    Ok(RunTrace {
        records,
        final_params: w,
        eval_stride: stride as usize,
        stage_boundary: boundary,
    })
}

/// SGD against smoothed labels for `config.iterations` steps. Zero smoothing
/// strength runs plain one-hot SGD.
pub fn run_sgd_lsr<O: Oracle + ?Sized>(
    oracle: &O,
    w0: &[f64],
    config: &SgdConfig,
    opts: &RunOptions,
) -> Result<RunTrace> {
    check_eta(config.eta)?;
    let stage = Stage {
        mode: LabelMode::from_smoothing(&config.smoothing),
        eta: config.eta,
        iterations: config.iterations,
    };
    run_stages(oracle, w0, &[stage], false, config.seed, opts)
}

/// Fixed smoothing with a piecewise-constant learning rate: `stages[k].1`
/// steps at rate `stages[k].0`. Shares its sample streams with the other
/// runners, so equal seeds give paired noise.
pub fn run_stagewise<O: Oracle + ?Sized>(
    oracle: &O,
    w0: &[f64],
    smoothing: &SmoothingSpec,
    stages: &[(f64, u64)],
    seed: u64,
    opts: &RunOptions,
) -> Result<RunTrace> {
    let stages = stages
        .iter()
        .map(|&(eta, iterations)| {
            check_eta(eta)?;
            Ok(Stage {
                mode: LabelMode::from_smoothing(smoothing),
                eta,
                iterations,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    run_stages(oracle, w0, &stages, false, seed, opts)
}

/// `T₁` smoothed-label steps at `η₁`, then `T₂` one-hot steps at `η₂`
/// continuing from the last first-stage iterate.
pub fn run_tsla<O: Oracle + ?Sized>(
    oracle: &O,
    w0: &[f64],
    schedule: &TslaSchedule,
    source: &LabelSource,
    seed: u64,
    opts: &RunOptions,
) -> Result<RunTrace> {
    schedule.validate()?;
    run_two_stage(oracle, w0, schedule, source, seed, opts)
}

pub(crate) fn run_two_stage<O: Oracle + ?Sized>(
    oracle: &O,
    w0: &[f64],
    schedule: &TslaSchedule,
    source: &LabelSource,
    seed: u64,
    opts: &RunOptions,
) -> Result<RunTrace> {
    let smoothing = SmoothingSpec::new(schedule.theta, source.clone())?;
    let stages = [
        Stage {
            mode: LabelMode::Smoothed(smoothing),
            eta: schedule.eta1,
            iterations: schedule.t1,
        },
        Stage {
            mode: LabelMode::OneHot,
            eta: schedule.eta2,
            iterations: schedule.t2,
        },
    ];
    run_stages(oracle, w0, &stages, true, seed, opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IterateRange {
    /// `{0, …, T − 1}`.
    All,
    /// `{T₁, …, T₁ + T₂ − 1}`.
    SecondStage,
}

/// Range of iterations `[start, end)` that `range` selects in `trace`.
pub fn iterate_window(trace: &RunTrace, range: IterateRange) -> Result<(u64, u64)> {
    let end = trace.iterations();
    let start = match range {
        IterateRange::All => 0,
        IterateRange::SecondStage => trace.stage_boundary.ok_or_else(|| {
            Error::invalid("second-stage range requested for a single-stage run")
        })?,
    };
    if start >= end {
        return Err(Error::invalid(format!(
            "iterate range [{start}, {end}) is empty"
        )));
    }
    Ok((start, end))
}

fn window_mean(trace: &RunTrace, start: u64, end: u64) -> Result<f64> {
    let lo = trace.records.partition_point(|r| r.t < start);
    let hi = trace.records.partition_point(|r| r.t < end);
    if (hi - lo) as u64 != end - start {
        return Err(Error::invalid(format!(
            "trace records {} of the {} iterations in [{start}, {end}); stride-1 recording is required",
            hi - lo,
            end - start
        )));
    }
    Ok(trace.records[lo..hi].iter().map(|r| r.grad_norm_sq).sum::<f64>() / (end - start) as f64)
}

/// Monte-Carlo estimate of `E_R ‖∇F(w_R)‖²` with `R` uniform over `range`:
/// the per-run mean over the range, averaged over runs.
pub fn random_iterate_stationarity(traces: &[RunTrace], range: IterateRange) -> Result<f64> {
    if traces.is_empty() {
        return Err(Error::invalid("need at least one trace"));
    }
    let means = traces
        .iter()
        .map(|tr| {
            let (s, e) = iterate_window(tr, range)?;
            window_mean(tr, s, e)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(means.iter().sum::<f64>() / means.len() as f64)
}

/// Per-run `E_R` value for one trace.
pub fn trace_stationarity(trace: &RunTrace, range: IterateRange) -> Result<f64> {
    random_iterate_stationarity(std::slice::from_ref(trace), range)
}
