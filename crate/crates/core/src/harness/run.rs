//! Expansion of a configuration into seeded runs, parallel execution, and
//! the files each experiment leaves behind.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::config::{AlgorithmSpec, DataSource, ExperimentConfig, Init, OracleSpec, SweepValues, SyntheticObjectiveSpec};
use super::report::{bound_checks, compare_report, summarize, BoundCheck, SummaryRow};
use crate::classification::{generate_gaussian_mixture, ClassificationOracle, Dataset};
use crate::error::{Error, Result};
use crate::estimators::{tsla_schedule, ProblemConstants};
use crate::labels::{LabelSource, SmoothingSpec};
use crate::optimizer::{
    run_sgd_lsr, run_two_stage, trace_stationarity, IterateRange, LrDecay, RunOptions, RunTrace, SgdConfig, TslaSchedule,
};
use crate::oracle::{stream, Oracle};
use crate::synthetic::{NoiseSpec, SyntheticOracle, SyntheticPLProblem};

/// Environment variable that overrides the configured worker count.
pub const WORKERS_ENV: &str = "TSLA_WORKERS";

pub enum BuiltOracle {
    Synthetic(SyntheticOracle),
    Classification(ClassificationOracle),
}

impl BuiltOracle {
    pub fn as_oracle(&self) -> &dyn Oracle {
        match self {
            BuiltOracle::Synthetic(o) => o,
            BuiltOracle::Classification(o) => o,
        }
    }

    /// Iterations per epoch: the dataset size, or 1 for synthetic oracles.
    pub fn epoch(&self) -> u64 {
        match self {
            BuiltOracle::Synthetic(_) => 1,
            BuiltOracle::Classification(o) => o.data().len() as u64,
        }
    }
}

fn load_data(source: &DataSource) -> Result<Dataset> {
    match source {
        DataSource::File(p) => Dataset::load(p),
        DataSource::Generated(spec) => generate_gaussian_mixture(spec),
    }
}

pub fn build_synthetic(spec: &OracleSpec) -> Result<Option<SyntheticOracle>> {
    let OracleSpec::Synthetic {
        objective,
        dim,
        sigma2,
        delta,
        bias_fraction,
    } = spec
    else {
        return Ok(None);
    };
    let problem = match objective {
        SyntheticObjectiveSpec::PlSine => SyntheticPLProblem::pl_sine(*dim)?,
        SyntheticObjectiveSpec::ShiftedQuadratic { center, curvature } => {
            SyntheticPLProblem::shifted_quadratic(center.clone(), *curvature)?
        }
    };
    Ok(Some(SyntheticOracle::new(problem, NoiseSpec::new(*sigma2, *delta, *bias_fraction)?)))
}

pub fn build_oracle(spec: &OracleSpec) -> Result<BuiltOracle> {
    if let Some(o) = build_synthetic(spec)? {
        return Ok(BuiltOracle::Synthetic(o));
    }
    let OracleSpec::Classification { model, data, holdout } = spec else {
        unreachable!("synthetic handled above");
    };
    let mut oracle = ClassificationOracle::new(*model, load_data(data)?)?;
    if let Some(h) = holdout {
        oracle = oracle.with_holdout(load_data(h)?)?;
    }
    Ok(BuiltOracle::Classification(oracle))
}

/// Starting point for the run seeded with `seed`.
pub fn initial_point(init: &Init, dim: usize, seed: u64) -> Result<Vec<f64>> {
    match init {
        Init::Point(w) if w.len() == dim => Ok(w.clone()),
        Init::Point(w) => Err(Error::config(format!("w0 has {} entries, oracle dimension is {dim}", w.len()))),
        Init::Random { scale } if *scale == 0.0 => Ok(vec![0.0; dim]),
        Init::Random { scale } => {
            let mut rng = stream(seed, 4);
            Ok((0..dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect())
        }
    }
}

/// What one run executes, before a seed is attached.
#[derive(Debug, Clone, PartialEq)]
pub enum RunPlan {
    Sgd {
        eta: f64,
        iterations: u64,
        smoothing: SmoothingSpec,
    },
    TwoStage {
        schedule: TslaSchedule,
        source: LabelSource,
    },
}

impl RunPlan {
    fn range(&self) -> Option<IterateRange> {
        match self {
            RunPlan::Sgd { iterations, .. } if *iterations > 0 => Some(IterateRange::All),
            RunPlan::TwoStage { schedule, .. } if schedule.t2 > 0 => Some(IterateRange::SecondStage),
            _ => None,
        }
    }
}

/// One row of the summary table: a label and the plan its runs share.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub label: String,
    pub slug: String,
    pub plan: RunPlan,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub point: usize,
    pub repeat: u32,
    pub seed: u64,
}

fn fmt_value(v: f64) -> String {
    format!("{v}")
}

fn two_stage(theta: f64, source: &LabelSource, eta1: f64, eta2: f64, t1: u64, total: u64) -> Result<RunPlan> {
    if t1 > total {
        return Err(Error::config(format!("drop point {t1} exceeds the budget of {total} iterations")));
    }
    Ok(RunPlan::TwoStage {
        schedule: TslaSchedule {
            theta,
            eta1,
            t1,
            eta2,
            t2: total - t1,
        },
        source: source.clone(),
    })
}

/// The sweep points of an experiment, in output order: references first,
/// then sweep values in increasing order.
pub fn sweep_points(config: &ExperimentConfig, oracle: &BuiltOracle) -> Result<Vec<SweepPoint>> {
    let epoch = oracle.epoch();
    let point = |label: String, slug: String, plan: RunPlan| SweepPoint { label, slug, plan };
    let base = match &config.algorithm {
        AlgorithmSpec::Baseline { eta, budget } => point(
            "baseline".into(),
            "baseline".into(),
            RunPlan::Sgd {
                eta: *eta,
                iterations: budget.iterations(epoch),
                smoothing: SmoothingSpec::none(),
            },
        ),
        AlgorithmSpec::Lsr { eta, smoothing, budget } => point(
            "lsr".into(),
            "lsr".into(),
            RunPlan::Sgd {
                eta: *eta,
                iterations: budget.iterations(epoch),
                smoothing: smoothing.clone(),
            },
        ),
        AlgorithmSpec::Tsla {
            theta,
            source,
            eta1,
            eta2,
            drop,
            budget,
        } => point(
            "tsla".into(),
            "tsla".into(),
            two_stage(*theta, source, *eta1, *eta2, drop.iterations(epoch), budget.iterations(epoch))?,
        ),
        AlgorithmSpec::TslaAuto { epsilon, source } => {
            let BuiltOracle::Synthetic(o) = oracle else {
                return Err(Error::config("automatic schedules need a synthetic oracle"));
            };
            let w0 = initial_point(&config.init, o.dim(), config.base_seed)?;
            let schedule = tsla_schedule(&ProblemConstants::from_synthetic(o, &w0)?, *epsilon)?;
            point(
                "tsla".into(),
                "tsla".into(),
                RunPlan::TwoStage {
                    schedule,
                    source: source.clone(),
                },
            )
        }
    };
    let Some(sweep) = &config.sweep else {
        return Ok(vec![base]);
    };
    let mut points = Vec::new();
    match (&sweep.values, &config.algorithm) {
        (
            SweepValues::DropEpochs(v) | SweepValues::DropIterations(v),
            AlgorithmSpec::Tsla {
                theta,
                source,
                eta1,
                eta2,
                budget,
                ..
            },
        ) => {
            let total = budget.iterations(epoch);
            let unit = if matches!(sweep.values, SweepValues::DropEpochs(_)) { epoch } else { 1 };
            if sweep.include_references {
                points.push(point(
                    "baseline".into(),
                    "baseline".into(),
                    RunPlan::Sgd {
                        eta: *eta1,
                        iterations: total,
                        smoothing: SmoothingSpec::none(),
                    },
                ));
                points.push(point(
                    "lsr".into(),
                    "lsr".into(),
                    RunPlan::Sgd {
                        eta: *eta1,
                        iterations: total,
                        smoothing: SmoothingSpec::new(*theta, source.clone())?,
                    },
                ));
            }
            let mut values = v.clone();
            values.sort_unstable();
            values.dedup();
            for s in values {
                points.push(point(
                    format!("tsla(s={s})"),
                    format!("tsla_s{s}"),
                    two_stage(*theta, source, *eta1, *eta2, s * unit, total)?,
                ));
            }
        }
        (SweepValues::Thetas(v), _) => {
            if sweep.include_references {
                let (eta, iterations) = match &base.plan {
                    RunPlan::Sgd { eta, iterations, .. } => (*eta, *iterations),
                    RunPlan::TwoStage { schedule, .. } => (schedule.eta1, schedule.total()),
                };
                points.push(point(
                    "baseline".into(),
                    "baseline".into(),
                    RunPlan::Sgd {
                        eta,
                        iterations,
                        smoothing: SmoothingSpec::none(),
                    },
                ));
            }
            let mut values = v.clone();
            values.sort_by(f64::total_cmp);
            values.dedup();
            for theta in values {
                let plan = match &base.plan {
                    RunPlan::Sgd { eta, iterations, smoothing } => RunPlan::Sgd {
                        eta: *eta,
                        iterations: *iterations,
                        smoothing: SmoothingSpec::new(theta, smoothing.source().clone())?,
                    },
                    RunPlan::TwoStage { schedule, source } => RunPlan::TwoStage {
                        schedule: TslaSchedule { theta, ..*schedule },
                        source: source.clone(),
                    },
                };
                points.push(point(
                    format!("{}(theta={})", base.label, fmt_value(theta)),
                    format!("{}_theta{}", base.slug, fmt_value(theta)),
                    plan,
                ));
            }
        }
        _ => return Err(Error::config("sweep does not match the algorithm")),
    }
    Ok(points)
}

/// Seed of a run: a pure function of the base seed and the repeat index,
/// shared across sweep points so comparisons are paired.
pub fn run_seed(base_seed: u64, repeat: u32) -> u64 {
    base_seed.wrapping_add(repeat as u64)
}

pub fn run_specs(config: &ExperimentConfig, points: usize) -> Vec<RunSpec> {
    (0..points)
        .flat_map(|point| {
            (0..config.repeats).map(move |repeat| RunSpec {
                point,
                repeat,
                seed: run_seed(config.base_seed, repeat),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub point: usize,
    pub label: String,
    pub repeat: u32,
    pub seed: u64,
    pub trace_file: String,
    pub accuracy_file: Option<String>,
    pub range: Option<IterateRange>,
    pub final_objective: f64,
    pub final_grad_norm_sq: f64,
    pub final_accuracy: Option<f64>,
    pub stationarity: Option<f64>,
}

pub fn run_options(config: &ExperimentConfig, oracle: &BuiltOracle) -> RunOptions {
    RunOptions {
        eval_stride: config.eval_stride,
        lr_decay: config.lr_decay.map(|d| LrDecay {
            every: d.every.iterations(oracle.epoch()),
            factor: d.factor,
        }),
    }
}

/// Runs one plan; exposed for callers that want traces without files.
pub fn execute(oracle: &BuiltOracle, config: &ExperimentConfig, plan: &RunPlan, seed: u64) -> Result<RunTrace> {
    let o = oracle.as_oracle();
    let w0 = initial_point(&config.init, o.dim(), seed)?;
    let opts = run_options(config, oracle);
    match plan {
        RunPlan::Sgd {
            eta,
            iterations,
            smoothing,
        } => run_sgd_lsr(
            o,
            &w0,
            &SgdConfig {
                eta: *eta,
                iterations: *iterations,
                smoothing: smoothing.clone(),
                seed,
            },
            &opts,
        ),
        RunPlan::TwoStage { schedule, source } => run_two_stage(o, &w0, schedule, source, seed, &opts),
    }
}

fn run_one(oracle: &BuiltOracle, config: &ExperimentConfig, points: &[SweepPoint], spec: &RunSpec, dir: &Path) -> Result<RunResult> {
    let point = &points[spec.point];
    let trace = execute(oracle, config, &point.plan, spec.seed)?;
    let name = format!("{}_r{:03}", point.slug, spec.repeat);
    let trace_file = format!("traces/{name}.csv");
    trace.write_csv(&dir.join(&trace_file))?;
    let accuracy_file = match trace.accuracy_csv() {
        Some(text) => {
            let f = format!("traces/{name}_accuracy.csv");
            let path = dir.join(&f);
            fs::write(&path, text).map_err(|e| Error::io(path, e))?;
            Some(f)
        }
        None => None,
    };
    let range = point.plan.range();
    let stationarity = match range {
        Some(r) if trace.eval_stride == 1 => Some(trace_stationarity(&trace, r)?),
        _ => None,
    };
    let last = trace.last();
    Ok(RunResult {
        point: spec.point,
        label: point.label.clone(),
        repeat: spec.repeat,
        seed: spec.seed,
        trace_file,
        accuracy_file,
        range: stationarity.and(range),
        final_objective: last.objective,
        final_grad_norm_sq: last.grad_norm_sq,
        final_accuracy: last.accuracy,
        stationarity,
    })
}

fn worker_count(config: &ExperimentConfig) -> Result<Option<usize>> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(Error::config(format!("{WORKERS_ENV} must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(config.workers),
    }
}

/// Runs `f` on a pool sized by the environment override or the config.
pub fn with_workers<T: Send>(config: &ExperimentConfig, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = worker_count(config)? {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

pub(crate) fn range_name(r: Option<IterateRange>) -> &'static str {
    match r {
        Some(IterateRange::All) => "all",
        Some(IterateRange::SecondStage) => "second_stage",
        None => "none",
    }
}

pub(crate) fn opt_real(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.16e}")).unwrap_or_default()
}

pub const RUNS_HEADER: &str =
    "label,point,repeat,seed,trace_file,accuracy_file,range,final_objective,final_grad_norm_sq,final_accuracy,stationarity";

fn runs_csv(results: &[RunResult]) -> String {
    let mut out = format!("{RUNS_HEADER}\n");
    for r in results {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{:.16e},{:.16e},{},{}",
            r.label,
            r.point,
            r.repeat,
            r.seed,
            r.trace_file,
            r.accuracy_file.as_deref().unwrap_or(""),
            range_name(r.range),
            r.final_objective,
            r.final_grad_norm_sq,
            opt_real(r.final_accuracy),
            opt_real(r.stationarity),
        );
    }
    out
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub output_dir: PathBuf,
    pub runs: Vec<RunResult>,
    pub summaries: Vec<SummaryRow>,
    pub bounds: Vec<BoundCheck>,
    pub report: String,
}

impl ExperimentOutput {
    pub fn all_bounds_pass(&self) -> bool {
        self.bounds.iter().all(|b| b.pass())
    }
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| Error::io(path, e))
}

/// Executes every repeat of every sweep point and writes the trace CSVs,
/// `runs.csv`, `summary.csv`, `report.txt` and the echoed `config.toml`
/// under the output directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let oracle = build_oracle(&config.oracle)?;
    let points = sweep_points(config, &oracle)?;
    let specs = run_specs(config, points.len());
    let dir = config.output_dir.clone();
    fs::create_dir_all(dir.join("traces")).map_err(|e| Error::io(dir.join("traces"), e))?;
    write(&dir, "config.toml", &config.to_toml())?;
    let runs = with_workers(config, || {
        specs
            .par_iter()
            .map(|s| {
                run_one(&oracle, config, &points, s, &dir)
                    .map_err(|e| e.in_run(format!("{} repeat {} seed {}", points[s.point].label, s.repeat, s.seed)))
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let summaries = summarize(&points, &runs, config.repeats)?;
    let bounds = bound_checks(config, &points, &summaries)?;
    let report = compare_report(&summaries, &bounds);
    write(&dir, "runs.csv", &runs_csv(&runs))?;
    write(&dir, "summary.csv", &super::report::summary_csv(&summaries))?;
    write(&dir, "report.txt", &report)?;
    Ok(ExperimentOutput {
        output_dir: dir,
        runs,
        summaries,
        bounds,
        report,
    })
}
