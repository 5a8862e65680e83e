//! Experiment configuration: a TOML file with explicit keys, validated and
//! echoed back with every default filled in.

use std::fmt::Write as _;
use std::path::PathBuf;

use serde::Deserialize;

use crate::classification::{MixtureSpec, ModelKind};
use crate::error::{Error, Result};
use crate::labels::{LabelSource, SmoothingSpec};

/// Every coordinate of the default synthetic starting point.
pub const DEFAULT_SYNTHETIC_START: f64 = 3.0;

/// Offset between a generated training set's seed and its default held-out seed.
pub const HOLDOUT_SEED_OFFSET: u64 = 1_000_003;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub repeats: u32,
    pub base_seed: u64,
    pub output_dir: PathBuf,
    pub workers: Option<usize>,
    /// Iterations between probes; `None` uses the oracle's default.
    pub eval_stride: Option<usize>,
    pub init: Init,
    pub oracle: OracleSpec,
    pub algorithm: AlgorithmSpec,
    pub sweep: Option<Sweep>,
    pub lr_decay: Option<DecaySpec>,
}

/// Starting point of every run.
#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    Point(Vec<f64>),
    /// Zero-mean Gaussian entries with this standard deviation, seeded per run.
    Random { scale: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum SyntheticObjectiveSpec {
    PlSine,
    ShiftedQuadratic { center: Vec<f64>, curvature: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    File(PathBuf),
    Generated(MixtureSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub enum OracleSpec {
    Synthetic {
        objective: SyntheticObjectiveSpec,
        dim: usize,
        sigma2: f64,
        delta: f64,
        bias_fraction: f64,
    },
    Classification {
        model: ModelKind,
        data: DataSource,
        holdout: Option<DataSource>,
    },
}

impl OracleSpec {
    pub fn is_classification(&self) -> bool {
        matches!(self, OracleSpec::Classification { .. })
    }
}

/// Iteration count, either raw or in epochs of `n` iterations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Budget {
    Iterations(u64),
    Epochs(u64),
}

impl Budget {
    pub fn iterations(self, epoch: u64) -> u64 {
        match self {
            Budget::Iterations(t) => t,
            Budget::Epochs(e) => e * epoch,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AlgorithmSpec {
    Baseline {
        eta: f64,
        budget: Budget,
    },
    Lsr {
        eta: f64,
        smoothing: SmoothingSpec,
        budget: Budget,
    },
    Tsla {
        theta: f64,
        source: LabelSource,
        eta1: f64,
        eta2: f64,
        /// Length of the smoothed first stage.
        drop: Budget,
        budget: Budget,
    },
    /// Schedule computed from the oracle's constants for a target ε.
    TslaAuto { epsilon: f64, source: LabelSource },
}

#[derive(Debug, Clone, PartialEq)]
pub enum SweepValues {
    DropEpochs(Vec<u64>),
    DropIterations(Vec<u64>),
    Thetas(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub values: SweepValues,
    /// Also run the baseline and full-length smoothing for comparison.
    pub include_references: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecaySpec {
    pub every: Budget,
    pub factor: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    repeats: Option<u32>,
    base_seed: Option<u64>,
    output_dir: Option<PathBuf>,
    workers: Option<usize>,
    eval_stride: Option<usize>,
    w0: Option<Vec<f64>>,
    init_scale: Option<f64>,
    oracle: RawOracle,
    algorithm: RawAlgorithm,
    sweep: Option<RawSweep>,
    lr_decay: Option<RawDecay>,
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum RawOracle {
    Synthetic {
        objective: Option<String>,
        dim: Option<usize>,
        center: Option<Vec<f64>>,
        curvature: Option<f64>,
        sigma2: f64,
        delta: Option<f64>,
        bias_fraction: Option<f64>,
    },
    Classification {
        model: Option<String>,
        hidden: Option<usize>,
        dataset: Option<PathBuf>,
        generator: Option<RawGenerator>,
        holdout: Option<RawHoldout>,
    },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGenerator {
    num_classes: usize,
    dim: usize,
    n: usize,
    class_separation: f64,
    label_noise_rate: Option<f64>,
    seed: Option<u64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHoldout {
    dataset: Option<PathBuf>,
    n: Option<usize>,
    seed: Option<u64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAlgorithm {
    kind: String,
    eta: Option<f64>,
    eta1: Option<f64>,
    eta2: Option<f64>,
    iterations: Option<u64>,
    epochs: Option<u64>,
    theta: Option<f64>,
    source: Option<LabelSource>,
    drop_iteration: Option<u64>,
    drop_epoch: Option<u64>,
    schedule: Option<String>,
    epsilon: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    drop_epochs: Option<Vec<u64>>,
    drop_iterations: Option<Vec<u64>>,
    thetas: Option<Vec<f64>>,
    include_references: Option<bool>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDecay {
    every_iterations: Option<u64>,
    every_epochs: Option<u64>,
    factor: f64,
}

fn field(path: &str, msg: impl std::fmt::Display) -> Error {
    Error::Parse(format!("{path}: {msg}"))
}

fn positive(path: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(field(path, format!("must be positive, got {v}")))
    }
}

fn one_budget(prefix: &str, iters: Option<u64>, epochs: Option<u64>, classification: bool) -> Result<Option<Budget>> {
    match (iters, epochs) {
        (Some(_), Some(_)) => Err(field(prefix, "give iterations or epochs, not both")),
        (Some(t), None) => Ok(Some(Budget::Iterations(t))),
        (None, Some(e)) if classification => Ok(Some(Budget::Epochs(e))),
        (None, Some(_)) => Err(field(prefix, "epochs are only defined for classification oracles")),
        (None, None) => Ok(None),
    }
}

fn parse_model(model: Option<String>, hidden: Option<usize>) -> Result<ModelKind> {
    match model.as_deref().unwrap_or("softmax_linear") {
        "softmax_linear" => {
            if hidden.is_some() {
                return Err(field("oracle.hidden", "only used by the mlp model"));
            }
            Ok(ModelKind::SoftmaxLinear)
        }
        "mlp" => {
            let hidden = hidden.unwrap_or(32);
            if hidden == 0 {
                return Err(field("oracle.hidden", "must be at least 1"));
            }
            Ok(ModelKind::MlpOneHidden { hidden })
        }
        other => Err(field("oracle.model", format!("unknown model `{other}`; expected softmax_linear or mlp"))),
    }
}

fn resolve_oracle(raw: RawOracle) -> Result<OracleSpec> {
    match raw {
        RawOracle::Synthetic {
            objective,
            dim,
            center,
            curvature,
            sigma2,
            delta,
            bias_fraction,
        } => {
            let objective = match objective.as_deref().unwrap_or("pl_sine") {
                "pl_sine" => {
                    if center.is_some() || curvature.is_some() {
                        return Err(field("oracle", "center and curvature belong to shifted_quadratic"));
                    }
                    SyntheticObjectiveSpec::PlSine
                }
                "shifted_quadratic" => SyntheticObjectiveSpec::ShiftedQuadratic {
                    center: center.ok_or_else(|| field("oracle.center", "required for shifted_quadratic"))?,
                    curvature: positive("oracle.curvature", curvature.unwrap_or(1.0))?,
                },
                other => {
                    return Err(field(
                        "oracle.objective",
                        format!("unknown objective `{other}`; expected pl_sine or shifted_quadratic"),
                    ))
                }
            };
            let dim = match (&objective, dim) {
                (SyntheticObjectiveSpec::ShiftedQuadratic { center, .. }, Some(d)) if d != center.len() => {
                    return Err(field("oracle.dim", "differs from the length of oracle.center"))
                }
                (SyntheticObjectiveSpec::ShiftedQuadratic { center, .. }, _) => center.len(),
                (_, Some(d)) => d,
                (_, None) => 1,
            };
            if dim == 0 {
                return Err(field("oracle.dim", "must be at least 1"));
            }
            let spec = OracleSpec::Synthetic {
                objective,
                dim,
                sigma2,
                delta: delta.unwrap_or(0.0),
                bias_fraction: bias_fraction.unwrap_or(0.5),
            };
            crate::synthetic::NoiseSpec::new(sigma2, delta.unwrap_or(0.0), bias_fraction.unwrap_or(0.5))
                .map_err(|e| field("oracle", e))?;
            Ok(spec)
        }
        RawOracle::Classification {
            model,
            hidden,
            dataset,
            generator,
            holdout,
        } => {
            let model = parse_model(model, hidden)?;
            let data = match (dataset, generator) {
                (Some(p), None) => DataSource::File(p),
                (None, Some(g)) => {
                    let spec = MixtureSpec {
                        num_classes: g.num_classes,
                        dim: g.dim,
                        n: g.n,
                        class_separation: g.class_separation,
                        label_noise_rate: g.label_noise_rate.unwrap_or(0.0),
                        seed: g.seed.unwrap_or(0),
                    };
                    if spec.num_classes < 2 || spec.dim == 0 || spec.n < spec.num_classes {
                        return Err(field("oracle.generator", "need num_classes >= 2, dim >= 1, n >= num_classes"));
                    }
                    if !(0.0..1.0).contains(&spec.label_noise_rate) {
                        return Err(field("oracle.generator.label_noise_rate", "must lie in [0, 1)"));
                    }
                    DataSource::Generated(spec)
                }
                _ => return Err(field("oracle", "give exactly one of dataset or [oracle.generator]")),
            };
            let holdout = match holdout {
                None => None,
                Some(RawHoldout { dataset: Some(p), n: None, seed: None }) => Some(DataSource::File(p)),
                Some(RawHoldout { dataset: Some(_), .. }) => {
                    return Err(field("oracle.holdout", "n and seed only apply to generated held-out sets"))
                }
                Some(RawHoldout { dataset: None, n, seed }) => match &data {
                    DataSource::Generated(spec) => Some(DataSource::Generated(MixtureSpec {
                        n: n.unwrap_or(spec.n),
                        seed: seed.unwrap_or(spec.seed + HOLDOUT_SEED_OFFSET),
                        label_noise_rate: 0.0,
                        ..*spec
                    })),
                    DataSource::File(_) => {
                        return Err(field("oracle.holdout", "a generated held-out set needs a generated training set"))
                    }
                },
            };
            Ok(OracleSpec::Classification { model, data, holdout })
        }
    }
}

fn resolve_algorithm(raw: RawAlgorithm, classification: bool) -> Result<AlgorithmSpec> {
    let budget = one_budget("algorithm", raw.iterations, raw.epochs, classification)?;
    let need_budget = || budget.ok_or_else(|| field("algorithm", "needs iterations or epochs"));
    let source = raw.source.clone().unwrap_or(LabelSource::Uniform);
    let unused = |name: &str, present: bool| -> Result<()> {
        if present {
            Err(field(&format!("algorithm.{name}"), format!("not used by `{}`", raw.kind)))
        } else {
            Ok(())
        }
    };
    match raw.kind.as_str() {
        "baseline" => {
            unused("theta", raw.theta.is_some())?;
            unused("source", raw.source.is_some())?;
            unused("eta1", raw.eta1.is_some() || raw.eta2.is_some())?;
            unused("drop_iteration", raw.drop_iteration.is_some() || raw.drop_epoch.is_some())?;
            unused("schedule", raw.schedule.is_some() || raw.epsilon.is_some())?;
            Ok(AlgorithmSpec::Baseline {
                eta: positive("algorithm.eta", raw.eta.ok_or_else(|| field("algorithm.eta", "required"))?)?,
                budget: need_budget()?,
            })
        }
        "lsr" => {
            unused("eta1", raw.eta1.is_some() || raw.eta2.is_some())?;
            unused("drop_iteration", raw.drop_iteration.is_some() || raw.drop_epoch.is_some())?;
            unused("schedule", raw.schedule.is_some() || raw.epsilon.is_some())?;
            let theta = raw.theta.ok_or_else(|| field("algorithm.theta", "required"))?;
            Ok(AlgorithmSpec::Lsr {
                eta: positive("algorithm.eta", raw.eta.ok_or_else(|| field("algorithm.eta", "required"))?)?,
                smoothing: SmoothingSpec::new(theta, source).map_err(|e| field("algorithm.theta", e))?,
                budget: need_budget()?,
            })
        }
        "tsla" => match raw.schedule.as_deref().unwrap_or("explicit") {
            "auto" => {
                for (name, present) in [
                    ("eta", raw.eta.is_some()),
                    ("eta1", raw.eta1.is_some()),
                    ("eta2", raw.eta2.is_some()),
                    ("theta", raw.theta.is_some()),
                    ("iterations", budget.is_some()),
                    ("drop_iteration", raw.drop_iteration.is_some() || raw.drop_epoch.is_some()),
                ] {
                    unused(name, present)?;
                }
                let epsilon = positive("algorithm.epsilon", raw.epsilon.ok_or_else(|| field("algorithm.epsilon", "required for schedule = \"auto\""))?)?;
                Ok(AlgorithmSpec::TslaAuto { epsilon, source })
            }
            "explicit" => {
                unused("epsilon", raw.epsilon.is_some())?;
                if raw.eta.is_some() && raw.eta1.is_some() {
                    return Err(field("algorithm.eta", "give eta or eta1, not both"));
                }
                let eta1 = positive(
                    "algorithm.eta1",
                    raw.eta1.or(raw.eta).ok_or_else(|| field("algorithm.eta1", "required"))?,
                )?;
                let eta2 = positive("algorithm.eta2", raw.eta2.unwrap_or(eta1))?;
                let theta = raw.theta.ok_or_else(|| field("algorithm.theta", "required"))?;
                if !(theta > 0.0 && theta < 1.0) {
                    return Err(field("algorithm.theta", "must lie in (0, 1) for tsla"));
                }
                let drop = one_budget("algorithm.drop", raw.drop_iteration, raw.drop_epoch, classification)?
                    .unwrap_or(Budget::Iterations(0));
                Ok(AlgorithmSpec::Tsla {
                    theta,
                    source,
                    eta1,
                    eta2,
                    drop,
                    budget: need_budget()?,
                })
            }
            other => Err(field("algorithm.schedule", format!("unknown schedule `{other}`; expected explicit or auto"))),
        },
        other => Err(field("algorithm.kind", format!("unknown algorithm `{other}`; expected baseline, lsr or tsla"))),
    }
}

fn resolve_sweep(raw: RawSweep, algorithm: &AlgorithmSpec, classification: bool) -> Result<Sweep> {
    let values = match (raw.drop_epochs, raw.drop_iterations, raw.thetas) {
        (Some(v), None, None) => {
            if !classification {
                return Err(field("sweep.drop_epochs", "epochs are only defined for classification oracles"));
            }
            SweepValues::DropEpochs(v)
        }
        (None, Some(v), None) => SweepValues::DropIterations(v),
        (None, None, Some(v)) => SweepValues::Thetas(v),
        _ => return Err(field("sweep", "give exactly one of drop_epochs, drop_iterations or thetas")),
    };
    match (&values, algorithm) {
        (SweepValues::DropEpochs(v) | SweepValues::DropIterations(v), AlgorithmSpec::Tsla { budget, .. }) => {
            if v.is_empty() {
                return Err(field("sweep", "needs at least one value"));
            }
            let same_unit = matches!(
                (&values, budget),
                (SweepValues::DropEpochs(_), Budget::Epochs(_)) | (SweepValues::DropIterations(_), Budget::Iterations(_))
            );
            if !same_unit {
                return Err(field("sweep", "drop points and algorithm budget must use the same unit"));
            }
            let limit = match budget {
                Budget::Iterations(t) | Budget::Epochs(t) => *t,
            };
            if let Some(bad) = v.iter().find(|&&s| s > limit) {
                return Err(field("sweep", format!("drop point {bad} exceeds the budget of {limit}")));
            }
        }
        (SweepValues::DropEpochs(_) | SweepValues::DropIterations(_), _) => {
            return Err(field("sweep", "drop-point sweeps need an explicit tsla algorithm"))
        }
        (SweepValues::Thetas(v), AlgorithmSpec::Lsr { .. } | AlgorithmSpec::Tsla { .. }) => {
            if v.is_empty() {
                return Err(field("sweep", "needs at least one value"));
            }
            let tsla = matches!(algorithm, AlgorithmSpec::Tsla { .. });
            if let Some(bad) = v.iter().find(|&&t| !(t >= 0.0 && t < 1.0) || (tsla && t == 0.0)) {
                return Err(field("sweep.thetas", format!("value {bad} outside the allowed range")));
            }
        }
        (SweepValues::Thetas(_), _) => return Err(field("sweep", "theta sweeps need lsr or tsla")),
    }
    Ok(Sweep {
        values,
        include_references: raw.include_references.unwrap_or(false),
    })
}

/// Parses and validates a configuration. Errors name the offending line or
/// field.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string().trim_end().to_string()))?;
    let oracle = resolve_oracle(raw.oracle)?;
    let classification = oracle.is_classification();
    let algorithm = resolve_algorithm(raw.algorithm, classification)?;
    if matches!(algorithm, AlgorithmSpec::TslaAuto { .. }) && classification {
        return Err(field("algorithm.schedule", "automatic schedules need a synthetic oracle with known constants"));
    }
    let sweep = raw
        .sweep
        .map(|s| resolve_sweep(s, &algorithm, classification))
        .transpose()?;
    let lr_decay = match raw.lr_decay {
        None => None,
        Some(d) => {
            let every = one_budget("lr_decay", d.every_iterations, d.every_epochs, classification)?
                .ok_or_else(|| field("lr_decay", "needs every_iterations or every_epochs"))?;
            if matches!(every, Budget::Iterations(0) | Budget::Epochs(0)) {
                return Err(field("lr_decay.every", "must be at least 1"));
            }
            Some(DecaySpec {
                every,
                factor: positive("lr_decay.factor", d.factor)?,
            })
        }
    };
    let repeats = raw.repeats.unwrap_or(1);
    if repeats == 0 {
        return Err(field("repeats", "must be at least 1"));
    }
    if raw.eval_stride == Some(0) {
        return Err(field("eval_stride", "must be at least 1"));
    }
    if raw.workers == Some(0) {
        return Err(field("workers", "must be at least 1"));
    }
    let init = match (raw.w0, raw.init_scale) {
        (Some(_), Some(_)) => return Err(field("w0", "give w0 or init_scale, not both")),
        (Some(w), None) => Init::Point(w),
        (None, Some(s)) if s >= 0.0 => Init::Random { scale: s },
        (None, Some(_)) => return Err(field("init_scale", "must be nonnegative")),
        (None, None) => match &oracle {
            OracleSpec::Synthetic { dim, .. } => Init::Point(vec![DEFAULT_SYNTHETIC_START; *dim]),
            OracleSpec::Classification { model: ModelKind::SoftmaxLinear, .. } => Init::Random { scale: 0.0 },
            OracleSpec::Classification { .. } => Init::Random { scale: 0.1 },
        },
    };
    if let (Init::Point(w), OracleSpec::Synthetic { dim, .. }) = (&init, &oracle) {
        if w.len() != *dim {
            return Err(field("w0", format!("has {} entries, oracle dimension is {dim}", w.len())));
        }
    }
    Ok(ExperimentConfig {
        repeats,
        base_seed: raw.base_seed.unwrap_or(0),
        output_dir: raw.output_dir.unwrap_or_else(|| PathBuf::from("tsla-output")),
        workers: raw.workers,
        eval_stride: raw.eval_stride,
        init,
        oracle,
        algorithm,
        sweep,
        lr_decay,
    })
}

fn list<T: std::fmt::Display>(v: &[T]) -> String {
    let items: Vec<String> = v.iter().map(|x| x.to_string()).collect();
    format!("[{}]", items.join(", "))
}

fn real(v: f64) -> String {
    let s = format!("{v:?}");
    if s.contains(['.', 'e', 'i', 'N']) {
        s
    } else {
        format!("{s}.0")
    }
}

fn reals(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| real(*x)).collect();
    format!("[{}]", items.join(", "))
}

fn source_toml(s: &LabelSource) -> String {
    match s {
        LabelSource::Uniform => "\"uniform\"".into(),
        LabelSource::Teacher => "\"teacher\"".into(),
        LabelSource::Fixed(d) => format!("{{ fixed = {} }}", reals(d.probs())),
    }
}

fn budget_toml(out: &mut String, iters_key: &str, epochs_key: &str, b: Budget) {
    let _ = match b {
        Budget::Iterations(t) => writeln!(out, "{iters_key} = {t}"),
        Budget::Epochs(e) => writeln!(out, "{epochs_key} = {e}"),
    };
}

fn path_toml(p: &std::path::Path) -> String {
    format!("{:?}", p.display().to_string())
}

impl ExperimentConfig {
    /// Canonical TOML with every default written out; parses back to `self`.
    pub fn to_toml(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "repeats = {}", self.repeats);
        let _ = writeln!(out, "base_seed = {}", self.base_seed);
        let _ = writeln!(out, "output_dir = {}", path_toml(&self.output_dir));
        if let Some(w) = self.workers {
            let _ = writeln!(out, "workers = {w}");
        }
        if let Some(s) = self.eval_stride {
            let _ = writeln!(out, "eval_stride = {s}");
        }
        match &self.init {
            Init::Point(w) => {
                let _ = writeln!(out, "w0 = {}", reals(w));
            }
            Init::Random { scale } => {
                let _ = writeln!(out, "init_scale = {}", real(*scale));
            }
        }
        out.push_str("\n[oracle]\n");
        match &self.oracle {
            OracleSpec::Synthetic {
                objective,
                dim,
                sigma2,
                delta,
                bias_fraction,
            } => {
                out.push_str("kind = \"synthetic\"\n");
                match objective {
                    SyntheticObjectiveSpec::PlSine => {
                        out.push_str("objective = \"pl_sine\"\n");
                    }
                    SyntheticObjectiveSpec::ShiftedQuadratic { center, curvature } => {
                        out.push_str("objective = \"shifted_quadratic\"\n");
                        let _ = writeln!(out, "center = {}", reals(center));
                        let _ = writeln!(out, "curvature = {}", real(*curvature));
                    }
                }
                let _ = writeln!(out, "dim = {dim}");
                let _ = writeln!(out, "sigma2 = {}", real(*sigma2));
                let _ = writeln!(out, "delta = {}", real(*delta));
                let _ = writeln!(out, "bias_fraction = {}", real(*bias_fraction));
            }
            OracleSpec::Classification { model, data, holdout } => {
                out.push_str("kind = \"classification\"\n");
                match model {
                    ModelKind::SoftmaxLinear => out.push_str("model = \"softmax_linear\"\n"),
                    ModelKind::MlpOneHidden { hidden } => {
                        let _ = writeln!(out, "model = \"mlp\"\nhidden = {hidden}");
                    }
                }
                if let DataSource::File(p) = data {
                    let _ = writeln!(out, "dataset = {}", path_toml(p));
                }
                if let DataSource::Generated(g) = data {
                    let _ = writeln!(
                        out,
                        "\n[oracle.generator]\nnum_classes = {}\ndim = {}\nn = {}\nclass_separation = {}\nlabel_noise_rate = {}\nseed = {}",
                        g.num_classes,
                        g.dim,
                        g.n,
                        real(g.class_separation),
                        real(g.label_noise_rate),
                        g.seed
                    );
                }
                match holdout {
                    None => {}
                    Some(DataSource::File(p)) => {
                        let _ = writeln!(out, "\n[oracle.holdout]\ndataset = {}", path_toml(p));
                    }
                    Some(DataSource::Generated(h)) => {
                        let _ = writeln!(out, "\n[oracle.holdout]\nn = {}\nseed = {}", h.n, h.seed);
                    }
                }
            }
        }
        out.push_str("\n[algorithm]\n");
        match &self.algorithm {
            AlgorithmSpec::Baseline { eta, budget } => {
                let _ = writeln!(out, "kind = \"baseline\"\neta = {}", real(*eta));
                budget_toml(&mut out, "iterations", "epochs", *budget);
            }
            AlgorithmSpec::Lsr { eta, smoothing, budget } => {
                let _ = writeln!(
                    out,
                    "kind = \"lsr\"\neta = {}\ntheta = {}\nsource = {}",
                    real(*eta),
                    real(smoothing.theta()),
                    source_toml(smoothing.source())
                );
                budget_toml(&mut out, "iterations", "epochs", *budget);
            }
            AlgorithmSpec::Tsla {
                theta,
                source,
                eta1,
                eta2,
                drop,
                budget,
            } => {
                let _ = writeln!(
                    out,
                    "kind = \"tsla\"\nschedule = \"explicit\"\ntheta = {}\nsource = {}\neta1 = {}\neta2 = {}",
                    real(*theta),
                    source_toml(source),
                    real(*eta1),
                    real(*eta2)
                );
                budget_toml(&mut out, "drop_iteration", "drop_epoch", *drop);
                budget_toml(&mut out, "iterations", "epochs", *budget);
            }
            AlgorithmSpec::TslaAuto { epsilon, source } => {
                let _ = writeln!(
                    out,
                    "kind = \"tsla\"\nschedule = \"auto\"\nepsilon = {}\nsource = {}",
                    real(*epsilon),
                    source_toml(source)
                );
            }
        }
        if let Some(sweep) = &self.sweep {
            out.push_str("\n[sweep]\n");
            let _ = match &sweep.values {
                SweepValues::DropEpochs(v) => writeln!(out, "drop_epochs = {}", list(v)),
                SweepValues::DropIterations(v) => writeln!(out, "drop_iterations = {}", list(v)),
                SweepValues::Thetas(v) => writeln!(out, "thetas = {}", reals(v)),
            };
            let _ = writeln!(out, "include_references = {}", sweep.include_references);
        }
        if let Some(d) = &self.lr_decay {
            out.push_str("\n[lr_decay]\n");
            budget_toml(&mut out, "every_iterations", "every_epochs", d.every);
            let _ = writeln!(out, "factor = {}", real(d.factor));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[oracle]
kind = "synthetic"
sigma2 = 1.0

[algorithm]
kind = "baseline"
eta = 0.125
iterations = 100
"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.repeats, 1);
        assert_eq!(c.base_seed, 0);
        assert_eq!(c.init, Init::Point(vec![3.0]));
        assert_eq!(
            c.oracle,
            OracleSpec::Synthetic {
                objective: SyntheticObjectiveSpec::PlSine,
                dim: 1,
                sigma2: 1.0,
                delta: 0.0,
                bias_fraction: 0.5
            }
        );
        let echo = c.to_toml();
        for key in ["repeats = 1", "base_seed = 0", "w0 = [3.0]", "delta = 0.0", "bias_fraction = 0.5", "objective = \"pl_sine\""] {
            assert!(echo.contains(key), "{key} missing from\n{echo}");
        }
        let again = parse_config(&echo).unwrap();
        assert_eq!(again.to_toml(), echo);
    }

    #[test]
    fn classification_sweep_round_trip() {
        let text = r#"
repeats = 5
base_seed = 7

[oracle]
kind = "classification"

[oracle.generator]
num_classes = 4
dim = 3
n = 50
class_separation = 2.0
label_noise_rate = 0.2

[oracle.holdout]
n = 80

[algorithm]
kind = "tsla"
theta = 0.4
eta = 0.05
epochs = 90

[sweep]
drop_epochs = [20, 30, 40]
include_references = true
"#;
        let c = parse_config(text).unwrap();
        match &c.oracle {
            OracleSpec::Classification { holdout: Some(DataSource::Generated(h)), .. } => {
                assert_eq!(h.n, 80);
                assert_eq!(h.label_noise_rate, 0.0);
                assert_eq!(h.seed, HOLDOUT_SEED_OFFSET);
            }
            o => panic!("{o:?}"),
        }
        assert_eq!(
            c.sweep.as_ref().unwrap().values,
            SweepValues::DropEpochs(vec![20, 30, 40])
        );
        let again = parse_config(&c.to_toml()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn auto_and_fixed_sources_round_trip() {
        let text = r#"
[oracle]
kind = "synthetic"
sigma2 = 1.0
delta = 0.05

[algorithm]
kind = "tsla"
schedule = "auto"
epsilon = 0.15
source = { fixed = [0.25, 0.75] }

[lr_decay]
every_iterations = 100
factor = 0.5
"#;
        let c = parse_config(text).unwrap();
        assert!(matches!(c.algorithm, AlgorithmSpec::TslaAuto { .. }));
        assert_eq!(parse_config(&c.to_toml()).unwrap(), c);
    }

    fn err(text: &str) -> String {
        match parse_config(text) {
            Err(Error::Parse(m)) => m,
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(err(&format!("{MINIMAL}\nbogus = 1\n")).contains("bogus"));
        assert!(err(&MINIMAL.replace("sigma2 = 1.0", "sigma2 = 1.0\ncolour = 2")).contains("colour"));
        let m = err(&MINIMAL.replace("eta = 0.125", "eta = \"fast\""));
        assert!(m.contains("line"), "{m}");
        assert!(err(&MINIMAL.replace("iterations = 100\n", "")).contains("algorithm"));
        assert!(err(&MINIMAL.replace("kind = \"baseline\"", "kind = \"adam\"")).contains("algorithm.kind"));
        assert!(err(&MINIMAL.replace("eta = 0.125", "eta = -1.0")).contains("algorithm.eta"));
        assert!(err(&MINIMAL.replace("iterations = 100", "epochs = 3")).contains("epochs"));
    }

    #[test]
    fn sweep_beyond_budget_is_rejected() {
        let text = r#"
[oracle]
kind = "synthetic"
sigma2 = 1.0
delta = 0.1

[algorithm]
kind = "tsla"
theta = 0.5
eta = 0.1
iterations = 90

[sweep]
drop_iterations = [20, 30, 400]
"#;
        assert!(err(text).contains("400"));
        assert!(parse_config(&text.replace("400", "90")).is_ok());
    }
}
