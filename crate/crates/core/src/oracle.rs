//! The objective interface shared by the synthetic and classification oracles.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::labels::{LabelSource, SmoothingSpec};

/// Which label the per-sample gradient is taken against.
#[derive(Debug, Clone, PartialEq)]
pub enum LabelMode {
    /// The observed label `y`.
    OneHot,
    /// The smoothing distribution `ŷ` alone.
    HatOnly(LabelSource),
    /// `(1 − θ) y + θ ŷ`.
    Smoothed(SmoothingSpec),
}

impl LabelMode {
    /// Collapses a zero-strength smoothing to the one-hot mode.
    pub fn from_smoothing(spec: &SmoothingSpec) -> Self {
        if spec.is_baseline() {
            LabelMode::OneHot
        } else {
            LabelMode::Smoothed(spec.clone())
        }
    }

    pub fn source(&self) -> Option<&LabelSource> {
        match self {
            LabelMode::OneHot => None,
            LabelMode::HatOnly(s) => Some(s),
            LabelMode::Smoothed(spec) => Some(spec.source()),
        }
    }
}

/// Independent random streams owned by one run.
///
/// Example indices, unbiased noise and smoothing-label noise each draw from
/// their own stream, so runs that differ only in label mode still see the
/// same sample path.
#[derive(Debug, Clone)]
pub struct SampleStreams {
    pub index: ChaCha8Rng,
    pub noise: ChaCha8Rng,
    pub hat: ChaCha8Rng,
}

impl SampleStreams {
    pub fn new(seed: u64) -> Self {
        Self {
            index: stream(seed, 0),
            noise: stream(seed, 1),
            hat: stream(seed, 2),
        }
    }
}

pub(crate) fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Constants known in closed form for analytic problems.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnownConstants {
    pub l: f64,
    pub mu: f64,
    pub f_star: f64,
}

/// A differentiable objective `F` with exact value and gradient, plus a
/// stochastic gradient oracle under a label mode.
pub trait Oracle: Sync {
    fn dim(&self) -> usize;

    fn value(&self, w: &[f64]) -> f64;

    fn gradient(&self, w: &[f64]) -> Vec<f64>;

    /// Rejects label modes this oracle cannot serve, before any run starts.
    fn check_mode(&self, mode: &LabelMode) -> Result<()>;

    fn sample_gradient(
        &self,
        w: &[f64],
        mode: &LabelMode,
        streams: &mut SampleStreams,
    ) -> Result<Vec<f64>>;

    /// Classification accuracy at `w`, when the oracle is a classifier.
    fn accuracy(&self, _w: &[f64]) -> Option<f64> {
        None
    }

    /// Iterations between full-gradient probes when the caller has no preference.
    fn default_eval_stride(&self) -> usize {
        1
    }

    fn known_constants(&self) -> Option<KnownConstants> {
        None
    }
}

pub(crate) fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

pub(crate) fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
