//! SGD with label smoothing and the two-stage label-smoothing algorithm
//! (TSLA), with estimators for the constants of their convergence bounds.
//!
//! The crate provides:
//! - label distributions and the smoothed cross-entropy ([`labels`]);
//! - finite-dataset classification oracles ([`classification`]) and analytic
//!   PL test problems with controllable gradient noise ([`synthetic`]);
//! - the training loops and trace metrics ([`optimizer`]);
//! - constant estimators, bound calculators and the two-stage scheduler
//!   ([`estimators`]);
//! - a configuration-driven experiment runner ([`harness`]).

pub mod classification;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod labels;
pub mod optimizer;
pub mod oracle;
pub mod synthetic;

pub use classification::{ClassificationOracle, Dataset, MixtureSpec, Model, ModelKind};
pub use error::{Error, ErrorCategory, Result};
pub use estimators::{ProblemConstants, VarianceReport};
pub use labels::{LabelDistribution, LabelSource, Logits, SmoothingSpec};
pub use optimizer::{IterateRange, RunOptions, RunTrace, SgdConfig, TraceRecord, TslaSchedule};
pub use oracle::{KnownConstants, LabelMode, Oracle, SampleStreams};
pub use synthetic::{NoiseSpec, SyntheticOracle, SyntheticPLProblem};
