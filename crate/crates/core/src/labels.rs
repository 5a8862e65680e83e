//! Probability-vector labels, label smoothing and the cross-entropy loss.
//!
//! The loss is defined on the whole probability simplex, so one-hot labels,
//! smoothing distributions and smoothed labels all go through the same code.
//! Both the loss and its logit gradient are affine in the label, which is the
//! identity the variance analysis of smoothed gradients rests on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance on the sum of a probability vector.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// A probability vector over `K >= 2` classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LabelDistribution {
    probs: Vec<f64>,
}

impl LabelDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::invalid(format!(
                "a label distribution needs at least 2 classes, got {}",
                probs.len()
            )));
        }
        if let Some((i, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !p.is_finite() || **p < 0.0)
        {
            return Err(Error::invalid(format!(
                "label entry {i} is {p}, expected a finite nonnegative value"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::invalid(format!(
                "label entries sum to {sum}, expected 1"
            )));
        }
        Ok(Self { probs })
    }

    pub fn one_hot(class: usize, num_classes: usize) -> Result<Self> {
        if class >= num_classes {
            return Err(Error::invalid(format!(
                "class {class} out of range for {num_classes} classes"
            )));
        }
        let mut probs = vec![0.0; num_classes];
        probs[class] = 1.0;
        Self::new(probs)
    }

    pub fn uniform(num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::invalid("uniform distribution needs at least 2 classes"));
        }
        Self::new(vec![1.0 / num_classes as f64; num_classes])
    }

    pub fn num_classes(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

impl TryFrom<Vec<f64>> for LabelDistribution {
    type Error = Error;

    fn try_from(probs: Vec<f64>) -> Result<Self> {
        Self::new(probs)
    }
}

impl From<LabelDistribution> for Vec<f64> {
    fn from(d: LabelDistribution) -> Self {
        d.probs
    }
}

/// Where the smoothing distribution `ŷ` comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    /// `1/K` on every class, the true one included.
    Uniform,
    /// The same distribution for every example.
    Fixed(LabelDistribution),
    /// Per-example predictions of a trained model, stored with the dataset.
    Teacher,
}

impl LabelSource {
    pub fn name(&self) -> &'static str {
        match self {
            LabelSource::Uniform => "uniform",
            LabelSource::Fixed(_) => "fixed",
            LabelSource::Teacher => "teacher",
        }
    }
}

/// Smoothing strength together with the smoothing distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingSpec {
    theta: f64,
    source: LabelSource,
}

impl SmoothingSpec {
    /// `theta` must lie in `[0, 1)`; zero is the unsmoothed baseline.
    pub fn new(theta: f64, source: LabelSource) -> Result<Self> {
        check_theta(theta)?;
        Ok(Self { theta, source })
    }

    pub fn none() -> Self {
        Self {
            theta: 0.0,
            source: LabelSource::Uniform,
        }
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn source(&self) -> &LabelSource {
        &self.source
    }

    pub fn is_baseline(&self) -> bool {
        self.theta == 0.0
    }
}

fn check_theta(theta: f64) -> Result<()> {
    if !(0.0..1.0).contains(&theta) {
        return Err(Error::invalid(format!(
            "smoothing strength {theta} outside [0, 1)"
        )));
    }
    Ok(())
}

/// Pre-softmax scores `f(w; x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits {
    values: Vec<f64>,
}

impl Logits {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("logit {i} is not finite")));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Index of the largest logit; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.values)
    }
}

/// `(1 − θ)·y + θ·ŷ`.
pub fn smooth_label(
    y: &LabelDistribution,
    y_hat: &LabelDistribution,
    theta: f64,
) -> Result<LabelDistribution> {
    check_theta(theta)?;
    if y.num_classes() != y_hat.num_classes() {
        return Err(Error::invalid(format!(
            "label has {} classes but smoothing distribution has {}",
            y.num_classes(),
            y_hat.num_classes()
        )));
    }
    let mut out = vec![0.0; y.num_classes()];
    mix_into(&mut out, y.probs(), y_hat.probs(), theta);
    LabelDistribution::new(out)
}

pub(crate) fn mix_into(out: &mut [f64], y: &[f64], y_hat: &[f64], theta: f64) {
    for ((o, a), b) in out.iter_mut().zip(y).zip(y_hat) {
        *o = (1.0 - theta) * a + theta * b;
    }
}

/// `Σᵢ −yᵢ log softmaxᵢ(z)`, evaluated through the shifted log-sum-exp.
pub fn cross_entropy(y: &LabelDistribution, logits: &Logits) -> Result<f64> {
    check_dims(y, logits)?;
    Ok(cross_entropy_raw(y.probs(), logits.values()))
}

/// `softmax(z) − y`.
pub fn cross_entropy_grad_logits(y: &LabelDistribution, logits: &Logits) -> Result<Vec<f64>> {
    check_dims(y, logits)?;
    let mut g = softmax(logits.values());
    for (gi, yi) in g.iter_mut().zip(y.probs()) {
        *gi -= yi;
    }
    Ok(g)
}

fn check_dims(y: &LabelDistribution, logits: &Logits) -> Result<()> {
    if y.num_classes() != logits.len() {
        return Err(Error::invalid(format!(
            "label has {} classes but there are {} logits",
            y.num_classes(),
            logits.len()
        )));
    }
    Ok(())
}

pub(crate) fn log_sum_exp(z: &[f64]) -> (f64, f64) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
    (max, sum.ln())
}

pub(crate) fn cross_entropy_raw(y: &[f64], z: &[f64]) -> f64 {
    let (max, lse) = log_sum_exp(z);
    y.iter()
        .zip(z)
        .map(|(yi, zi)| yi * (lse + max - zi))
        .sum()
}

/// Loss of a hard label, `logΣ exp(z) − z_c`.
pub(crate) fn cross_entropy_class(class: usize, z: &[f64]) -> f64 {
    let (max, lse) = log_sum_exp(z);
    lse + max - z[class]
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= sum);
    p
}

pub(crate) fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in z.iter().enumerate().skip(1) {
        if *v > z[best] {
            best = i;
        }
    }
    best
}
