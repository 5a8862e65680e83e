//! Estimates of the constants the convergence theory uses, closed-form
//! bounds, the two-stage scheduler and the smoothed-variance check.

use std::fmt::{self, Write as _};

use rand::Rng;

use crate::classification::ClassificationOracle;
use crate::error::{Error, Result};
use crate::labels::{LabelSource, SmoothingSpec};
use crate::optimizer::TslaSchedule;
use crate::oracle::{dist_sq, norm_sq, stream, LabelMode, Oracle, SampleStreams};
use crate::synthetic::{noisy_gradient, SyntheticMode, SyntheticOracle};

/// Where an `F*` value comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FStarProvenance {
    Exact,
    /// Lowest objective found so far, standing in for the unknown infimum.
    BestFound,
}

impl fmt::Display for FStarProvenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FStarProvenance::Exact => "exact",
            FStarProvenance::BestFound => "best_found",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProblemConstants {
    pub l: f64,
    pub mu: f64,
    pub sigma2: f64,
    pub delta: f64,
    pub f_at_w0: f64,
    pub f_star: f64,
    pub f_star_provenance: FStarProvenance,
}

impl ProblemConstants {
    pub fn validate(&self) -> Result<()> {
        if !(self.l > 0.0 && self.l.is_finite()) {
            return Err(Error::invalid(format!("L = {} must be positive", self.l)));
        }
        if !(self.mu > 0.0 && self.mu <= self.l) {
            return Err(Error::invalid(format!(
                "mu = {} must lie in (0, L = {}]",
                self.mu, self.l
            )));
        }
        if !(self.sigma2 >= 0.0 && self.delta >= 0.0) {
            return Err(Error::invalid("sigma2 and delta must be nonnegative"));
        }
        if !(self.f_at_w0 >= self.f_star) {
            return Err(Error::invalid(format!(
                "F(w0) = {} is below F* = {}",
                self.f_at_w0, self.f_star
            )));
        }
        Ok(())
    }

    /// `F(w₀) − F*`, the initial optimality gap.
    pub fn gap(&self) -> f64 {
        self.f_at_w0 - self.f_star
    }

    /// Constants of a synthetic oracle at `w0`, read off its definition.
    pub fn from_synthetic(oracle: &SyntheticOracle, w0: &[f64]) -> Result<Self> {
        let k = oracle.problem.constants();
        let c = Self {
            l: k.l,
            mu: k.mu,
            sigma2: oracle.noise.sigma2(),
            delta: oracle.noise.delta(),
            f_at_w0: oracle.problem.value(w0),
            f_star: k.f_star,
            f_star_provenance: FStarProvenance::Exact,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for (k, v) in [
            ("L", self.l),
            ("mu", self.mu),
            ("sigma2", self.sigma2),
            ("delta", self.delta),
            ("f_at_w0", self.f_at_w0),
            ("f_star", self.f_star),
        ] {
            let _ = writeln!(out, "{k}={v:e}");
        }
        let _ = writeln!(out, "f_star_provenance={}", self.f_star_provenance);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceReport {
    pub theta: f64,
    pub sigma2_hat: f64,
    pub delta_hat: f64,
    pub smoothed_second_moment: f64,
    pub lemma1_bound: f64,
    pub probe_point: Vec<f64>,
}

impl VarianceReport {
    pub fn slack(&self) -> f64 {
        self.lemma1_bound - self.smoothed_second_moment
    }

    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for (k, v) in [
            ("theta", self.theta),
            ("sigma2_hat", self.sigma2_hat),
            ("delta_hat", self.delta_hat),
            ("smoothed_second_moment", self.smoothed_second_moment),
            ("lemma1_bound", self.lemma1_bound),
            ("slack", self.slack()),
        ] {
            let _ = writeln!(out, "{k}={v:e}");
        }
        let point: Vec<String> = self.probe_point.iter().map(|v| format!("{v:e}")).collect();
        let _ = writeln!(out, "probe_point={}", point.join(";"));
        out
    }
}

/// Per-example second moments about `∇F(w)`: one-hot, smoothing label, and
/// the `θ`-mixture of the two.
struct PopulationMoments {
    one_hot: f64,
    hat: f64,
    smoothed: f64,
}

fn population_moments(
    oracle: &ClassificationOracle,
    w: &[f64],
    source: &LabelSource,
    theta: f64,
) -> Result<PopulationMoments> {
    let data = oracle.data();
    if data.is_empty() {
        return Err(Error::invalid("dataset is empty"));
    }
    if w.len() != oracle.dim() {
        return Err(Error::invalid("parameter vector has the wrong dimension"));
    }
    let hat_mode = LabelMode::HatOnly(source.clone());
    oracle.check_mode(&hat_mode)?;
    let full = oracle.gradient(w);
    let (mut one_hot, mut hat, mut smoothed) = (0.0, 0.0, 0.0);
    let mut mix = vec![0.0; w.len()];
    for i in 0..data.len() {
        let g = oracle.example_gradient(w, i, &LabelMode::OneHot);
        let h = oracle.example_gradient(w, i, &hat_mode);
        one_hot += dist_sq(&g, &full);
        hat += dist_sq(&h, &full);
        for ((m, a), b) in mix.iter_mut().zip(&g).zip(&h) {
            *m = (1.0 - theta) * a + theta * b;
        }
        smoothed += dist_sq(&mix, &full);
    }
    let n = data.len() as f64;
    Ok(PopulationMoments {
        one_hot: one_hot / n,
        hat: hat / n,
        smoothed: smoothed / n,
    })
}

/// `(1/n) Σᵢ ‖∇ℓ(yᵢ) − ∇F(w)‖²`, exact over the dataset.
pub fn estimate_sigma2(oracle: &ClassificationOracle, w: &[f64]) -> Result<f64> {
    Ok(population_moments(oracle, w, &LabelSource::Uniform, 0.0)?.one_hot)
}

/// `(1/n) Σᵢ ‖∇ℓ(ŷᵢ) − ∇F(w)‖² / σ²`, exact over the dataset. The
/// numerator uses the smoothing label itself, not the smoothed label.
pub fn estimate_delta(oracle: &ClassificationOracle, w: &[f64], source: &LabelSource) -> Result<f64> {
    let m = population_moments(oracle, w, source, 0.0)?;
    if m.one_hot == 0.0 {
        return Err(Error::Degenerate(
            "one-hot gradient variance is zero at this point, so delta is undefined".into(),
        ));
    }
    Ok(m.hat / m.one_hot)
}

/// An axis-aligned box `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Region {
    /// The cube of half-width `radius` around `center`.
    pub fn around(center: &[f64], radius: f64) -> Self {
        Self {
            lo: center.iter().map(|c| c - radius).collect(),
            hi: center.iter().map(|c| c + radius).collect(),
        }
    }

    fn check(&self, dim: usize) -> Result<()> {
        if self.lo.len() != dim || self.hi.len() != dim {
            return Err(Error::invalid(format!("region must have dimension {dim}")));
        }
        if self.lo.iter().zip(&self.hi).any(|(l, h)| !(h > l) || !l.is_finite() || !h.is_finite()) {
            return Err(Error::invalid("region has a side of zero or negative width"));
        }
        Ok(())
    }
}

/// Safety factor applied to the sampled Lipschitz ratio.
pub const L_SAFETY: f64 = 1.1;

/// Largest sampled `‖∇F(w) − ∇F(u)‖ / ‖w − u‖` over all pairs of `samples`
/// uniform points in `region`. Coincident points are skipped.
pub fn sampled_lipschitz<O: Oracle + ?Sized>(
    oracle: &O,
    region: &Region,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    if samples < 2 {
        return Err(Error::invalid("need at least two sample points"));
    }
    region.check(oracle.dim())?;
    let mut rng = stream(seed, 3);
    let points: Vec<Vec<f64>> = (0..samples)
        .map(|_| {
            region
                .lo
                .iter()
                .zip(&region.hi)
                .map(|(l, h)| rng.random_range(*l..*h))
                .collect()
        })
        .collect();
    let grads: Vec<Vec<f64>> = points.iter().map(|p| oracle.gradient(p)).collect();
    let mut best = 0.0f64;
    for i in 0..samples {
        for j in i + 1..samples {
            let d = dist_sq(&points[i], &points[j]);
            if d == 0.0 {
                continue;
            }
            best = best.max((dist_sq(&grads[i], &grads[j]) / d).sqrt());
        }
    }
    Ok(best)
}

/// Smoothness constant over `region`. Oracles with a closed-form constant
/// return it after checking that no sampled ratio exceeds it; others return
/// the sampled maximum times [`L_SAFETY`].
pub fn estimate_l<O: Oracle + ?Sized>(
    oracle: &O,
    region: &Region,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let sampled = sampled_lipschitz(oracle, region, samples, seed)?;
    match oracle.known_constants() {
        Some(k) if sampled > k.l * (1.0 + 1e-9) => Err(Error::Degenerate(format!(
            "sampled gradient ratio {sampled} exceeds the analytic constant {}",
            k.l
        ))),
        Some(k) => Ok(k.l),
        None if sampled == 0.0 => Err(Error::Degenerate("gradient is constant over the region".into())),
        None => Ok(sampled * L_SAFETY),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuEstimate {
    pub mu: f64,
    pub provenance: FStarProvenance,
    /// Probes used after skipping those at the optimum.
    pub probes_used: usize,
}

/// `inf ‖∇F(w)‖² / (2(F(w) − F*))` over the probes, skipping probes within
/// `1e-12` of `f_star`.
pub fn estimate_mu<O: Oracle + ?Sized>(
    oracle: &O,
    probes: &[Vec<f64>],
    f_star: f64,
    provenance: FStarProvenance,
) -> Result<MuEstimate> {
    let mut mu = f64::INFINITY;
    let mut used = 0;
    for w in probes {
        if w.len() != oracle.dim() {
            return Err(Error::invalid("probe has the wrong dimension"));
        }
        let gap = oracle.value(w) - f_star;
        if gap <= 1e-12 {
            continue;
        }
        used += 1;
        mu = mu.min(norm_sq(&oracle.gradient(w)) / (2.0 * gap));
    }
    if used == 0 {
        return Err(Error::invalid("every probe lies at the optimum value"));
    }
    Ok(MuEstimate {
        mu,
        provenance,
        probes_used: used,
    })
}

fn check_run_length(eta: f64, t: u64) -> Result<()> {
    if !(eta > 0.0) || t == 0 {
        return Err(Error::invalid("bounds need eta > 0 and T >= 1"));
    }
    Ok(())
}

/// `2F(w₀)/(ηT) + 2δσ²`.
pub fn theorem1_bound(f0: f64, eta: f64, t: u64, delta: f64, sigma2: f64) -> Result<f64> {
    check_run_length(eta, t)?;
    Ok(2.0 * f0 / (eta * t as f64) + 2.0 * delta * sigma2)
}

/// `2F(w₀)/(ηT) + ηLσ²`, valid for `η ≤ 1/L`.
pub fn theorem3_bound(f0: f64, eta: f64, t: u64, l: f64, sigma2: f64) -> Result<f64> {
    check_run_length(eta, t)?;
    if eta > 1.0 / l {
        return Err(Error::Precondition(format!(
            "step size {eta} exceeds 1/L = {}",
            1.0 / l
        )));
    }
    Ok(2.0 * f0 / (eta * t as f64) + eta * l * sigma2)
}

/// Step size `min(1/L, ε²/(2Lσ²))` for the one-hot baseline.
pub fn baseline_step(l: f64, sigma2: f64, epsilon: f64) -> f64 {
    if sigma2 == 0.0 {
        return 1.0 / l;
    }
    (1.0 / l).min(epsilon * epsilon / (2.0 * l * sigma2))
}

/// Iterations `⌈4F(w₀)/(ηε²)⌉` that bring the optimization term to `ε²/2`.
pub fn iterations_for_epsilon(f0: f64, eta: f64, epsilon: f64) -> u64 {
    ceil_count(4.0 * f0 / (eta * epsilon * epsilon))
}

/// Iterations `⌈F(w₀)/(ηδσ²)⌉` after which the smoothed run sits at its floor.
pub fn iterations_for_floor(f0: f64, eta: f64, delta: f64, sigma2: f64) -> u64 {
    ceil_count(f0 / (eta * delta * sigma2))
}

/// Ceiling that ignores float noise just above an integer.
fn ceil_count(x: f64) -> u64 {
    if x <= 0.0 {
        return 0;
    }
    let r = x.round();
    if (x - r).abs() <= 1e-9 * r.max(1.0) {
        r as u64
    } else {
        x.ceil() as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regime {
    /// `δ ≤ ε²/(4σ²)`: smoothing alone reaches an ε-stationary point.
    ConvergesWithLsr,
    /// Smoothing stalls at a level bounded by `floor = 4δσ²`.
    LsrFloor { floor: f64 },
}

pub fn classify_regime(delta: f64, epsilon: f64, sigma2: f64) -> Result<Regime> {
    if !(sigma2 > 0.0) || !(epsilon > 0.0 && epsilon < 1.0) || !(delta >= 0.0) {
        return Err(Error::invalid("classification needs sigma2 > 0, epsilon in (0, 1), delta >= 0"));
    }
    Ok(if delta <= epsilon * epsilon / (4.0 * sigma2) {
        Regime::ConvergesWithLsr
    } else {
        Regime::LsrFloor {
            floor: 4.0 * delta * sigma2,
        }
    })
}

fn first_stage_length(c: &ProblemConstants, eta1: f64) -> f64 {
    let arg = 2.0 * c.mu * c.gap() * (1.0 + c.delta) / (2.0 * c.delta * c.sigma2);
    if arg <= 1.0 {
        0.0
    } else {
        arg.ln() / (eta1 * c.mu)
    }
}

/// The same length written with `σ̂² = 2δσ²/(1+δ)`.
#[cfg(test)]
fn first_stage_length_via_sigma_hat(c: &ProblemConstants, eta1: f64) -> f64 {
    let sigma_hat2 = 2.0 * c.delta * c.sigma2 / (1.0 + c.delta);
    let arg = 2.0 * c.mu * c.gap() / sigma_hat2;
    if arg <= 1.0 {
        0.0
    } else {
        arg.ln() / (eta1 * c.mu)
    }
}

/// Two-stage schedule reaching an ε-stationary point in the second stage:
/// `θ = 1/(1+δ)`, `η₁ = 1/L`, `T₁ = ln(2μΔ(1+δ)/(2δσ²))/(η₁μ)`,
/// `η₂ = ε²/(2Lσ²)`, `T₂ = 8δσ²/(μη₂ε²)`, where `Δ = F(w₀) − F*`.
pub fn tsla_schedule(c: &ProblemConstants, epsilon: f64) -> Result<TslaSchedule> {
    c.validate()?;
    if !(epsilon > 0.0) {
        return Err(Error::invalid("epsilon must be positive"));
    }
    if c.delta == 0.0 || c.sigma2 == 0.0 {
        return Err(Error::Degenerate(
            "delta or sigma2 is zero; smoothing adds nothing, use the baseline schedule".into(),
        ));
    }
    let lhs = c.sigma2 * c.delta / c.mu;
    if lhs > c.gap() * (1.0 + 1e-12) {
        return Err(Error::ScheduleInfeasible(format!(
            "sigma2*delta/mu = {lhs} exceeds F(w0) - F* = {}",
            c.gap()
        )));
    }
    let eta1 = 1.0 / c.l;
    let eta2 = epsilon * epsilon / (2.0 * c.l * c.sigma2);
    let t2 = ceil_count(8.0 * c.delta * c.sigma2 / (c.mu * eta2 * epsilon * epsilon));
    Ok(TslaSchedule {
        theta: 1.0 / (1.0 + c.delta),
        eta1,
        t1: ceil_count(first_stage_length(c, eta1)),
        eta2,
        t2: t2.max(1),
    })
}

fn lemma1_bound(theta: f64, sigma2: f64, delta: f64) -> f64 {
    (1.0 - theta) * sigma2 + theta * delta * sigma2
}

fn report(theta: f64, one_hot: f64, hat: f64, smoothed: f64, w: &[f64]) -> Result<VarianceReport> {
    if one_hot == 0.0 {
        return Err(Error::Degenerate(
            "one-hot gradient variance is zero at this point, so delta is undefined".into(),
        ));
    }
    let delta = hat / one_hot;
    Ok(VarianceReport {
        theta,
        sigma2_hat: one_hot,
        delta_hat: delta,
        smoothed_second_moment: smoothed,
        lemma1_bound: lemma1_bound(theta, one_hot, delta),
        probe_point: w.to_vec(),
    })
}

/// Exact smoothed-gradient second moment on a finite dataset, next to
/// `(1−θ)σ² + θδσ²`.
pub fn verify_lemma1(oracle: &ClassificationOracle, w: &[f64], spec: &SmoothingSpec) -> Result<VarianceReport> {
    lemma1_exact(oracle, w, spec.theta(), spec.source())
}

pub(crate) fn lemma1_exact(
    oracle: &ClassificationOracle,
    w: &[f64],
    theta: f64,
    source: &LabelSource,
) -> Result<VarianceReport> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::invalid(format!("theta {theta} outside [0, 1]")));
    }
    let m = population_moments(oracle, w, source, theta)?;
    report(theta, m.one_hot, m.hat, m.smoothed, w)
}

/// Monte-Carlo version for synthetic oracles. Each draw pairs one unbiased
/// and one smoothing-label gradient and mixes them, so the sample moments
/// obey the same convexity inequality as the population ones.
pub fn verify_lemma1_synthetic(
    oracle: &SyntheticOracle,
    w: &[f64],
    spec: &SmoothingSpec,
    draws: usize,
    seed: u64,
) -> Result<VarianceReport> {
    lemma1_monte_carlo(oracle, w, spec.theta(), draws, seed)
}

pub(crate) fn lemma1_monte_carlo(
    oracle: &SyntheticOracle,
    w: &[f64],
    theta: f64,
    draws: usize,
    seed: u64,
) -> Result<VarianceReport> {
    if draws < 1000 {
        return Err(Error::invalid("Monte-Carlo check needs at least 1000 draws"));
    }
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::invalid(format!("theta {theta} outside [0, 1]")));
    }
    if w.len() != oracle.dim() {
        return Err(Error::invalid("parameter vector has the wrong dimension"));
    }
    let full = oracle.problem.gradient(w);
    let mut streams = SampleStreams::new(seed);
    let (mut one_hot, mut hat, mut smoothed) = (0.0, 0.0, 0.0);
    for _ in 0..draws {
        let u = noisy_gradient(&oracle.problem, &oracle.noise, w, SyntheticMode::Unbiased, &mut streams);
        let h = noisy_gradient(&oracle.problem, &oracle.noise, w, SyntheticMode::Hat, &mut streams);
        let mix: Vec<f64> = u.iter().zip(&h).map(|(a, b)| (1.0 - theta) * a + theta * b).collect();
        one_hot += dist_sq(&u, &full);
        hat += dist_sq(&h, &full);
        smoothed += dist_sq(&mix, &full);
    }
    let n = draws as f64;
    report(theta, one_hot / n, hat / n, smoothed / n, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classification::tests::reference_problem;
    use crate::classification::{generate_gaussian_mixture, Dataset, MixtureSpec, ModelKind};
    use crate::labels::LabelDistribution;
    use crate::synthetic::{pl_ratio_grid_infimum, NoiseSpec, SyntheticPLProblem, PL_SINE_L, PL_SINE_MU};
    use proptest::prelude::*;
    use rand::Rng;

    // Extended-precision double loop over the reference problem.
    const REFERENCE_SIGMA2: f64 = 1.737_413_615_220_759_7;
    const REFERENCE_DELTA_UNIFORM: f64 = 0.320_367_677_712_581_24;

    fn reference_oracle() -> (ClassificationOracle, Vec<f64>) {
        let (data, model) = reference_problem();
        let o = ClassificationOracle::new(ModelKind::SoftmaxLinear, data).unwrap();
        (o, model.params().to_vec())
    }

    fn mixture(k: usize, n: usize, noise: f64, seed: u64) -> Dataset {
        generate_gaussian_mixture(&MixtureSpec {
            num_classes: k,
            dim: 4,
            n,
            class_separation: 2.5,
            label_noise_rate: noise,
            seed,
        })
        .unwrap()
    }

    fn constants(l: f64, mu: f64, delta: f64, sigma2: f64, f0: f64) -> ProblemConstants {
        ProblemConstants {
            l,
            mu,
            sigma2,
            delta,
            f_at_w0: f0,
            f_star: 0.0,
            f_star_provenance: FStarProvenance::Exact,
        }
    }

    #[test]
    fn reference_variances() {
        let (o, w) = reference_oracle();
        let s = estimate_sigma2(&o, &w).unwrap();
        assert!((s - REFERENCE_SIGMA2).abs() < 1e-12 * REFERENCE_SIGMA2, "{s}");
        let d = estimate_delta(&o, &w, &LabelSource::Uniform).unwrap();
        assert!((d - REFERENCE_DELTA_UNIFORM).abs() < 1e-12, "{d}");
    }

    #[test]
    fn single_example_has_no_variance() {
        let data = Dataset::new(2, 3, vec![0.5, -1.0], vec![2]).unwrap();
        let o = ClassificationOracle::new(ModelKind::SoftmaxLinear, data).unwrap();
        let w = vec![0.1; o.dim()];
        assert_eq!(estimate_sigma2(&o, &w).unwrap(), 0.0);
        assert!(matches!(
            estimate_delta(&o, &w, &LabelSource::Uniform),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn duplication_and_permutation_invariance() {
        let data = mixture(3, 30, 0.2, 4);
        let o = ClassificationOracle::new(ModelKind::SoftmaxLinear, data.clone()).unwrap();
        let w: Vec<f64> = (0..o.dim()).map(|i| 0.05 * i as f64 - 0.3).collect();
        let s = estimate_sigma2(&o, &w).unwrap();
        let d = estimate_delta(&o, &w, &LabelSource::Uniform).unwrap();
        let order: Vec<usize> = (0..30).rev().collect();
        for other in [data.repeated(3).unwrap(), data.permuted(&order).unwrap()] {
            let o2 = ClassificationOracle::new(ModelKind::SoftmaxLinear, other).unwrap();
            assert!((estimate_sigma2(&o2, &w).unwrap() - s).abs() < 1e-12 * s);
            assert!((estimate_delta(&o2, &w, &LabelSource::Uniform).unwrap() - d).abs() < 1e-12);
        }
    }

    #[test]
    fn smoothing_label_equal_to_true_label_gives_unit_delta() {
        let data = mixture(3, 30, 0.2, 5);
        let one_hot: Vec<LabelDistribution> = data
            .labels()
            .iter()
            .map(|&y| LabelDistribution::one_hot(y, 3).unwrap())
            .collect();
        let o = ClassificationOracle::new(ModelKind::SoftmaxLinear, data.with_teacher_labels(one_hot).unwrap()).unwrap();
        let w = vec![0.2; o.dim()];
        let d = estimate_delta(&o, &w, &LabelSource::Teacher).unwrap();
        assert!((d - 1.0).abs() < 1e-14, "{d}");
    }

    #[test]
    fn missing_teacher_is_a_config_error() {
        let (o, w) = reference_oracle();
        assert!(matches!(estimate_delta(&o, &w, &LabelSource::Teacher), Err(Error::Config(_))));
    }

    // Near the optimum of the noisy objective the model predicts the true
    // class, so clean-label gradients sit closer to the full gradient than
    // the noisy one-hot ones.
    #[test]
    fn clean_teacher_beats_noisy_labels() {
        let spec = MixtureSpec {
            num_classes: 3,
            dim: 2,
            n: 150,
            class_separation: 6.0,
            label_noise_rate: 0.2,
            seed: 8,
        };
        let noisy = generate_gaussian_mixture(&spec).unwrap();
        let clean = generate_gaussian_mixture(&MixtureSpec { label_noise_rate: 0.0, ..spec }).unwrap();
        assert_eq!(noisy.example(7), clean.example(7));
        let teacher = clean
            .labels()
            .iter()
            .map(|&y| LabelDistribution::one_hot(y, 3).unwrap())
            .collect();
        let o = ClassificationOracle::new(ModelKind::SoftmaxLinear, noisy.with_teacher_labels(teacher).unwrap()).unwrap();
        let mut w = vec![0.0; o.dim()];
        for _ in 0..2000 {
            let g = o.gradient(&w);
            w.iter_mut().zip(&g).for_each(|(wi, gi)| *wi -= 0.05 * gi);
        }
        assert!(norm_sq(&o.gradient(&w)) < 1e-4);
        let d = estimate_delta(&o, &w, &LabelSource::Teacher).unwrap();
        assert!(d < 1.0, "{d}");
    }

    #[test]
    fn lipschitz_of_quadratic() {
        let l0 = 2.5;
        let q = SyntheticOracle::new(
            SyntheticPLProblem::shifted_quadratic(vec![1.0, 2.0, 3.0], l0).unwrap(),
            NoiseSpec::new(0.0, 0.0, 0.0).unwrap(),
        );
        let r = Region::around(&[0.0, 0.0, 0.0], 5.0);
        let l = estimate_l(&q, &r, 50, 1).unwrap();
        assert!(l >= l0 && l <= 1.1 * l0 + 1e-6);
        let sampled = sampled_lipschitz(&q, &r, 50, 1).unwrap();
        assert!((sampled - l0).abs() < 1e-9);
    }

    #[test]
    fn lipschitz_of_pl_sine_stays_below_analytic() {
        let o = SyntheticOracle::new(SyntheticPLProblem::pl_sine(1).unwrap(), NoiseSpec::new(1.0, 0.1, 0.5).unwrap());
        let r = Region { lo: vec![-10.0], hi: vec![10.0] };
        let sampled = sampled_lipschitz(&o, &r, 2000, 3).unwrap();
        assert!(sampled <= PL_SINE_L * (1.0 + 1e-9));
        assert!(sampled > 7.5);
        assert_eq!(estimate_l(&o, &r, 2000, 3).unwrap(), PL_SINE_L);
    }

    #[test]
    fn lipschitz_guards() {
        let o = SyntheticOracle::new(SyntheticPLProblem::pl_sine(1).unwrap(), NoiseSpec::new(1.0, 0.1, 0.5).unwrap());
        assert!(estimate_l(&o, &Region { lo: vec![1.0], hi: vec![1.0] }, 10, 0).is_err());
        assert!(estimate_l(&o, &Region { lo: vec![0.0], hi: vec![1.0] }, 1, 0).is_err());
        // a region so narrow that most samples coincide
        let tiny = Region { lo: vec![1.0], hi: vec![1.0 + 4.0 * f64::EPSILON] };
        assert!(sampled_lipschitz(&o, &tiny, 100, 0).unwrap().is_finite());
    }

    #[test]
    fn mu_of_quadratic_is_curvature() {
        let q = SyntheticOracle::new(
            SyntheticPLProblem::shifted_quadratic(vec![1.0, -1.0], 3.0).unwrap(),
            NoiseSpec::new(0.0, 0.0, 0.0).unwrap(),
        );
        let probes: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 * 0.3, -(i as f64) * 0.7]).collect();
        let m = estimate_mu(&q, &probes, 0.0, FStarProvenance::Exact).unwrap();
        assert!((m.mu - 3.0).abs() < 1e-12);
        assert_eq!(m.probes_used, 20);
        // the probe at the centre is skipped
        let with_opt = vec![vec![1.0, -1.0], vec![2.0, 0.0]];
        assert_eq!(estimate_mu(&q, &with_opt, 0.0, FStarProvenance::Exact).unwrap().probes_used, 1);
        assert!(estimate_mu(&q, &[vec![1.0, -1.0]], 0.0, FStarProvenance::Exact).is_err());
    }

    #[test]
    fn mu_of_pl_sine_matches_grid_infimum() {
        let o = SyntheticOracle::new(SyntheticPLProblem::pl_sine(1).unwrap(), NoiseSpec::new(1.0, 0.1, 0.5).unwrap());
        let probes: Vec<Vec<f64>> = (0..=20_000).map(|i| vec![-10.0 + i as f64 * 1e-3]).collect();
        let m = estimate_mu(&o, &probes, 0.0, FStarProvenance::Exact).unwrap();
        let grid = pl_ratio_grid_infimum(&o.problem, -10.0, 10.0, 20_001);
        assert!((m.mu - grid).abs() < 1e-12);
        assert!((m.mu - PL_SINE_MU).abs() < 1e-6, "{}", m.mu);
        assert!(m.mu > 1.0 / 32.0);
    }

    #[test]
    fn mu_single_probe() {
        let o = SyntheticOracle::new(SyntheticPLProblem::pl_sine(1).unwrap(), NoiseSpec::new(1.0, 0.1, 0.5).unwrap());
        let w = vec![3.0];
        let m = estimate_mu(&o, &[w.clone()], 0.0, FStarProvenance::BestFound).unwrap();
        assert_eq!(m.mu, norm_sq(&o.gradient(&w)) / (2.0 * o.value(&w)));
        assert_eq!(m.provenance, FStarProvenance::BestFound);
    }

    #[test]
    fn bound_arithmetic() {
        assert!((theorem1_bound(1.0, 0.1, 100, 0.01, 1.0).unwrap() - 0.22).abs() < 1e-15);
        assert!((theorem3_bound(1.0, 0.01, 1000, 1.0, 1.0).unwrap() - 0.21).abs() < 1e-15);
        assert_eq!(theorem3_bound(1.0, 0.01, 1000, 1.0, 0.0).unwrap(), 2.0 / (0.01 * 1000.0));
        assert!(matches!(theorem3_bound(1.0, 0.5, 10, 4.0, 1.0), Err(Error::Precondition(_))));
        assert!(theorem1_bound(1.0, 0.1, 0, 0.0, 1.0).is_err());
        let mut last = f64::INFINITY;
        for t in [1, 10, 100, 1_000, 10_000] {
            let b = theorem1_bound(1.0, 0.1, t, 0.0, 1.0).unwrap();
            assert!(b < last);
            last = b;
        }
    }

    #[test]
    fn schedule_reference_values() {
        let s = tsla_schedule(&constants(1.0, 0.1, 0.1, 1.0, 1.0), 0.1).unwrap();
        assert!((s.theta - 1.0 / 1.1).abs() < 1e-15);
        assert_eq!(s.eta1, 1.0);
        assert_eq!(s.t1, 1);
        assert!((s.eta2 - 0.005).abs() < 1e-18);
        assert_eq!(s.t2, 160_000);
    }

    #[test]
    fn schedule_first_stage_vanishes_at_unit_argument() {
        // 2μΔ(1+δ)/(2δσ²) = 1 with μ = 0.1, Δ = 1, σ² = 1 needs δ = 0.1/0.9;
        // the feasibility condition σ²δ/μ ≤ Δ is then violated, so drop μ.
        let c = ProblemConstants { f_at_w0: 5.0, ..constants(1.0, 0.5, 0.25, 2.0, 0.0) };
        let arg = 2.0 * c.mu * c.gap() * (1.0 + c.delta) / (2.0 * c.delta * c.sigma2);
        assert!(arg > 1.0);
        let c = ProblemConstants { f_at_w0: 1.0 / (1.0 + c.delta), ..c };
        let c = ProblemConstants { f_at_w0: c.f_at_w0 * c.delta * c.sigma2 / c.mu, ..c };
        assert_eq!(first_stage_length(&c, 1.0), 0.0);
    }

    #[test]
    fn schedule_guards() {
        assert!(matches!(
            tsla_schedule(&constants(1.0, 0.1, 0.5, 1.0, 1.0), 0.1),
            Err(Error::ScheduleInfeasible(_))
        ));
        assert!(matches!(tsla_schedule(&constants(1.0, 0.1, 0.0, 1.0, 1.0), 0.1), Err(Error::Degenerate(_))));
        assert!(matches!(tsla_schedule(&constants(1.0, 0.1, 0.1, 0.0, 1.0), 0.1), Err(Error::Degenerate(_))));
        assert!(tsla_schedule(&constants(1.0, 2.0, 0.1, 1.0, 1.0), 0.1).is_err());
    }

    #[test]
    fn regimes() {
        assert_eq!(classify_regime(0.001, 0.1, 1.0).unwrap(), Regime::ConvergesWithLsr);
        match classify_regime(0.01, 0.1, 1.0).unwrap() {
            Regime::LsrFloor { floor } => assert!((floor - 0.04).abs() < 1e-15),
            r => panic!("{r:?}"),
        }
        let at = 0.1 * 0.1 / (4.0 * 1.0);
        assert_eq!(classify_regime(at, 0.1, 1.0).unwrap(), Regime::ConvergesWithLsr);
        assert!(classify_regime(0.1, 1.5, 1.0).is_err());
    }

    #[test]
    fn lemma1_exact_boundaries() {
        let (o, w) = reference_oracle();
        let r0 = verify_lemma1(&o, &w, &SmoothingSpec::none()).unwrap();
        assert_eq!(r0.smoothed_second_moment, r0.sigma2_hat);
        assert_eq!(r0.lemma1_bound, r0.sigma2_hat);
        let r1 = lemma1_exact(&o, &w, 1.0, &LabelSource::Uniform).unwrap();
        let hat = r1.delta_hat * r1.sigma2_hat;
        assert!((r1.smoothed_second_moment - hat).abs() < 1e-14 * hat);
        assert!((r1.lemma1_bound - hat).abs() < 1e-14 * hat);
        let r = verify_lemma1(&o, &w, &SmoothingSpec::new(0.4, LabelSource::Uniform).unwrap()).unwrap();
        assert!(r.smoothed_second_moment <= r.lemma1_bound);
        assert!(r.to_kv().contains("lemma1_bound="));
    }

    #[test]
    fn lemma1_on_synthetic_draws() {
        let o = SyntheticOracle::new(SyntheticPLProblem::pl_sine(2).unwrap(), NoiseSpec::new(1.5, 0.3, 0.4).unwrap());
        let w = vec![1.0, -2.0];
        assert!(lemma1_monte_carlo(&o, &w, 0.5, 999, 0).is_err());
        let r0 = verify_lemma1_synthetic(&o, &w, &SmoothingSpec::none(), 5000, 1).unwrap();
        assert_eq!(r0.smoothed_second_moment, r0.sigma2_hat);
        assert_eq!(r0.lemma1_bound, r0.sigma2_hat);
        let r1 = lemma1_monte_carlo(&o, &w, 1.0, 5000, 1).unwrap();
        assert!((r1.smoothed_second_moment - r1.lemma1_bound).abs() < 1e-12 * r1.lemma1_bound);
        for theta in [0.1, 0.5, 0.9] {
            let spec = SmoothingSpec::new(theta, LabelSource::Uniform).unwrap();
            let r = verify_lemma1_synthetic(&o, &w, &spec, 20_000, 2).unwrap();
            assert!(r.smoothed_second_moment <= r.lemma1_bound);
            // population values: σ² = 1.5, δ = 0.3
            assert!((r.sigma2_hat - 1.5).abs() < 0.05);
            assert!((r.delta_hat - 0.3).abs() < 0.02);
        }
    }

    #[test]
    fn constants_report() {
        let o = SyntheticOracle::new(SyntheticPLProblem::pl_sine(1).unwrap(), NoiseSpec::new(1.0, 0.05, 0.5).unwrap());
        let c = ProblemConstants::from_synthetic(&o, &[3.0]).unwrap();
        assert_eq!(c.f_at_w0, 9.059_744_570_024_451);
        let kv = c.to_kv();
        assert!(kv.starts_with("L=8e0\n"));
        assert!(kv.contains("f_star_provenance=exact"));
        let bad = ProblemConstants { mu: 9.0, ..c };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn schedule_for_the_synthetic_setup() {
        let o = SyntheticOracle::new(SyntheticPLProblem::pl_sine(1).unwrap(), NoiseSpec::new(1.0, 0.05, 0.5).unwrap());
        let c = ProblemConstants::from_synthetic(&o, &[3.0]).unwrap();
        let s = tsla_schedule(&c, 0.15).unwrap();
        assert_eq!(s.eta1, 0.125);
        assert_eq!(s.t1, 160);
        assert!((s.eta2 - 0.001_406_25).abs() < 1e-18);
    }

    #[test]
    fn helper_lengths() {
        assert_eq!(iterations_for_epsilon(1.0, 0.1, 0.1), 4000);
        assert_eq!(iterations_for_floor(1.0, 0.1, 0.5, 2.0), 10);
        assert!((baseline_step(8.0, 1.0, 0.2) - 0.0025).abs() < 1e-18);
        assert_eq!(baseline_step(8.0, 0.0, 0.2), 0.125);
        assert_eq!(ceil_count(2.000_000_000_000_1), 2);
        assert_eq!(ceil_count(2.1), 3);
    }

    proptest! {
        #[test]
        fn first_stage_forms_agree(
            l in 1.0f64..20.0,
            mu_frac in 0.01f64..1.0,
            delta in 0.01f64..3.0,
            sigma2 in 0.1f64..5.0,
            slack in 1.0f64..1e4,
        ) {
            let mu = mu_frac * l;
            let c = constants(l, mu, delta, sigma2, sigma2 * delta / mu * slack);
            let a = first_stage_length(&c, 1.0 / l);
            let b = first_stage_length_via_sigma_hat(&c, 1.0 / l);
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{} vs {}", a, b);
        }

        #[test]
        fn second_step_no_larger_than_first(
            l in 0.5f64..20.0,
            sigma2 in 0.1f64..5.0,
            eps_frac in 0.01f64..1.0,
            mu_frac in 0.01f64..1.0,
            delta in 0.01f64..2.0,
        ) {
            // η₂ ≤ η₁ exactly when ε² ≤ 2σ²
            let eps = eps_frac * (2.0 * sigma2).sqrt();
            let mu = mu_frac * l;
            let c = constants(l, mu, delta, sigma2, sigma2 * delta / mu * 2.0);
            let s = tsla_schedule(&c, eps).unwrap();
            prop_assert!(s.eta2 <= s.eta1 * (1.0 + 1e-12));
            prop_assert!(s.theta > 0.0 && s.theta < 1.0);
        }

        #[test]
        fn bounds_are_monotone(
            f0 in 0.0f64..10.0,
            eta in 0.001f64..1.0,
            t in 1u64..100_000,
            dt in 1u64..1000,
            delta in 0.0f64..2.0,
            sigma2 in 0.0f64..3.0,
            bump in 0.0f64..1.0,
        ) {
            let b = theorem1_bound(f0, eta, t, delta, sigma2).unwrap();
            prop_assert!(theorem1_bound(f0, eta, t + dt, delta, sigma2).unwrap() <= b);
            prop_assert!(theorem1_bound(f0, eta, t, delta + bump, sigma2).unwrap() >= b);
            prop_assert!(theorem1_bound(f0, eta, t, delta, sigma2 + bump).unwrap() >= b);
            let l = 0.5 / eta;
            let b3 = theorem3_bound(f0, eta, t, l, sigma2).unwrap();
            prop_assert!(theorem3_bound(f0, eta, t + dt, l, sigma2).unwrap() <= b3);
            prop_assert!(theorem3_bound(f0, eta, t, l, sigma2 + bump).unwrap() >= b3);
        }

        #[test]
        fn converging_regime_meets_epsilon(
            eps in 0.01f64..0.99,
            sigma2 in 0.1f64..5.0,
            frac in 0.0f64..1.0,
            f0 in 0.1f64..10.0,
            l in 0.5f64..20.0,
        ) {
            let delta = frac * eps * eps / (4.0 * sigma2);
            prop_assert_eq!(classify_regime(delta, eps, sigma2).unwrap(), Regime::ConvergesWithLsr);
            let eta = 1.0 / l;
            let t = iterations_for_epsilon(f0, eta, eps);
            prop_assert!(theorem1_bound(f0, eta, t, delta, sigma2).unwrap() <= eps * eps * (1.0 + 1e-12));
        }

        #[test]
        fn lemma1_holds_exactly_on_random_points(seed in 0u64..50, theta in 0.0f64..1.0) {
            let data = mixture(4, 40, 0.2, seed);
            let o = ClassificationOracle::new(ModelKind::SoftmaxLinear, data).unwrap();
            let mut rng = stream(seed, 9);
            let w: Vec<f64> = (0..o.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let r = lemma1_exact(&o, &w, theta, &LabelSource::Uniform).unwrap();
            prop_assert!(r.smoothed_second_moment <= r.lemma1_bound + 1e-9);
        }
    }
}
