//! Analytic objectives satisfying the Polyak-Łojasiewicz condition, with a
//! gradient-noise model whose second moments are set exactly.
//!
//! `pl_sine` is `F(w) = Σ wⱼ² + 3 sin²(wⱼ)`: non-convex, `F* = 0` at the
//! origin, `L = 8` because `F'' = 2 + 6 cos(2w)`. Its PL constant is the
//! infimum of `‖∇F‖² / (2F)`; being separable, the 1-D value holds in every
//! dimension.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::oracle::{norm_sq, KnownConstants, LabelMode, Oracle, SampleStreams};

/// Smoothness constant of `pl_sine`.
pub const PL_SINE_L: f64 = 8.0;

/// Infimum of `‖∇F‖²/(2F)` for `pl_sine`, attained near `|w| = 2.2017`,
/// rounded down in the tenth digit.
pub const PL_SINE_MU: f64 = 0.175_530_985;

pub fn pl_sine_value(w: &[f64]) -> f64 {
    w.iter()
        .map(|x| {
            let s = x.sin();
            x * x + 3.0 * s * s
        })
        .sum()
}

pub fn pl_sine_grad(w: &[f64]) -> Vec<f64> {
    w.iter().map(|x| 2.0 * x + 3.0 * (2.0 * x).sin()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum Objective {
    PlSine,
    /// `½ L ‖w − center‖²`.
    ShiftedQuadratic { center: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPLProblem {
    dim: usize,
    objective: Objective,
    constants: KnownConstants,
}

impl SyntheticPLProblem {
    pub fn pl_sine(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        Ok(Self {
            dim,
            objective: Objective::PlSine,
            constants: KnownConstants {
                l: PL_SINE_L,
                mu: PL_SINE_MU,
                f_star: 0.0,
            },
        })
    }

    pub fn shifted_quadratic(center: Vec<f64>, curvature: f64) -> Result<Self> {
        if center.is_empty() {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        if !(curvature > 0.0 && curvature.is_finite()) {
            return Err(Error::invalid(format!("curvature {curvature} must be positive")));
        }
        Ok(Self {
            dim: center.len(),
            objective: Objective::ShiftedQuadratic { center },
            constants: KnownConstants {
                l: curvature,
                mu: curvature,
                f_star: 0.0,
            },
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn objective(&self) -> &Objective {
        &self.objective
    }

    pub fn constants(&self) -> KnownConstants {
        self.constants
    }

    /// A point attaining `f_star`.
    pub fn minimizer(&self) -> Vec<f64> {
        match &self.objective {
            Objective::PlSine => vec![0.0; self.dim],
            Objective::ShiftedQuadratic { center } => center.clone(),
        }
    }

    pub fn value(&self, w: &[f64]) -> f64 {
        match &self.objective {
            Objective::PlSine => pl_sine_value(w),
            Objective::ShiftedQuadratic { center } => {
                0.5 * self.constants.l * crate::oracle::dist_sq(w, center)
            }
        }
    }

    pub fn gradient(&self, w: &[f64]) -> Vec<f64> {
        match &self.objective {
            Objective::PlSine => pl_sine_grad(w),
            Objective::ShiftedQuadratic { center } => w
                .iter()
                .zip(center)
                .map(|(x, c)| self.constants.l * (x - c))
                .collect(),
        }
    }
}

/// Second-moment specification of the gradient noise.
///
/// The unbiased oracle has `E‖ξ‖² = sigma2`. The smoothing-label oracle has
/// total second moment `delta·sigma2` about `∇F`, of which `bias_fraction`
/// is a fixed bias along the first axis and the rest zero-mean noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    sigma2: f64,
    delta: f64,
    bias_fraction: f64,
}

impl NoiseSpec {
    pub fn new(sigma2: f64, delta: f64, bias_fraction: f64) -> Result<Self> {
        if !(sigma2 >= 0.0 && sigma2.is_finite()) {
            return Err(Error::invalid(format!("sigma2 {sigma2} must be nonnegative")));
        }
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(Error::invalid(format!("delta {delta} must be nonnegative")));
        }
        if !(0.0..=1.0).contains(&bias_fraction) {
            return Err(Error::invalid(format!(
                "bias_fraction {bias_fraction} outside [0, 1]"
            )));
        }
        Ok(Self {
            sigma2,
            delta,
            bias_fraction,
        })
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn bias_fraction(&self) -> f64 {
        self.bias_fraction
    }

    /// Norm of the fixed bias vector of the smoothing-label oracle.
    pub fn bias_norm(&self) -> f64 {
        (self.bias_fraction * self.delta * self.sigma2).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SyntheticMode {
    Unbiased,
    Hat,
    Smoothed(f64),
}

fn add_gaussian(g: &mut [f64], total_var: f64, rng: &mut impl Rng) {
    if total_var == 0.0 {
        return;
    }
    let sd = (total_var / g.len() as f64).sqrt();
    for gi in g.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *gi += sd * z;
    }
}

fn unbiased_draw(grad: &[f64], noise: &NoiseSpec, streams: &mut SampleStreams) -> Vec<f64> {
    let mut g = grad.to_vec();
    add_gaussian(&mut g, noise.sigma2, &mut streams.noise);
    g
}

fn hat_draw(grad: &[f64], noise: &NoiseSpec, streams: &mut SampleStreams) -> Vec<f64> {
    let mut g = grad.to_vec();
    g[0] += noise.bias_norm();
    add_gaussian(
        &mut g,
        (1.0 - noise.bias_fraction) * noise.delta * noise.sigma2,
        &mut streams.hat,
    );
    g
}

/// One stochastic gradient at `w`. The smoothed mode mixes independent
/// unbiased and smoothing-label draws; with `θ = 0` it consumes only the
/// unbiased stream and matches the unbiased mode bit for bit.
pub fn noisy_gradient(
    problem: &SyntheticPLProblem,
    noise: &NoiseSpec,
    w: &[f64],
    mode: SyntheticMode,
    streams: &mut SampleStreams,
) -> Vec<f64> {
    let grad = problem.gradient(w);
    match mode {
        SyntheticMode::Unbiased => unbiased_draw(&grad, noise, streams),
        SyntheticMode::Hat => hat_draw(&grad, noise, streams),
        SyntheticMode::Smoothed(theta) if theta == 0.0 => unbiased_draw(&grad, noise, streams),
        SyntheticMode::Smoothed(theta) => {
            let u = unbiased_draw(&grad, noise, streams);
            let h = hat_draw(&grad, noise, streams);
            u.iter()
                .zip(&h)
                .map(|(a, b)| (1.0 - theta) * a + theta * b)
                .collect()
        }
    }
}

/// A synthetic problem paired with its noise model.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticOracle {
    pub problem: SyntheticPLProblem,
    pub noise: NoiseSpec,
}

impl SyntheticOracle {
    pub fn new(problem: SyntheticPLProblem, noise: NoiseSpec) -> Self {
        Self { problem, noise }
    }

    pub fn mode(label: &LabelMode) -> SyntheticMode {
        match label {
            LabelMode::OneHot => SyntheticMode::Unbiased,
            LabelMode::HatOnly(_) => SyntheticMode::Hat,
            LabelMode::Smoothed(spec) => SyntheticMode::Smoothed(spec.theta()),
        }
    }
}

impl Oracle for SyntheticOracle {
    fn dim(&self) -> usize {
        self.problem.dim()
    }

    fn value(&self, w: &[f64]) -> f64 {
        self.problem.value(w)
    }

    fn gradient(&self, w: &[f64]) -> Vec<f64> {
        self.problem.gradient(w)
    }

    fn check_mode(&self, _mode: &LabelMode) -> Result<()> {
        Ok(())
    }

    fn sample_gradient(
        &self,
        w: &[f64],
        mode: &LabelMode,
        streams: &mut SampleStreams,
    ) -> Result<Vec<f64>> {
        Ok(noisy_gradient(
            &self.problem,
            &self.noise,
            w,
            Self::mode(mode),
            streams,
        ))
    }

    fn known_constants(&self) -> Option<KnownConstants> {
        Some(self.problem.constants())
    }
}

/// Smallest `‖∇F‖² / (2(F − F*))` over a uniform 1-D grid on `[lo, hi]`,
/// skipping points within `1e-12` of the optimum value.
pub fn pl_ratio_grid_infimum(problem: &SyntheticPLProblem, lo: f64, hi: f64, points: usize) -> f64 {
    let f_star = problem.constants().f_star;
    let step = (hi - lo) / (points - 1) as f64;
    (0..points)
        .filter_map(|i| {
            let w = vec![lo + step * i as f64; problem.dim()];
            let gap = problem.value(&w) - f_star;
            (gap > 1e-12).then(|| norm_sq(&problem.gradient(&w)) / (2.0 * gap))
        })
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn pl_sine_reference_points() {
        assert_eq!(pl_sine_value(&[0.0]), 0.0);
        assert!((pl_sine_value(&[PI]) - PI * PI).abs() < 1e-12);
        assert_eq!(pl_sine_grad(&[0.0, 0.0]), vec![0.0, 0.0]);
        assert!((pl_sine_grad(&[PI / 2.0])[0] - PI).abs() < 1e-12);
        // 30-digit evaluation of 9 + 3 sin²(3).
        assert!((pl_sine_value(&[3.0]) - 9.059_744_570_024_451).abs() < 1e-13);
    }

    #[test]
    fn pl_sine_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = SyntheticPLProblem::pl_sine(3).unwrap();
        for _ in 0..100 {
            let w: Vec<f64> = (0..3).map(|_| rng.random_range(-10.0..10.0)).collect();
            let g = p.gradient(&w);
            let h = 1e-5;
            for j in 0..3 {
                let mut wp = w.clone();
                let mut wm = w.clone();
                wp[j] += h;
                wm[j] -= h;
                let fd = (p.value(&wp) - p.value(&wm)) / (2.0 * h);
                assert!((fd - g[j]).abs() / g[j].abs().max(1.0) < 1e-7, "{fd} vs {}", g[j]);
            }
        }
    }

    #[test]
    fn mu_constant_agrees_with_grid_oracle() {
        let p = SyntheticPLProblem::pl_sine(1).unwrap();
        let coarse = pl_ratio_grid_infimum(&p, -10.0, 10.0, 10_000);
        let fine = pl_ratio_grid_infimum(&p, -10.0, 10.0, 2_000_001);
        assert!(coarse >= PL_SINE_MU && fine >= PL_SINE_MU);
        assert!(fine - PL_SINE_MU < 1e-8, "fine grid {fine}");
        // the textbook constant 1/32 is valid but loose
        assert!(PL_SINE_MU > 1.0 / 32.0);
    }

    #[test]
    fn pl_inequality_holds_on_grid() {
        for p in [
            SyntheticPLProblem::pl_sine(1).unwrap(),
            SyntheticPLProblem::shifted_quadratic(vec![1.5], 3.0).unwrap(),
        ] {
            let c = p.constants();
            for i in 0..10_000 {
                let w = vec![-10.0 + 20.0 * i as f64 / 9_999.0];
                let lhs = 2.0 * c.mu * (p.value(&w) - c.f_star);
                assert!(lhs <= norm_sq(&p.gradient(&w)) * (1.0 + 1e-12), "w = {w:?}");
            }
        }
    }

    #[test]
    fn lipschitz_ratio_never_exceeds_l() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for dim in [1, 2] {
            let p = SyntheticPLProblem::pl_sine(dim).unwrap();
            for _ in 0..10_000 {
                let w: Vec<f64> = (0..dim).map(|_| rng.random_range(-10.0..10.0)).collect();
                let u: Vec<f64> = (0..dim).map(|_| rng.random_range(-10.0..10.0)).collect();
                let num = crate::oracle::dist_sq(&p.gradient(&w), &p.gradient(&u)).sqrt();
                let den = crate::oracle::dist_sq(&w, &u).sqrt();
                if den > 0.0 {
                    assert!(num / den <= PL_SINE_L * (1.0 + 1e-9));
                }
            }
        }
    }

    #[test]
    fn noiseless_modes_return_exact_gradient() {
        let p = SyntheticPLProblem::pl_sine(2).unwrap();
        let noise = NoiseSpec::new(0.0, 0.0, 0.5).unwrap();
        let w = [0.7, -1.3];
        let mut s = SampleStreams::new(1);
        for mode in [
            SyntheticMode::Unbiased,
            SyntheticMode::Hat,
            SyntheticMode::Smoothed(0.3),
        ] {
            assert_eq!(noisy_gradient(&p, &noise, &w, mode, &mut s), p.gradient(&w));
        }
    }

    #[test]
    fn pure_bias_is_deterministic() {
        let p = SyntheticPLProblem::pl_sine(2).unwrap();
        let noise = NoiseSpec::new(2.0, 0.5, 1.0).unwrap();
        let w = [0.7, -1.3];
        let g = noisy_gradient(&p, &noise, &w, SyntheticMode::Hat, &mut SampleStreams::new(3));
        let exact = p.gradient(&w);
        assert_eq!(g[0], exact[0] + 1.0);
        assert_eq!(g[1], exact[1]);
    }

    #[test]
    fn zero_theta_matches_unbiased_bit_for_bit() {
        let p = SyntheticPLProblem::pl_sine(3).unwrap();
        let noise = NoiseSpec::new(1.0, 0.3, 0.5).unwrap();
        let w = [0.1, 0.2, 0.3];
        let mut a = SampleStreams::new(9);
        let mut b = SampleStreams::new(9);
        for _ in 0..10 {
            assert_eq!(
                noisy_gradient(&p, &noise, &w, SyntheticMode::Smoothed(0.0), &mut a),
                noisy_gradient(&p, &noise, &w, SyntheticMode::Unbiased, &mut b)
            );
        }
    }

    // Monte-Carlo oracle for the moment model: 10⁶ unbiased draws.
    #[test]
    fn unbiased_moments_monte_carlo() {
        let p = SyntheticPLProblem::pl_sine(2).unwrap();
        let noise = NoiseSpec::new(1.0, 0.0, 0.0).unwrap();
        let w = [1.0, -2.0];
        let exact = p.gradient(&w);
        let mut s = SampleStreams::new(2024);
        let n = 1_000_000;
        let mut mean = [0.0; 2];
        let mut second = 0.0;
        for _ in 0..n {
            let g = noisy_gradient(&p, &noise, &w, SyntheticMode::Unbiased, &mut s);
            for j in 0..2 {
                mean[j] += g[j];
            }
            second += crate::oracle::dist_sq(&g, &exact);
        }
        let sigma = noise.sigma2().sqrt();
        for j in 0..2 {
            assert!((mean[j] / n as f64 - exact[j]).abs() <= 4.0 * sigma / (n as f64).sqrt());
        }
        assert!((second / n as f64 - 1.0).abs() < 0.01);
    }

    fn mc_moment(mode: SyntheticMode, noise: NoiseSpec, n: usize) -> (f64, f64) {
        let p = SyntheticPLProblem::pl_sine(3).unwrap();
        let w = [0.4, -0.9, 2.0];
        let exact = p.gradient(&w);
        let mut s = SampleStreams::new(77);
        let vals: Vec<f64> = (0..n)
            .map(|_| crate::oracle::dist_sq(&noisy_gradient(&p, &noise, &w, mode, &mut s), &exact))
            .collect();
        let m = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        (m, (var / n as f64).sqrt())
    }

    #[test]
    fn hat_mode_second_moment_is_delta_sigma2() {
        for bf in [0.0, 0.3, 0.8] {
            let noise = NoiseSpec::new(1.5, 0.4, bf).unwrap();
            let (m, se) = mc_moment(SyntheticMode::Hat, noise, 200_000);
            assert!((m - 0.6).abs() <= 3.0 * se, "bf {bf}: {m} ± {se}");
        }
    }

    #[test]
    fn smoothed_mode_respects_mixture_bound() {
        for theta in [0.1, 0.5, 0.9] {
            let noise = NoiseSpec::new(1.0, 0.25, 0.5).unwrap();
            let (m, se) = mc_moment(SyntheticMode::Smoothed(theta), noise, 200_000);
            let bound = (1.0 - theta) * 1.0 + theta * 0.25;
            assert!(m <= bound + 3.0 * se, "theta {theta}: {m} > {bound}");
        }
    }

    #[test]
    fn constructor_guards() {
        assert!(SyntheticPLProblem::pl_sine(0).is_err());
        assert!(SyntheticPLProblem::shifted_quadratic(vec![], 1.0).is_err());
        assert!(SyntheticPLProblem::shifted_quadratic(vec![0.0], 0.0).is_err());
        assert!(NoiseSpec::new(-1.0, 0.0, 0.0).is_err());
        assert!(NoiseSpec::new(1.0, 0.0, 1.5).is_err());
    }
}
