//! Observation models written as costs `c(y, ŷ) = -log p(y | ŷ) + const`
//! together with their derivative in the second argument.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_factorial;
use statrs::function::gamma::ln_gamma;

use crate::error::{check_dim, PlsError, Result};

/// Values of `|ŷ|` below this are replaced by `sign(ŷ) · δ` in the Poisson cost.
pub const POISSON_CLAMP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Likelihood {
    Gaussian { noise_variance: f64 },
    BernoulliLogistic,
    /// `y ~ Poisson(f²)`.
    PoissonSquared,
    StudentT { dof: f64, scale: f64 },
    /// `y ~ α N(f + s, σ²) + (1 − α) N(f, σ²)`.
    ShiftMixture { shift: f64, mix: f64, noise_variance: f64 },
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(PlsError::input(format!("{name} must be positive and finite, got {v}")))
    }
}

#[inline]
fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(t))` without overflow.
#[inline]
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

#[inline]
fn clamp_poisson(f: f64) -> f64 {
    if f.abs() >= POISSON_CLAMP {
        f
    } else if f < 0.0 {
        -POISSON_CLAMP
    } else {
        POISSON_CLAMP
    }
}

impl Likelihood {
    pub fn gaussian(noise_variance: f64) -> Result<Self> {
        Ok(Likelihood::Gaussian {
            noise_variance: positive("noise variance", noise_variance)?,
        })
    }

    pub fn student_t(dof: f64, scale: f64) -> Result<Self> {
        Ok(Likelihood::StudentT {
            dof: positive("degrees of freedom", dof)?,
            scale: positive("scale", scale)?,
        })
    }

    pub fn shift_mixture(shift: f64, mix: f64, noise_variance: f64) -> Result<Self> {
        if !shift.is_finite() {
            return Err(PlsError::input("shift must be finite"));
        }
        if !(mix > 0.0 && mix < 1.0) {
            return Err(PlsError::input(format!("mixing weight must lie strictly inside (0, 1), got {mix}")));
        }
        Ok(Likelihood::ShiftMixture {
            shift,
            mix,
            noise_variance: positive("noise variance", noise_variance)?,
        })
    }

    /// Re-checks parameters of a value built directly from the enum.
    pub fn validate(&self) -> Result<()> {
        match *self {
            Likelihood::Gaussian { noise_variance } => Likelihood::gaussian(noise_variance).map(drop),
            Likelihood::StudentT { dof, scale } => Likelihood::student_t(dof, scale).map(drop),
            Likelihood::ShiftMixture { shift, mix, noise_variance } => {
                Likelihood::shift_mixture(shift, mix, noise_variance).map(drop)
            }
            Likelihood::BernoulliLogistic | Likelihood::PoissonSquared => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Likelihood::Gaussian { .. } => "gaussian",
            Likelihood::BernoulliLogistic => "bernoulli",
            Likelihood::PoissonSquared => "poisson",
            Likelihood::StudentT { .. } => "student_t",
            Likelihood::ShiftMixture { .. } => "shift",
        }
    }

    /// Checks that `y` lies in the support of the observation model.
    pub fn check_target(&self, y: f64) -> Result<()> {
        let ok = match self {
            Likelihood::BernoulliLogistic => y == 0.0 || y == 1.0,
            Likelihood::PoissonSquared => y >= 0.0 && y.fract() == 0.0 && y.is_finite(),
            _ => y.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(PlsError::input(format!(
                "target {y} is outside the support of the {} likelihood",
                self.name()
            )))
        }
    }

    fn check(&self, y: f64, f: f64) -> Result<()> {
        self.check_target(y)?;
        if f.is_finite() {
            Ok(())
        } else {
            Err(PlsError::input(format!("prediction must be finite, got {f}")))
        }
    }

    pub fn cost(&self, y: f64, f: f64) -> Result<f64> {
        self.check(y, f)?;
        Ok(self.cost_unchecked(y, f))
    }

    pub fn dcost(&self, y: f64, f: f64) -> Result<f64> {
        self.check(y, f)?;
        Ok(self.dcost_unchecked(y, f))
    }

    pub(crate) fn cost_unchecked(&self, y: f64, f: f64) -> f64 {
        match *self {
            Likelihood::Gaussian { noise_variance } => 0.5 * (y - f).powi(2) / noise_variance,
            Likelihood::BernoulliLogistic => {
                if y == 1.0 {
                    softplus(-f)
                } else {
                    softplus(f)
                }
            }
            Likelihood::PoissonSquared => {
                let f = clamp_poisson(f);
                -2.0 * y * f.abs().ln() + f * f
            }
            Likelihood::StudentT { dof, scale } => {
                0.5 * (dof + 1.0) * ((y - f).powi(2) / (dof * scale * scale)).ln_1p()
            }
            Likelihood::ShiftMixture { shift, mix, noise_variance } => {
                let (a, b) = mixture_exponents(y, f, shift, noise_variance);
                let top = a.max(b);
                let s = mix * (a - top).exp() + (1.0 - mix) * (b - top).exp();
                -(top + s.ln())
            }
        }
    }

    #[inline]
    pub(crate) fn dcost_unchecked(&self, y: f64, f: f64) -> f64 {
        match *self {
            Likelihood::Gaussian { noise_variance } => (f - y) / noise_variance,
            Likelihood::BernoulliLogistic => logistic(f) - y,
            Likelihood::PoissonSquared => {
                let f = clamp_poisson(f);
                -2.0 * y / f + 2.0 * f
            }
            Likelihood::StudentT { dof, scale } => {
                (dof + 1.0) * (f - y) / (dof * scale * scale + (y - f).powi(2))
            }
            Likelihood::ShiftMixture { shift, mix, noise_variance } => {
                let (a, b) = mixture_exponents(y, f, shift, noise_variance);
                let top = a.max(b);
                let wa = mix * (a - top).exp();
                let wb = (1.0 - mix) * (b - top).exp();
                -((y - f - shift) * wa + (y - f) * wb) / (noise_variance * (wa + wb))
            }
        }
    }

    /// Elementwise [`Likelihood::dcost`]; the error names the first bad index.
    pub fn batch_dcost(&self, y: &[f64], f: &[f64]) -> Result<Vec<f64>> {
        check_dim("batch_dcost", y.len(), f.len())?;
        y.iter()
            .zip(f)
            .enumerate()
            .map(|(i, (&yi, &fi))| {
                self.dcost(yi, fi).map_err(|e| match e {
                    PlsError::Input(msg) => PlsError::Input(format!("index {i}: {msg}")),
                    other => other,
                })
            })
            .collect()
    }

    /// `ℓ(f) = Σ_n c(y_n, f_n)`.
    pub fn total_cost(&self, y: &[f64], f: &[f64]) -> Result<f64> {
        check_dim("total_cost", y.len(), f.len())?;
        let mut sum = 0.0;
        for (&yi, &fi) in y.iter().zip(f) {
            sum += self.cost(yi, fi)?;
        }
        Ok(sum)
    }

    /// Fully normalised `log p(y | f)`, used for held-out likelihoods.
    pub fn log_density(&self, y: f64, f: f64) -> Result<f64> {
        self.check(y, f)?;
        Ok(match *self {
            Likelihood::Gaussian { noise_variance } => {
                -0.5 * (2.0 * PI * noise_variance).ln() - self.cost_unchecked(y, f)
            }
            Likelihood::BernoulliLogistic => -self.cost_unchecked(y, f),
            Likelihood::PoissonSquared => {
                let rate = f * f;
                if rate == 0.0 {
                    if y == 0.0 {
                        0.0
                    } else {
                        f64::NEG_INFINITY
                    }
                } else {
                    y * rate.ln() - rate - ln_factorial(y as u64)
                }
            }
            Likelihood::StudentT { dof, scale } => {
                ln_gamma(0.5 * (dof + 1.0)) - ln_gamma(0.5 * dof) - 0.5 * (dof * PI * scale * scale).ln()
                    - self.cost_unchecked(y, f)
            }
            Likelihood::ShiftMixture { noise_variance, .. } => {
                -0.5 * (2.0 * PI * noise_variance).ln() - self.cost_unchecked(y, f)
            }
        })
    }

    /// Upper bound on `∂²c/∂ŷ²`, used for the default step size. `None` when
    /// no finite bound exists (Poisson near `ŷ = 0`).
    pub fn curvature_bound(&self) -> Option<f64> {
        match *self {
            Likelihood::Gaussian { noise_variance } => Some(1.0 / noise_variance),
            Likelihood::BernoulliLogistic => Some(0.25),
            Likelihood::PoissonSquared => None,
            Likelihood::StudentT { dof, scale } => Some((dof + 1.0) / (dof * scale * scale)),
            // A same-variance Gaussian mixture is never more curved than one component.
            Likelihood::ShiftMixture { noise_variance, .. } => Some(1.0 / noise_variance),
        }
    }

    /// Whether predictive intervals are formed on `y` (with added noise)
    /// rather than on the latent function.
    pub fn has_additive_noise(&self) -> bool {
        matches!(self, Likelihood::Gaussian { .. } | Likelihood::StudentT { .. })
    }

    /// Draws `f + noise` for additive-noise models and returns `f` otherwise.
    pub fn add_noise<R: Rng + ?Sized>(&self, f: f64, rng: &mut R) -> f64 {
        match *self {
            Likelihood::Gaussian { noise_variance } => {
                let z: f64 = rng.sample(StandardNormal);
                f + noise_variance.sqrt() * z
            }
            Likelihood::StudentT { dof, scale } => {
                let t = StudentT::new(dof).expect("validated dof").sample(rng);
                f + scale * t
            }
            _ => f,
        }
    }

    /// `E[y | f]`, the point prediction used for absolute errors.
    pub fn mean_response(&self, f: f64) -> f64 {
        match *self {
            Likelihood::Gaussian { .. } | Likelihood::StudentT { .. } => f,
            Likelihood::BernoulliLogistic => logistic(f),
            Likelihood::PoissonSquared => f * f,
            Likelihood::ShiftMixture { shift, mix, .. } => f + mix * shift,
        }
    }
}

#[inline]
fn mixture_exponents(y: f64, f: f64, shift: f64, noise_variance: f64) -> (f64, f64) {
    let a = -(y - f - shift).powi(2) / (2.0 * noise_variance);
    let b = -(y - f).powi(2) / (2.0 * noise_variance);
    (a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use crate::rng::{stream, StreamDomain};
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest};
    use rand::Rng;

    fn all_variants() -> Vec<Likelihood> {
        vec![
            Likelihood::gaussian(0.7).unwrap(),
            Likelihood::BernoulliLogistic,
            Likelihood::PoissonSquared,
            Likelihood::student_t(4.0, 0.8).unwrap(),
            Likelihood::shift_mixture(3.0, 0.3, 0.9).unwrap(),
        ]
    }

    #[test]
    fn scalar_examples() {
        let g = Likelihood::gaussian(1.0).unwrap();
        assert_eq!(g.cost(1.0, 0.0).unwrap(), 0.5);
        assert_eq!(g.dcost(1.0, 0.0).unwrap(), -1.0);
        let b = Likelihood::BernoulliLogistic;
        assert_relative_eq!(b.cost(1.0, 0.0).unwrap(), 2f64.ln(), epsilon = 1e-15);
        assert_eq!(b.dcost(1.0, 0.0).unwrap(), -0.5);
        let p = Likelihood::PoissonSquared;
        assert_eq!(p.cost(2.0, 1.0).unwrap(), 1.0);
        assert_eq!(p.dcost(2.0, 1.0).unwrap(), -2.0);
    }

    #[test]
    fn support_errors() {
        assert!(Likelihood::BernoulliLogistic.cost(0.5, 0.0).is_err());
        assert!(Likelihood::PoissonSquared.cost(-1.0, 1.0).is_err());
        assert!(Likelihood::PoissonSquared.cost(1.5, 1.0).is_err());
        assert!(Likelihood::gaussian(1.0).unwrap().cost(0.0, f64::NAN).is_err());
        assert!(Likelihood::gaussian(0.0).is_err());
        assert!(Likelihood::shift_mixture(1.0, 1.0, 1.0).is_err());
        assert!(Likelihood::student_t(-1.0, 1.0).is_err());
        let err = Likelihood::BernoulliLogistic
            .batch_dcost(&[0.0, 1.0, 2.0], &[0.0; 3])
            .unwrap_err();
        assert!(err.to_string().contains("index 2"), "{err}");
    }

    #[test]
    fn batch_examples() {
        let g = Likelihood::gaussian(0.3).unwrap();
        assert!(g.batch_dcost(&[], &[]).unwrap().is_empty());
        assert!(g.batch_dcost(&[1.0, -2.0], &[1.0, -2.0]).unwrap().iter().all(|&v| v == 0.0));
        let mut rng = stream(1, StreamDomain::Synthetic, 0);
        let y: Vec<f64> = (0..20).map(|_| rng.random_range(-2.0..2.0)).collect();
        let f: Vec<f64> = (0..20).map(|_| rng.random_range(-2.0..2.0)).collect();
        for lik in [g, Likelihood::student_t(3.0, 1.0).unwrap()] {
            let batch = lik.batch_dcost(&y, &f).unwrap();
            for i in 0..20 {
                assert_eq!(batch[i], lik.dcost(y[i], f[i]).unwrap());
            }
        }
        assert!(g.batch_dcost(&[1.0], &[]).is_err());
    }

    fn random_pair<R: Rng>(lik: &Likelihood, rng: &mut R) -> (f64, f64) {
        let y = match lik {
            Likelihood::BernoulliLogistic => f64::from(rng.random_range(0..2u8)),
            Likelihood::PoissonSquared => f64::from(rng.random_range(0..6u8)),
            _ => rng.random_range(-4.0..4.0),
        };
        let mut f: f64 = rng.random_range(-3.0..3.0);
        while f.abs() <= 0.1 {
            f = rng.random_range(-3.0..3.0);
        }
        (y, f)
    }

    #[test]
    fn derivatives_match_central_differences() {
        let h = 1e-5;
        let mut rng = stream(2, StreamDomain::Synthetic, 0);
        for lik in all_variants() {
            for _ in 0..100 {
                let (y, f) = random_pair(&lik, &mut rng);
                let d = lik.dcost(y, f).unwrap();
                let fd = (lik.cost(y, f + h).unwrap() - lik.cost(y, f - h).unwrap()) / (2.0 * h);
                assert!((d - fd).abs() <= 1e-5 * (1.0 + d.abs()), "{lik:?} y={y} f={f} d={d} fd={fd}");
            }
        }
    }

    #[test]
    fn convex_costs_have_nonnegative_second_differences() {
        let h = 1e-3;
        for lik in [Likelihood::gaussian(0.5).unwrap(), Likelihood::BernoulliLogistic] {
            for y in [0.0, 1.0] {
                for i in -300..300 {
                    let f = i as f64 * 0.02;
                    let second = lik.cost(y, f + h).unwrap() - 2.0 * lik.cost(y, f).unwrap() + lik.cost(y, f - h).unwrap();
                    assert!(second >= -1e-12, "{lik:?} at {f}: {second}");
                }
            }
        }
    }

    #[test]
    fn poisson_is_sign_symmetric_and_clamped() {
        let p = Likelihood::PoissonSquared;
        for y in 0..5 {
            for f in [1e-5, 0.3, 1.0, 2.7] {
                let y = y as f64;
                assert_eq!(p.cost(y, f).unwrap(), p.cost(y, -f).unwrap());
                assert_eq!(p.dcost(y, f).unwrap(), -p.dcost(y, -f).unwrap());
            }
        }
        assert!(p.dcost(3.0, 0.0).unwrap().is_finite());
        assert_eq!(p.cost(3.0, 0.0).unwrap(), p.cost(3.0, POISSON_CLAMP).unwrap());
    }

    #[test]
    fn shift_mixture_reduces_to_gaussian() {
        let g = Likelihood::gaussian(0.8).unwrap();
        let s = Likelihood::shift_mixture(20.0, 1e-12, 0.8).unwrap();
        let mut rng = stream(3, StreamDomain::Synthetic, 0);
        for _ in 0..200 {
            let y: f64 = rng.random_range(-3.0..3.0);
            let f: f64 = rng.random_range(-3.0..3.0);
            assert!((s.cost(y, f).unwrap() - g.cost(y, f).unwrap()).abs() <= 1e-8);
        }
        // The max trick keeps far-away observations finite.
        let far = Likelihood::shift_mixture(20.0, 0.5, 1.0).unwrap();
        assert!(far.cost(1e3, 0.0).unwrap().is_finite());
        assert!(far.dcost(1e3, 0.0).unwrap().is_finite());
    }

    #[test]
    fn densities_are_normalised() {
        // Sum / integrate p(y | f) over y.
        let f = 0.7;
        let p = Likelihood::PoissonSquared;
        let total: f64 = (0..60).map(|y| p.log_density(y as f64, f).unwrap().exp()).sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-12);
        let b = Likelihood::BernoulliLogistic;
        let total = b.log_density(0.0, f).unwrap().exp() + b.log_density(1.0, f).unwrap().exp();
        assert_relative_eq!(total, 1.0, epsilon = 1e-14);
        for lik in [
            Likelihood::gaussian(0.6).unwrap(),
            Likelihood::student_t(3.0, 0.7).unwrap(),
            Likelihood::shift_mixture(4.0, 0.35, 0.5).unwrap(),
        ] {
            let h = 1e-3;
            let total: f64 = (-200_000..200_000)
                .map(|i| lik.log_density(i as f64 * h, f).unwrap().exp() * h)
                .sum();
            assert!((total - 1.0).abs() < 2e-3, "{lik:?}: {total}");
        }
        let g = Likelihood::gaussian(1.0).unwrap();
        assert_relative_eq!(g.log_density(0.3, 0.3).unwrap(), -0.5 * (2.0 * PI).ln(), epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn poisson_symmetry_holds_everywhere(y in 0u32..40, f in 1e-6f64..50.0) {
            let p = Likelihood::PoissonSquared;
            let y = f64::from(y);
            prop_assert_eq!(p.cost(y, f).unwrap(), p.cost(y, -f).unwrap());
            prop_assert_eq!(p.dcost(y, f).unwrap(), -p.dcost(y, -f).unwrap());
        }

        #[test]
        fn derivative_tracks_difference_quotient(
            noise in 0.05f64..5.0,
            dof in 1.0f64..30.0,
            shift in 0.5f64..30.0,
            mix in 0.01f64..0.99,
            y in -5.0f64..5.0,
            f in 0.1f64..4.0,
            neg in any::<bool>(),
        ) {
            let f = if neg { -f } else { f };
            let h = 1e-5;
            for lik in [
                Likelihood::gaussian(noise).unwrap(),
                Likelihood::student_t(dof, noise.sqrt()).unwrap(),
                Likelihood::shift_mixture(shift, mix, noise).unwrap(),
            ] {
                let d = lik.dcost(y, f).unwrap();
                let fd = (lik.cost(y, f + h).unwrap() - lik.cost(y, f - h).unwrap()) / (2.0 * h);
                prop_assert!((d - fd).abs() <= 1e-5 * (1.0 + d.abs()), "{:?}: {} vs {}", lik, d, fd);
            }
        }
    }
}
