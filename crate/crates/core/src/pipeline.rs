//! The full chain used by the command line and the demo: choose inducing
//! points, fit the basis, run the sampler, predict and diagnose.

use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use serde::Serialize;

use crate::data::Dataset;
use crate::diagnostics::{self, BoundReport, MetricReport, TailFit};
use crate::error::{PlsError, Result};
use crate::kernels::{AnchorSet, Kernel, KernelFamily, DEFAULT_ANCHOR_CAP};
use crate::likelihoods::Likelihood;
use crate::model_selection::{self, HyperparamFit, HyperparamGrid, HyperparamSearchConfig};
use crate::predictor::{Factorization, JointPriorCov, PredictiveDraws};
use crate::sampler::{init_ensemble, Init, LangevinTarget, ParticleEnsemble, SdeConfig};
use crate::spectral::{select_inducing, Selection, SpectralBasis};

/// Rank floor used by the pipeline. Smaller floors keep eigenpairs whose
/// reciprocal eigenvalues force tiny step sizes.
pub const PIPELINE_RANK_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub kernel: KernelFamily,
    /// `None` uses the median heuristic (or the tuned value with `tune`).
    pub lengthscale: Option<f64>,
    pub signal_variance: f64,
    pub likelihood: Likelihood,
    /// `None` uses `⌈√N⌉`.
    pub inducing: Option<usize>,
    pub selection: Selection,
    pub rank_floor: f64,
    /// `None` uses half the linear stability limit, see
    /// [`LangevinTarget::default_step_size`].
    pub step_size: Option<f64>,
    pub curvature: Option<f64>,
    pub n_steps: usize,
    pub n_particles: usize,
    /// Initial coefficients are `N(0, s² λ̂)` with this `s`.
    pub init_scale: f64,
    pub seed: u64,
    pub tune: bool,
    /// Replaces [`HyperparamGrid::around_data`] when tuning.
    pub tune_grid: Option<HyperparamGrid>,
    /// Lipschitz constant for the KL bound; `None` uses 1 (√N for Bernoulli).
    pub kappa: Option<f64>,
}

impl RunConfig {
    pub fn new(kernel: KernelFamily, likelihood: Likelihood) -> Self {
        RunConfig {
            kernel,
            lengthscale: None,
            signal_variance: 1.0,
            likelihood,
            inducing: None,
            selection: Selection::Greedy,
            rank_floor: PIPELINE_RANK_FLOOR,
            step_size: None,
            curvature: None,
            n_steps: 2000,
            n_particles: 100,
            init_scale: 1.0,
            seed: 0,
            tune: false,
            tune_grid: None,
            kappa: None,
        }
    }

    /// Checks everything that can be checked before any heavy computation.
    pub fn validate(&self) -> Result<()> {
        self.likelihood.validate()?;
        let pos = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(PlsError::input(format!("{name} must be positive and finite, got {v}")))
            }
        };
        if let Some(l) = self.lengthscale {
            pos("lengthscale", l)?;
        }
        pos("signal variance", self.signal_variance)?;
        pos("initial scale", self.init_scale)?;
        if let Some(eta) = self.step_size {
            pos("step size", eta)?;
        }
        if let Some(c) = self.curvature {
            if !(c.is_finite() && c >= 0.0) {
                return Err(PlsError::input(format!("curvature bound must be non-negative, got {c}")));
            }
        }
        if let Some(k) = self.kappa {
            pos("kappa", k)?;
        }
        if self.inducing == Some(0) {
            return Err(PlsError::input("at least one inducing point is required"));
        }
        if !(0.0..1.0).contains(&self.rank_floor) {
            return Err(PlsError::input(format!("rank floor must lie in [0, 1), got {}", self.rank_floor)));
        }
        if self.n_particles == 0 {
            return Err(PlsError::input("at least one particle is required"));
        }
        if let Some(g) = &self.tune_grid {
            g.validate()?;
        }
        if self.step_size.is_none() && self.curvature.is_none() && self.likelihood.curvature_bound().is_none() {
            return Err(PlsError::input(format!(
                "the {} likelihood needs an explicit step size or curvature bound",
                self.likelihood.name()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Timings {
    pub decompose_s: f64,
    pub simulate_s: f64,
    pub predict_s: f64,
}

/// Basis and coefficient samples for a training set.
#[derive(Debug, Clone)]
pub struct FitOutput {
    pub kernel: Kernel,
    pub noise_variance_tuned: Option<f64>,
    pub tuning: Option<HyperparamFit>,
    pub basis: SpectralBasis,
    pub ensemble: ParticleEnsemble,
    pub step_size: f64,
    pub timings: Timings,
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

/// Kernel from the configuration, the median heuristic or the grid search.
pub fn resolve_kernel(cfg: &RunConfig, train: &Dataset) -> Result<(Kernel, Option<HyperparamFit>)> {
    let d = train.dim();
    if cfg.tune {
        let grid = match &cfg.tune_grid {
            Some(g) => g.clone(),
            None => HyperparamGrid::around_data(&train.x, &train.y, cfg.seed)?,
        };
        let search = if matches!(cfg.likelihood, Likelihood::BernoulliLogistic) {
            HyperparamSearchConfig::classification(cfg.kernel, grid, cfg.seed)
        } else {
            HyperparamSearchConfig::regression(cfg.kernel, grid, cfg.seed)
        };
        let fit = model_selection::fit_hyperparams(&train.x, &train.y, &search)?;
        return Ok((fit.kernel.clone(), Some(fit)));
    }
    let lengthscales = match cfg.lengthscale {
        Some(l) => vec![l; d],
        None if train.len() >= 2 => model_selection::median_heuristic(&train.x, cfg.seed)?,
        None => vec![1.0; d],
    };
    Ok((Kernel::new(cfg.kernel, lengthscales, cfg.signal_variance)?, None))
}

/// Selection, basis fit and simulation.
pub fn fit(cfg: &RunConfig, train: &Dataset) -> Result<FitOutput> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(PlsError::input("training set is empty"));
    }
    let start = Instant::now();
    let (kernel, tuning) = resolve_kernel(cfg, train)?;
    let likelihood = match (&tuning, cfg.likelihood) {
        (Some(t), Likelihood::Gaussian { .. }) => Likelihood::gaussian(t.noise_variance)?,
        (_, lik) => lik,
    };
    let m = cfg.inducing.unwrap_or_else(|| (train.len() as f64).sqrt().ceil() as usize).min(train.len());
    let z = select_inducing(cfg.selection, &kernel, &train.x, m, cfg.seed)?;
    let basis = SpectralBasis::fit(&kernel, &z, cfg.rank_floor)?;
    let e = basis.eval(&train.x)?;
    let target = LangevinTarget::new(&e, basis.eigenvalues(), &train.y, likelihood)?;
    let step_size = match cfg.step_size {
        Some(eta) => eta,
        None => target.default_step_size(cfg.curvature)?,
    };
    let decompose_s = secs(start.elapsed());
    // The slowest prior coordinate relaxes on a time scale of λ̂_max.
    let horizon = step_size * cfg.n_steps as f64;
    let slowest = basis.eigenvalues().max();
    if cfg.n_steps > 0 && horizon < slowest {
        log::warn!(
            "horizon {horizon:.3e} is shorter than the slowest relaxation time {slowest:.3e}; \
             raise the number of steps or the rank floor"
        );
    }

    let start = Instant::now();
    let init = if cfg.init_scale == 1.0 { Init::PriorGaussian } else { Init::ScaledPrior(cfg.init_scale) };
    let sde = SdeConfig::new(step_size, cfg.n_steps, cfg.n_particles, cfg.seed).with_init(init);
    sde.validate(basis.eigenvalues().as_slice())?;
    let mut ensemble = init_ensemble(&sde, basis.eigenvalues().as_slice())?;
    target.run(&mut ensemble, step_size, cfg.n_steps)?;
    let simulate_s = secs(start.elapsed());

    Ok(FitOutput {
        kernel,
        noise_variance_tuned: tuning.as_ref().map(|t| t.noise_variance),
        tuning,
        basis,
        ensemble,
        step_size,
        timings: Timings {
            decompose_s,
            simulate_s,
            predict_s: 0.0,
        },
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticsDoc {
    pub schema_version: u32,
    pub rank: usize,
    pub num_inducing: usize,
    pub dropped_eigenpairs: usize,
    pub duplicates_removed: usize,
    pub eigenvalues: Vec<f64>,
    pub step_size: f64,
    /// `η · max 1/λ̂`; the linear stability limit is 2.
    pub stability_ratio: f64,
    pub horizon: f64,
    pub kl_bound: BoundReport,
    pub tail_fit: Option<TailFit>,
    pub factorization: Option<Factorization>,
    /// Max-norm gap between the ensemble mean and the Gaussian closed form
    /// (Gaussian likelihood only).
    pub gaussian_mean_gap: Option<f64>,
    pub timings: Timings,
}

pub const DIAGNOSTICS_SCHEMA_VERSION: u32 = 1;

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub fit: FitOutput,
    pub likelihood: Likelihood,
    pub draws: Option<PredictiveDraws>,
    pub metrics: Option<MetricReport>,
    pub diagnostics: DiagnosticsDoc,
}

/// Fit on `train`, predict at `test` (if non-empty) and diagnose.
pub fn run(cfg: &RunConfig, train: &Dataset, test: &Dataset) -> Result<RunOutput> {
    let mut fit_out = fit(cfg, train)?;
    let likelihood = match (fit_out.noise_variance_tuned, cfg.likelihood) {
        (Some(nv), Likelihood::Gaussian { .. }) => Likelihood::gaussian(nv)?,
        (_, lik) => lik,
    };
    let (draws, factorization, metrics) = if test.is_empty() {
        (None, None, None)
    } else {
        let start = Instant::now();
        let joint = JointPriorCov::build(&fit_out.basis, &test.x)?;
        let draws = joint.sample(&fit_out.ensemble, cfg.seed)?;
        fit_out.timings.predict_s = secs(start.elapsed());
        let metrics = if draws.n_draws() >= 2 {
            Some(diagnostics::metrics(&draws, &test.y, &likelihood, cfg.seed)?)
        } else {
            log::warn!("metrics need at least two particles; skipping");
            None
        };
        (Some(draws), Some(joint.factorization()), metrics)
    };
    let diagnostics = diagnose(cfg, &fit_out, train, &likelihood, factorization)?;
    Ok(RunOutput {
        fit: fit_out,
        likelihood,
        draws,
        metrics,
        diagnostics,
    })
}

fn diagnose(
    cfg: &RunConfig,
    fit_out: &FitOutput,
    train: &Dataset,
    likelihood: &Likelihood,
    factorization: Option<Factorization>,
) -> Result<DiagnosticsDoc> {
    let basis = &fit_out.basis;
    let anchors = AnchorSet::from_training(&train.x, DEFAULT_ANCHOR_CAP, cfg.seed)?;
    let kappa = match (cfg.kappa, likelihood) {
        (Some(k), _) => k,
        (None, Likelihood::BernoulliLogistic) => diagnostics::bernoulli_kappa(train.len()),
        (None, _) => {
            log::warn!("no Lipschitz constant given for the KL bound; using kappa = 1");
            1.0
        }
    };
    let kl_bound = diagnostics::kl_bound(basis, &train.x, &anchors, kappa)?;
    let eigenvalues: Vec<f64> = basis.eigenvalues().iter().copied().collect();
    let tail_fit = if eigenvalues.len() >= diagnostics::MIN_TAIL_LEN {
        Some(diagnostics::tail_decay_fit(&eigenvalues)?)
    } else {
        None
    };
    let gaussian_mean_gap = match likelihood {
        Likelihood::Gaussian { noise_variance } => {
            let oracle = diagnostics::gaussian_oracle(basis, &train.x, &train.y, *noise_variance)?;
            Some((fit_out.ensemble.mean() - oracle.mean).amax())
        }
        _ => None,
    };
    let inv_min = eigenvalues.iter().map(|l| 1.0 / l).fold(0.0, f64::max);
    Ok(DiagnosticsDoc {
        schema_version: DIAGNOSTICS_SCHEMA_VERSION,
        rank: basis.rank(),
        num_inducing: basis.num_inducing(),
        dropped_eigenpairs: basis.dropped(),
        duplicates_removed: basis.duplicates_removed(),
        eigenvalues,
        step_size: fit_out.step_size,
        stability_ratio: fit_out.step_size * inv_min,
        horizon: fit_out.step_size * cfg.n_steps as f64,
        kl_bound,
        tail_fit,
        factorization,
        gaussian_mean_gap,
        timings: fit_out.timings,
    })
}

/// Which quantity a scaling sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Particles,
    Inducing,
    Data,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalingRow {
    pub axis: SweepAxis,
    pub value: usize,
    pub decompose_s: f64,
    pub simulate_s: f64,
    pub predict_s: f64,
}

/// Wall-clock per phase for each value of the sweep. `Data` sweeps use the
/// first `value` rows of `train`. Each configuration is timed `repeats`
/// times and the fastest run is kept.
pub fn scaling_report(
    cfg: &RunConfig,
    train: &Dataset,
    test: &Dataset,
    axis: SweepAxis,
    values: &[usize],
    repeats: usize,
) -> Result<Vec<ScalingRow>> {
    cfg.validate()?;
    if values.is_empty() {
        return Err(PlsError::input("sweep has no values"));
    }
    let mut rows = Vec::with_capacity(values.len());
    for &v in values {
        let mut c = cfg.clone();
        let mut tr = train.clone();
        match axis {
            SweepAxis::Particles => c.n_particles = v,
            SweepAxis::Inducing => c.inducing = Some(v),
            SweepAxis::Data => {
                if v == 0 || v > train.len() {
                    return Err(PlsError::input(format!("data sweep value {v} outside 1..={}", train.len())));
                }
                tr = train.select(&(0..v).collect::<Vec<_>>());
            }
        }
        let mut best: Option<Timings> = None;
        for _ in 0..repeats.max(1) {
            let out = run(&c, &tr, test)?;
            let t = out.fit.timings;
            best = Some(match best {
                None => t,
                Some(b) => Timings {
                    decompose_s: b.decompose_s.min(t.decompose_s),
                    simulate_s: b.simulate_s.min(t.simulate_s),
                    predict_s: b.predict_s.min(t.predict_s),
                },
            });
        }
        let t = best.expect("at least one repeat");
        rows.push(ScalingRow {
            axis,
            value: v,
            decompose_s: t.decompose_s,
            simulate_s: t.simulate_s,
            predict_s: t.predict_s,
        });
    }
    Ok(rows)
}

/// Initial coefficients for `--steps 0` style runs and the demo.
pub fn prior_ensemble(basis: &SpectralBasis, n_particles: usize, seed: u64) -> Result<ParticleEnsemble> {
    let cfg = SdeConfig::new(1.0, 0, n_particles, seed).with_init(Init::PriorGaussian);
    init_ensemble(&cfg, basis.eigenvalues().as_slice())
}

/// Test inputs on an even 1-D grid, for plotting.
pub fn grid_1d(lo: f64, hi: f64, n: usize) -> DMatrix<f64> {
    if n == 1 {
        return DMatrix::from_element(1, 1, 0.5 * (lo + hi));
    }
    DMatrix::from_fn(n, 1, |i, _| lo + (hi - lo) * i as f64 / (n - 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, SyntheticKind};

    fn sine() -> (Dataset, Dataset) {
        gen_synthetic(SyntheticKind::SineRegression, 120, 1).unwrap().data.split(0.2, 1).unwrap()
    }

    #[test]
    fn sine_run_is_finite_and_deterministic() {
        let (train, test) = sine();
        let mut cfg = RunConfig::new(KernelFamily::SquaredExponential, SyntheticKind::SineRegression.likelihood());
        cfg.lengthscale = Some(0.5);
        cfg.n_steps = 300;
        cfg.n_particles = 20;
        let a = run(&cfg, &train, &test).unwrap();
        let m = a.metrics.as_ref().unwrap();
        assert!(m.nll.is_finite() && m.mae.is_finite());
        assert!(a.diagnostics.stability_ratio < 2.0);
        let b = run(&cfg, &train, &test).unwrap();
        assert_eq!(a.fit.ensemble.coeffs(), b.fit.ensemble.coeffs());
        assert_eq!(a.draws, b.draws);
    }

    #[test]
    fn zero_steps_keep_the_initial_law() {
        let (train, test) = sine();
        let mut cfg = RunConfig::new(KernelFamily::Matern32, SyntheticKind::SineRegression.likelihood());
        cfg.n_steps = 0;
        cfg.n_particles = 5;
        let out = run(&cfg, &train, &test).unwrap();
        let prior = prior_ensemble(&out.fit.basis, 5, cfg.seed).unwrap();
        assert_eq!(out.fit.ensemble.coeffs(), prior.coeffs());
    }

    #[test]
    fn validation_catches_bad_settings() {
        let mut cfg = RunConfig::new(KernelFamily::SquaredExponential, Likelihood::PoissonSquared);
        assert!(cfg.validate().is_err());
        cfg.step_size = Some(1e-3);
        assert!(cfg.validate().is_ok());
        cfg.likelihood = Likelihood::StudentT { dof: -1.0, scale: 1.0 };
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::new(KernelFamily::SquaredExponential, Likelihood::BernoulliLogistic);
        cfg.rank_floor = 1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn one_value_sweep_gives_one_row() {
        let (train, test) = sine();
        let mut cfg = RunConfig::new(KernelFamily::SquaredExponential, SyntheticKind::SineRegression.likelihood());
        cfg.n_steps = 10;
        cfg.n_particles = 3;
        let rows = scaling_report(&cfg, &train, &test, SweepAxis::Inducing, &[8], 1).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].value, 8);
    }

    #[test]
    fn tuning_replaces_gaussian_noise() {
        let (train, test) = sine();
        let mut cfg = RunConfig::new(KernelFamily::SquaredExponential, Likelihood::gaussian(5.0).unwrap());
        cfg.tune = true;
        cfg.n_steps = 10;
        cfg.n_particles = 3;
        let out = run(&cfg, &train, &test).unwrap();
        let tuned = out.fit.noise_variance_tuned.unwrap();
        assert_eq!(out.likelihood, Likelihood::gaussian(tuned).unwrap());
        assert!(out.fit.tuning.is_some());
    }
}
