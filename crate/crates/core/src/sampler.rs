//! Euler–Maruyama simulation of the projected Langevin SDE for the basis
//! coefficients,
//!
//! ```text
//! U ← U − η E ∂₂c(y, Eᵀ U) − η Λ̂⁻¹ U + √(2η) ξ,
//! ```
//!
//! where `E` is the M′×N matrix of basis functions at the training inputs.
//! Each particle owns its coefficient vector and its own random stream, so
//! particles evolve independently and results do not depend on scheduling.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, PlsError, Result};
use crate::likelihoods::Likelihood;
use crate::par;
use crate::rng::{stream, StreamDomain};
use crate::spectral::{sorted_symmetric_eigen, SpectralBasis};

/// Initial law of the coefficients.
#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    /// `U_m ~ N(0, λ̂_m)` independently.
    PriorGaussian,
    /// `U_m ~ N(0, s² λ̂_m)`: an overdispersed start for multimodal targets.
    ScaledPrior(f64),
    Zero,
    /// J×M′ matrix of starting points.
    Custom(DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdeConfig {
    pub step_size: f64,
    pub n_steps: usize,
    pub n_particles: usize,
    pub seed: u64,
    pub init: Init,
}

impl SdeConfig {
    pub fn new(step_size: f64, n_steps: usize, n_particles: usize, seed: u64) -> Self {
        SdeConfig {
            step_size,
            n_steps,
            n_particles,
            seed,
            init: Init::PriorGaussian,
        }
    }

    /// Number of steps `⌊T/η⌋` for a time horizon `T`.
    pub fn with_horizon(step_size: f64, horizon: f64, n_particles: usize, seed: u64) -> Self {
        let n_steps = (horizon / step_size + 1e-9).floor().max(0.0) as usize;
        SdeConfig::new(step_size, n_steps, n_particles, seed)
    }

    pub fn with_init(mut self, init: Init) -> Self {
        self.init = init;
        self
    }

    /// Total simulated time `I · η`.
    pub fn horizon(&self) -> f64 {
        self.n_steps as f64 * self.step_size
    }

    /// Checks the configuration against the retained eigenvalues, including
    /// the linear stability condition `η · max_m 1/λ̂_m < 2`.
    pub fn validate(&self, eigenvalues: &[f64]) -> Result<()> {
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(PlsError::input(format!("step size must be positive, got {}", self.step_size)));
        }
        if self.n_particles == 0 {
            return Err(PlsError::input("at least one particle is required"));
        }
        if let Some(min) = eigenvalues.iter().cloned().reduce(f64::min) {
            if self.step_size / min >= 2.0 {
                return Err(PlsError::input(format!(
                    "step size {} violates the stability bound 2·λ̂_min = {}",
                    self.step_size,
                    2.0 * min
                )));
            }
        }
        if let Init::Custom(m) = &self.init {
            check_dim("custom init: rows", self.n_particles, m.nrows())?;
            check_dim("custom init: columns", eigenvalues.len(), m.ncols())?;
            if m.iter().any(|v| !v.is_finite()) {
                return Err(PlsError::input("custom initial coefficients must be finite"));
            }
        }
        Ok(())
    }
}

/// One coefficient vector with its private random stream.
#[derive(Debug, Clone)]
pub struct Particle {
    coeffs: Vec<f64>,
    rng: ChaCha8Rng,
}

impl Particle {
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }
}

/// J particles in R^{M′} and the current SDE time.
#[derive(Debug, Clone)]
pub struct ParticleEnsemble {
    particles: Vec<Particle>,
    dim: usize,
    steps_taken: usize,
    time: f64,
}

impl ParticleEnsemble {
    pub fn n_particles(&self) -> usize {
        self.particles.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn steps_taken(&self) -> usize {
        self.steps_taken
    }

    pub fn particle(&self, j: usize) -> &[f64] {
        &self.particles[j].coeffs
    }

    /// Overwrites the coefficients of particle `j`, keeping its stream.
    pub fn set_particle(&mut self, j: usize, coeffs: &[f64]) -> Result<()> {
        check_dim("set_particle", self.dim, coeffs.len())?;
        self.particles[j].coeffs.copy_from_slice(coeffs);
        Ok(())
    }

    /// J×M′ matrix of coefficients, one particle per row.
    pub fn coeffs(&self) -> DMatrix<f64> {
        DMatrix::from_row_iterator(
            self.particles.len(),
            self.dim,
            self.particles.iter().flat_map(|p| p.coeffs.iter().copied()),
        )
    }

    /// CSV with header `u0,u1,…` and one particle per line.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let header: Vec<String> = (0..self.dim).map(|m| format!("u{m}")).collect();
        crate::predictor::write_matrix_csv(out, &header, &self.coeffs())
    }

    pub fn mean(&self) -> DVector<f64> {
        let mut mean = DVector::zeros(self.dim);
        for p in &self.particles {
            for (m, v) in p.coeffs.iter().enumerate() {
                mean[m] += v;
            }
        }
        mean / self.particles.len() as f64
    }

    /// Unbiased sample covariance of the particles.
    pub fn covariance(&self) -> DMatrix<f64> {
        let mean = self.mean();
        let mut cov = DMatrix::zeros(self.dim, self.dim);
        for p in &self.particles {
            let d = DVector::from_iterator(self.dim, p.coeffs.iter().zip(mean.iter()).map(|(a, b)| a - b));
            cov.ger(1.0, &d, &d, 1.0);
        }
        cov / (self.particles.len().max(2) - 1) as f64
    }
}

/// Draws the initial ensemble. Particle `j` uses stream `(seed, j)`, which it
/// keeps for all later steps.
pub fn init_ensemble(cfg: &SdeConfig, eigenvalues: &[f64]) -> Result<ParticleEnsemble> {
    if cfg.n_particles == 0 {
        return Err(PlsError::input("at least one particle is required"));
    }
    if let Init::Custom(m) = &cfg.init {
        check_dim("custom init: rows", cfg.n_particles, m.nrows())?;
        check_dim("custom init: columns", eigenvalues.len(), m.ncols())?;
    }
    if let Init::ScaledPrior(s) = cfg.init {
        if !(s.is_finite() && s > 0.0) {
            return Err(PlsError::input(format!("initial scale must be positive, got {s}")));
        }
    }
    let dim = eigenvalues.len();
    let particles = par::map_range(cfg.n_particles, |j| {
        let mut rng = stream(cfg.seed, StreamDomain::Langevin, j as u64);
        let coeffs = match &cfg.init {
            Init::PriorGaussian => eigenvalues
                .iter()
                .map(|lam| lam.sqrt() * rng.sample::<f64, _>(StandardNormal))
                .collect(),
            Init::ScaledPrior(s) => eigenvalues
                .iter()
                .map(|lam| s * lam.sqrt() * rng.sample::<f64, _>(StandardNormal))
                .collect(),
            Init::Zero => vec![0.0; dim],
            Init::Custom(m) => m.row(j).iter().copied().collect(),
        };
        Particle { coeffs, rng }
    });
    Ok(ParticleEnsemble {
        particles,
        dim,
        steps_taken: 0,
        time: 0.0,
    })
}

/// Whether a step injects Brownian increments. `Off` is a testing aid that
/// turns the update into a deterministic gradient step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Noise {
    Brownian,
    Off,
}

/// Drift of `V∞(u) = ℓ_N(Eᵀu) + ½ uᵀ Λ̂⁻¹ u`, split into its two terms.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftParts {
    /// `E ∂₂c(y, Eᵀu)`.
    pub data: DVector<f64>,
    /// `Λ̂⁻¹ u`.
    pub prior: DVector<f64>,
}

impl DriftParts {
    pub fn total(&self) -> DVector<f64> {
        &self.data + &self.prior
    }
}

/// Gaussian likelihoods give an affine gradient `A u − b`, with
/// `A = E Eᵀ/σ² + Λ̂⁻¹` and `b = E y/σ²`; precomputing them turns each step
/// into an M′×M′ product instead of two M′×N products.
#[derive(Debug, Clone)]
struct AffineDrift {
    matrix: Vec<f64>,
    offset: Vec<f64>,
}

/// Everything the coefficient SDE needs: basis at the data, eigenvalues,
/// targets and the observation model.
#[derive(Debug, Clone)]
pub struct LangevinTarget {
    /// Row-major M′×N.
    basis_rows: Vec<f64>,
    dim: usize,
    n_data: usize,
    inv_eigenvalues: Vec<f64>,
    eigenvalues: Vec<f64>,
    targets: Vec<f64>,
    likelihood: Likelihood,
    affine: Option<AffineDrift>,
}

impl LangevinTarget {
    pub fn new(basis_at_data: &DMatrix<f64>, eigenvalues: &DVector<f64>, targets: &[f64], likelihood: Likelihood) -> Result<Self> {
        likelihood.validate()?;
        let (dim, n_data) = basis_at_data.shape();
        check_dim("langevin: eigenvalues", dim, eigenvalues.len())?;
        check_dim("langevin: targets", n_data, targets.len())?;
        if eigenvalues.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(PlsError::input("eigenvalues must be positive"));
        }
        for &y in targets {
            likelihood.check_target(y)?;
        }
        let mut basis_rows = Vec::with_capacity(dim * n_data);
        for m in 0..dim {
            basis_rows.extend(basis_at_data.row(m).iter());
        }
        let inv_eigenvalues = eigenvalues.iter().map(|l| 1.0 / l).collect::<Vec<_>>();
        let affine = match likelihood {
            Likelihood::Gaussian { noise_variance } => {
                let mut a = basis_at_data * basis_at_data.transpose() / noise_variance;
                for m in 0..dim {
                    a[(m, m)] += inv_eigenvalues[m];
                }
                let b = basis_at_data * DVector::from_column_slice(targets) / noise_variance;
                Some(AffineDrift {
                    matrix: a.transpose().as_slice().to_vec(),
                    offset: b.as_slice().to_vec(),
                })
            }
            _ => None,
        };
        Ok(LangevinTarget {
            basis_rows,
            dim,
            n_data,
            inv_eigenvalues,
            eigenvalues: eigenvalues.iter().copied().collect(),
            targets: targets.to_vec(),
            likelihood,
            affine,
        })
    }

    /// Always evaluate the drift through the likelihood derivative, even for
    /// Gaussian likelihoods.
    pub fn without_affine_shortcut(mut self) -> Self {
        self.affine = None;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_data(&self) -> usize {
        self.n_data
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn likelihood(&self) -> &Likelihood {
        &self.likelihood
    }

    fn row(&self, m: usize) -> &[f64] {
        &self.basis_rows[m * self.n_data..(m + 1) * self.n_data]
    }

    /// `Eᵀu`, the latent function at the training inputs.
    pub fn predict_data(&self, u: &[f64]) -> Vec<f64> {
        let mut f = vec![0.0; self.n_data];
        self.predict_into(u, &mut f);
        f
    }

    fn predict_into(&self, u: &[f64], f: &mut [f64]) {
        f.iter_mut().for_each(|v| *v = 0.0);
        for (m, &um) in u.iter().enumerate() {
            for (fv, e) in f.iter_mut().zip(self.row(m)) {
                *fv += um * e;
            }
        }
    }

    /// Data and prior parts of the drift at `u`, always computed through the
    /// likelihood derivative.
    pub fn drift_parts(&self, u: &[f64]) -> Result<DriftParts> {
        check_dim("drift: coefficients", self.dim, u.len())?;
        let f = self.predict_data(u);
        let g = self.likelihood.batch_dcost(&self.targets, &f)?;
        let data = DVector::from_iterator(
            self.dim,
            (0..self.dim).map(|m| self.row(m).iter().zip(&g).map(|(e, gi)| e * gi).sum::<f64>()),
        );
        let prior = DVector::from_iterator(self.dim, u.iter().zip(&self.inv_eigenvalues).map(|(a, b)| a * b));
        Ok(DriftParts { data, prior })
    }

    /// `V∞(u) = Σ_n c(y_n, (Eᵀu)_n) + ½ Σ_m u_m² / λ̂_m`.
    pub fn potential(&self, u: &[f64]) -> Result<f64> {
        check_dim("potential: coefficients", self.dim, u.len())?;
        let f = self.predict_data(u);
        let data = self.likelihood.total_cost(&self.targets, &f)?;
        let prior: f64 = u.iter().zip(&self.inv_eigenvalues).map(|(a, b)| a * a * b).sum();
        Ok(data + 0.5 * prior)
    }

    /// Full drift into `out`; `scratch_f` and `scratch_g` hold N values.
    #[inline]
    fn drift_into(&self, u: &[f64], out: &mut [f64], scratch_f: &mut [f64]) {
        if let Some(aff) = &self.affine {
            for (m, o) in out.iter_mut().enumerate() {
                let row = &aff.matrix[m * self.dim..(m + 1) * self.dim];
                *o = row.iter().zip(u).map(|(a, b)| a * b).sum::<f64>() - aff.offset[m];
            }
            return;
        }
        self.predict_into(u, scratch_f);
        for (fv, &y) in scratch_f.iter_mut().zip(&self.targets) {
            *fv = self.likelihood.dcost_unchecked(y, *fv);
        }
        for (m, o) in out.iter_mut().enumerate() {
            *o = self.row(m).iter().zip(scratch_f.iter()).map(|(e, g)| e * g).sum::<f64>()
                + u[m] * self.inv_eigenvalues[m];
        }
    }

    fn advance_particle(&self, p: &mut Particle, step_size: f64, n_steps: usize, noise: Noise, first_step: usize, index: usize) -> Result<()> {
        let mut drift = vec![0.0; self.dim];
        let mut scratch = vec![0.0; self.n_data];
        let diffusion = (2.0 * step_size).sqrt();
        for i in 0..n_steps {
            self.drift_into(&p.coeffs, &mut drift, &mut scratch);
            for (u, d) in p.coeffs.iter_mut().zip(&drift) {
                *u -= step_size * d;
                if noise == Noise::Brownian {
                    let xi: f64 = p.rng.sample(StandardNormal);
                    *u += diffusion * xi;
                }
            }
            if p.coeffs.iter().any(|v| !v.is_finite()) {
                return Err(PlsError::Diverged {
                    particle: index,
                    step: first_step + i + 1,
                });
            }
        }
        Ok(())
    }

    /// Advances every particle by `n_steps` Euler–Maruyama steps.
    pub fn run_with(&self, ens: &mut ParticleEnsemble, step_size: f64, n_steps: usize, noise: Noise) -> Result<()> {
        check_dim("ensemble dimension", self.dim, ens.dim)?;
        if !(step_size.is_finite() && step_size >= 0.0) {
            return Err(PlsError::input(format!("step size must be non-negative, got {step_size}")));
        }
        let first = ens.steps_taken;
        par::try_for_each_mut(&mut ens.particles, |j, p| {
            self.advance_particle(p, step_size, n_steps, noise, first, j)
        })?;
        ens.steps_taken += n_steps;
        ens.time += n_steps as f64 * step_size;
        Ok(())
    }

    pub fn run(&self, ens: &mut ParticleEnsemble, step_size: f64, n_steps: usize) -> Result<()> {
        self.run_with(ens, step_size, n_steps, Noise::Brownian)
    }

    /// One Euler–Maruyama step for every particle.
    pub fn step(&self, ens: &mut ParticleEnsemble, step_size: f64) -> Result<()> {
        self.run_with(ens, step_size, 1, Noise::Brownian)
    }

    /// `0.5 / (1/λ̂_min + ‖E Eᵀ‖₂ · L)` with `L` a bound on the likelihood
    /// curvature; `curvature` overrides the likelihood's own bound.
    pub fn default_step_size(&self, curvature: Option<f64>) -> Result<f64> {
        let curvature = match curvature.or_else(|| self.likelihood.curvature_bound()) {
            Some(c) if c.is_finite() && c >= 0.0 => c,
            Some(c) => return Err(PlsError::input(format!("curvature bound must be non-negative, got {c}"))),
            None => {
                return Err(PlsError::input(format!(
                    "the {} likelihood has no finite curvature bound; supply a step size or a curvature bound",
                    self.likelihood.name()
                )))
            }
        };
        let inv_min = self.inv_eigenvalues.iter().cloned().fold(0.0, f64::max);
        let e = DMatrix::from_row_slice(self.dim, self.n_data, &self.basis_rows);
        let norm = if self.dim == 0 || self.n_data == 0 {
            0.0
        } else {
            sorted_symmetric_eigen(&e * e.transpose())?.0[0].max(0.0)
        };
        Ok(0.5 / (inv_min + norm * curvature))
    }
}

/// Initialise and run the coefficient SDE on data `(x, y)`.
pub fn simulate(cfg: &SdeConfig, basis: &SpectralBasis, x: &DMatrix<f64>, y: &[f64], likelihood: Likelihood) -> Result<ParticleEnsemble> {
    cfg.validate(basis.eigenvalues().as_slice())?;
    let e = basis.eval(x)?;
    let target = LangevinTarget::new(&e, basis.eigenvalues(), y, likelihood)?;
    let mut ens = init_ensemble(cfg, basis.eigenvalues().as_slice())?;
    target.run(&mut ens, cfg.step_size, cfg.n_steps)?;
    Ok(ens)
}
