//! Browser bindings for the demo page in `www/`. Everything runs on the main
//! thread; the sizes exposed by the page keep each call well under a second.

use wasm_bindgen::prelude::*;

use pls::data::{gen_synthetic, SyntheticKind, X_RANGE};
use pls::diagnostics::kl_bound;
use pls::pipeline::grid_1d;
use pls::sampler::{init_ensemble, Init, SdeConfig};
use pls::spectral::select_inducing_greedy;
use pls::{AnchorSet, Kernel, KernelFamily, LangevinTarget, PlsError, SpectralBasis};

/// Poisson has no global curvature bound; this one is only used to pick a
/// default step size in the demo.
const POISSON_DEMO_CURVATURE: f64 = 10.0;

fn js(e: PlsError) -> JsError {
    JsError::new(&e.to_string())
}

fn family(name: &str) -> Result<KernelFamily, JsError> {
    match name {
        "se" => Ok(KernelFamily::SquaredExponential),
        "matern12" => Ok(KernelFamily::Matern12),
        "matern32" => Ok(KernelFamily::Matern32),
        "matern52" => Ok(KernelFamily::Matern52),
        other => Err(JsError::new(&format!("unknown kernel '{other}'"))),
    }
}

/// Settings for [`posterior_draws`]. Field defaults suit the sine dataset.
#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct DrawSettings {
    dataset: String,
    pub n: usize,
    pub seed: u32,
    pub lengthscale: f64,
    pub signal_variance: f64,
    pub inducing: usize,
    pub rank_floor: f64,
    /// Zero or negative picks half the linear stability limit.
    pub step_size: f64,
    pub steps: usize,
    pub particles: usize,
    pub init_scale: f64,
    pub grid_points: usize,
}

#[wasm_bindgen]
impl DrawSettings {
    #[wasm_bindgen(constructor)]
    pub fn new() -> DrawSettings {
        DrawSettings {
            dataset: SyntheticKind::SineRegression.name().into(),
            n: 100,
            seed: 0,
            lengthscale: 0.5,
            signal_variance: 4.0,
            inducing: 20,
            rank_floor: 1e-3,
            step_size: 0.0,
            steps: 3000,
            particles: 40,
            init_scale: 1.0,
            grid_points: 120,
        }
    }

    #[wasm_bindgen(getter)]
    pub fn dataset(&self) -> String {
        self.dataset.clone()
    }

    #[wasm_bindgen(setter)]
    pub fn set_dataset(&mut self, name: String) {
        self.dataset = name;
    }
}

impl Default for DrawSettings {
    fn default() -> Self {
        DrawSettings::new()
    }
}

/// Training data, grid, ground truth and J draws of the posterior on the
/// grid (row-major, one draw per row).
#[wasm_bindgen]
pub struct PosteriorDraws {
    train_x: Vec<f64>,
    train_y: Vec<f64>,
    grid: Vec<f64>,
    truth: Vec<f64>,
    draws: Vec<f64>,
    n_draws: usize,
    step_size: f64,
    horizon: f64,
    rank: usize,
}

#[wasm_bindgen]
impl PosteriorDraws {
    pub fn train_x(&self) -> Vec<f64> {
        self.train_x.clone()
    }
    pub fn train_y(&self) -> Vec<f64> {
        self.train_y.clone()
    }
    pub fn grid(&self) -> Vec<f64> {
        self.grid.clone()
    }
    pub fn truth(&self) -> Vec<f64> {
        self.truth.clone()
    }
    pub fn draws(&self) -> Vec<f64> {
        self.draws.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn n_draws(&self) -> usize {
        self.n_draws
    }
    #[wasm_bindgen(getter)]
    pub fn step_size(&self) -> f64 {
        self.step_size
    }
    #[wasm_bindgen(getter)]
    pub fn horizon(&self) -> f64 {
        self.horizon
    }
    #[wasm_bindgen(getter)]
    pub fn rank(&self) -> usize {
        self.rank
    }
}

/// Generates a synthetic dataset, runs the sampler and pushes every particle
/// to an even grid over the input range.
#[wasm_bindgen]
pub fn posterior_draws(s: &DrawSettings) -> Result<PosteriorDraws, JsError> {
    let kind: SyntheticKind = s.dataset.parse().map_err(js)?;
    let data = gen_synthetic(kind, s.n, u64::from(s.seed)).map_err(js)?.data;
    let kernel = Kernel::isotropic(KernelFamily::SquaredExponential, 1, s.lengthscale, s.signal_variance).map_err(js)?;
    let z = select_inducing_greedy(&kernel, &data.x, s.inducing.min(data.len())).map_err(js)?;
    let basis = SpectralBasis::fit(&kernel, &z, s.rank_floor).map_err(js)?;
    let e = basis.eval(&data.x).map_err(js)?;
    let likelihood = kind.likelihood();
    let target = LangevinTarget::new(&e, basis.eigenvalues(), &data.y, likelihood).map_err(js)?;
    let step_size = if s.step_size > 0.0 {
        s.step_size
    } else {
        let c = likelihood.curvature_bound().unwrap_or(POISSON_DEMO_CURVATURE);
        target.default_step_size(Some(c)).map_err(js)?
    };
    let init = if s.init_scale == 1.0 { Init::PriorGaussian } else { Init::ScaledPrior(s.init_scale) };
    let sde = SdeConfig::new(step_size, s.steps, s.particles, u64::from(s.seed)).with_init(init);
    sde.validate(basis.eigenvalues().as_slice()).map_err(js)?;
    let mut ens = init_ensemble(&sde, basis.eigenvalues().as_slice()).map_err(js)?;
    target.run(&mut ens, step_size, s.steps).map_err(js)?;

    let grid = grid_1d(X_RANGE.0, X_RANGE.1, s.grid_points.max(2));
    let draws = pls::predict(&basis, &grid, &ens, u64::from(s.seed)).map_err(js)?;
    let grid: Vec<f64> = grid.iter().copied().collect();
    Ok(PosteriorDraws {
        train_x: data.x.iter().copied().collect(),
        train_y: data.y,
        truth: grid.iter().map(|x| kind.truth(*x)).collect(),
        grid,
        // nalgebra is column-major; transpose to get one draw per row.
        draws: draws.values.transpose().iter().copied().collect(),
        n_draws: draws.n_draws(),
        step_size,
        horizon: step_size * s.steps as f64,
        rank: basis.rank(),
    })
}

fn uniform_inputs(n: usize, seed: u32) -> Result<pls::data::Dataset, JsError> {
    Ok(gen_synthetic(SyntheticKind::SineRegression, n, u64::from(seed)).map_err(js)?.data)
}

/// Nyström eigenvalues of a kernel on `n` uniform inputs, all inputs used as
/// inducing points, descending.
#[wasm_bindgen]
pub fn eigen_spectrum(kernel: &str, lengthscale: f64, n: usize, seed: u32) -> Result<Vec<f64>, JsError> {
    let data = uniform_inputs(n, seed)?;
    let k = Kernel::isotropic(family(kernel)?, 1, lengthscale, 1.0).map_err(js)?;
    let basis = SpectralBasis::fit(&k, &data.x, 1e-14).map_err(js)?;
    Ok(basis.eigenvalues().iter().copied().collect())
}

/// Trace of the residual covariance `tr Σ(X)` that drives the KL bound, for
/// each number of greedy inducing points in `sizes`.
#[wasm_bindgen]
pub fn kl_curve(kernel: &str, lengthscale: f64, n: usize, sizes: Vec<u32>, seed: u32) -> Result<Vec<f64>, JsError> {
    let data = uniform_inputs(n, seed)?;
    let k = Kernel::isotropic(family(kernel)?, 1, lengthscale, 1.0).map_err(js)?;
    let anchors = AnchorSet::new(data.x.clone()).map_err(js)?;
    sizes
        .iter()
        .map(|&m| {
            let z = select_inducing_greedy(&k, &data.x, (m as usize).clamp(1, n)).map_err(js)?;
            let basis = SpectralBasis::fit(&k, &z, 1e-10).map_err(js)?;
            Ok(kl_bound(&basis, &data.x, &anchors, 1.0).map_err(js)?.trace_sigma)
        })
        .collect()
}
