//! Kernel hyperparameter heuristics: a median-distance lengthscale and a
//! local-subset grid search on the exact GP marginal likelihood.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, PlsError, Result};
use crate::kernels::{Kernel, KernelFamily};
use crate::par;
use crate::rng::{stream, StreamDomain};

const MAX_PAIRS: usize = 10_000;

/// Per-dimension median of pairwise absolute coordinate differences. At most
/// 10⁴ pairs are used; beyond that pairs are sampled with stream `(seed, 0)`.
/// Zero medians become 1.
pub fn median_heuristic(x: &DMatrix<f64>, seed: u64) -> Result<Vec<f64>> {
    let n = x.nrows();
    if n < 2 {
        return Err(PlsError::input(format!("median heuristic needs at least 2 points, got {n}")));
    }
    let total = n * (n - 1) / 2;
    let pairs: Vec<(usize, usize)> = if total <= MAX_PAIRS {
        (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
    } else {
        let mut rng = stream(seed, StreamDomain::ModelSelection, 0);
        (0..MAX_PAIRS)
            .map(|_| {
                let i = rng.random_range(0..n);
                let mut j = rng.random_range(0..n - 1);
                if j >= i {
                    j += 1;
                }
                (i, j)
            })
            .collect()
    };
    Ok((0..x.ncols())
        .map(|d| {
            let mut gaps: Vec<f64> = pairs.iter().map(|&(i, j)| (x[(i, d)] - x[(j, d)]).abs()).collect();
            let med = median(&mut gaps);
            if med > 0.0 {
                med
            } else {
                1.0
            }
        })
        .collect())
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `−½ yᵀ(K+σ²I)⁻¹y − ½ log det(K+σ²I) − (N/2) log 2π`. Cholesky failures
/// are retried with jitter `1e-10·scale·10^k` up to `1e-4·scale`.
pub fn log_marginal_likelihood(kernel: &Kernel, x: &DMatrix<f64>, y: &[f64], noise_variance: f64) -> Result<f64> {
    check_dim("marginal likelihood: targets", x.nrows(), y.len())?;
    if !(noise_variance.is_finite() && noise_variance >= 0.0) {
        return Err(PlsError::input("noise variance must be non-negative"));
    }
    let n = y.len();
    let mut k = kernel.gram(x, x)?;
    for i in 0..n {
        k[(i, i)] += noise_variance;
    }
    let scale = if n == 0 { 1.0 } else { k.trace() / n as f64 };
    let mut jitter = 0.0;
    let chol = loop {
        let shifted = if jitter > 0.0 { &k + DMatrix::identity(n, n) * jitter } else { k.clone() };
        if let Some(c) = Cholesky::new(shifted) {
            break c;
        }
        jitter = if jitter == 0.0 { 1e-10 * scale } else { jitter * 10.0 };
        if jitter > 1e-4 * scale * (1.0 + 1e-12) {
            return Err(PlsError::numerical("marginal likelihood covariance is not positive definite"));
        }
    };
    let yv = DVector::from_column_slice(y);
    let alpha = chol.solve(&yv);
    let log_det: f64 = chol.l_dirty().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    Ok(-0.5 * yv.dot(&alpha) - 0.5 * log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperparamGrid {
    pub lengthscales: Vec<f64>,
    pub signal_variances: Vec<f64>,
    pub noise_variances: Vec<f64>,
}

impl HyperparamGrid {
    /// Seven lengthscales from median/8 to 8·median, signal variances around
    /// the target variance, and noise variances from 1% to 50% of it.
    pub fn around_data(x: &DMatrix<f64>, y: &[f64], seed: u64) -> Result<Self> {
        let med = median_heuristic(x, seed)?;
        let base = (med.iter().map(|v| v.ln()).sum::<f64>() / med.len() as f64).exp();
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let var = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).max(1e-6);
        Ok(HyperparamGrid {
            lengthscales: (-3..=3).map(|k| base * 2f64.powi(k)).collect(),
            signal_variances: [0.25, 1.0, 4.0].iter().map(|s| s * var).collect(),
            noise_variances: [0.01, 0.1, 0.5].iter().map(|s| s * var).collect(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        for (name, list) in [
            ("lengthscale", &self.lengthscales),
            ("signal variance", &self.signal_variances),
            ("noise variance", &self.noise_variances),
        ] {
            if list.is_empty() {
                return Err(PlsError::input(format!("{name} grid is empty")));
            }
            if list.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(PlsError::input(format!("{name} grid must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperparamSearchConfig {
    pub family: KernelFamily,
    pub subset_size: usize,
    pub n_repeats: usize,
    pub grid: HyperparamGrid,
    pub seed: u64,
}

impl HyperparamSearchConfig {
    pub fn regression(family: KernelFamily, grid: HyperparamGrid, seed: u64) -> Self {
        HyperparamSearchConfig {
            family,
            subset_size: 2000,
            n_repeats: 10,
            grid,
            seed,
        }
    }

    pub fn classification(family: KernelFamily, grid: HyperparamGrid, seed: u64) -> Self {
        HyperparamSearchConfig {
            family,
            subset_size: 1000,
            n_repeats: 5,
            grid,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.subset_size < 2 {
            return Err(PlsError::input("subset size must be at least 2"));
        }
        if self.n_repeats < 1 {
            return Err(PlsError::input("at least one repeat is required"));
        }
        self.grid.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub lengthscale: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HyperparamFit {
    pub kernel: Kernel,
    pub noise_variance: f64,
    pub per_repeat: Vec<Hyperparams>,
}

/// Grid search on local subsets. Each repeat picks a centroid uniformly with
/// stream `(seed, 1 + repeat)`, keeps its `subset_size` nearest points and
/// maximises the marginal likelihood over the grid; the selections are
/// averaged in log space. With `N ≤ subset_size` a single repeat uses all
/// the data.
pub fn fit_hyperparams(x: &DMatrix<f64>, y: &[f64], cfg: &HyperparamSearchConfig) -> Result<HyperparamFit> {
    cfg.validate()?;
    check_dim("hyperparameters: targets", x.nrows(), y.len())?;
    let n = x.nrows();
    if n < 2 {
        return Err(PlsError::input("hyperparameter search needs at least 2 points"));
    }
    let repeats = if n <= cfg.subset_size { 1 } else { cfg.n_repeats };
    let results = par::map_range(repeats, |rep| -> Result<Hyperparams> {
        let (xs, ys) = if n <= cfg.subset_size {
            (x.clone(), y.to_vec())
        } else {
            let mut rng = stream(cfg.seed, StreamDomain::ModelSelection, 1 + rep as u64);
            let centre = rng.random_range(0..n);
            let idx = nearest(x, centre, cfg.subset_size);
            (x.select_rows(idx.iter()), idx.iter().map(|i| y[*i]).collect())
        };
        grid_search(&xs, &ys, cfg)
    });
    let per_repeat = results.into_iter().collect::<Result<Vec<_>>>()?;
    let geo = |f: fn(&Hyperparams) -> f64| (per_repeat.iter().map(|h| f(h).ln()).sum::<f64>() / per_repeat.len() as f64).exp();
    let lengthscale = geo(|h| h.lengthscale);
    let signal_variance = geo(|h| h.signal_variance);
    let noise_variance = geo(|h| h.noise_variance);
    let kernel = Kernel::isotropic(cfg.family, x.ncols(), lengthscale, signal_variance)?;
    Ok(HyperparamFit {
        kernel,
        noise_variance,
        per_repeat,
    })
}

/// Indices of the `k` points closest to row `centre`; ties by index.
fn nearest(x: &DMatrix<f64>, centre: usize, k: usize) -> Vec<usize> {
    let c = x.row(centre);
    let mut d: Vec<(f64, usize)> = x.row_iter().enumerate().map(|(i, r)| ((r - c).norm_squared(), i)).collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut idx: Vec<usize> = d.into_iter().take(k).map(|(_, i)| i).collect();
    idx.sort_unstable();
    idx
}

/// First grid point (lengthscale-major order) with the highest likelihood.
fn grid_search(x: &DMatrix<f64>, y: &[f64], cfg: &HyperparamSearchConfig) -> Result<Hyperparams> {
    let mut best: Option<(f64, Hyperparams)> = None;
    for &l in &cfg.grid.lengthscales {
        for &s in &cfg.grid.signal_variances {
            let kernel = Kernel::isotropic(cfg.family, x.ncols(), l, s)?;
            for &nv in &cfg.grid.noise_variances {
                let lml = match log_marginal_likelihood(&kernel, x, y, nv) {
                    Ok(v) => v,
                    Err(PlsError::Numerical(msg)) => {
                        log::debug!("skipping grid point l={l} s={s} noise={nv}: {msg}");
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                if best.as_ref().is_none_or(|(b, _)| lml > *b) {
                    best = Some((
                        lml,
                        Hyperparams {
                            lengthscale: l,
                            signal_variance: s,
                            noise_variance: nv,
                        },
                    ));
                }
            }
        }
    }
    best.map(|(_, h)| h)
        .ok_or_else(|| PlsError::numerical("no grid point gave a finite marginal likelihood"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn col(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    fn single(l: f64, s: f64, nv: f64) -> HyperparamGrid {
        HyperparamGrid {
            lengthscales: vec![l],
            signal_variances: vec![s],
            noise_variances: vec![nv],
        }
    }

    #[test]
    fn median_examples() {
        assert_eq!(median_heuristic(&col(&[0.0, 2.0]), 0).unwrap(), vec![2.0]);
        assert_eq!(median_heuristic(&col(&[1.5, 1.5, 1.5]), 0).unwrap(), vec![1.0]);
        assert_eq!(median_heuristic(&col(&[0.0, 1.0, 2.0, 3.0]), 0).unwrap(), vec![1.5]);
        assert!(median_heuristic(&col(&[0.0]), 0).is_err());
        let two_d = DMatrix::from_row_slice(3, 2, &[0.0, 5.0, 1.0, 5.0, 3.0, 5.0]);
        assert_eq!(median_heuristic(&two_d, 0).unwrap(), vec![2.0, 1.0]);
    }

    #[test]
    fn median_subsamples_large_inputs() {
        let x = DMatrix::from_fn(500, 1, |i, _| i as f64);
        let a = median_heuristic(&x, 1).unwrap();
        assert_eq!(a, median_heuristic(&x, 1).unwrap());
        // Exact median gap of 0..500 is about 146.
        assert!((a[0] - 146.0).abs() < 15.0, "{}", a[0]);
    }

    #[test]
    fn marginal_likelihood_matches_dense_density() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let x = DMatrix::from_fn(5, 2, |_, _| rng.random_range(-2.0..2.0));
            let y: Vec<f64> = (0..5).map(|_| rng.sample(StandardNormal)).collect();
            let k = Kernel::new(KernelFamily::Matern52, vec![rng.random_range(0.3..2.0), 0.8], rng.random_range(0.5..2.0)).unwrap();
            let nv = rng.random_range(0.01..0.5);
            let got = log_marginal_likelihood(&k, &x, &y, nv).unwrap();
            let pts: Vec<Vec<f64>> = x.row_iter().map(|r| r.iter().copied().collect()).collect();
            let mut c = DMatrix::from_fn(5, 5, |i, j| k.eval(&pts[i], &pts[j]).unwrap());
            for i in 0..5 {
                c[(i, i)] += nv;
            }
            let yv = DVector::from_vec(y);
            let quad = yv.dot(&(c.clone().try_inverse().unwrap() * &yv));
            let want = -0.5 * quad - 0.5 * c.determinant().ln() - 2.5 * (2.0 * std::f64::consts::PI).ln();
            assert_relative_eq!(got, want, epsilon = 1e-8);
        }
    }

    #[test]
    fn single_candidate_and_small_data() {
        let x = col(&[0.0, 0.5, 1.0, 2.0]);
        let y = [0.1, 0.3, -0.2, 0.5];
        let cfg = HyperparamSearchConfig::regression(KernelFamily::SquaredExponential, single(0.7, 1.3, 0.2), 0);
        let fit = fit_hyperparams(&x, &y, &cfg).unwrap();
        assert_eq!(fit.per_repeat.len(), 1);
        assert_relative_eq!(fit.kernel.lengthscales()[0], 0.7, epsilon = 1e-14);
        assert_relative_eq!(fit.kernel.signal_variance(), 1.3, epsilon = 1e-14);
        assert_relative_eq!(fit.noise_variance, 0.2, epsilon = 1e-14);

        let mut bad = cfg.clone();
        bad.grid.lengthscales.clear();
        assert!(fit_hyperparams(&x, &y, &bad).is_err());
        bad = cfg.clone();
        bad.subset_size = 1;
        assert!(fit_hyperparams(&x, &y, &bad).is_err());
    }

    #[test]
    fn repeats_average_in_log_space() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = DMatrix::from_fn(60, 1, |_, _| rng.random_range(-3.0..3.0));
        let y: Vec<f64> = x.iter().map(|v: &f64| (2.0 * v).sin() + 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
        let grid = HyperparamGrid {
            lengthscales: vec![0.1, 0.5, 2.5],
            signal_variances: vec![0.5, 2.0],
            noise_variances: vec![0.01, 0.1],
        };
        let cfg = HyperparamSearchConfig {
            family: KernelFamily::SquaredExponential,
            subset_size: 20,
            n_repeats: 4,
            grid,
            seed: 2,
        };
        let fit = fit_hyperparams(&x, &y, &cfg).unwrap();
        assert_eq!(fit.per_repeat.len(), 4);
        let geo: f64 = fit.per_repeat.iter().map(|h| h.lengthscale.ln()).sum::<f64>() / 4.0;
        assert_relative_eq!(fit.kernel.lengthscales()[0], geo.exp(), max_relative = 1e-14);
        assert_eq!(fit, fit_hyperparams(&x, &y, &cfg).unwrap());
    }

    #[test]
    fn recovers_generating_lengthscale() {
        let k = Kernel::isotropic(KernelFamily::SquaredExponential, 1, 0.5, 1.0).unwrap();
        let nv = 0.01;
        let mut hits = 0;
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let x = DMatrix::from_fn(120, 1, |_, _| rng.random_range(-3.0..3.0));
            let mut c = k.gram(&x, &x).unwrap();
            for i in 0..120 {
                c[(i, i)] += nv;
            }
            let l = Cholesky::new(c).unwrap().l();
            let z = DVector::from_fn(120, |_, _| rng.sample(StandardNormal));
            let y = l * z;
            let cfg = HyperparamSearchConfig::regression(
                KernelFamily::SquaredExponential,
                HyperparamGrid {
                    lengthscales: vec![0.1, 0.5, 2.5],
                    signal_variances: vec![1.0],
                    noise_variances: vec![nv],
                },
                seed,
            );
            let fit = fit_hyperparams(&x, y.as_slice(), &cfg).unwrap();
            if (fit.kernel.lengthscales()[0] - 0.5).abs() < 1e-12 {
                hits += 1;
            }
        }
        assert!(hits >= 8, "{hits}/10");
    }

    #[test]
    fn default_grid_is_centred_on_median() {
        let x = col(&[0.0, 1.0, 2.0, 3.0]);
        let g = HyperparamGrid::around_data(&x, &[1.0, 2.0, 3.0, 4.0], 0).unwrap();
        assert_eq!(g.lengthscales.len(), 7);
        assert_relative_eq!(g.lengthscales[3], 1.5, epsilon = 1e-12);
        assert_relative_eq!(g.signal_variances[1], 1.25, epsilon = 1e-12);
    }
}
