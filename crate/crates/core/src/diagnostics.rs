//! Checks on the theory: the Gaussian closed form of the coefficient law, the
//! KL trace bound, the Monte Carlo optimal potential, eigenvalue tail fits,
//! and predictive metrics.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, PlsError, Result};
use crate::kernels::{r_diag, r_gram, AnchorSet};
use crate::likelihoods::Likelihood;
use crate::par;
use crate::predictor::PredictiveDraws;
use crate::rng::{stream, StreamDomain};
use crate::sampler::LangevinTarget;
use crate::spectral::{sorted_symmetric_eigen, SpectralBasis};

/// Stationary coefficient law under a Gaussian likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCoeffPosterior {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

/// `Σ* = (Λ̂⁻¹ + E Eᵀ/σ²)⁻¹`, `μ* = Σ* E y / σ²` for `E` the M′×N basis
/// evaluations at the data.
pub fn gaussian_oracle_from_parts(
    basis_at_data: &DMatrix<f64>,
    eigenvalues: &DVector<f64>,
    y: &[f64],
    noise_variance: f64,
) -> Result<GaussianCoeffPosterior> {
    let (m, n) = basis_at_data.shape();
    check_dim("gaussian oracle: eigenvalues", m, eigenvalues.len())?;
    check_dim("gaussian oracle: targets", n, y.len())?;
    if !(noise_variance.is_finite() && noise_variance > 0.0) {
        return Err(PlsError::input("noise variance must be positive"));
    }
    let mut precision = basis_at_data * basis_at_data.transpose() / noise_variance;
    for i in 0..m {
        precision[(i, i)] += 1.0 / eigenvalues[i];
    }
    let chol = Cholesky::new(precision).ok_or_else(|| PlsError::numerical("Gaussian posterior precision is singular"))?;
    let covariance = chol.inverse();
    let covariance = (&covariance + covariance.transpose()) * 0.5;
    let rhs = basis_at_data * DVector::from_column_slice(y) / noise_variance;
    let mean = chol.solve(&rhs);
    Ok(GaussianCoeffPosterior { mean, covariance })
}

pub fn gaussian_oracle(basis: &SpectralBasis, x: &DMatrix<f64>, y: &[f64], noise_variance: f64) -> Result<GaussianCoeffPosterior> {
    let e = basis.eval(x)?;
    gaussian_oracle_from_parts(&e, basis.eigenvalues(), y, noise_variance)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub kappa: f64,
    pub trace_sigma: f64,
    pub bound: f64,
    pub clamped_entries: usize,
    pub per_point_diag: Vec<f64>,
}

/// Exact Lipschitz constant of the Bernoulli cost in `f(x_{1:N})`: `√N`.
pub fn bernoulli_kappa(n: usize) -> f64 {
    (n as f64).sqrt()
}

/// Diagonal of `Σ(X) = r(X,X) − ê(X)ᵀ Λ̂ ê(X)` with the training anchors,
/// clamped below at zero, and `(κ²/2) tr Σ(X)`.
pub fn kl_bound(basis: &SpectralBasis, x: &DMatrix<f64>, anchors: &AnchorSet, kappa: f64) -> Result<BoundReport> {
    if !(kappa.is_finite() && kappa > 0.0) {
        return Err(PlsError::input(format!("kappa must be positive, got {kappa}")));
    }
    let r = r_diag(basis.kernel(), x, anchors)?;
    let e = basis.eval(x)?;
    let lam = basis.eigenvalues();
    let mut clamped_entries = 0;
    let per_point_diag: Vec<f64> = r
        .iter()
        .enumerate()
        .map(|(n, rn)| {
            let explained: f64 = (0..e.nrows()).map(|m| lam[m] * e[(m, n)] * e[(m, n)]).sum();
            let d = rn - explained;
            if d < 0.0 {
                clamped_entries += 1;
                0.0
            } else {
                d
            }
        })
        .collect();
    let trace_sigma: f64 = per_point_diag.iter().sum();
    Ok(BoundReport {
        kappa,
        trace_sigma,
        bound: 0.5 * kappa * kappa * trace_sigma,
        clamped_entries,
        per_point_diag,
    })
}

/// Full `Σ(X)` (not clamped).
pub fn residual_covariance(basis: &SpectralBasis, x: &DMatrix<f64>, anchors: &AnchorSet) -> Result<DMatrix<f64>> {
    let r = r_gram(basis.kernel(), x, x, anchors)?;
    let e = basis.eval(x)?;
    let mut scaled = e.clone();
    for (m, mut row) in scaled.row_iter_mut().enumerate() {
        row *= basis.eigenvalues()[m];
    }
    let s = r - e.tr_mul(&scaled);
    Ok((&s + s.transpose()) * 0.5)
}

/// Least-squares fits of `log λ_m` against `m` and against `log m`, `m = 1..`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailFit {
    pub exponential_slope: f64,
    pub exponential_r2: f64,
    pub polynomial_slope: f64,
    pub polynomial_r2: f64,
}

pub const MIN_TAIL_LEN: usize = 10;

pub fn tail_decay_fit(eigenvalues: &[f64]) -> Result<TailFit> {
    if eigenvalues.len() < MIN_TAIL_LEN {
        return Err(PlsError::input(format!(
            "tail fit needs at least {MIN_TAIL_LEN} eigenvalues, got {}",
            eigenvalues.len()
        )));
    }
    if eigenvalues.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(PlsError::input("tail fit needs positive eigenvalues"));
    }
    let logs: Vec<f64> = eigenvalues.iter().map(|v| v.ln()).collect();
    let ms: Vec<f64> = (1..=eigenvalues.len()).map(|m| m as f64).collect();
    let log_ms: Vec<f64> = ms.iter().map(|m| m.ln()).collect();
    let (exponential_slope, exponential_r2) = linear_fit(&ms, &logs);
    let (polynomial_slope, polynomial_r2) = linear_fit(&log_ms, &logs);
    Ok(TailFit {
        exponential_slope,
        exponential_r2,
        polynomial_slope,
        polynomial_r2,
    })
}

/// Slope and R² of ordinary least squares `y ≈ a + b x`.
fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, r2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_draws: usize,
}

/// Draws per random stream in [`OptimalPotential::estimate`].
const MC_BLOCK: usize = 256;

/// `V*(u) = E_ξ[ℓ_N(Eᵀu + √Σ(X) ξ)] + ½ uᵀ Λ̂⁻¹ u`.
#[derive(Debug, Clone)]
pub struct OptimalPotential {
    target: LangevinTarget,
    /// N×K with `root rootᵀ = Σ(X)₊`; columns for (numerically) zero
    /// eigenvalues dropped.
    root: DMatrix<f64>,
    targets: Vec<f64>,
    likelihood: Likelihood,
}

impl OptimalPotential {
    pub fn new(basis: &SpectralBasis, x: &DMatrix<f64>, y: &[f64], likelihood: Likelihood, anchors: &AnchorSet) -> Result<Self> {
        let e = basis.eval(x)?;
        let target = LangevinTarget::new(&e, basis.eigenvalues(), y, likelihood.clone())?;
        let sigma = residual_covariance(basis, x, anchors)?;
        let n = sigma.nrows();
        let (values, vectors) = sorted_symmetric_eigen(sigma)?;
        // Eigenvalues below 1e-13 of the largest are round-off; dropping them
        // shortens every draw without moving the trace measurably.
        let cutoff = values.iter().cloned().fold(0.0, f64::max) * 1e-13;
        let keep = values.iter().take_while(|v| **v > cutoff).count();
        let mut root = DMatrix::zeros(n, keep);
        for k in 0..keep {
            root.set_column(k, &(vectors.column(k) * values[k].sqrt()));
        }
        Ok(OptimalPotential {
            target,
            root,
            targets: y.to_vec(),
            likelihood,
        })
    }

    /// Rank of the clamped `Σ(X)`.
    pub fn noise_rank(&self) -> usize {
        self.root.ncols()
    }

    /// `tr Σ(X)₊`, the trace of the covariance actually sampled.
    pub fn sampled_trace(&self) -> f64 {
        self.root.norm_squared()
    }

    /// The integrand plus prior term for one ξ of length [`Self::noise_rank`].
    /// `ξ = 0` evaluates at the mode and gives `V∞(u)`.
    pub fn evaluate_at(&self, u: &[f64], xi: &[f64]) -> Result<f64> {
        check_dim("optimal potential: xi", self.noise_rank(), xi.len())?;
        let prior = self.target.potential(u)? - self.data_cost(&self.target.predict_data(u))?;
        let f = self.perturbed(u, xi);
        Ok(self.data_cost(&f)? + prior)
    }

    fn perturbed(&self, u: &[f64], xi: &[f64]) -> Vec<f64> {
        let mut f = self.target.predict_data(u);
        if !xi.is_empty() {
            let shift = &self.root * DVector::from_column_slice(xi);
            f.iter_mut().zip(shift.iter()).for_each(|(a, b)| *a += b);
        }
        f
    }

    fn data_cost(&self, f: &[f64]) -> Result<f64> {
        self.likelihood.total_cost(&self.targets, f)
    }

    /// Monte Carlo estimate over `n_mc` draws; block `b` of 256 draws uses
    /// stream `(seed, b)`.
    pub fn estimate(&self, u: &[f64], n_mc: usize, seed: u64) -> Result<McEstimate> {
        if n_mc == 0 {
            return Err(PlsError::input("n_mc must be at least 1"));
        }
        check_dim("optimal potential: coefficients", self.target.dim(), u.len())?;
        let mean_f = self.target.predict_data(u);
        let prior = self.target.potential(u)? - self.data_cost(&mean_f)?;
        let k = self.noise_rank();
        let n_blocks = n_mc.div_ceil(MC_BLOCK);
        // (count, mean, sum of squared deviations) per block, merged below.
        let mut blocks: Vec<(f64, f64, f64)> = vec![(0.0, 0.0, 0.0); n_blocks];
        par::try_for_each_mut(&mut blocks, |b, acc| -> Result<()> {
            let mut rng = stream(seed, StreamDomain::PotentialMc, b as u64);
            let start = b * MC_BLOCK;
            let end = (start + MC_BLOCK).min(n_mc);
            let mut xi = DVector::zeros(k);
            let mut f = mean_f.clone();
            for draw in start..end {
                xi.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
                let shift = &self.root * &xi;
                f.iter_mut().zip(mean_f.iter().zip(shift.iter())).for_each(|(a, (m, s))| *a = m + s);
                let c = self.data_cost(&f)?;
                if !c.is_finite() {
                    return Err(PlsError::numerical(format!("non-finite data cost at draw {draw}")));
                }
                acc.0 += 1.0;
                let delta = c - acc.1;
                acc.1 += delta / acc.0;
                acc.2 += delta * (c - acc.1);
            }
            Ok(())
        })?;
        let (count, mean, m2) = blocks.into_iter().fold((0.0, 0.0, 0.0), |(na, ma, sa), (nb, mb, sb)| {
            let n = na + nb;
            let delta = mb - ma;
            (n, ma + delta * nb / n, sa + sb + delta * delta * na * nb / n)
        });
        let var = if n_mc > 1 { m2 / (count - 1.0) } else { 0.0 };
        Ok(McEstimate {
            mean: mean + prior,
            std_error: (var / n_mc as f64).sqrt(),
            n_draws: n_mc,
        })
    }
}

/// `V∞(u) = ℓ_N(Eᵀu) + ½ uᵀ Λ̂⁻¹ u`.
pub fn stationary_potential(basis: &SpectralBasis, x: &DMatrix<f64>, y: &[f64], likelihood: Likelihood, u: &[f64]) -> Result<f64> {
    let e = basis.eval(x)?;
    LangevinTarget::new(&e, basis.eigenvalues(), y, likelihood)?.potential(u)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub nll: f64,
    pub mae: f64,
    pub accuracy: Option<f64>,
    pub auc: Option<f64>,
    pub interval_width_95: f64,
    pub interval_includes_noise: bool,
}

/// Predictive metrics from J function draws at N* test points. Interval
/// widths add observation noise for Gaussian and Student-t likelihoods, using
/// stream `(seed, test index)`.
pub fn metrics(draws: &PredictiveDraws, y_test: &[f64], likelihood: &Likelihood, seed: u64) -> Result<MetricReport> {
    check_dim("metrics: test targets", draws.n_test(), y_test.len())?;
    let j = draws.n_draws();
    if j < 2 {
        return Err(PlsError::input(format!("interval metrics need at least 2 draws, got {j}")));
    }
    if y_test.is_empty() {
        return Err(PlsError::input("metrics need at least one test point"));
    }
    for &y in y_test {
        likelihood.check_target(y)?;
    }
    let n = y_test.len();
    let mut nll = 0.0;
    let mut abs_err = 0.0;
    let mut widths = 0.0;
    let mut mean_pred = Vec::with_capacity(n);
    let with_noise = likelihood.has_additive_noise();
    for (t, &y) in y_test.iter().enumerate() {
        let f = draws.at(t);
        let logs = f.iter().map(|fj| likelihood.log_density(y, *fj)).collect::<Result<Vec<_>>>()?;
        nll -= log_mean_exp(&logs);
        let responses: Vec<f64> = f.iter().map(|fj| likelihood.mean_response(*fj)).collect();
        let mean = responses.iter().sum::<f64>() / j as f64;
        abs_err += (y - mean).abs();
        mean_pred.push(mean);
        let mut sample = if with_noise {
            let mut rng = stream(seed, StreamDomain::Metrics, t as u64);
            f.iter().map(|fj| likelihood.add_noise(*fj, &mut rng)).collect()
        } else {
            responses
        };
        sample.sort_by(|a, b| a.total_cmp(b));
        widths += quantile_sorted(&sample, 0.975) - quantile_sorted(&sample, 0.025);
    }
    let (accuracy, auc) = if matches!(likelihood, Likelihood::BernoulliLogistic) {
        let correct = mean_pred.iter().zip(y_test).filter(|(p, y)| (**p > 0.5) == (**y == 1.0)).count();
        (Some(correct as f64 / n as f64), auc_by_ranks(&mean_pred, y_test))
    } else {
        (None, None)
    };
    Ok(MetricReport {
        nll: nll / n as f64,
        mae: abs_err / n as f64,
        accuracy,
        auc,
        interval_width_95: widths / n as f64,
        interval_includes_noise: with_noise,
    })
}

fn log_mean_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + (v.iter().map(|x| (x - max).exp()).sum::<f64>() / v.len() as f64).ln()
}

/// Linear interpolation between order statistics.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mann–Whitney AUC with average ranks for ties; `None` with a single class.
pub fn auc_by_ranks(scores: &[f64], labels: &[f64]) -> Option<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|a, b| scores[*a].total_cmp(&scores[*b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut k = i;
        while k + 1 < order.len() && scores[order[k + 1]] == scores[order[i]] {
            k += 1;
        }
        let avg = (i + k) as f64 / 2.0 + 1.0;
        for idx in &order[i..=k] {
            ranks[*idx] = avg;
        }
        i = k + 1;
    }
    let n_pos = labels.iter().filter(|y| **y == 1.0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, y)| **y == 1.0).map(|(r, _)| r).sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}
