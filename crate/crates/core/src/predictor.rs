//! Pushes coefficient samples to function values at test inputs with
//! Matheron's rule.
//!
//! For each particle a prior pair `(G(X*), ⟨G, ê⟩)` is drawn from the joint
//! Gaussian with covariance
//!
//! ```text
//! R = [ r̂(X*, X*)   E*ᵀ Λ̂ ]
//!     [ Λ̂ E*        Λ̂     ]
//! ```
//!
//! and the output is `G(X*) + E*ᵀ (U − ⟨G, ê⟩)`. The kernel `r̂` uses the
//! anchors `X̂ = (X*, Z)`.

use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{check_dim, PlsError, Result};
use crate::kernels::{r_gram, AnchorSet};
use crate::par;
use crate::rng::{stream, StreamDomain};
use crate::sampler::ParticleEnsemble;
use crate::spectral::{sorted_symmetric_eigen, SpectralBasis};

/// How the factor of `R` was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Factorization {
    /// Cholesky of `R + jitter · I`.
    Cholesky { jitter: f64 },
    /// `R` was not positive semi-definite within the jitter budget. The
    /// conditional block `r̂ − E*ᵀΛ̂E*` was projected onto the PSD cone
    /// (`clamped` negative eigenvalues set to zero, the most negative being
    /// `min_eigenvalue`) and a block factor built from it.
    ClampedSchur { clamped: usize, min_eigenvalue: f64 },
}

#[derive(Debug, Clone)]
pub struct JointPriorCov {
    cov: DMatrix<f64>,
    /// `factor · factorᵀ` reproduces the covariance actually sampled from.
    factor: DMatrix<f64>,
    factorization: Factorization,
    /// M′×N*.
    basis_at_test: DMatrix<f64>,
    n_test: usize,
}

const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-4;

impl JointPriorCov {
    pub fn build(basis: &SpectralBasis, xstar: &DMatrix<f64>) -> Result<Self> {
        if xstar.nrows() == 0 {
            return Err(PlsError::input("at least one test point is required"));
        }
        check_dim("build_joint: test columns", basis.kernel().dim(), xstar.ncols())?;
        let n_test = xstar.nrows();
        let rank = basis.rank();
        let size = n_test + rank;
        let lam = basis.eigenvalues();
        let estar = basis.eval(xstar)?;

        let mut anchor_pts = DMatrix::zeros(n_test + basis.num_inducing(), xstar.ncols());
        anchor_pts.rows_mut(0, n_test).copy_from(xstar);
        anchor_pts.rows_mut(n_test, basis.num_inducing()).copy_from(basis.inducing());
        let anchors = AnchorSet::new(anchor_pts)?;
        let r_test = r_gram(basis.kernel(), xstar, xstar, &anchors)?;

        // E*ᵀ Λ̂, N*×M′.
        let mut cross = estar.transpose();
        for (mut col, l) in cross.column_iter_mut().zip(lam.iter()) {
            col *= *l;
        }
        let mut cov = DMatrix::zeros(size, size);
        cov.view_mut((0, 0), (n_test, n_test)).copy_from(&r_test);
        cov.view_mut((0, n_test), (n_test, rank)).copy_from(&cross);
        cov.view_mut((n_test, 0), (rank, n_test)).copy_from(&cross.transpose());
        for m in 0..rank {
            cov[(n_test + m, n_test + m)] = lam[m];
        }
        cov = (&cov + cov.transpose()) * 0.5;

        let scale = cov.trace() / size as f64;
        let mut jitter = JITTER_START * scale;
        while jitter <= JITTER_MAX * scale * (1.0 + 1e-12) {
            let shifted = &cov + DMatrix::identity(size, size) * jitter;
            if let Some(ch) = Cholesky::new(shifted) {
                return Ok(JointPriorCov {
                    cov,
                    factor: ch.l(),
                    factorization: Factorization::Cholesky { jitter },
                    basis_at_test: estar,
                    n_test,
                });
            }
            jitter *= 10.0;
        }

        // Block factor [[S₊^{1/2}, E*ᵀΛ̂^{1/2}], [0, Λ̂^{1/2}]].
        let schur = &r_test - &cross * &estar;
        let (values, vectors) = sorted_symmetric_eigen((&schur + schur.transpose()) * 0.5)?;
        let min_eigenvalue = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let clamped = values.iter().filter(|v| **v < 0.0).count();
        let mut sqrt_schur = vectors;
        for (mut col, v) in sqrt_schur.column_iter_mut().zip(values.iter()) {
            col *= v.max(0.0).sqrt();
        }
        let mut factor = DMatrix::zeros(size, size);
        factor.view_mut((0, 0), (n_test, n_test)).copy_from(&sqrt_schur);
        for m in 0..rank {
            let root = lam[m].sqrt();
            for n in 0..n_test {
                factor[(n, n_test + m)] = estar[(m, n)] * root;
            }
            factor[(n_test + m, n_test + m)] = root;
        }
        log::info!(
            "joint prior covariance is indefinite (Schur complement min eigenvalue {min_eigenvalue:.3e}); clamped {clamped} eigenvalue(s)"
        );
        Ok(JointPriorCov {
            cov,
            factor,
            factorization: Factorization::ClampedSchur { clamped, min_eigenvalue },
            basis_at_test: estar,
            n_test,
        })
    }

    /// The (N*+M′)×(N*+M′) matrix `R`.
    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn factorization(&self) -> Factorization {
        self.factorization
    }

    pub fn basis_at_test(&self) -> &DMatrix<f64> {
        &self.basis_at_test
    }

    pub fn n_test(&self) -> usize {
        self.n_test
    }

    pub fn rank(&self) -> usize {
        self.basis_at_test.nrows()
    }

    /// One draw of `(G(X*), ⟨G, ê⟩)`.
    pub fn draw_prior_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> (DVector<f64>, DVector<f64>) {
        let size = self.factor.nrows();
        let z = DVector::from_iterator(size, (0..size).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let joint = &self.factor * z;
        (
            joint.rows(0, self.n_test).into_owned(),
            joint.rows(self.n_test, self.rank()).into_owned(),
        )
    }

    /// `G(X*) + E*ᵀ (u − ⟨G, ê⟩)`.
    pub fn push_forward(&self, g: &DVector<f64>, g_coeffs: &DVector<f64>, u: &[f64]) -> Result<DVector<f64>> {
        check_dim("push_forward: coefficients", self.rank(), u.len())?;
        let diff = DVector::from_column_slice(u) - g_coeffs;
        Ok(g + self.basis_at_test.tr_mul(&diff))
    }

    /// Matheron's rule for every particle; particle `j` draws its prior pair
    /// from stream `(seed, j)`.
    pub fn sample(&self, ens: &ParticleEnsemble, seed: u64) -> Result<PredictiveDraws> {
        check_dim("matheron: ensemble dimension", self.rank(), ens.dim())?;
        let j = ens.n_particles();
        let mut rows: Vec<Vec<f64>> = vec![Vec::new(); j];
        par::try_for_each_mut(&mut rows, |idx, row| -> Result<()> {
            let mut rng = stream(seed, StreamDomain::Matheron, idx as u64);
            let (g, v) = self.draw_prior_pair(&mut rng);
            let f = self.push_forward(&g, &v, ens.particle(idx))?;
            *row = f.iter().copied().collect();
            Ok(())
        })?;
        let values = DMatrix::from_row_iterator(j, self.n_test, rows.into_iter().flatten());
        Ok(PredictiveDraws { values })
    }
}

/// J joint function draws at N* test inputs, one draw per row.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDraws {
    pub values: DMatrix<f64>,
}

impl PredictiveDraws {
    pub fn n_draws(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_test(&self) -> usize {
        self.values.ncols()
    }

    /// Draws at test point `n`.
    pub fn at(&self, n: usize) -> Vec<f64> {
        self.values.column(n).iter().copied().collect()
    }

    /// CSV with header `x0,x1,…` (test-point index) and one draw per line.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let header: Vec<String> = (0..self.n_test()).map(|n| format!("x{n}")).collect();
        write_matrix_csv(out, &header, &self.values)
    }
}

pub(crate) fn write_matrix_csv<W: Write>(out: W, header: &[String], m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| PlsError::Io(std::io::Error::other(e));
    w.write_record(header).map_err(io)?;
    for row in m.row_iter() {
        w.write_record(row.iter().map(|v| format!("{v:e}"))).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Build the joint covariance once and push every particle through it.
pub fn predict(basis: &SpectralBasis, xstar: &DMatrix<f64>, ens: &ParticleEnsemble, seed: u64) -> Result<PredictiveDraws> {
    JointPriorCov::build(basis, xstar)?.sample(ens, seed)
}
