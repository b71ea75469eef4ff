//! Stationary kernels, Gram matrices and the smoothed kernel
//! `r(x, x') = ∫ k(x, ξ) k(ξ, x') dν(ξ)` for an empirical measure `ν`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, PlsError, Result};
use crate::rng::{stream, StreamDomain};

/// Default number of anchors kept when the training set is subsampled.
pub const DEFAULT_ANCHOR_CAP: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    SquaredExponential,
    Matern12,
    Matern32,
    Matern52,
}

impl KernelFamily {
    /// Profile as a function of the lengthscale-scaled distance `r ≥ 0`,
    /// normalised so that `profile(0) = 1`.
    #[inline]
    fn profile(self, scaled_sq_dist: f64) -> f64 {
        match self {
            KernelFamily::SquaredExponential => (-0.5 * scaled_sq_dist).exp(),
            KernelFamily::Matern12 => (-scaled_sq_dist.sqrt()).exp(),
            KernelFamily::Matern32 => {
                let s = (3.0 * scaled_sq_dist).sqrt();
                (1.0 + s) * (-s).exp()
            }
            KernelFamily::Matern52 => {
                let s = (5.0 * scaled_sq_dist).sqrt();
                (1.0 + s + 5.0 * scaled_sq_dist / 3.0) * (-s).exp()
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::SquaredExponential => "se",
            KernelFamily::Matern12 => "matern12",
            KernelFamily::Matern32 => "matern32",
            KernelFamily::Matern52 => "matern52",
        }
    }
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelFamily {
    type Err = PlsError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "se" | "rbf" | "squared_exponential" => Ok(KernelFamily::SquaredExponential),
            "matern12" | "matern_12" | "exponential" => Ok(KernelFamily::Matern12),
            "matern32" | "matern_32" => Ok(KernelFamily::Matern32),
            "matern52" | "matern_52" => Ok(KernelFamily::Matern52),
            other => Err(PlsError::input(format!(
                "unknown kernel family `{other}` (Matérn orders other than 1/2, 3/2, 5/2 are not supported)"
            ))),
        }
    }
}

/// A stationary ARD kernel `σ² ρ(‖(x − x') / ℓ‖)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    family: KernelFamily,
    lengthscales: Vec<f64>,
    signal_variance: f64,
}

impl Kernel {
    pub fn new(family: KernelFamily, lengthscales: Vec<f64>, signal_variance: f64) -> Result<Self> {
        if lengthscales.is_empty() {
            return Err(PlsError::input("kernel needs at least one lengthscale"));
        }
        if let Some(l) = lengthscales.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(PlsError::input(format!("lengthscale must be positive and finite, got {l}")));
        }
        if !(signal_variance.is_finite() && signal_variance > 0.0) {
            return Err(PlsError::input(format!(
                "signal variance must be positive and finite, got {signal_variance}"
            )));
        }
        Ok(Kernel {
            family,
            lengthscales,
            signal_variance,
        })
    }

    /// Same lengthscale in every one of `dim` input dimensions.
    pub fn isotropic(family: KernelFamily, dim: usize, lengthscale: f64, signal_variance: f64) -> Result<Self> {
        Kernel::new(family, vec![lengthscale; dim], signal_variance)
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn lengthscales(&self) -> &[f64] {
        &self.lengthscales
    }

    pub fn signal_variance(&self) -> f64 {
        self.signal_variance
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_dim("kernel input", self.dim(), x.len())?;
        check_dim("kernel input", self.dim(), y.len())?;
        let sq: f64 = x
            .iter()
            .zip(y)
            .zip(&self.lengthscales)
            .map(|((a, b), l)| ((a - b) / l).powi(2))
            .sum();
        Ok(self.signal_variance * self.family.profile(sq))
    }

    /// Rows of `points` divided by the lengthscales, stored row-major.
    fn scaled_rows(&self, points: &DMatrix<f64>) -> Vec<f64> {
        let (n, d) = points.shape();
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            for k in 0..d {
                out[i * d + k] = points[(i, k)] / self.lengthscales[k];
            }
        }
        out
    }

    /// `k(A, B)` with `A` of shape N×D and `B` of shape P×D.
    pub fn gram(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim("gram: columns of A", self.dim(), a.ncols())?;
        check_dim("gram: columns of B", self.dim(), b.ncols())?;
        let d = self.dim();
        let (n, p) = (a.nrows(), b.nrows());
        let sa = self.scaled_rows(a);
        let sb = self.scaled_rows(b);
        // Filled column by column to match nalgebra's column-major storage.
        let mut data = vec![0.0; n * p];
        let mut cols: Vec<&mut [f64]> = data.chunks_mut(n.max(1)).collect();
        crate::par::for_each_mut(&mut cols, |j, col| {
            let bj = &sb[j * d..(j + 1) * d];
            for (i, out) in col.iter_mut().enumerate() {
                let ai = &sa[i * d..(i + 1) * d];
                let sq: f64 = ai.iter().zip(bj).map(|(x, y)| (x - y) * (x - y)).sum();
                *out = self.signal_variance * self.family.profile(sq);
            }
        });
        Ok(DMatrix::from_vec(n, p, data))
    }

    /// Diagonal `k(x_i, x_i)`; constant for stationary families.
    pub fn diag(&self, a: &DMatrix<f64>) -> Result<Vec<f64>> {
        check_dim("diag: columns", self.dim(), a.ncols())?;
        Ok(vec![self.signal_variance; a.nrows()])
    }
}

/// Support points of an empirical measure `ν = (1/S) Σ δ_{s_i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    points: DMatrix<f64>,
}

impl AnchorSet {
    pub fn new(points: DMatrix<f64>) -> Result<Self> {
        if points.nrows() == 0 {
            return Err(PlsError::input("anchor set must contain at least one point"));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(PlsError::input("anchor points must be finite"));
        }
        Ok(AnchorSet { points })
    }

    /// Empirical measure of the training inputs, subsampled uniformly without
    /// replacement down to `cap` points when larger.
    pub fn from_training(x: &DMatrix<f64>, cap: usize, seed: u64) -> Result<Self> {
        if cap == 0 {
            return Err(PlsError::input("anchor cap must be positive"));
        }
        if x.nrows() <= cap {
            return AnchorSet::new(x.clone());
        }
        let mut rng = stream(seed, StreamDomain::Selection, 1);
        let mut idx = sample(&mut rng, x.nrows(), cap).into_vec();
        idx.sort_unstable();
        AnchorSet::new(x.select_rows(idx.iter()))
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn weight(&self) -> f64 {
        1.0 / self.len() as f64
    }
}

/// `r(A, B) ≈ (1/S) k(A, S) k(S, B)`.
pub fn r_gram(k: &Kernel, a: &DMatrix<f64>, b: &DMatrix<f64>, anchors: &AnchorSet) -> Result<DMatrix<f64>> {
    let ka = k.gram(a, anchors.points())?;
    let kb = k.gram(anchors.points(), b)?;
    Ok((ka * kb) * anchors.weight())
}

/// Diagonal of `r(A, A)` without forming the full matrix.
pub fn r_diag(k: &Kernel, a: &DMatrix<f64>, anchors: &AnchorSet) -> Result<Vec<f64>> {
    let ka = k.gram(a, anchors.points())?;
    let w = anchors.weight();
    Ok((0..a.nrows())
        .map(|i| ka.row(i).iter().map(|v| v * v).sum::<f64>() * w)
        .collect())
}
