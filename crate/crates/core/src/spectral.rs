//! Nyström estimates of the leading eigenpairs of the covariance operator
//! and greedy selection of the points they are computed on.
//!
//! With `(1/M) k(Z, Z) = V Λ̂ Vᵀ` the estimated eigenfunctions are
//! `ê_m(x) = v_mᵀ k(Z, x) / √(M λ̂_m)`, so `ê_m(z_j) = √(M λ̂_m) v_{m,j}`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, PlsError, Result};
use crate::kernels::Kernel;
use crate::rng::{stream, StreamDomain};

/// Relative eigenvalue floor used when none is given.
pub const DEFAULT_RANK_FLOOR: f64 = 1e-10;

/// Symmetric eigendecomposition sorted by descending eigenvalue, with every
/// eigenvector's first non-negligible coordinate made positive.
pub fn sorted_symmetric_eigen(m: DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = m.nrows();
    if n == 0 {
        return Ok((DVector::zeros(0), DMatrix::zeros(0, 0)));
    }
    let eig = SymmetricEigen::try_new(m, f64::EPSILON, 0)
        .ok_or_else(|| PlsError::numerical("symmetric eigensolver did not converge"))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = eig.eigenvectors.select_columns(order.iter());
    for mut col in vectors.column_iter_mut() {
        let scale = col.amax();
        if let Some(first) = col.iter().find(|v| v.abs() > 1e-10 * scale).copied() {
            if first < 0.0 {
                col.neg_mut();
            }
        }
    }
    Ok((values, vectors))
}

/// Estimated eigenvalues and eigenfunctions of the covariance operator.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBasis {
    kernel: Kernel,
    inducing: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    /// M×M′, column m is `v_m / √(M λ̂_m)`.
    weights: DMatrix<f64>,
    dropped: usize,
    duplicates_removed: usize,
}

impl SpectralBasis {
    /// Nyström fit on the rows of `inducing`. Eigenpairs below
    /// `rank_floor · λ̂₁` (and all non-positive ones) are discarded.
    pub fn fit(kernel: &Kernel, inducing: &DMatrix<f64>, rank_floor: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rank_floor) {
            return Err(PlsError::input(format!("rank floor must lie in [0, 1), got {rank_floor}")));
        }
        check_dim("nystroem: inducing columns", kernel.dim(), inducing.ncols())?;
        if inducing.nrows() == 0 {
            return Err(PlsError::input("at least one inducing point is required"));
        }
        if inducing.iter().any(|v| !v.is_finite()) {
            return Err(PlsError::input("inducing points must be finite"));
        }
        let (z, duplicates_removed) = dedup_rows(inducing);
        if duplicates_removed > 0 {
            log::warn!("removed {duplicates_removed} duplicated inducing point(s)");
        }
        let m = z.nrows();
        let gram = kernel.gram(&z, &z)? / m as f64;
        let (values, vectors) = sorted_symmetric_eigen(gram)?;
        let top = values[0];
        if !(top > 0.0) {
            return Err(PlsError::DegenerateKernel { floor: rank_floor });
        }
        let keep = values
            .iter()
            .take_while(|&&v| v > 0.0 && v >= rank_floor * top)
            .count();
        let eigenvalues = values.rows(0, keep).into_owned();
        let mut weights = vectors.columns(0, keep).into_owned();
        for (mut col, lam) in weights.column_iter_mut().zip(eigenvalues.iter()) {
            col /= (m as f64 * lam).sqrt();
        }
        Ok(SpectralBasis {
            kernel: kernel.clone(),
            inducing: z,
            eigenvalues,
            weights,
            dropped: m - keep,
            duplicates_removed,
        })
    }

    /// Rebuilds a basis from stored parts, checking shapes and ordering.
    pub fn from_parts(
        kernel: Kernel,
        inducing: DMatrix<f64>,
        eigenvalues: DVector<f64>,
        weights: DMatrix<f64>,
    ) -> Result<Self> {
        check_dim("basis: inducing columns", kernel.dim(), inducing.ncols())?;
        check_dim("basis: weight rows", inducing.nrows(), weights.nrows())?;
        check_dim("basis: weight columns", eigenvalues.len(), weights.ncols())?;
        if eigenvalues.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(PlsError::input("eigenvalues must be positive and finite"));
        }
        if eigenvalues.as_slice().windows(2).any(|w| w[1] > w[0]) {
            return Err(PlsError::input("eigenvalues must be non-increasing"));
        }
        let dropped = inducing.nrows().saturating_sub(eigenvalues.len());
        Ok(SpectralBasis {
            kernel,
            inducing,
            eigenvalues,
            weights,
            dropped,
            duplicates_removed: 0,
        })
    }

    /// Keeps only the leading `rank` eigenpairs.
    pub fn truncated(&self, rank: usize) -> SpectralBasis {
        let rank = rank.min(self.rank());
        SpectralBasis {
            kernel: self.kernel.clone(),
            inducing: self.inducing.clone(),
            eigenvalues: self.eigenvalues.rows(0, rank).into_owned(),
            weights: self.weights.columns(0, rank).into_owned(),
            dropped: self.inducing.nrows() - rank,
            duplicates_removed: self.duplicates_removed,
        }
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn inducing(&self) -> &DMatrix<f64> {
        &self.inducing
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    /// Number of retained eigenpairs M′.
    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn num_inducing(&self) -> usize {
        self.inducing.nrows()
    }

    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub fn duplicates_removed(&self) -> usize {
        self.duplicates_removed
    }

    /// Eigenvectors `v_m` of the scaled Gram matrix, recovered from the weights.
    pub fn eigenvectors(&self) -> DMatrix<f64> {
        let m = self.num_inducing() as f64;
        let mut v = self.weights.clone();
        for (mut col, lam) in v.column_iter_mut().zip(self.eigenvalues.iter()) {
            col *= (m * lam).sqrt();
        }
        v
    }

    /// M′×N matrix with entry (m, n) equal to `ê_m(x_n)`.
    pub fn eval(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim("eval_basis: input columns", self.kernel.dim(), x.ncols())?;
        let kzx = self.kernel.gram(&self.inducing, x)?;
        Ok(self.weights.tr_mul(&kzx))
    }

    pub fn to_document(&self) -> BasisDocument {
        let rows = |m: &DMatrix<f64>| m.row_iter().map(|r| r.iter().copied().collect()).collect();
        BasisDocument {
            kernel: self.kernel.clone(),
            inducing: rows(&self.inducing),
            eigenvalues: self.eigenvalues.iter().copied().collect(),
            weights: rows(&self.weights),
        }
    }

    pub fn from_document(doc: &BasisDocument) -> Result<Self> {
        let matrix = |rows: &[Vec<f64>], cols: usize, what: &str| -> Result<DMatrix<f64>> {
            if rows.iter().any(|r| r.len() != cols) {
                return Err(PlsError::input(format!("ragged {what} matrix in basis document")));
            }
            Ok(DMatrix::from_row_iterator(rows.len(), cols, rows.iter().flatten().copied()))
        };
        let inducing = matrix(&doc.inducing, doc.kernel.dim(), "inducing")?;
        let weights = matrix(&doc.weights, doc.eigenvalues.len(), "weights")?;
        SpectralBasis::from_parts(
            doc.kernel.clone(),
            inducing,
            DVector::from_vec(doc.eigenvalues.clone()),
            weights,
        )
    }
}

/// Serialized form of a [`SpectralBasis`]; matrices are stored row by row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisDocument {
    pub kernel: Kernel,
    pub inducing: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    pub weights: Vec<Vec<f64>>,
}

fn dedup_rows(z: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let mut keep: Vec<usize> = Vec::with_capacity(z.nrows());
    for i in 0..z.nrows() {
        if !keep.iter().any(|&j| z.row(i) == z.row(j)) {
            keep.push(i);
        }
    }
    let removed = z.nrows() - keep.len();
    (z.select_rows(keep.iter()), removed)
}

/// How inducing points are chosen from the training inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    Greedy,
    Random,
}

impl std::str::FromStr for Selection {
    type Err = PlsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(Selection::Greedy),
            "random" => Ok(Selection::Random),
            other => Err(PlsError::input(format!("unknown selection method `{other}`"))),
        }
    }
}

/// Greedy variance selection (pivoted Cholesky): repeatedly take the point
/// whose kernel variance, conditioned on the points already taken, is
/// largest. Ties go to the lowest row index. Returns the selected row indices
/// in selection order.
pub fn select_greedy_indices(kernel: &Kernel, x: &DMatrix<f64>, m: usize) -> Result<Vec<usize>> {
    let n = x.nrows();
    if m == 0 || m > n {
        return Err(PlsError::input(format!(
            "number of inducing points must be in 1..={n}, got {m}"
        )));
    }
    check_dim("greedy selection: input columns", kernel.dim(), x.ncols())?;
    let mut residual = kernel.diag(x)?;
    let scale = residual.iter().cloned().fold(0.0, f64::max);
    let mut taken = vec![false; n];
    // Row t holds the t-th column of the partial Cholesky factor.
    let mut factor: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut picked = Vec::with_capacity(m);
    for _ in 0..m {
        let mut best = None;
        for i in 0..n {
            if taken[i] {
                continue;
            }
            match best {
                Some((_, v)) if residual[i] <= v => {}
                _ => best = Some((i, residual[i])),
            }
        }
        let (pivot, pivot_var) = best.expect("m <= n leaves a candidate");
        taken[pivot] = true;
        picked.push(pivot);
        if pivot_var <= 1e-12 * scale {
            // Remaining points are numerically spanned already.
            continue;
        }
        let col = kernel.gram(x, &x.rows(pivot, 1).into_owned())?;
        let root = pivot_var.sqrt();
        let mut new_row = vec![0.0; n];
        for i in 0..n {
            let prev: f64 = factor.iter().map(|row| row[i] * row[pivot]).sum();
            new_row[i] = (col[i] - prev) / root;
        }
        for i in 0..n {
            residual[i] = (residual[i] - new_row[i] * new_row[i]).max(0.0);
        }
        factor.push(new_row);
    }
    Ok(picked)
}

/// Rows of `x` chosen by [`select_greedy_indices`].
pub fn select_inducing_greedy(kernel: &Kernel, x: &DMatrix<f64>, m: usize) -> Result<DMatrix<f64>> {
    let idx = select_greedy_indices(kernel, x, m)?;
    Ok(x.select_rows(idx.iter()))
}

/// Uniform subsample of `m` rows without replacement.
pub fn select_inducing_random(x: &DMatrix<f64>, m: usize, seed: u64) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    if m == 0 || m > n {
        return Err(PlsError::input(format!(
            "number of inducing points must be in 1..={n}, got {m}"
        )));
    }
    let mut rng = stream(seed, StreamDomain::Selection, 0);
    let mut idx = sample(&mut rng, n, m).into_vec();
    idx.sort_unstable();
    Ok(x.select_rows(idx.iter()))
}

pub fn select_inducing(method: Selection, kernel: &Kernel, x: &DMatrix<f64>, m: usize, seed: u64) -> Result<DMatrix<f64>> {
    match method {
        Selection::Greedy => select_inducing_greedy(kernel, x, m),
        Selection::Random => select_inducing_random(x, m, seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelFamily;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn se1(l: f64) -> Kernel {
        Kernel::isotropic(KernelFamily::SquaredExponential, 1, l, 1.0).unwrap()
    }

    fn col(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    #[test]
    fn single_point_basis() {
        let k = Kernel::isotropic(KernelFamily::Matern32, 1, 0.7, 2.5).unwrap();
        let b = SpectralBasis::fit(&k, &col(&[0.3]), DEFAULT_RANK_FLOOR).unwrap();
        assert_eq!(b.rank(), 1);
        assert_relative_eq!(b.eigenvalues()[0], 2.5, epsilon = 1e-14);
        let x = col(&[-1.0, 0.3, 2.0]);
        let e = b.eval(&x).unwrap();
        for n in 0..3 {
            let expected = k.eval(&[0.3], &[x[n]]).unwrap() / 2.5f64.sqrt();
            assert_relative_eq!(e[(0, n)], expected, epsilon = 1e-14);
        }
    }

    #[test]
    fn duplicate_points_leave_one_pair() {
        let b = SpectralBasis::fit(&se1(1.0), &col(&[0.5, 0.5]), DEFAULT_RANK_FLOOR).unwrap();
        assert_eq!(b.rank(), 1);
        assert_eq!(b.duplicates_removed(), 1);
        assert_relative_eq!(b.eigenvalues()[0], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn three_point_fixture() {
        // Eigenvalues of (1/3) k({-1, 0, 1}) from a 40-digit reference solve.
        let b = SpectralBasis::fit(&se1(1.0), &col(&[-1.0, 0.0, 1.0]), DEFAULT_RANK_FLOOR).unwrap();
        let expected = [0.642_698_827_857_196_55, 0.288_221_572_254_462_44, 0.069_079_599_888_341_01];
        assert_eq!(b.rank(), 3);
        for (got, want) in b.eigenvalues().iter().zip(expected) {
            assert_relative_eq!(*got, want, epsilon = 1e-13);
        }
    }

    #[test]
    fn eigenvector_consistency_and_orthonormality() {
        let z = col(&[-2.0, -1.1, -0.2, 0.4, 1.3, 2.2, 2.9]);
        let b = SpectralBasis::fit(&se1(0.9), &z, DEFAULT_RANK_FLOOR).unwrap();
        let m = z.nrows() as f64;
        let e = b.eval(&z).unwrap();
        let v = b.eigenvectors();
        for mm in 0..b.rank() {
            let lam = b.eigenvalues()[mm];
            for j in 0..z.nrows() {
                assert_relative_eq!(e[(mm, j)], (m * lam).sqrt() * v[(j, mm)], epsilon = 1e-8);
            }
            assert!(v.column(mm).iter().find(|x| x.abs() > 1e-10).unwrap() > &0.0);
        }
        // (1/M) Σ_j b̂_m(z_j) b̂_m'(z_j) = δ with b̂ = ê / √λ̂.
        for a in 0..b.rank() {
            for c in 0..b.rank() {
                let s: f64 = (0..z.nrows())
                    .map(|j| e[(a, j)] * e[(c, j)] / (b.eigenvalues()[a] * b.eigenvalues()[c]).sqrt())
                    .sum::<f64>()
                    / m;
                assert!((s - if a == c { 1.0 } else { 0.0 }).abs() < 1e-6);
            }
        }
        assert!(b.eigenvalues().as_slice().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn full_rank_reconstruction_matches_gram() {
        let x = col(&[-2.5, -1.0, -0.3, 0.0, 0.8, 1.9]);
        let k = Kernel::isotropic(KernelFamily::Matern52, 1, 0.6, 1.4).unwrap();
        let b = SpectralBasis::fit(&k, &x, 0.0).unwrap();
        assert_eq!(b.rank(), 6);
        let e = b.eval(&x).unwrap();
        let recon = e.tr_mul(&DMatrix::from_diagonal(b.eigenvalues())) * &e;
        // Σ_m ê_m ê_m equals k on the anchors; Σ λ̂ ê ê equals (1/M) k².
        let gram = k.gram(&x, &x).unwrap();
        assert_relative_eq!(e.tr_mul(&e), gram, epsilon = 1e-6, max_relative = 1e-6);
        assert_relative_eq!(recon, &gram * &gram / 6.0, epsilon = 1e-8);
    }

    #[test]
    fn rank_floor_and_errors() {
        let z = col(&[-1.0, -0.99, 0.0, 0.01, 1.0]);
        let full = SpectralBasis::fit(&se1(3.0), &z, 0.0).unwrap();
        let floored = SpectralBasis::fit(&se1(3.0), &z, 1e-3).unwrap();
        assert!(floored.rank() < full.rank());
        assert!(floored.eigenvalues().iter().all(|&l| l >= 1e-3 * floored.eigenvalues()[0]));
        assert!(SpectralBasis::fit(&se1(1.0), &z, 1.0).is_err());
        assert!(SpectralBasis::fit(&se1(1.0), &DMatrix::zeros(0, 1), 0.0).is_err());
        assert!(SpectralBasis::fit(&se1(1.0), &DMatrix::zeros(2, 2), 0.0).is_err());
        let t = full.truncated(2);
        assert_eq!(t.rank(), 2);
        assert_eq!(t.eval(&z).unwrap(), full.eval(&z).unwrap().rows(0, 2).into_owned());
    }

    #[test]
    fn document_round_trip() {
        let b = SpectralBasis::fit(&se1(0.5), &col(&[0.0, 0.5, 1.5]), DEFAULT_RANK_FLOOR).unwrap();
        let json = serde_json::to_string(&b.to_document()).unwrap();
        let back = SpectralBasis::from_document(&serde_json::from_str(&json).unwrap()).unwrap();
        let x = col(&[0.2, 3.0]);
        assert_eq!(b.eval(&x).unwrap(), back.eval(&x).unwrap());
    }

    #[test]
    fn greedy_examples() {
        let k = se1(1.0);
        let x = col(&[0.0, 0.01, 10.0]);
        let mut idx = select_greedy_indices(&k, &x, 2).unwrap();
        assert_eq!(idx[0], 0);
        idx.sort_unstable();
        assert_eq!(idx, vec![0, 2]);
        let all = select_greedy_indices(&k, &x, 3).unwrap();
        let mut sorted = all.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2]);
        assert!(select_greedy_indices(&k, &x, 4).is_err());
        assert!(select_greedy_indices(&k, &x, 0).is_err());
    }

    #[test]
    fn greedy_handles_exhausted_residuals() {
        let k = se1(5.0);
        let x = DMatrix::from_fn(60, 1, |i, _| i as f64 * 0.01);
        let idx = select_greedy_indices(&k, &x, 60).unwrap();
        let mut sorted = idx.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..60).collect::<Vec<_>>());
    }

    #[test]
    fn greedy_is_nested() {
        let x = DMatrix::from_fn(80, 1, |i, _| ((i * 37) % 80) as f64 / 13.0 - 3.0);
        let k = se1(0.4);
        let small = select_greedy_indices(&k, &x, 5).unwrap();
        let large = select_greedy_indices(&k, &x, 12).unwrap();
        assert_eq!(small[..], large[..5]);
    }

    #[test]
    fn random_selection_is_seeded() {
        let x = DMatrix::from_fn(30, 2, |i, j| (i + j) as f64);
        let a = select_inducing_random(&x, 7, 4).unwrap();
        assert_eq!(a, select_inducing_random(&x, 7, 4).unwrap());
        assert_eq!(a.nrows(), 7);
    }

    proptest! {
        #[test]
        fn full_rank_basis_reproduces_gram(
            mut pts in proptest::collection::vec(-3.0f64..3.0, 2..20),
            l in 0.05f64..0.3,
        ) {
            pts.sort_by(f64::total_cmp);
            pts.dedup_by(|a, b| (*a - *b).abs() < 0.5);
            let k = se1(l);
            let x = col(&pts);
            let b = SpectralBasis::fit(&k, &x, 0.0).unwrap();
            prop_assert_eq!(b.rank(), pts.len());
            let e = b.eval(&x).unwrap();
            let rebuilt = e.tr_mul(&e);
            let gram = k.gram(&x, &x).unwrap();
            prop_assert!((&rebuilt - &gram).amax() <= 1e-6, "{}", (&rebuilt - &gram).amax());
        }

        #[test]
        fn eigenvalues_sorted_and_positive(pts in proptest::collection::vec(-3.0f64..3.0, 1..25), l in 0.1f64..2.0) {
            let b = SpectralBasis::fit(&se1(l), &col(&pts), 1e-10).unwrap();
            let lam = b.eigenvalues();
            prop_assert!(lam.iter().all(|v| *v > 0.0));
            prop_assert!(lam.as_slice().windows(2).all(|w| w[0] >= w[1]));
        }
    }
}
